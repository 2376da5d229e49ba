//! Monte Carlo harness: model-based scenario studies and design-based
//! finite-population studies.
//!
//! Replications are independent rayon tasks. Each task's seeds derive from
//! the base seed and the replication index, and the metric reduction walks
//! the per-replication artifacts in index order with compensated summation,
//! so parallel and serial runs produce identical tables.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use rayon::prelude::*;

use crate::data::{AreaData, TargetSpec, UnitDataset};
use crate::error::{Error, Result};
use crate::linalg::neumaier_sum;
use crate::model::{validate_conditions, Strictness};
use crate::params::{ModelKind, PriorConfig};
use crate::prediction::{
    predict_finite_population, summarize_mu, AreaPopulation, FinitePopulationSpec,
};
use crate::rng::{derive_seed, seeded_rng, tag};
use crate::sampler::{gibbs_ner, gibbs_uner, ChainConfig};

/// Random-effect law used to generate data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Normal effects in every area.
    S1,
    /// 30% of areas carry a normal effect, the rest are exact zeros.
    S2,
    /// 30% carry a Laplace effect.
    S3,
    /// 30% carry a scaled t effect with 6 degrees of freedom.
    S4,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
            Scenario::S4 => "S4",
        }
    }

    fn index(&self) -> u64 {
        match self {
            Scenario::S1 => 1,
            Scenario::S2 => 2,
            Scenario::S3 => 3,
            Scenario::S4 => 4,
        }
    }

    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Effect standard deviation shared by all scenarios.
const EFFECT_SD: f64 = 0.7;
/// Probability that a mixture-scenario area carries an effect.
const ACTIVE_MASS: f64 = 0.3;

/// One scenario-study configuration.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub units_per_area: usize,
    pub n_areas: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub replications: usize,
    pub base_seed: u64,
}

impl ScenarioConfig {
    pub fn new(
        scenario: Scenario,
        units_per_area: usize,
        n_areas: usize,
        replications: usize,
        base_seed: u64,
    ) -> Result<Self> {
        if units_per_area == 0 || n_areas == 0 || replications == 0 {
            return Err(Error::Config(
                "units per area, area count and replications must all be positive".into(),
            ));
        }
        Ok(Self {
            scenario,
            units_per_area,
            n_areas,
            beta0: 1.0,
            beta1: 0.5,
            replications,
            base_seed,
        })
    }

    /// Covariates are drawn once per (seed, n, m) configuration and held
    /// fixed across replications and scenarios.
    fn covariates(&self) -> Vec<f64> {
        let seed = derive_seed(
            self.base_seed,
            &[tag::COVARIATES, self.units_per_area as u64, self.n_areas as u64],
        );
        let mut rng = seeded_rng(seed);
        (0..self.units_per_area * self.n_areas)
            .map(|_| rng.gen_range(1.0..2.0))
            .collect()
    }
}

fn draw_effect<R: Rng + ?Sized>(scenario: Scenario, rng: &mut R) -> f64 {
    let slab = |rng: &mut R| -> f64 {
        match scenario {
            Scenario::S1 | Scenario::S2 => {
                let z: f64 = StandardNormal.sample(rng);
                EFFECT_SD * z
            }
            Scenario::S3 => {
                // Laplace with variance EFFECT_SD^2: scale = sd / sqrt(2).
                let b = EFFECT_SD / std::f64::consts::SQRT_2;
                let u: f64 = rng.gen_range(-0.5..0.5);
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Scenario::S4 => {
                // t with 6 df scaled to variance EFFECT_SD^2:
                // scale = sd * sqrt((nu-2)/nu).
                let t = StudentT::new(6.0).expect("valid dof").sample(rng);
                EFFECT_SD * (4.0f64 / 6.0).sqrt() * t
            }
        }
    };
    match scenario {
        Scenario::S1 => slab(rng),
        _ => {
            if rng.gen_bool(ACTIVE_MASS) {
                slab(rng)
            } else {
                0.0
            }
        }
    }
}

/// One generated replication with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedReplication {
    pub data: UnitDataset,
    pub true_mu: Vec<f64>,
    pub true_v: Vec<f64>,
}

/// Generate replication `r`: fixed covariates, fresh effects and noise,
/// targets μ_i = β₀ + β₁ x̄_i + v_i.
pub fn gen_scenario(cfg: &ScenarioConfig, r: usize) -> Result<GeneratedReplication> {
    let x = cfg.covariates();
    let seed = derive_seed(
        cfg.base_seed,
        &[tag::SCENARIO_DRAW, cfg.scenario.index(), r as u64],
    );
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit noise");

    let mut areas = Vec::with_capacity(cfg.n_areas);
    let mut true_v = Vec::with_capacity(cfg.n_areas);
    let mut true_mu = Vec::with_capacity(cfg.n_areas);
    for i in 0..cfg.n_areas {
        let v_i = draw_effect(cfg.scenario, &mut rng);
        let offset = i * cfg.units_per_area;
        let xi = DMatrix::from_fn(cfg.units_per_area, 2, |j, c| {
            if c == 0 {
                1.0
            } else {
                x[offset + j]
            }
        });
        let y: Vec<f64> = (0..cfg.units_per_area)
            .map(|j| cfg.beta0 + cfg.beta1 * x[offset + j] + v_i + noise.sample(&mut rng))
            .collect();
        let area = AreaData::new(format!("area{i:03}"), y, xi)?;
        true_mu.push(cfg.beta0 + cfg.beta1 * area.x_mean()[1] + v_i);
        true_v.push(v_i);
        areas.push(area);
    }
    Ok(GeneratedReplication {
        data: UnitDataset::new(areas)?,
        true_mu,
        true_v,
    })
}

/// Chain-length settings for the study runners.
#[derive(Debug, Clone, Copy)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
}

impl McmcSettings {
    /// 2,000 retained draws after 500 burn-in sweeps.
    pub fn desk_scale() -> Self {
        Self {
            iterations: 2500,
            burnin: 500,
            thin: 1,
        }
    }

    /// 5,000 retained draws after 1,000 burn-in sweeps.
    pub fn full_scale() -> Self {
        Self {
            iterations: 6000,
            burnin: 1000,
            thin: 1,
        }
    }

    fn chain_config(&self, seed: u64) -> Result<ChainConfig> {
        ChainConfig::new(self.iterations, self.burnin, self.thin, seed)
    }
}

/// Stored per-replication estimates; the metric table is a pure reduction
/// of these.
#[derive(Debug, Clone)]
pub struct RepArtifact {
    pub mu_hat: Vec<f64>,
    pub mu_true: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
}

/// Aggregate error metrics for one (scenario, model) cell. `cp` is the
/// coverage percentage of the equal-tailed 95% intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsCell {
    pub mse: f64,
    pub bias: f64,
    pub cp: f64,
}

/// Reduce artifacts to metrics in replication order with compensated sums.
pub fn reduce_metrics(reps: &[RepArtifact]) -> MetricsCell {
    let count: usize = reps.iter().map(|r| r.mu_hat.len()).sum();
    let denom = count as f64;
    let mse = neumaier_sum(reps.iter().flat_map(|r| {
        r.mu_hat
            .iter()
            .zip(r.mu_true.iter())
            .map(|(&hat, &truth)| (hat - truth) * (hat - truth))
    })) / denom;
    let bias = neumaier_sum(reps.iter().flat_map(|r| {
        r.mu_hat
            .iter()
            .zip(r.mu_true.iter())
            .map(|(&hat, &truth)| (hat - truth).abs())
    })) / denom;
    let covered = neumaier_sum(reps.iter().flat_map(|r| {
        r.ci.iter()
            .zip(r.mu_true.iter())
            .map(|(&(lo, hi), &truth)| if truth >= lo && truth <= hi { 1.0 } else { 0.0 })
    }));
    MetricsCell {
        mse,
        bias,
        cp: 100.0 * covered / denom,
    }
}

/// Both models' metrics plus the retained per-replication artifacts.
#[derive(Debug, Clone)]
pub struct ModelSimResult {
    pub uner: MetricsCell,
    pub ner: MetricsCell,
    pub uner_reps: Vec<RepArtifact>,
    pub ner_reps: Vec<RepArtifact>,
}

const MAX_RETRIES: usize = 3;

fn run_with_retries<T: Send>(
    replications: usize,
    run: impl Fn(usize, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut last_err = None;
            for attempt in 0..=MAX_RETRIES {
                match run(r, attempt as u64) {
                    Ok(v) => return Ok(v),
                    Err(e) => {
                        eprintln!("replication {r} attempt {attempt} failed: {e}");
                        last_err = Some(e);
                    }
                }
            }
            Err(Error::Simulation(format!(
                "replication {r} failed after {MAX_RETRIES} retries: {}",
                last_err.expect("retry loop records an error")
            )))
        })
        .collect()
}

/// Fit both models to every generated replication and reduce the error
/// metrics for the area targets.
pub fn run_model_sim(
    cfg: &ScenarioConfig,
    mcmc: &McmcSettings,
    prior: &PriorConfig,
) -> Result<ModelSimResult> {
    // Probe the configuration once before burning compute.
    let probe = gen_scenario(cfg, 0)?;
    let report = validate_conditions(&probe.data, prior, Strictness::Propriety);
    if !report.passed() {
        return Err(Error::ConditionsViolated(report.violations().join("; ")));
    }

    let pairs = run_with_retries(cfg.replications, |r, attempt| {
        let rep = gen_scenario(cfg, r)?;
        let rep_seed = derive_seed(
            cfg.base_seed,
            &[cfg.scenario.index(), r as u64, attempt],
        );
        let target = TargetSpec::area_means(&rep.data);

        let uner_cfg = mcmc.chain_config(derive_seed(rep_seed, &[tag::UNER_CHAIN]))?;
        let uner_chain = gibbs_uner(&rep.data, prior, &uner_cfg)?;
        let uner_summary = summarize_mu(&uner_chain, &rep.data, &target)?;

        let ner_cfg = mcmc.chain_config(derive_seed(rep_seed, &[tag::NER_CHAIN]))?;
        let ner_chain = gibbs_ner(&rep.data, &ner_cfg)?;
        let ner_summary = summarize_mu(&ner_chain, &rep.data, &target)?;

        let artifact = |summary: &[crate::prediction::PredictionSummary]| RepArtifact {
            mu_hat: summary.iter().map(|s| s.point).collect(),
            mu_true: rep.true_mu.clone(),
            ci: summary.iter().map(|s| (s.ci_lo, s.ci_hi)).collect(),
        };
        Ok((artifact(&uner_summary), artifact(&ner_summary)))
    })?;

    let (uner_reps, ner_reps): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(ModelSimResult {
        uner: reduce_metrics(&uner_reps),
        ner: reduce_metrics(&ner_reps),
        uner_reps,
        ner_reps,
    })
}

// ---------------------------------------------------------------------------
// Design-based study
// ---------------------------------------------------------------------------

/// One fully enumerated finite population area.
#[derive(Debug, Clone)]
pub struct PopulationArea {
    pub area_id: String,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub true_mean: f64,
}

/// A set of enumerated finite populations.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    pub areas: Vec<PopulationArea>,
}

/// Synthetic population settings: mixture effects with a normal slab, unit
/// noise, covariates uniform on (1, 2) plus an intercept.
#[derive(Debug, Clone, Copy)]
pub struct PopulationConfig {
    pub n_areas: usize,
    pub area_size: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub seed: u64,
}

impl PopulationConfig {
    pub fn new(n_areas: usize, area_size: usize, seed: u64) -> Self {
        Self {
            n_areas,
            area_size,
            beta0: 1.0,
            beta1: 0.5,
            seed,
        }
    }
}

/// Enumerate a synthetic finite population with mixture-type area effects.
pub fn gen_population(cfg: &PopulationConfig) -> Result<FinitePopulation> {
    if cfg.area_size < 2 {
        return Err(Error::Config("population areas need at least 2 units".into()));
    }
    let mut rng = seeded_rng(derive_seed(cfg.seed, &[tag::POPULATION]));
    let noise = Normal::new(0.0, 1.0).expect("unit noise");
    let mut areas = Vec::with_capacity(cfg.n_areas);
    for i in 0..cfg.n_areas {
        let v_i = draw_effect(Scenario::S2, &mut rng);
        let x = DMatrix::from_fn(cfg.area_size, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.gen_range(1.0..2.0)
            }
        });
        let y: Vec<f64> = (0..cfg.area_size)
            .map(|j| cfg.beta0 + cfg.beta1 * x[(j, 1)] + v_i + noise.sample(&mut rng))
            .collect();
        let true_mean = y.iter().sum::<f64>() / cfg.area_size as f64;
        areas.push(PopulationArea {
            area_id: format!("pop{i:03}"),
            y,
            x,
            true_mean,
        });
    }
    Ok(FinitePopulation { areas })
}

/// Simple random sample without replacement by sequential selection;
/// returns sorted indices and gives every size-`n` subset equal
/// probability.
pub fn srs_indices<R: Rng + ?Sized>(n: usize, population: usize, rng: &mut R) -> Vec<usize> {
    assert!(n <= population, "sample size exceeds population");
    let mut picked = Vec::with_capacity(n);
    for idx in 0..population {
        let remaining_needed = n - picked.len();
        if remaining_needed == 0 {
            break;
        }
        let remaining_pool = population - idx;
        if rng.gen_range(0..remaining_pool) < remaining_needed {
            picked.push(idx);
        }
    }
    picked
}

/// Sample size for rate `pi`: nearest integer (half away from zero),
/// clamped to [2, N_i].
fn sample_size(population: usize, pi: f64) -> Result<usize> {
    if population < 2 {
        return Err(Error::Config(format!(
            "population of {population} units cannot support a sample of 2"
        )));
    }
    let n = (population as f64 * pi).round() as usize;
    Ok(n.clamp(2, population))
}

/// Design-based study output at one sampling rate.
#[derive(Debug, Clone)]
pub struct DesignSimResult {
    pub pi: f64,
    pub area_ids: Vec<String>,
    pub smse_uner: Vec<f64>,
    pub smse_ner: Vec<f64>,
    /// Per-area SMSE ratio (mixture / conventional).
    pub ratio: Vec<f64>,
    /// Coverage percentage of the 95% intervals for the fixed true means.
    pub coverage_uner: f64,
    pub coverage_ner: f64,
}

/// Repeatedly sample each population without replacement, predict the
/// finite-population means under both models, and accumulate per-area root
/// mean squared errors against the fixed true means.
pub fn run_design_sim(
    population: &FinitePopulation,
    pi: f64,
    replications: usize,
    mcmc: &McmcSettings,
    prior: &PriorConfig,
    base_seed: u64,
) -> Result<DesignSimResult> {
    if !(0.0 < pi && pi <= 1.0) {
        return Err(Error::Config(format!("sampling rate must be in (0, 1], got {pi}")));
    }
    if replications == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let m = population.areas.len();
    let sizes: Vec<usize> = population
        .areas
        .iter()
        .map(|a| sample_size(a.y.len(), pi))
        .collect::<Result<_>>()?;

    struct RepOutcome {
        sq_err_uner: Vec<f64>,
        sq_err_ner: Vec<f64>,
        cover_uner: usize,
        cover_ner: usize,
    }

    let pi_tag = (pi * 1e6).round() as u64;
    let outcomes = run_with_retries(replications, |r, attempt| {
        let mut sample_rng = seeded_rng(derive_seed(
            base_seed,
            &[tag::DESIGN_SAMPLE, pi_tag, r as u64, attempt],
        ));
        let mut areas = Vec::with_capacity(m);
        let mut spec_areas = Vec::with_capacity(m);
        for (pop_area, &n_i) in population.areas.iter().zip(sizes.iter()) {
            let indices = srs_indices(n_i, pop_area.y.len(), &mut sample_rng);
            let y: Vec<f64> = indices.iter().map(|&j| pop_area.y[j]).collect();
            let x = DMatrix::from_fn(n_i, pop_area.x.ncols(), |row, col| {
                pop_area.x[(indices[row], col)]
            });
            areas.push(AreaData::new(pop_area.area_id.clone(), y, x)?);
            spec_areas.push(AreaPopulation {
                area_id: pop_area.area_id.clone(),
                population_size: pop_area.y.len(),
                x_population_mean: pop_area.x.row_mean().transpose(),
            });
        }
        let data = UnitDataset::new(areas)?;
        let spec = FinitePopulationSpec::new(spec_areas);

        let rep_seed = derive_seed(base_seed, &[pi_tag, r as u64, attempt]);
        let uner_cfg = mcmc.chain_config(derive_seed(rep_seed, &[tag::UNER_CHAIN]))?;
        let uner = predict_finite_population(&data, &spec, ModelKind::Uner, prior, &uner_cfg)?;
        let ner_cfg = mcmc.chain_config(derive_seed(rep_seed, &[tag::NER_CHAIN]))?;
        let ner = predict_finite_population(&data, &spec, ModelKind::Ner, prior, &ner_cfg)?;

        let mut outcome = RepOutcome {
            sq_err_uner: Vec::with_capacity(m),
            sq_err_ner: Vec::with_capacity(m),
            cover_uner: 0,
            cover_ner: 0,
        };
        for (i, pop_area) in population.areas.iter().enumerate() {
            let truth = pop_area.true_mean;
            let eu = uner[i].point - truth;
            let en = ner[i].point - truth;
            outcome.sq_err_uner.push(eu * eu);
            outcome.sq_err_ner.push(en * en);
            if truth >= uner[i].ci_lo && truth <= uner[i].ci_hi {
                outcome.cover_uner += 1;
            }
            if truth >= ner[i].ci_lo && truth <= ner[i].ci_hi {
                outcome.cover_ner += 1;
            }
        }
        Ok(outcome)
    })?;

    let rf = replications as f64;
    let mut smse_uner = Vec::with_capacity(m);
    let mut smse_ner = Vec::with_capacity(m);
    let mut ratio = Vec::with_capacity(m);
    for i in 0..m {
        let su = (neumaier_sum(outcomes.iter().map(|o| o.sq_err_uner[i])) / rf).sqrt();
        let sn = (neumaier_sum(outcomes.iter().map(|o| o.sq_err_ner[i])) / rf).sqrt();
        smse_uner.push(su);
        smse_ner.push(sn);
        ratio.push(su / sn);
    }
    let total = (m * replications) as f64;
    let coverage_uner =
        100.0 * outcomes.iter().map(|o| o.cover_uner).sum::<usize>() as f64 / total;
    let coverage_ner = 100.0 * outcomes.iter().map(|o| o.cover_ner).sum::<usize>() as f64 / total;

    Ok(DesignSimResult {
        pi,
        area_ids: population.areas.iter().map(|a| a.area_id.clone()).collect(),
        smse_uner,
        smse_ner,
        ratio,
        coverage_uner,
        coverage_ner,
    })
}

/// Median of a nonempty slice (averaging the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
