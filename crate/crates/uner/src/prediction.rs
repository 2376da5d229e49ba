//! Posterior summaries for area targets and finite-population mean
//! prediction.
//!
//! Finite-population prediction appends one draw per retained sweep: the
//! unsampled part of each area mean is normal given the sweep's parameters
//! and indicator, and the area mean is the exact convex combination of the
//! sampled mean and that draw. The appended draws consume a generator
//! stream separate from the chain's, so enabling prediction does not
//! perturb the parameter chain.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{AreaData, TargetSpec, UnitDataset};
use crate::error::{Error, Result};
use crate::params::{ModelKind, ModelParams, PriorConfig};
use crate::rng::{derive_seed, seeded_rng, tag};
use crate::sampler::{run_ner_with, run_uner_with, ChainConfig, ChainOutput};

/// Population-side knowledge for one area: total size and the population
/// covariate mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaPopulation {
    pub area_id: String,
    pub population_size: usize,
    pub x_population_mean: DVector<f64>,
}

/// Population description aligned with a dataset's areas.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulationSpec {
    areas: Vec<AreaPopulation>,
}

impl FinitePopulationSpec {
    pub fn new(areas: Vec<AreaPopulation>) -> Self {
        Self { areas }
    }

    pub fn areas(&self) -> &[AreaPopulation] {
        &self.areas
    }

    /// Same areas in the same order, compatible dimensions, and at least as
    /// many population units as sampled units everywhere.
    pub fn validate_against(&self, data: &UnitDataset) -> Result<()> {
        if self.areas.len() != data.n_areas() {
            return Err(Error::PopulationMismatch(format!(
                "{} population areas vs {} dataset areas",
                self.areas.len(),
                data.n_areas()
            )));
        }
        for (pop, area) in self.areas.iter().zip(data.areas()) {
            if pop.area_id != area.area_id() {
                return Err(Error::PopulationMismatch(format!(
                    "area id mismatch: population `{}` vs dataset `{}`",
                    pop.area_id,
                    area.area_id()
                )));
            }
            if pop.x_population_mean.len() != data.q() {
                return Err(Error::PopulationMismatch(format!(
                    "area {}: population covariate mean has length {} but q = {}",
                    pop.area_id,
                    pop.x_population_mean.len(),
                    data.q()
                )));
            }
            if pop.population_size < area.n_units() {
                return Err(Error::PopulationMismatch(format!(
                    "area {}: population size {} < sampled units {}",
                    pop.area_id,
                    pop.population_size,
                    area.n_units()
                )));
            }
        }
        Ok(())
    }
}

/// Per-area posterior summary: mean, spread and equal-tailed 95% interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    pub area_id: String,
    pub point: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Posterior mean of the area indicator; absent for the conventional model.
    pub p_tilde_mean: Option<f64>,
}

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn summarize_draws(draws: &[f64]) -> (f64, f64, f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() > 1 {
        (draws.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = quantile_sorted(&sorted, 0.025);
    let hi = quantile_sorted(&sorted, 0.975);
    (mean, sd, lo, hi)
}

fn indicator_means(chain: &ChainOutput, n_areas: usize) -> Option<Vec<f64>> {
    if chain.model_kind() != ModelKind::Uner {
        return None;
    }
    let mut means = vec![0.0; n_areas];
    for latent in &chain.latent_draws {
        for (i, &ui) in latent.u().iter().enumerate() {
            if ui {
                means[i] += 1.0;
            }
        }
    }
    let k = chain.latent_draws.len() as f64;
    Some(means.into_iter().map(|s| s / k).collect())
}

/// Summarize the per-draw area targets μ_i = c_iᵀβ + v_i.
pub fn summarize_mu(
    chain: &ChainOutput,
    data: &UnitDataset,
    target: &TargetSpec,
) -> Result<Vec<PredictionSummary>> {
    if chain.is_empty() {
        return Err(Error::Config("chain has no retained draws".into()));
    }
    if target.c().len() != data.n_areas() {
        return Err(Error::InvalidData(
            "target spec does not match dataset area count".into(),
        ));
    }
    let p_tilde = indicator_means(chain, data.n_areas());
    let mut out = Vec::with_capacity(data.n_areas());
    for (i, area) in data.areas().iter().enumerate() {
        let c = &target.c()[i];
        let draws: Vec<f64> = chain
            .params_draws
            .iter()
            .zip(chain.latent_draws.iter())
            .map(|(params, latent)| {
                let fit: f64 = c.iter().zip(params.beta.iter()).map(|(ci, b)| ci * b).sum();
                fit + latent.v()[i]
            })
            .collect();
        let (point, sd, ci_lo, ci_hi) = summarize_draws(&draws);
        out.push(PredictionSummary {
            area_id: area.area_id().to_string(),
            point,
            sd,
            ci_lo,
            ci_hi,
            p_tilde_mean: p_tilde.as_ref().map(|v| v[i]),
        });
    }
    Ok(out)
}

/// Covariate mean of the unsampled units:
/// (N_i X̄_i − n_i x̄_i) / (N_i − n_i).
pub fn unsampled_covariate_mean(pop: &AreaPopulation, area: &AreaData) -> Result<DVector<f64>> {
    let n_pop = pop.population_size;
    let n_smp = area.n_units();
    if n_pop <= n_smp {
        return Err(Error::NoUnsampledUnits {
            area_id: pop.area_id.clone(),
        });
    }
    let w = (n_pop - n_smp) as f64;
    Ok((&pop.x_population_mean * n_pop as f64 - area.x_mean() * n_smp as f64) / w)
}

/// Conditional mean and variance of the unsampled-units mean given the
/// sweep state. With the indicator off the effect terms vanish and only
/// the averaged unit noise remains.
pub fn unsampled_mean_moments(
    active: bool,
    params: &ModelParams,
    area: &AreaData,
    pop: &AreaPopulation,
) -> Result<(f64, f64)> {
    let x_r = unsampled_covariate_mean(pop, area)?;
    let base: f64 = x_r.iter().zip(params.beta.iter()).map(|(x, b)| x * b).sum();
    let n_i = area.n_units() as f64;
    let n_rest = (pop.population_size - area.n_units()) as f64;
    let total = params.sigma2 + n_i * params.tau2;
    let (shift, effect_var) = if active {
        (
            n_i * params.tau2 * area.mean_residual(&params.beta) / total,
            params.sigma2 * params.tau2 / total,
        )
    } else {
        (0.0, 0.0)
    };
    Ok((base + shift, effect_var + params.sigma2 / n_rest))
}

/// One draw of the unsampled-units mean.
pub fn draw_unsampled_mean<R: Rng + ?Sized>(
    active: bool,
    params: &ModelParams,
    area: &AreaData,
    pop: &AreaPopulation,
    rng: &mut R,
) -> Result<f64> {
    let (mean, var) = unsampled_mean_moments(active, params, area, pop)?;
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + var.sqrt() * z)
}

/// Chain plus the per-area finite-population draws it produced.
#[derive(Debug, Clone)]
pub struct FinitePopulationDraws {
    pub chain: ChainOutput,
    /// Per area: retained draws of the full-population mean.
    pub ybar_draws: Vec<Vec<f64>>,
    /// Per area: retained draws of the unsampled-units mean. Empty for
    /// fully observed areas.
    pub unsampled_draws: Vec<Vec<f64>>,
}

/// Run the chosen sampler with the appended prediction step and keep the
/// raw draws.
pub fn finite_population_draws(
    data: &UnitDataset,
    spec: &FinitePopulationSpec,
    model_kind: ModelKind,
    prior: &PriorConfig,
    cfg: &ChainConfig,
) -> Result<FinitePopulationDraws> {
    spec.validate_against(data)?;
    let m = data.n_areas();
    let retained = cfg.retained();
    let mut ybar_draws: Vec<Vec<f64>> = vec![Vec::with_capacity(retained); m];
    let mut unsampled_draws: Vec<Vec<f64>> = vec![Vec::new(); m];
    // Separate stream: the parameter chain stays bit-identical with or
    // without the appended step.
    let mut fp_rng = seeded_rng(derive_seed(cfg.seed, &[tag::FP_AUGMENT]));
    let mut augment_err: Option<Error> = None;

    let mut observe = |_k: usize, params: &ModelParams, latent: &crate::params::LatentState| {
        if augment_err.is_some() {
            return;
        }
        for (i, (area, pop)) in data.areas().iter().zip(spec.areas()).enumerate() {
            if pop.population_size == area.n_units() {
                ybar_draws[i].push(area.y_mean());
                continue;
            }
            let active = match model_kind {
                ModelKind::Uner => latent.u()[i],
                ModelKind::Ner => true,
            };
            match draw_unsampled_mean(active, params, area, pop, &mut fp_rng) {
                Ok(rest_mean) => {
                    let n_i = area.n_units() as f64;
                    let n_pop = pop.population_size as f64;
                    let ybar = (n_i * area.y_mean() + (n_pop - n_i) * rest_mean) / n_pop;
                    unsampled_draws[i].push(rest_mean);
                    ybar_draws[i].push(ybar);
                }
                Err(e) => augment_err = Some(e),
            }
        }
    };

    let chain = match model_kind {
        ModelKind::Uner => run_uner_with(data, prior, cfg, None, &mut observe)?,
        ModelKind::Ner => run_ner_with(data, cfg, &mut observe)?,
    };
    if let Some(e) = augment_err {
        return Err(e);
    }
    Ok(FinitePopulationDraws {
        chain,
        ybar_draws,
        unsampled_draws,
    })
}

/// Posterior summaries of the finite-population means.
pub fn predict_finite_population(
    data: &UnitDataset,
    spec: &FinitePopulationSpec,
    model_kind: ModelKind,
    prior: &PriorConfig,
    cfg: &ChainConfig,
) -> Result<Vec<PredictionSummary>> {
    let draws = finite_population_draws(data, spec, model_kind, prior, cfg)?;
    let p_tilde = indicator_means(&draws.chain, data.n_areas());
    let mut out = Vec::with_capacity(data.n_areas());
    for (i, (area, pop)) in data.areas().iter().zip(spec.areas()).enumerate() {
        let (point, sd, ci_lo, ci_hi) = if pop.population_size == area.n_units() {
            // Fully observed: the mean is known, not estimated.
            (area.y_mean(), 0.0, area.y_mean(), area.y_mean())
        } else {
            summarize_draws(&draws.ybar_draws[i])
        };
        out.push(PredictionSummary {
            area_id: area.area_id().to_string(),
            point,
            sd,
            ci_lo,
            ci_hi,
            p_tilde_mean: p_tilde.as_ref().map(|v| v[i]),
        });
    }
    Ok(out)
}
