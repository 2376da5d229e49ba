//! Joint-distribution self-checks for the sampler.
//!
//! The improper priors used for fitting have no normalized joint to sample
//! from, so the check runs on a proper-prior surrogate: coefficients get a
//! zero-mean normal prior, both variances get proper inverse gammas (the
//! effect variance is forced through its proper-prior branch by choosing
//! the threshold at least as large as the area count), and the mixture
//! weight keeps its proper Jeffreys beta prior.
//!
//! Two simulators then target the same joint law of (parameters, data):
//! [`marginal_conditional`] draws parameters from the prior directly, while
//! [`successive_conditional`] alternates one sweep of the actual sampler
//! blocks with a data regeneration step. If the sweep is correct both
//! produce the same parameter moments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};

use crate::data::{AreaData, UnitDataset};
use crate::error::{Error, Result};
use crate::params::{ModelKind, ModelParams, ResolvedPrior};
use crate::rng::{derive_seed, seeded_rng, tag};
use crate::sampler::{
    draw_beta_ridged, draw_inverse_gamma, draw_p, draw_u, draw_v, sigma2_conditional_proper,
    tau2_conditional,
};

/// Surrogate-prior test instance.
#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub n_areas: usize,
    pub units_per_area: usize,
    pub draws: usize,
    pub seed: u64,
    /// Variance of the zero-mean normal prior on the single coefficient.
    pub beta_prior_var: f64,
    /// Inverse-gamma (shape, rate) prior on the unit variance.
    pub sigma2_prior: (f64, f64),
    /// Inverse-gamma (shape, rate) prior on the effect variance.
    pub tau2_prior: (f64, f64),
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            n_areas: 5,
            units_per_area: 2,
            draws: 200_000,
            seed: 0,
            beta_prior_var: 100.0,
            sigma2_prior: (3.0, 3.0),
            tau2_prior: (4.0, 3.0),
        }
    }
}

impl GewekeConfig {
    /// Fixed single-column covariates; an evenly spaced positive grid.
    fn covariates(&self) -> Vec<f64> {
        let n_total = self.n_areas * self.units_per_area;
        (0..n_total)
            .map(|k| 0.5 + k as f64 / n_total as f64)
            .collect()
    }

    fn effect_prior(&self) -> ResolvedPrior {
        // Threshold at the area count keeps every sweep on the proper branch.
        ResolvedPrior {
            a: self.n_areas as u32,
            b1: self.tau2_prior.0,
            b2: self.tau2_prior.1,
        }
    }
}

/// Recorded scalar functionals of each draw.
#[derive(Debug, Clone, Default)]
pub struct GewekeDraws {
    pub beta: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub tau2: Vec<f64>,
    pub p: Vec<f64>,
    pub z: Vec<f64>,
}

impl GewekeDraws {
    fn push(&mut self, params: &ModelParams, z: usize) {
        self.beta.push(params.beta[0]);
        self.sigma2.push(params.sigma2);
        self.tau2.push(params.tau2);
        self.p.push(params.p);
        self.z.push(z as f64);
    }
}

struct PriorDraw {
    params: ModelParams,
    u: Vec<bool>,
    v: Vec<f64>,
}

fn draw_from_prior<R: Rng + ?Sized>(cfg: &GewekeConfig, rng: &mut R) -> Result<PriorDraw> {
    let p = Beta::new(0.5, 0.5)
        .map_err(|e| Error::Domain(format!("beta prior: {e}")))?
        .sample(rng);
    let u: Vec<bool> = (0..cfg.n_areas).map(|_| rng.gen_bool(p)).collect();
    let tau2 = draw_inverse_gamma(cfg.tau2_prior.0, cfg.tau2_prior.1, rng)?;
    let v: Vec<f64> = u
        .iter()
        .map(|&ui| {
            if ui {
                let zdraw: f64 = StandardNormal.sample(rng);
                tau2.sqrt() * zdraw
            } else {
                0.0
            }
        })
        .collect();
    let beta_draw: f64 = StandardNormal.sample(rng);
    let beta = cfg.beta_prior_var.sqrt() * beta_draw;
    let sigma2 = draw_inverse_gamma(cfg.sigma2_prior.0, cfg.sigma2_prior.1, rng)?;
    Ok(PriorDraw {
        params: ModelParams {
            beta: vec![beta],
            sigma2,
            tau2,
            p,
            model_kind: ModelKind::Uner,
        },
        u,
        v,
    })
}

fn regenerate_data<R: Rng + ?Sized>(
    cfg: &GewekeConfig,
    x: &[f64],
    params: &ModelParams,
    v: &[f64],
    rng: &mut R,
) -> Result<UnitDataset> {
    let noise = Normal::new(0.0, params.sigma2.sqrt())
        .map_err(|e| Error::Domain(format!("data regeneration: {e}")))?;
    let mut areas = Vec::with_capacity(cfg.n_areas);
    for i in 0..cfg.n_areas {
        let offset = i * cfg.units_per_area;
        let xi = DMatrix::from_fn(cfg.units_per_area, 1, |r, _| x[offset + r]);
        let y: Vec<f64> = (0..cfg.units_per_area)
            .map(|j| x[offset + j] * params.beta[0] + v[i] + noise.sample(rng))
            .collect();
        areas.push(AreaData::new(format!("g{i}"), y, xi)?);
    }
    UnitDataset::new(areas)
}

/// Draw (parameters, latents) from the surrogate prior repeatedly and
/// record the parameter functionals. Independent draws.
pub fn marginal_conditional(cfg: &GewekeConfig) -> Result<GewekeDraws> {
    let mut rng = seeded_rng(derive_seed(cfg.seed, &[tag::GEWEKE_MARGINAL]));
    let mut out = GewekeDraws::default();
    for _ in 0..cfg.draws {
        let draw = draw_from_prior(cfg, &mut rng)?;
        let z = draw.u.iter().filter(|&&b| b).count();
        out.push(&draw.params, z);
    }
    Ok(out)
}

/// Alternate one sweep of the surrogate-prior sampler with a data
/// regeneration step; the stationary law of the recorded functionals is
/// the prior if and only if the sweep leaves the joint invariant.
pub fn successive_conditional(cfg: &GewekeConfig) -> Result<GewekeDraws> {
    let mut rng = seeded_rng(derive_seed(cfg.seed, &[tag::GEWEKE_SUCCESSIVE]));
    let x = cfg.covariates();
    let effect_prior = cfg.effect_prior();
    let ridge = 1.0 / cfg.beta_prior_var;
    let m = cfg.n_areas;

    let init = draw_from_prior(cfg, &mut rng)?;
    let mut params = init.params;
    let mut v = init.v;
    let mut data = regenerate_data(cfg, &x, &params, &v, &mut rng)?;

    let mut out = GewekeDraws::default();
    for _ in 0..cfg.draws {
        // Same sweep order as the fitting sampler.
        let u = draw_u(&params, &data, &mut rng)?;
        let z = u.iter().filter(|&&b| b).count();
        params.p = draw_p(z, m, &mut rng)?;
        params.beta = draw_beta_ridged(&u, &params, &data, ridge, &mut rng)?;
        v = draw_v(&u, &params, &data, &mut rng);
        let (shape, rate) = tau2_conditional(&u, &v, &effect_prior)?;
        params.tau2 = draw_inverse_gamma(shape, rate, &mut rng)?;
        let (s_shape, s_rate) = sigma2_conditional_proper(
            &v,
            &params.beta,
            &data,
            cfg.sigma2_prior.0,
            cfg.sigma2_prior.1,
        )?;
        params.sigma2 = draw_inverse_gamma(s_shape, s_rate, &mut rng)?;

        out.push(&params, z);
        data = regenerate_data(cfg, &x, &params, &v, &mut rng)?;
    }
    Ok(out)
}

/// Mean and second moment with standard errors.
#[derive(Debug, Clone, Copy)]
pub struct MomentSummary {
    pub mean: f64,
    pub se_mean: f64,
    pub second: f64,
    pub se_second: f64,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Moments treating draws as independent.
pub fn iid_moments(xs: &[f64]) -> MomentSummary {
    let squares: Vec<f64> = xs.iter().map(|&x| x * x).collect();
    let (mean, se_mean) = mean_and_se(xs);
    let (second, se_second) = mean_and_se(&squares);
    MomentSummary {
        mean,
        se_mean,
        second,
        se_second,
    }
}

fn batch_mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let batches = (n as f64).sqrt().floor() as usize;
    let size = n / batches;
    let used = batches * size;
    let mean = xs[..used].iter().sum::<f64>() / used as f64;
    let batch_means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var_bm = batch_means
        .iter()
        .map(|&bm| (bm - mean) * (bm - mean))
        .sum::<f64>()
        / (batches as f64 - 1.0);
    (mean, (var_bm / batches as f64).sqrt())
}

/// Moments with batch-means standard errors for autocorrelated chains.
pub fn chain_moments(xs: &[f64]) -> MomentSummary {
    let squares: Vec<f64> = xs.iter().map(|&x| x * x).collect();
    let (mean, se_mean) = batch_mean_se(xs);
    let (second, se_second) = batch_mean_se(&squares);
    MomentSummary {
        mean,
        se_mean,
        second,
        se_second,
    }
}

/// Largest standardized discrepancy between two moment summaries.
pub fn moment_discrepancy(a: &MomentSummary, b: &MomentSummary) -> f64 {
    let d_mean = (a.mean - b.mean).abs() / (a.se_mean * a.se_mean + b.se_mean * b.se_mean).sqrt();
    let d_second =
        (a.second - b.second).abs() / (a.se_second * a.se_second + b.se_second * b.se_second).sqrt();
    d_mean.max(d_second)
}
