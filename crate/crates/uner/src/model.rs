//! Closed-form posterior quantities, marginal likelihoods, the sampling
//! variance estimator and the propriety checks.

use nalgebra::{DMatrix, DVector};

use crate::data::{AreaData, UnitDataset};
use crate::error::{Error, Result};
use crate::linalg::{logistic, logsumexp2, lstsq, CompoundSymmetry};
use crate::params::{ModelKind, ModelParams, PriorConfig};

/// Log-odds form of the indicator posterior probability. The exponent can
/// reach +-1e4 for extreme residuals, so everything stays in log space
/// until the final logistic.
fn indicator_log_odds(p: f64, sigma2: f64, tau2: f64, n_i: f64, resid: f64) -> f64 {
    let total = sigma2 + n_i * tau2;
    let logit_p = p.ln() - (1.0 - p).ln();
    let half_logdet_ratio = 0.5 * (total / sigma2).ln();
    let quad = n_i * n_i * tau2 * resid * resid / (2.0 * sigma2 * total);
    logit_p - half_logdet_ratio + quad
}

/// Posterior probability that area `area`'s random effect is active, given
/// the current parameter point.
pub fn posterior_prob_u(params: &ModelParams, area: &AreaData) -> Result<f64> {
    params.validate()?;
    if params.p == 0.0 {
        return Ok(0.0);
    }
    if params.p == 1.0 {
        return Ok(1.0);
    }
    let resid = area.mean_residual(&params.beta);
    Ok(logistic(indicator_log_odds(
        params.p,
        params.sigma2,
        params.tau2,
        area.n_units() as f64,
        resid,
    )))
}

/// Posterior variance of the area target μ_i at the given parameter point.
/// Combines the within-component shrinkage variance with the
/// between-component spread of the two posterior means.
pub fn posterior_var_mu(params: &ModelParams, area: &AreaData) -> Result<f64> {
    let p_tilde = posterior_prob_u(params, area)?;
    let n_i = area.n_units() as f64;
    let total = params.sigma2 + n_i * params.tau2;
    let resid = area.mean_residual(&params.beta);
    let gap = n_i * params.tau2 / total * resid;
    Ok(gap * gap * p_tilde * (1.0 - p_tilde) + params.sigma2 * params.tau2 * p_tilde / total)
}

/// Log marginal likelihood with the random effects integrated out. Each
/// area contributes either a single compound-symmetry normal (`Ner`) or a
/// two-component mixture of the with/without-effect normals (`Uner`).
pub fn marginal_loglik(params: &ModelParams, data: &UnitDataset) -> Result<f64> {
    params.validate()?;
    let mut total = 0.0;
    for area in data.areas() {
        let resid: Vec<f64> = area
            .y()
            .iter()
            .enumerate()
            .map(|(j, &yj)| {
                let fit: f64 = area
                    .x()
                    .row(j)
                    .iter()
                    .zip(params.beta.iter())
                    .map(|(x, b)| x * b)
                    .sum();
                yj - fit
            })
            .collect();
        let n_i = area.n_units();
        let with_effect = CompoundSymmetry::new(n_i, params.sigma2, params.tau2)?;
        let log_on = with_effect.normal_logpdf(&resid)?;
        total += match params.model_kind {
            ModelKind::Ner => log_on,
            ModelKind::Uner => {
                let without_effect = CompoundSymmetry::new(n_i, params.sigma2, 0.0)?;
                let log_off = without_effect.normal_logpdf(&resid)?;
                if params.p == 0.0 {
                    log_off
                } else if params.p == 1.0 {
                    log_on
                } else {
                    logsumexp2(params.p.ln() + log_on, (1.0 - params.p).ln() + log_off)
                }
            }
        };
    }
    Ok(total)
}

/// Estimated sampling variance: the within-area regression mean square,
/// computed from responses and covariates centered at their area means.
/// Divides by N − m − q. Feeds the automatic hyperparameter rule.
pub fn estimate_sampling_variance(data: &UnitDataset) -> Result<f64> {
    let n = data.n_total();
    let m = data.n_areas();
    let q = data.q();
    if n <= m + q {
        return Err(Error::DegreesOfFreedom {
            n_units: n,
            n_areas: m,
            q,
        });
    }
    let mut xc = DMatrix::zeros(n, q);
    let mut yc = DVector::zeros(n);
    let mut row = 0;
    for area in data.areas() {
        for j in 0..area.n_units() {
            yc[row] = area.y()[j] - area.y_mean();
            for k in 0..q {
                xc[(row, k)] = area.x()[(j, k)] - area.x_mean()[k];
            }
            row += 1;
        }
    }
    // Centering can zero out columns (an intercept, area-constant
    // covariates); the minimum-norm solve keeps those harmless.
    let beta = lstsq(&xc, &yc)?;
    let resid = &yc - &xc * beta;
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    Ok(rss / (n - m - q) as f64)
}

/// Validation tier: posterior propriety (hard requirement before any fit)
/// or finite posterior variances (advisory).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Propriety,
    FiniteVariance,
}

/// One inequality from the propriety conditions.
#[derive(Debug, Clone)]
pub struct ConditionCheck {
    pub requirement: String,
    pub satisfied: bool,
}

/// Outcome of [`validate_conditions`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub strictness: Strictness,
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    /// The failed requirements, for error messages.
    pub fn violations(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.requirement.clone())
            .collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tier = match self.strictness {
            Strictness::Propriety => "propriety",
            Strictness::FiniteVariance => "finite-variance",
        };
        if self.passed() {
            write!(f, "{tier} conditions satisfied")
        } else {
            write!(f, "{tier} conditions violated: {}", self.violations().join("; "))
        }
    }
}

/// Check the sample-size conditions the improper priors require:
/// propriety needs `N > q + 2` and `m > a >= 1`; finite posterior
/// variances need `N > q + 6` and `m > a >= 5`.
pub fn validate_conditions(
    data: &UnitDataset,
    prior: &PriorConfig,
    strictness: Strictness,
) -> ValidationReport {
    let n = data.n_total();
    let m = data.n_areas();
    let q = data.q();
    let a = prior.a as usize;
    let checks = match strictness {
        Strictness::Propriety => vec![
            ConditionCheck {
                requirement: format!("N > q + 2 (N={n}, q={q})"),
                satisfied: n > q + 2,
            },
            ConditionCheck {
                requirement: format!("m > a (m={m}, a={a})"),
                satisfied: m > a,
            },
            ConditionCheck {
                requirement: format!("a >= 1 (a={a})"),
                satisfied: a >= 1,
            },
        ],
        Strictness::FiniteVariance => vec![
            ConditionCheck {
                requirement: format!("N > q + 6 (N={n}, q={q})"),
                satisfied: n > q + 6,
            },
            ConditionCheck {
                requirement: format!("m > a (m={m}, a={a})"),
                satisfied: m > a,
            },
            ConditionCheck {
                requirement: format!("a >= 5 (a={a})"),
                satisfied: a >= 5,
            },
        ],
    };
    ValidationReport { strictness, checks }
}

/// Pooled ordinary least squares on the stacked data; used for chain
/// initialization.
pub(crate) fn pooled_ols(data: &UnitDataset) -> Result<Vec<f64>> {
    let beta = lstsq(&data.stacked_x(), &data.stacked_y())?;
    Ok(beta.iter().copied().collect())
}
