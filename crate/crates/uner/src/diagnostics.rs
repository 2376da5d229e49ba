//! Model comparison and chain-quality reporting.

use crate::data::UnitDataset;
use crate::error::{Error, Result};
use crate::linalg::neumaier_sum;
use crate::model::marginal_loglik;
use crate::params::{ModelKind, ModelParams};
use crate::sampler::ChainOutput;

/// Deviance information criterion report. The deviance is −2 times the
/// marginal log likelihood with the random effects integrated out; `p_d`
/// is the effective parameter count `dbar − d_at_mean` and may come out
/// negative for badly behaved posteriors — it is reported, not asserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicReport {
    pub dic: f64,
    pub dbar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
}

impl DicReport {
    pub fn p_d_negative(&self) -> bool {
        self.p_d < 0.0
    }
}

/// Posterior mean of the parameter draws, componentwise on the sampled
/// scales (variances averaged as variances, the weight as a probability).
fn posterior_mean_params(chain: &ChainOutput) -> ModelParams {
    let k = chain.len() as f64;
    let q = chain.params_draws[0].beta.len();
    let mut beta = vec![0.0; q];
    for draw in &chain.params_draws {
        for (b, d) in beta.iter_mut().zip(draw.beta.iter()) {
            *b += d;
        }
    }
    for b in beta.iter_mut() {
        *b /= k;
    }
    let mean_of = |f: fn(&ModelParams) -> f64| -> f64 {
        neumaier_sum(chain.params_draws.iter().map(f)) / k
    };
    ModelParams {
        beta,
        sigma2: mean_of(|p| p.sigma2),
        tau2: mean_of(|p| p.tau2),
        p: mean_of(|p| p.p),
        model_kind: chain.model_kind(),
    }
}

/// Compute the DIC of a fitted chain against its dataset.
pub fn dic(chain: &ChainOutput, data: &UnitDataset) -> Result<DicReport> {
    if chain.is_empty() {
        return Err(Error::Config("chain has no retained draws".into()));
    }
    let mut deviances = Vec::with_capacity(chain.len());
    for params in &chain.params_draws {
        deviances.push(-2.0 * marginal_loglik(params, data)?);
    }
    let dbar = neumaier_sum(deviances.iter().copied()) / chain.len() as f64;
    let at_mean = posterior_mean_params(chain);
    let d_at_mean = -2.0 * marginal_loglik(&at_mean, data)?;
    Ok(DicReport {
        dic: 2.0 * dbar - d_at_mean,
        dbar,
        d_at_mean,
        p_d: dbar - d_at_mean,
    })
}

/// Per-parameter posterior summary with a crude stationarity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// |mean(first half) − mean(second half)| / pooled sd.
    pub split_half: f64,
    /// Set when the split-half discrepancy exceeds 0.2.
    pub flagged: bool,
}

fn summarize_series(name: &str, xs: &[f64]) -> ParamSummary {
    let n = xs.len();
    let nf = n as f64;
    let mean = neumaier_sum(xs.iter().copied()) / nf;
    let sd = if n > 1 {
        (xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ci_lo = crate::prediction::quantile_sorted(&sorted, 0.025);
    let ci_hi = crate::prediction::quantile_sorted(&sorted, 0.975);

    let half = n / 2;
    let split_half = if half >= 1 && n - half >= 1 {
        let (first, second) = xs.split_at(half);
        let m1 = first.iter().sum::<f64>() / first.len() as f64;
        let m2 = second.iter().sum::<f64>() / second.len() as f64;
        let var = |s: &[f64], m: f64| s.iter().map(|&x| (x - m) * (x - m)).sum::<f64>();
        let df = (first.len() + second.len()).saturating_sub(2) as f64;
        let pooled = if df > 0.0 {
            ((var(first, m1) + var(second, m2)) / df).sqrt()
        } else {
            0.0
        };
        if (m1 - m2).abs() == 0.0 {
            0.0
        } else if pooled == 0.0 {
            f64::INFINITY
        } else {
            (m1 - m2).abs() / pooled
        }
    } else {
        0.0
    };

    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        ci_lo,
        ci_hi,
        split_half,
        flagged: split_half > 0.2,
    }
}

/// Summaries of every sampled parameter in the chain. The mixture weight
/// is included only for the mixture model.
pub fn chain_summary(chain: &ChainOutput) -> Result<Vec<ParamSummary>> {
    if chain.is_empty() {
        return Err(Error::Config("chain has no retained draws".into()));
    }
    let q = chain.params_draws[0].beta.len();
    let mut out = Vec::with_capacity(q + 3);
    for j in 0..q {
        let series: Vec<f64> = chain.params_draws.iter().map(|p| p.beta[j]).collect();
        out.push(summarize_series(&format!("beta{j}"), &series));
    }
    let sigma2: Vec<f64> = chain.params_draws.iter().map(|p| p.sigma2).collect();
    out.push(summarize_series("sigma2", &sigma2));
    let tau2: Vec<f64> = chain.params_draws.iter().map(|p| p.tau2).collect();
    out.push(summarize_series("tau2", &tau2));
    if chain.model_kind() == ModelKind::Uner {
        let p: Vec<f64> = chain.params_draws.iter().map(|p| p.p).collect();
        out.push(summarize_series("p", &p));
    }
    Ok(out)
}
