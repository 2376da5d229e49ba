//! Parameter and latent-state types shared by the samplers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which likelihood the chain targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Mixture random effect: point mass at zero plus a normal component.
    Uner,
    /// Conventional normal random effect in every area.
    Ner,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Uner => "uner",
            ModelKind::Ner => "ner",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uner" => Ok(ModelKind::Uner),
            "ner" => Ok(ModelKind::Ner),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// One point in parameter space: regression coefficients, variance
/// components and the mixture weight. `p` is carried but unused when
/// `model_kind` is [`ModelKind::Ner`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub tau2: f64,
    pub p: f64,
    pub model_kind: ModelKind,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("beta contains non-finite entries".into()));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!(
                "sigma2 must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if !(self.tau2 > 0.0) || !self.tau2.is_finite() {
            return Err(Error::Domain(format!(
                "tau2 must be positive and finite, got {}",
                self.tau2
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Domain(format!("p must lie in [0,1], got {}", self.p)));
        }
        Ok(())
    }
}

/// Per-area indicator/effect pair. The point mass at zero is represented by
/// the exact coupling `u_i = false  =>  v_i = 0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    u: Vec<bool>,
    v: Vec<f64>,
    z: usize,
}

impl LatentState {
    pub fn new(u: Vec<bool>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::Domain(format!(
                "indicator and effect vectors differ in length: {} vs {}",
                u.len(),
                v.len()
            )));
        }
        for (i, (&ui, &vi)) in u.iter().zip(v.iter()).enumerate() {
            if !ui && vi != 0.0 {
                return Err(Error::Domain(format!(
                    "area {i}: indicator off but effect {vi} != 0"
                )));
            }
            if !vi.is_finite() {
                return Err(Error::Domain(format!("area {i}: non-finite effect {vi}")));
            }
        }
        let z = u.iter().filter(|&&b| b).count();
        Ok(Self { u, v, z })
    }

    /// All indicators on, all effects zero.
    pub fn all_on(m: usize) -> Self {
        Self {
            u: vec![true; m],
            v: vec![0.0; m],
            z: m,
        }
    }

    pub fn u(&self) -> &[bool] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Number of active indicators.
    pub fn z(&self) -> usize {
        self.z
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Prior settings for the random-effect variance switch: threshold `a` and
/// the inverse-gamma hyperparameters used when few indicators are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorConfig {
    pub a: u32,
    pub b1: f64,
    pub b2: f64,
    pub auto_hyper: bool,
}

impl PriorConfig {
    /// Manual hyperparameters. Requires `a >= 1`, `b1 > 3`, `b2 > 0`.
    pub fn new(a: u32, b1: f64, b2: f64) -> Result<Self> {
        if a < 1 {
            return Err(Error::Config(format!("prior threshold a must be >= 1, got {a}")));
        }
        if !(b1 > 3.0) {
            return Err(Error::Config(format!("b1 must be > 3, got {b1}")));
        }
        if !(b2 > 0.0) {
            return Err(Error::Config(format!("b2 must be > 0, got {b2}")));
        }
        Ok(Self {
            a,
            b1,
            b2,
            auto_hyper: false,
        })
    }

    /// Derive `b1`, `b2` from the estimated sampling variance at fit time.
    pub fn auto(a: u32) -> Result<Self> {
        if a < 1 {
            return Err(Error::Config(format!("prior threshold a must be >= 1, got {a}")));
        }
        Ok(Self {
            a,
            b1: f64::NAN,
            b2: f64::NAN,
            auto_hyper: true,
        })
    }

    /// Resolve the hyperparameters against a sampling-variance estimate:
    /// `b1 = V + 2`, `b2 = V (V + 1)`.
    pub fn resolve_with(&self, sampling_variance: f64) -> Result<ResolvedPrior> {
        if self.auto_hyper {
            if !(sampling_variance > 0.0) || !sampling_variance.is_finite() {
                return Err(Error::Domain(format!(
                    "auto hyperparameters need a positive sampling variance, got {sampling_variance}"
                )));
            }
            Ok(ResolvedPrior {
                a: self.a,
                b1: sampling_variance + 2.0,
                b2: sampling_variance * (sampling_variance + 1.0),
            })
        } else {
            Ok(ResolvedPrior {
                a: self.a,
                b1: self.b1,
                b2: self.b2,
            })
        }
    }
}

/// [`PriorConfig`] with `auto_hyper` resolved to concrete values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedPrior {
    pub a: u32,
    pub b1: f64,
    pub b2: f64,
}
