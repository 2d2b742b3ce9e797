use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    SquaredExponential,
    Matern52,
    Exponential,
    RationalQuadratic,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::SquaredExponential,
        KernelKind::Matern52,
        KernelKind::Exponential,
        KernelKind::RationalQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SquaredExponential => "squared_exponential",
            Self::Matern52 => "matern52",
            Self::Exponential => "exponential",
            Self::RationalQuadratic => "rational_quadratic",
        }
    }

    /// Number of log-hyperparameters, including the noise level.
    pub fn n_params(self) -> usize {
        if self == Self::RationalQuadratic {
            4
        } else {
            3
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown kernel kind {s:?}")))
    }
}

/// Stationary isotropic covariance `k(r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub length_scale: f64,
    pub signal_variance: f64,
    /// Shape of the rational quadratic; ignored by the other kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, length_scale: f64, signal_variance: f64, alpha: Option<f64>) -> Result<Self> {
        let k = Self { kind, length_scale, signal_variance, alpha };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("kernel {name} = {v} must be positive")))
            }
        };
        pos("length_scale", self.length_scale)?;
        pos("signal_variance", self.signal_variance)?;
        match (self.kind, self.alpha) {
            (KernelKind::RationalQuadratic, Some(a)) => pos("alpha", a),
            (KernelKind::RationalQuadratic, None) => Err(Error::InvalidParameter("rational quadratic kernel needs alpha".into())),
            _ => Ok(()),
        }
    }

    /// Kernel hyperparameters in log space: `[log ℓ, log σ_f, (log α)]`.
    pub fn log_params(&self) -> Vec<f64> {
        let mut v = vec![self.length_scale.ln(), 0.5 * self.signal_variance.ln()];
        if let Some(a) = self.alpha.filter(|_| self.kind == KernelKind::RationalQuadratic) {
            v.push(a.ln());
        }
        v
    }

    pub fn from_log_params(kind: KernelKind, theta: &[f64]) -> Self {
        Self {
            kind,
            length_scale: theta[0].exp(),
            signal_variance: (2.0 * theta[1]).exp(),
            alpha: (kind == KernelKind::RationalQuadratic).then(|| theta[2].exp()),
        }
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::InvalidParameter(format!("kernel distance r = {r} must be non-negative")));
        }
        Ok(self.eval_unchecked(r))
    }

    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        let s = self.signal_variance;
        let l = self.length_scale;
        match self.kind {
            KernelKind::SquaredExponential => s * (-0.5 * (r / l).powi(2)).exp(),
            KernelKind::Matern52 => {
                let a = 5f64.sqrt() * r / l;
                s * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            KernelKind::Exponential => s * (-r / l).exp(),
            KernelKind::RationalQuadratic => {
                let alpha = self.alpha.unwrap_or(1.0);
                s * (1.0 + r * r / (2.0 * alpha * l * l)).powf(-alpha)
            }
        }
    }

    /// `k(r)` and its derivatives with respect to the kernel's log
    /// parameters, written into `grad` (`[∂/∂log ℓ, ∂/∂log σ_f, (∂/∂log α)]`).
    pub(crate) fn eval_with_grad(&self, r: f64, grad: &mut [f64]) -> f64 {
        let s = self.signal_variance;
        let l = self.length_scale;
        let k = match self.kind {
            KernelKind::SquaredExponential => {
                let q = (r / l).powi(2);
                let k = s * (-0.5 * q).exp();
                grad[0] = k * q;
                k
            }
            KernelKind::Matern52 => {
                let a = 5f64.sqrt() * r / l;
                let e = (-a).exp();
                grad[0] = s * e * a * a * (1.0 + a) / 3.0;
                s * (1.0 + a + a * a / 3.0) * e
            }
            KernelKind::Exponential => {
                let k = s * (-r / l).exp();
                grad[0] = k * r / l;
                k
            }
            KernelKind::RationalQuadratic => {
                let alpha = self.alpha.unwrap_or(1.0);
                let q = (r / l).powi(2);
                let z = q / (2.0 * alpha);
                let base = (1.0 + z).powf(-alpha);
                let k = s * base;
                grad[0] = s * q * base / (1.0 + z);
                grad[2] = k * alpha * (z / (1.0 + z) - z.ln_1p());
                k
            }
        };
        grad[1] = 2.0 * k;
        k
    }
}

/// Euclidean distance between two inputs.
pub fn distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
