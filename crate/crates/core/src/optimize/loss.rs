use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Cauchy,
    Tukey,
    None,
}

/// Robust function applied to a squared residual norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLoss {
    pub kind: LossKind,
    pub scale: f64,
}

impl RobustLoss {
    pub fn new(kind: LossKind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("loss scale {scale} must be positive")));
        }
        Ok(Self { kind, scale })
    }

    pub fn cauchy(scale: f64) -> Self {
        Self {
            kind: LossKind::Cauchy,
            scale,
        }
    }

    pub fn tukey(scale: f64) -> Self {
        Self {
            kind: LossKind::Tukey,
            scale,
        }
    }

    /// `(rho(s), rho'(s))` for a squared norm `s >= 0`.
    #[inline]
    pub fn evaluate(&self, s: f64) -> (f64, f64) {
        let c2 = self.scale * self.scale;
        match self.kind {
            LossKind::None => (s, 1.0),
            LossKind::Cauchy => {
                let t = 1.0 + s / c2;
                (c2 * t.ln(), 1.0 / t)
            }
            LossKind::Tukey => {
                if s <= c2 {
                    let t = 1.0 - s / c2;
                    (c2 / 3.0 * (1.0 - t * t * t), t * t)
                } else {
                    (c2 / 3.0, 0.0)
                }
            }
        }
    }
}

/// Checked form of [`RobustLoss::evaluate`].
pub fn robust_loss(kind: LossKind, scale: f64, squared_norm: f64) -> Result<(f64, f64)> {
    if !(squared_norm >= 0.0) {
        return Err(Error::Domain(format!("squared norm {squared_norm} is negative")));
    }
    Ok(RobustLoss::new(kind, scale)?.evaluate(squared_norm))
}
