use serde::{Deserialize, Serialize};

use crate::error::{BimError, Result};

/// Mixing of the descent gradient and the STDP term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridRuleConfig {
    pub eta: f64,
    pub lambda: f64,
    pub omega_scale: f64,
}

impl Default for HybridRuleConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            lambda: 1.0,
            omega_scale: 1.0,
        }
    }
}

impl HybridRuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(BimError::Config(format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(BimError::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !self.omega_scale.is_finite() {
            return Err(BimError::Config("omega_scale must be finite".into()));
        }
        Ok(())
    }
}

/// `Δw = η(λ·(−∂L/∂w) + (1 − λ)·omega_scale·Ω)`.
///
/// The endpoints drop the unused term entirely, so `λ = 1` is exactly plain
/// gradient descent and `λ = 0` exactly `η·omega_scale·Ω`.
#[inline]
pub fn hybrid_update(grad: f64, omega: f64, cfg: &HybridRuleConfig) -> f64 {
    if cfg.lambda == 1.0 {
        cfg.eta * -grad
    } else if cfg.lambda == 0.0 {
        cfg.eta * (cfg.omega_scale * omega)
    } else {
        cfg.eta * (cfg.lambda * -grad + (1.0 - cfg.lambda) * cfg.omega_scale * omega)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let grad_only = HybridRuleConfig {
            eta: 0.1,
            lambda: 1.0,
            omega_scale: 1.0,
        };
        assert_eq!(hybrid_update(2.0, 1e9, &grad_only), -0.2);
        let stdp_only = HybridRuleConfig {
            lambda: 0.0,
            ..grad_only.clone()
        };
        assert_eq!(hybrid_update(1e9, 3.0, &stdp_only), 0.1 * 3.0);
    }

    #[test]
    fn worked_mix() {
        let cfg = HybridRuleConfig {
            eta: 0.1,
            lambda: 0.5,
            omega_scale: 1.0,
        };
        // A descent term of +1 means ∂L/∂w = −1.
        assert!((hybrid_update(-1.0, 4.0, &cfg) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(HybridRuleConfig {
            lambda: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HybridRuleConfig {
            eta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HybridRuleConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn linear_in_lambda(g in -5.0f64..5.0, o in -5.0f64..5.0, lambda in 0.0f64..1.0, eta in 0.0f64..1.0) {
            let cfg = |l: f64| HybridRuleConfig { eta, lambda: l, omega_scale: 0.7 };
            let at0 = hybrid_update(g, o, &cfg(0.0));
            let at1 = hybrid_update(g, o, &cfg(1.0));
            let mid = hybrid_update(g, o, &cfg(lambda));
            prop_assert!((mid - (lambda * at1 + (1.0 - lambda) * at0)).abs() < 1e-12);
        }

        #[test]
        fn linear_in_inputs(g1 in -5.0f64..5.0, g2 in -5.0f64..5.0, o1 in -5.0f64..5.0, o2 in -5.0f64..5.0, c in -2.0f64..2.0) {
            let cfg = HybridRuleConfig { eta: 0.3, lambda: 0.4, omega_scale: 2.0 };
            let lhs = hybrid_update(g1 + c * g2, o1 + c * o2, &cfg);
            let rhs = hybrid_update(g1, o1, &cfg) + c * hybrid_update(g2, o2, &cfg);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
