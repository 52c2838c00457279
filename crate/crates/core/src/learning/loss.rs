use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, BimError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    MeanSquaredError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// A loss applied to one step's prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub target: Target,
}

impl LossSpec {
    pub fn new(kind: LossKind, target: Target) -> Self {
        Self { kind, target }
    }

    /// Loss value and `∂loss/∂prediction`.
    pub fn eval(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        loss_and_grad(self.kind, z, &self.target)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax cross-entropy against a class, or `½‖z − t‖²` against values.
pub fn loss_and_grad(kind: LossKind, z: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Class(c)) => {
            if *c >= z.len() {
                return Err(BimError::Contract(format!("class {c} out of {} outputs", z.len())));
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let mut g = softmax(z);
            g[*c] -= 1.0;
            Ok(((lse - z[*c]).max(0.0), g))
        }
        (LossKind::MeanSquaredError, Target::Values(t)) => {
            ensure_dim("mse target", t.len(), z.len())?;
            let g: Vec<f64> = z.iter().zip(t).map(|(a, b)| a - b).collect();
            Ok((0.5 * g.iter().map(|d| d * d).sum::<f64>(), g))
        }
        (LossKind::MeanSquaredError, Target::Class(c)) => {
            if *c >= z.len() {
                return Err(BimError::Contract(format!("class {c} out of {} outputs", z.len())));
            }
            let mut t = vec![0.0; z.len()];
            t[*c] = 1.0;
            loss_and_grad(kind, z, &Target::Values(t))
        }
        (LossKind::CrossEntropy, Target::Values(_)) => Err(BimError::Contract("cross-entropy needs a class target".into())),
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Whether the prediction is scored as correct; `None` if the target carries
/// no class (an all-zero value target).
pub fn is_correct(z: &[f64], target: &Target) -> Option<bool> {
    match target {
        Target::Class(c) => Some(argmax(z) == *c),
        Target::Values(t) => {
            if t.iter().all(|&v| v <= 0.0) {
                None
            } else {
                Some(argmax(z) == argmax(t))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_value_and_grad() {
        let (l, g) = loss_and_grad(LossKind::MeanSquaredError, &[1.0, 2.0], &Target::Values(vec![0.0, 4.0])).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g, vec![1.0, -2.0]);
    }

    #[test]
    fn cross_entropy_matches_definition() {
        let z = [0.5, -1.0, 2.0];
        let (l, g) = loss_and_grad(LossKind::CrossEntropy, &z, &Target::Class(1)).unwrap();
        let s: f64 = z.iter().map(|v: &f64| v.exp()).sum();
        assert!((l - (-((-1.0f64).exp() / s).ln())).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let h = 1e-6;
        for k in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fd = (loss_and_grad(LossKind::CrossEntropy, &zp, &Target::Class(1)).unwrap().0
                - loss_and_grad(LossKind::CrossEntropy, &zm, &Target::Class(1)).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn losses_are_non_negative_and_checked() {
        assert!(
            loss_and_grad(LossKind::CrossEntropy, &[100.0, -100.0], &Target::Class(0))
                .unwrap()
                .0
                >= 0.0
        );
        assert!(loss_and_grad(LossKind::CrossEntropy, &[0.0], &Target::Class(3)).is_err());
        assert!(loss_and_grad(LossKind::CrossEntropy, &[0.0], &Target::Values(vec![1.0])).is_err());
        assert!(loss_and_grad(LossKind::MeanSquaredError, &[0.0], &Target::Values(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn scoring() {
        assert_eq!(is_correct(&[0.1, 0.9], &Target::Class(1)), Some(true));
        assert_eq!(is_correct(&[0.1, 0.9], &Target::Values(vec![0.0, 0.0])), None);
        assert_eq!(is_correct(&[0.9, 0.1], &Target::Values(vec![0.0, 1.0])), Some(false));
    }
}
