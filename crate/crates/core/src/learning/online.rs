//! One fully online learning step, and the sequence-summed RTRL gradient.

use serde::{Deserialize, Serialize};

use crate::error::{BimError, Result};
use crate::exec::{for_each_chunk_pair_mut, Execution};
use crate::learning::eligibility::EligibilityTensor;
use crate::learning::hybrid::{hybrid_update, HybridRuleConfig};
use crate::learning::loss::{is_correct, loss_and_grad, LossKind, Target};
use crate::learning::network::{BimNetwork, NetState, ParamKind, SensitivityContext, StepRecord};
use crate::learning::stdp::{stdp_trace_step, StdpConfig, StdpState};
use crate::matrix::Matrix;
use crate::pruning::Mask;

/// Parameter columns handed to one parallel task.
const COLUMNS_PER_TASK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plasticity {
    /// λ-mix of descent gradient and STDP.
    #[default]
    Hybrid,
    /// Descent gradient only; no STDP bookkeeping at all.
    GradientOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineConfig {
    pub hybrid: HybridRuleConfig,
    pub stdp: StdpConfig,
    pub plasticity: Plasticity,
    pub loss: LossKind,
    pub exec: Execution,
}

/// Everything the learner carries between steps besides the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    pub net: NetState,
    pub eligibility: EligibilityTensor,
    pub stdp: StdpState,
    /// Normalized `Ω` applied at the most recent step.
    pub last_omega: Matrix,
    grad: Vec<f64>,
    /// Running sum of every applied parameter change, when enabled.
    pub update_log: Option<Vec<f64>>,
}

impl LearnerState {
    pub fn new(net: &BimNetwork) -> Self {
        let (n_post, n_pre) = net.readout.weights.w.shape();
        Self {
            net: net.fresh_state(),
            eligibility: EligibilityTensor::zeros(net.sensitivity_len(), net.param_count()),
            stdp: StdpState::new(n_pre, n_post),
            last_omega: Matrix::zeros(n_post, n_pre),
            grad: vec![0.0; net.param_count()],
            update_log: None,
        }
    }

    pub fn with_update_log(mut self) -> Self {
        self.update_log = Some(vec![0.0; self.grad.len()]);
        self
    }

    /// Episode boundary: dynamic state, sensitivities and STDP traces return to rest.
    pub fn reset_dynamics(&mut self) {
        self.net.reset();
        self.eligibility.reset();
        self.stdp.reset_traces();
    }

    /// Gradient computed at the most recent step.
    pub fn last_gradient(&self) -> &[f64] {
        &self.grad
    }

    /// Bytes of persistent state.
    pub fn state_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        let net = &self.net;
        let neurons = |n: &crate::spiking::NeuronState| {
            n.v.len() * f + n.syn.len() * f + n.last_spike.len() * std::mem::size_of::<Option<f64>>()
        };
        net.ssm.x.len() * f
            + neurons(&net.encoder)
            + neurons(&net.readout)
            + std::mem::size_of_val(self.eligibility.as_slice())
            + (self.stdp.pre_trace.len() + self.stdp.post_trace.len() + self.stdp.omega.as_slice().len()) * f
            + std::mem::size_of_val(self.last_omega.as_slice())
            + self.grad.len() * f
            + self.update_log.as_ref().map_or(0, |v| v.len() * f)
    }
}

/// Per-step observables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub loss: Option<f64>,
    pub correct: Option<bool>,
    pub prediction: Vec<f64>,
    pub pre_spikes: usize,
    pub post_spikes: usize,
    /// Presynaptic spikes × alive outgoing synapses.
    pub synops: u64,
}

/// Propagate every sensitivity column through `rec` and write each
/// parameter's instantaneous gradient into `grad`.
fn sensitivity_pass(
    net: &BimNetwork,
    kinds: &[ParamKind],
    eligibility: &mut EligibilityTensor,
    rec: &StepRecord,
    dl_dz: Option<Vec<f64>>,
    grad: &mut [f64],
    exec: Execution,
) -> Result<()> {
    let ctx = SensitivityContext::new(net, rec, dl_dz)?;
    let n_s = eligibility.n_state();
    for_each_chunk_pair_mut(
        exec,
        eligibility.as_mut_slice(),
        n_s * COLUMNS_PER_TASK,
        grad,
        COLUMNS_PER_TASK,
        |task, cols, g| {
            let mut scratch = Vec::with_capacity(net.dims.n_out);
            for (c, (col, g)) in cols.chunks_mut(n_s.max(1)).zip(g.iter_mut()).enumerate() {
                let p = task * COLUMNS_PER_TASK + c;
                *g = ctx.advance_column(kinds[p], col, &mut scratch);
            }
        },
    );
    Ok(())
}

/// Loss, its gradient, and correctness, when the step has a target.
type Scored = (Option<f64>, Option<Vec<f64>>, Option<bool>);

fn evaluate(kind: LossKind, z: &[f64], target: Option<&Target>) -> Result<Scored> {
    match target {
        None => Ok((None, None, None)),
        Some(t) => {
            let (l, g) = loss_and_grad(kind, z, t)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(BimError::Numeric(format!("non-finite loss {l}")));
            }
            Ok((Some(l), Some(g), is_correct(z, t)))
        }
    }
}

/// One online step: forward, loss, sensitivity/gradient update, STDP, and the
/// hybrid parameter update. Pruned synapses (per `mask`) stay at zero.
pub fn online_step(
    net: &mut BimNetwork,
    learner: &mut LearnerState,
    kinds: &[ParamKind],
    u: &[f64],
    target: Option<&Target>,
    cfg: &OnlineConfig,
    mask: Option<&Mask>,
) -> Result<StepOutcome> {
    let rec = net.forward_step(&mut learner.net, u)?;
    let (loss, dl_dz, correct) = evaluate(cfg.loss, &rec.z, target)?;

    sensitivity_pass(net, kinds, &mut learner.eligibility, &rec, dl_dz, &mut learner.grad, cfg.exec)?;

    let pre_events = &rec.encoder.events;
    let post_events = &rec.readout.events;
    let synops = pre_events
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(j, _)| mask.map_or(net.dims.n_readout, |m| m.alive_in_column(j)) as u64)
        .sum();

    let omega = match cfg.plasticity {
        Plasticity::Hybrid if !pre_events.is_empty() => {
            stdp_trace_step(&mut learner.stdp, pre_events, post_events, &cfg.stdp, net.readout.lif.dt)?;
            Some(learner.stdp.take_normalized_omega())
        }
        _ => None,
    };

    let syn_start = net.synapse_offset();
    let n_pre = net.dims.n_out;
    let grad = &learner.grad;
    let mut offset = 0;
    for block in net.param_slices_mut() {
        for (local, w) in block.iter_mut().enumerate() {
            let p = offset + local;
            let delta = match cfg.plasticity {
                Plasticity::GradientOnly => cfg.hybrid.eta * -grad[p],
                Plasticity::Hybrid => {
                    let syn = p
                        .checked_sub(syn_start)
                        .filter(|&s| s < omega.as_ref().map_or(0, |o| o.as_slice().len()));
                    let om = match (syn, &omega) {
                        (Some(s), Some(o)) => o.as_slice()[s],
                        _ => 0.0,
                    };
                    hybrid_update(grad[p], om, &cfg.hybrid)
                }
            };
            let pruned = match (p.checked_sub(syn_start), mask) {
                (Some(s), Some(m)) if s < m.len() => !m.is_alive(s / n_pre, s % n_pre),
                _ => false,
            };
            if pruned {
                *w = 0.0;
                continue;
            }
            *w += delta;
            if let Some(log) = learner.update_log.as_mut() {
                log[p] += delta;
            }
        }
        offset += block.len();
    }
    if let Some(o) = omega {
        learner.last_omega = o;
    }

    Ok(StepOutcome {
        loss,
        correct,
        prediction: rec.z,
        pre_spikes: pre_events.iter().filter(|&&s| s).count(),
        post_spikes: post_events.iter().filter(|&&s| s).count(),
        synops,
    })
}

/// Sequence-summed RTRL gradient with parameters held fixed. Returns the
/// total loss and `Σ_t g(t)`.
pub fn rtrl_gradient(
    net: &BimNetwork,
    inputs: &[Vec<f64>],
    targets: &[Option<Target>],
    loss: LossKind,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != targets.len() {
        return Err(BimError::Contract(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let kinds = net.param_kinds();
    let mut state = net.fresh_state();
    let mut elig = EligibilityTensor::zeros(net.sensitivity_len(), net.param_count());
    let mut step_grad = vec![0.0; net.param_count()];
    let mut total = vec![0.0; net.param_count()];
    let mut total_loss = 0.0;
    for (u, target) in inputs.iter().zip(targets) {
        let rec = net.forward_step(&mut state, u)?;
        let (l, dl_dz, _) = evaluate(loss, &rec.z, target.as_ref())?;
        total_loss += l.unwrap_or(0.0);
        sensitivity_pass(net, &kinds, &mut elig, &rec, dl_dz, &mut step_grad, exec)?;
        total.iter_mut().zip(&step_grad).for_each(|(t, g)| *t += g);
    }
    Ok((total_loss, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::network::{NetworkDims, ReadoutMode};
    use crate::spiking::LifConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> BimNetwork {
        let dims = NetworkDims {
            n_in: 2,
            n_state: 4,
            n_out: 3,
            n_readout: 3,
            n_classes: 2,
        };
        BimNetwork::init(
            dims,
            LifConfig::default(),
            ReadoutMode::Spiking,
            3.0,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    fn cfg(eta: f64, lambda: f64, plasticity: Plasticity) -> OnlineConfig {
        OnlineConfig {
            hybrid: HybridRuleConfig {
                eta,
                lambda,
                omega_scale: 1.0,
            },
            stdp: StdpConfig::default(),
            plasticity,
            loss: LossKind::MeanSquaredError,
            exec: Execution::Sequential,
        }
    }

    fn stream(seed: u64, len: usize) -> Vec<(Vec<f64>, Option<Target>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                let u = vec![rng.random_range(0.0..3.0), rng.random_range(-1.0..3.0)];
                (u, Some(Target::Values(vec![rng.random_range(0.0..1.0), 0.0])))
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut n = net(1);
        let before = n.params();
        let kinds = n.param_kinds();
        let mut l = LearnerState::new(&n);
        for (u, t) in stream(2, 50) {
            let out = online_step(
                &mut n,
                &mut l,
                &kinds,
                &u,
                t.as_ref(),
                &cfg(0.0, 0.5, Plasticity::Hybrid),
                None,
            )
            .unwrap();
            assert!(out.loss.is_some());
        }
        assert_eq!(n.params(), before);
    }

    #[test]
    fn execution_policies_are_bit_identical() {
        let run = |exec: Execution| {
            let mut n = net(3);
            let kinds = n.param_kinds();
            let mut l = LearnerState::new(&n);
            let c = OnlineConfig {
                exec,
                ..cfg(0.05, 0.7, Plasticity::Hybrid)
            };
            let losses: Vec<f64> = stream(4, 100)
                .iter()
                .map(|(u, t)| {
                    online_step(&mut n, &mut l, &kinds, u, t.as_ref(), &c, None)
                        .unwrap()
                        .loss
                        .unwrap()
                })
                .collect();
            (losses, n.params())
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn rtrl_gradient_matches_online_first_step() {
        let n = net(5);
        let s = stream(6, 1);
        let (_, g) = rtrl_gradient(
            &n,
            &[s[0].0.clone()],
            &[s[0].1.clone()],
            LossKind::MeanSquaredError,
            Execution::Sequential,
        )
        .unwrap();
        let mut m = n.clone();
        let kinds = m.param_kinds();
        let mut l = LearnerState::new(&m);
        online_step(
            &mut m,
            &mut l,
            &kinds,
            &s[0].0,
            s[0].1.as_ref(),
            &cfg(0.0, 1.0, Plasticity::Hybrid),
            None,
        )
        .unwrap();
        assert_eq!(l.last_gradient(), &g[..]);
    }

    #[test]
    fn masked_synapses_stay_zero() {
        let mut n = net(7);
        let kinds = n.param_kinds();
        let mut mask = Mask::all_alive(n.dims.n_readout, n.dims.n_out);
        mask.prune(0, 1);
        n.readout.weights.w[(0, 1)] = 0.0;
        let mut l = LearnerState::new(&n);
        for (u, t) in stream(8, 200) {
            online_step(
                &mut n,
                &mut l,
                &kinds,
                &u,
                t.as_ref(),
                &cfg(0.1, 0.5, Plasticity::Hybrid),
                Some(&mask),
            )
            .unwrap();
            assert_eq!(n.readout.weights.w[(0, 1)], 0.0);
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut n = net(9);
        n.decoder.b[0] = f64::MAX;
        let kinds = n.param_kinds();
        let mut l = LearnerState::new(&n);
        let t = Target::Values(vec![-f64::MAX, 0.0]);
        let err = online_step(
            &mut n,
            &mut l,
            &kinds,
            &[1.0, 1.0],
            Some(&t),
            &cfg(0.1, 1.0, Plasticity::Hybrid),
            None,
        );
        assert!(matches!(err, Err(BimError::Numeric(_))));
    }
}
