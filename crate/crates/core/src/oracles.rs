//! Reference gradients used only for verification.
//!
//! [`bptt_gradient`] is reverse-mode differentiation over a recorded tape and
//! shares nothing with the forward-mode sensitivity code except the forward
//! pass itself. [`finite_difference_gradient`] differentiates the smoothed
//! network numerically.

use crate::error::{BimError, Result};
use crate::exec::{map_range, Execution};
use crate::learning::loss::{loss_and_grad, LossKind, Target};
use crate::learning::network::{BimNetwork, ParamKind, ReadoutMode, StepRecord};
use crate::spiking::{surrogate_spike_grad, SpikeMode};
use crate::ssm::SsmParamKind;

pub use crate::learning::stdp::stdp_pairwise;

/// Longest sequence [`bptt_gradient`] will record.
pub const MAX_TAPE_LEN: usize = 1000;

/// Forward record of a whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledTape {
    pub inputs: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub losses: Vec<Option<f64>>,
    pub loss_grads: Vec<Option<Vec<f64>>>,
}

impl UnrolledTape {
    pub fn record(net: &BimNetwork, inputs: &[Vec<f64>], targets: &[Option<Target>], loss: LossKind) -> Result<Self> {
        if inputs.len() > MAX_TAPE_LEN {
            return Err(BimError::Resource(format!(
                "tape of {} steps exceeds {MAX_TAPE_LEN}",
                inputs.len()
            )));
        }
        if inputs.len() != targets.len() {
            return Err(BimError::Contract(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let mut state = net.fresh_state();
        let mut tape = Self {
            inputs: inputs.to_vec(),
            steps: Vec::with_capacity(inputs.len()),
            losses: Vec::with_capacity(inputs.len()),
            loss_grads: Vec::with_capacity(inputs.len()),
        };
        for (u, target) in inputs.iter().zip(targets) {
            let rec = net.forward_step(&mut state, u)?;
            let (l, g) = match target {
                Some(t) => {
                    let (l, g) = loss_and_grad(loss, &rec.z, t)?;
                    (Some(l), Some(g))
                }
                None => (None, None),
            };
            tape.steps.push(rec);
            tape.losses.push(l);
            tape.loss_grads.push(g);
        }
        Ok(tape)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_loss(&self) -> f64 {
        self.losses.iter().flatten().sum()
    }

    /// Re-run the forward pass and check every recorded step is reproduced bit-exactly.
    pub fn replays_exactly(&self, net: &BimNetwork) -> Result<bool> {
        let mut state = net.fresh_state();
        for (u, rec) in self.inputs.iter().zip(&self.steps) {
            if net.forward_step(&mut state, u)? != *rec {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Gradient accumulators laid out by block.
struct Grads {
    base_a: Vec<f64>,
    gate_a: Vec<f64>,
    b0: Vec<f64>,
    gate_b: Vec<f64>,
    c0: Vec<f64>,
    gate_c: Vec<f64>,
    d: Vec<f64>,
    synapses: Vec<f64>,
    dec_w: Vec<f64>,
    dec_b: Vec<f64>,
}

/// Reverse-mode gradient of the summed loss through the unrolled network,
/// with the surrogate derivative at every spike nonlinearity.
pub fn bptt_gradient(
    net: &BimNetwork,
    inputs: &[Vec<f64>],
    targets: &[Option<Target>],
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let tape = UnrolledTape::record(net, inputs, targets, loss)?;
    Ok((tape.total_loss(), bptt_from_tape(net, &tape)?))
}

pub fn bptt_from_tape(net: &BimNetwork, tape: &UnrolledTape) -> Result<Vec<f64>> {
    let d = net.dims;
    let (n, m, p, r) = (d.n_state, d.n_in, d.n_out, d.n_readout);
    let n_cls = d.n_classes;
    let din = net.decoder_inputs();
    let lif = &net.readout.lif;
    let keep = 1.0 - lif.leak();
    let gain = lif.leak() * lif.r_m;
    let kappa = lif.trace_decay();
    let w = &net.readout.weights.w;

    let mut g = Grads {
        base_a: vec![0.0; n],
        gate_a: vec![0.0; n * m],
        b0: vec![0.0; n * m],
        gate_b: vec![0.0; n * m],
        c0: vec![0.0; p * n],
        gate_c: vec![0.0; n * m],
        d: vec![0.0; p * m],
        synapses: vec![0.0; r * p],
        dec_w: vec![0.0; n_cls * din],
        dec_b: vec![0.0; n_cls],
    };

    // Adjoints of the state leaving step t, accumulated from steps > t.
    let mut adj_x = vec![0.0; n];
    let mut adj_v1 = vec![0.0; p];
    let mut adj_q1 = vec![0.0; p];
    let mut adj_v2 = vec![0.0; r];
    let mut adj_q2 = vec![0.0; r];

    for (rec, gz) in tape.steps.iter().zip(&tape.loss_grads).rev() {
        let gz = gz.clone().unwrap_or_else(|| vec![0.0; n_cls]);
        let dec_in = rec.decoder_input(net.mode);
        for k in 0..n_cls {
            g.dec_b[k] += gz[k];
            for j in 0..din {
                g.dec_w[k * din + j] += gz[k] * dec_in[j];
            }
        }
        let back = net.decoder.w.matvec_t(&gz)?;

        let adj_y: Vec<f64> = match net.mode {
            ReadoutMode::Direct => back,
            ReadoutMode::Spiking => {
                // Readout layer.
                let mut adj_isyn = vec![0.0; r];
                for i in 0..r {
                    let q2 = adj_q2[i] + back[i];
                    let v2 = adj_v2[i];
                    let (v_pre, s) = (rec.readout.v_pre[i], rec.readout.spikes[i]);
                    let h = surrogate_spike_grad(v_pre, lif);
                    let adj_s = q2 + v2 * (lif.v_reset - v_pre);
                    let adj_vpre = v2 * (1.0 - s) + adj_s * h;
                    adj_v2[i] = keep * adj_vpre;
                    adj_q2[i] = kappa * q2;
                    adj_isyn[i] = gain * adj_vpre;
                }
                for i in 0..r {
                    for j in 0..p {
                        g.synapses[i * p + j] += adj_isyn[i] * rec.pre_trace[j];
                    }
                }
                let from_syn = w.matvec_t(&adj_isyn)?;
                // Encoder layer.
                let mut adj_y = vec![0.0; p];
                for k in 0..p {
                    let q1 = adj_q1[k] + from_syn[k];
                    let v1 = adj_v1[k];
                    let (v_pre, s) = (rec.encoder.v_pre[k], rec.encoder.spikes[k]);
                    let h = surrogate_spike_grad(v_pre, lif);
                    let adj_s = q1 + v1 * (lif.v_reset - v_pre);
                    let adj_vpre = v1 * (1.0 - s) + adj_s * h;
                    adj_v1[k] = keep * adj_vpre;
                    adj_q1[k] = kappa * q1;
                    adj_y[k] = gain * adj_vpre;
                }
                adj_y
            }
        };

        // y = C x + D u
        let sum_adj_y: f64 = adj_y.iter().sum();
        let from_y = rec.mats.c.matvec_t(&adj_y)?;
        for k in 0..p {
            for i in 0..n {
                g.c0[k * n + i] += adj_y[k] * rec.x[i];
            }
            for j in 0..m {
                g.d[k * m + j] += adj_y[k] * rec.u[j];
            }
        }
        for i in 0..n {
            for j in 0..m {
                g.gate_c[i * m + j] += sum_adj_y * rec.x[i] * rec.u[j];
            }
        }

        // x = a ⊙ x_prev + B u
        let u_sum: f64 = rec.u.iter().sum();
        for i in 0..n {
            let ax = adj_x[i] + from_y[i];
            let through_gate = ax * rec.decay_slope[i] * rec.x_prev[i];
            g.base_a[i] += through_gate;
            for j in 0..m {
                g.gate_a[i * m + j] += through_gate * rec.u[j];
                g.b0[i * m + j] += ax * rec.u[j];
                g.gate_b[i * m + j] += ax * rec.u[j] * u_sum;
            }
            adj_x[i] = rec.mats.a_diag[i] * ax;
        }
    }

    Ok(net
        .param_kinds()
        .into_iter()
        .map(|kind| match kind {
            ParamKind::Ssm(k) => match k {
                SsmParamKind::BaseA { i } => g.base_a[i],
                SsmParamKind::GateA { i, j } => g.gate_a[i * m + j],
                SsmParamKind::B0 { i, j } => g.b0[i * m + j],
                SsmParamKind::GateB { i, j } => g.gate_b[i * m + j],
                SsmParamKind::C0 { k, i } => g.c0[k * n + i],
                SsmParamKind::GateC { i, j } => g.gate_c[i * m + j],
                SsmParamKind::D { k, j } => g.d[k * m + j],
            },
            ParamKind::Synapse { post, pre } => g.synapses[post * p + pre],
            ParamKind::DecoderWeight { k, j } => g.dec_w[k * din + j],
            ParamKind::DecoderBias { k } => g.dec_b[k],
        })
        .collect())
}

/// Central-difference gradient of the smoothed network.
#[derive(Clone, Debug, PartialEq)]
pub struct FdGradient {
    pub grad: Vec<f64>,
    /// `false` where a ±ε perturbation moved any potential across threshold.
    pub smooth: Vec<bool>,
}

impl FdGradient {
    pub fn smooth_count(&self) -> usize {
        self.smooth.iter().filter(|&&s| s).count()
    }
}

/// Total loss of the smoothed network plus the threshold-crossing pattern.
fn smoothed_loss(net: &BimNetwork, inputs: &[Vec<f64>], targets: &[Option<Target>], loss: LossKind) -> Result<(f64, Vec<bool>)> {
    let mut state = net.fresh_state();
    let mut total = 0.0;
    let mut pattern = Vec::new();
    for (u, target) in inputs.iter().zip(targets) {
        let rec = net.forward_step(&mut state, u)?;
        pattern.extend(
            rec.encoder
                .v_pre
                .iter()
                .chain(&rec.readout.v_pre)
                .map(|&v| v >= net.readout.lif.v_th),
        );
        if let Some(t) = target {
            total += loss_and_grad(loss, &rec.z, t)?.0;
        }
    }
    Ok((total, pattern))
}

/// `(L(θ + εe_p) − L(θ − εe_p)) / 2ε` on the smoothed network, per parameter.
pub fn finite_difference_gradient(
    net: &BimNetwork,
    inputs: &[Vec<f64>],
    targets: &[Option<Target>],
    loss: LossKind,
    epsilon: f64,
    exec: Execution,
) -> Result<FdGradient> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(BimError::Input(format!("epsilon must be positive, got {epsilon}")));
    }
    if inputs.len() != targets.len() {
        return Err(BimError::Contract(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let base = net.smoothed();
    let theta = base.params();
    let (_, pattern) = smoothed_loss(&base, inputs, targets, loss)?;
    let probes = map_range(exec, theta.len(), |p| -> Result<(f64, bool)> {
        let mut shifted = base.clone();
        let mut t = theta.clone();
        t[p] = theta[p] + epsilon;
        shifted.set_params(&t)?;
        let (plus, pat_plus) = smoothed_loss(&shifted, inputs, targets, loss)?;
        t[p] = theta[p] - epsilon;
        shifted.set_params(&t)?;
        let (minus, pat_minus) = smoothed_loss(&shifted, inputs, targets, loss)?;
        Ok(((plus - minus) / (2.0 * epsilon), pat_plus == pattern && pat_minus == pattern))
    });
    let mut out = FdGradient {
        grad: Vec::with_capacity(theta.len()),
        smooth: Vec::with_capacity(theta.len()),
    };
    for probe in probes {
        let (g, s) = probe?;
        out.grad.push(g);
        out.smooth.push(s);
    }
    Ok(out)
}

/// `max_p |a_p − b_p| / max(‖b‖∞, floor)`, optionally restricted to `keep`.
pub fn relative_error(a: &[f64], b: &[f64], keep: Option<&[bool]>) -> f64 {
    let selected = |i: usize| keep.is_none_or(|k| k[i]);
    let scale = b
        .iter()
        .enumerate()
        .filter(|(i, _)| selected(*i))
        .fold(0.0_f64, |s, (_, v)| s.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .enumerate()
        .filter(|(i, _)| selected(*i))
        .fold(0.0_f64, |s, (_, (x, y))| s.max((x - y).abs()));
    diff / scale.max(1e-300)
}

impl BimNetwork {
    /// Copy of the network with the smooth spike nonlinearity.
    pub fn smoothed(&self) -> BimNetwork {
        BimNetwork {
            spike_mode: SpikeMode::Smooth,
            ..self.clone()
        }
    }
}
