//! The composed network: selective SSM → spiking encoder → plastic synapses
//! → spiking readout → linear decoder.
//!
//! The SSM output `y_t` is the external current of an encoder population of
//! `n_out` LIF neurons. Their PSP traces are the presynaptic side of the
//! plastic readout synapses; the readout population's own traces feed the
//! decoder. In [`ReadoutMode::Direct`] the spiking stages are bypassed and the
//! decoder reads `y_t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, BimError, Result};
use crate::learning::loss::Target;
use crate::matrix::{dot, Matrix};
use crate::spiking::{lif_advance, surrogate_spike_grad, LifAdvance, LifConfig, NeuronState, SpikeMode, SynapticWeights};
use crate::ssm::{decay_logits, decay_with_slope, selective_params, ssm_step, SsmMats, SsmParamKind, SsmParams, SsmState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    #[default]
    Spiking,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub n_in: usize,
    pub n_state: usize,
    /// SSM outputs, which is also the encoder (presynaptic) population size.
    pub n_out: usize,
    pub n_readout: usize,
    pub n_classes: usize,
}

impl NetworkDims {
    pub fn validate(&self) -> Result<()> {
        if [self.n_in, self.n_state, self.n_out, self.n_readout, self.n_classes].contains(&0) {
            return Err(BimError::Config(format!("all network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Linear map from readout traces (or `y`) to predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Decoder {
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.w.matvec(input)?;
        z.iter_mut().zip(&self.b).for_each(|(z, b)| *z += b);
        Ok(z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub weights: SynapticWeights,
    pub lif: LifConfig,
}

/// Role of a flat parameter index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Ssm(SsmParamKind),
    /// Readout synapse `w[post][pre]`.
    Synapse {
        post: usize,
        pre: usize,
    },
    DecoderWeight {
        k: usize,
        j: usize,
    },
    DecoderBias {
        k: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BimNetwork {
    pub dims: NetworkDims,
    pub ssm: SsmParams,
    pub readout: Readout,
    pub decoder: Decoder,
    pub mode: ReadoutMode,
    pub spike_mode: SpikeMode,
}

/// Dynamic (non-trainable) state carried between steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetState {
    pub ssm: SsmState,
    pub encoder: NeuronState,
    pub readout: NeuronState,
}

impl NetState {
    pub fn reset(&mut self) {
        *self = Self {
            ssm: SsmState::zeros(self.ssm.x.len()),
            encoder: NeuronState::resting(self.encoder.len()),
            readout: NeuronState::resting(self.readout.len()),
        };
    }
}

/// Every intermediate of one forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub u: Vec<f64>,
    pub mats: SsmMats,
    /// `da/dz` of each decay gate.
    pub decay_slope: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub encoder: LifAdvance,
    /// Encoder traces after this step (presynaptic PSP drive).
    pub pre_trace: Vec<f64>,
    pub readout: LifAdvance,
    /// Readout traces after this step (decoder input in spiking mode).
    pub post_trace: Vec<f64>,
    pub z: Vec<f64>,
}

impl StepRecord {
    pub fn decoder_input(&self, mode: ReadoutMode) -> &[f64] {
        match mode {
            ReadoutMode::Spiking => &self.post_trace,
            ReadoutMode::Direct => &self.y,
        }
    }
}

impl BimNetwork {
    /// Random network: SSM initialized by [`SsmParams::init_scaled`], readout
    /// and decoder uniform in `±scale/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(dims: NetworkDims, lif: LifConfig, mode: ReadoutMode, scale: f64, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        lif.validate()?;
        let ssm = SsmParams::init_scaled(dims.n_state, dims.n_in, dims.n_out, scale, rng)?;
        let mut uniform = |rows: usize, cols: usize| {
            let lim = scale / (cols as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-lim..=lim)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let synapses = uniform(dims.n_readout, dims.n_out)?;
        let dec_in = match mode {
            ReadoutMode::Spiking => dims.n_readout,
            ReadoutMode::Direct => dims.n_out,
        };
        let dec_w = uniform(dims.n_classes, dec_in)?;
        Ok(Self {
            dims,
            ssm,
            readout: Readout {
                weights: SynapticWeights::new(synapses),
                lif,
            },
            decoder: Decoder {
                w: dec_w,
                b: vec![0.0; dims.n_classes],
            },
            mode,
            spike_mode: SpikeMode::Hard,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        d.validate()?;
        self.readout.lif.validate()?;
        if (self.ssm.n_state(), self.ssm.n_in(), self.ssm.n_out()) != (d.n_state, d.n_in, d.n_out) {
            return Err(BimError::Contract("ssm dimensions disagree with network dims".into()));
        }
        if self.readout.weights.w.shape() != (d.n_readout, d.n_out) {
            return Err(BimError::Contract("readout synapses must be n_readout × n_out".into()));
        }
        if self.decoder.w.shape() != (d.n_classes, self.decoder_inputs()) || self.decoder.b.len() != d.n_classes {
            return Err(BimError::Contract("decoder shape disagrees with readout".into()));
        }
        Ok(())
    }

    pub fn decoder_inputs(&self) -> usize {
        match self.mode {
            ReadoutMode::Spiking => self.dims.n_readout,
            ReadoutMode::Direct => self.dims.n_out,
        }
    }

    pub fn param_count(&self) -> usize {
        self.ssm.len() + self.readout.weights.w.as_slice().len() + self.decoder.w.as_slice().len() + self.decoder.b.len()
    }

    /// Offset of the first readout synapse in the flat parameter vector.
    pub fn synapse_offset(&self) -> usize {
        self.ssm.len()
    }

    /// Size of the recurrent state that sensitivities are tracked for.
    pub fn sensitivity_len(&self) -> usize {
        match self.mode {
            ReadoutMode::Spiking => self.dims.n_state + 2 * self.dims.n_out + 2 * self.dims.n_readout,
            ReadoutMode::Direct => self.dims.n_state,
        }
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut kinds: Vec<ParamKind> = (0..self.ssm.len()).map(|p| ParamKind::Ssm(self.ssm.kind_of(p))).collect();
        let (n_post, n_pre) = self.readout.weights.w.shape();
        for post in 0..n_post {
            for pre in 0..n_pre {
                kinds.push(ParamKind::Synapse { post, pre });
            }
        }
        let (n_cls, n_dec) = self.decoder.w.shape();
        for k in 0..n_cls {
            for j in 0..n_dec {
                kinds.push(ParamKind::DecoderWeight { k, j });
            }
        }
        kinds.extend((0..n_cls).map(|k| ParamKind::DecoderBias { k }));
        kinds
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.ssm.theta());
        v.extend_from_slice(self.readout.weights.w.as_slice());
        v.extend_from_slice(self.decoder.w.as_slice());
        v.extend_from_slice(&self.decoder.b);
        v
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        ensure_dim("network parameters", theta.len(), self.param_count())?;
        ensure_finite("network parameters", theta)?;
        let mut rest = theta;
        for dst in self.param_slices_mut() {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Parameter blocks in flat order.
    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.ssm.theta_mut(),
            self.readout.weights.w.as_mut_slice(),
            self.decoder.w.as_mut_slice(),
            self.decoder.b.as_mut_slice(),
        ]
    }

    pub fn fresh_state(&self) -> NetState {
        NetState {
            ssm: SsmState::zeros(self.dims.n_state),
            encoder: NeuronState::resting(self.dims.n_out),
            readout: NeuronState::resting(self.dims.n_readout),
        }
    }

    /// Advance `state` by one input and record every intermediate.
    pub fn forward_step(&self, state: &mut NetState, u: &[f64]) -> Result<StepRecord> {
        let mats = selective_params(&self.ssm, u)?;
        let decay_slope = decay_logits(&self.ssm, u)
            .into_iter()
            .map(|z| decay_with_slope(z).1)
            .collect();
        let x_prev = state.ssm.x.clone();
        let (next, y) = ssm_step(&state.ssm, u, &mats)?;
        state.ssm = next;
        let lif = &self.readout.lif;

        let (encoder, pre_trace, readout, post_trace, dec_in) = match self.mode {
            ReadoutMode::Spiking => {
                let encoder = lif_advance(&mut state.encoder, &y, lif, self.spike_mode)?;
                let pre_trace = state.encoder.syn.clone();
                let i_syn = self.readout.weights.w.matvec(&pre_trace)?;
                let readout = lif_advance(&mut state.readout, &i_syn, lif, self.spike_mode)?;
                let post_trace = state.readout.syn.clone();
                let dec_in = post_trace.clone();
                (encoder, pre_trace, readout, post_trace, dec_in)
            }
            ReadoutMode::Direct => {
                let empty = LifAdvance {
                    v_pre: vec![],
                    spikes: vec![],
                    events: vec![],
                };
                (empty.clone(), vec![], empty, vec![], y.clone())
            }
        };
        let z = self.decoder.apply(&dec_in)?;
        Ok(StepRecord {
            u: u.to_vec(),
            mats,
            decay_slope,
            x_prev,
            x: state.ssm.x.clone(),
            y,
            encoder,
            pre_trace,
            readout,
            post_trace,
            z,
        })
    }
}

/// Per-step quantities the sensitivity recursion needs, gathered once and
/// shared read-only by every parameter column.
pub(crate) struct SensitivityContext<'a> {
    pub net: &'a BimNetwork,
    pub rec: &'a StepRecord,
    pub u_sum: f64,
    /// `(1 − α)`, `α·R_m`, PSP trace decay.
    pub keep: f64,
    pub gain: f64,
    pub trace_decay: f64,
    /// Surrogate slopes and reset factors of encoder and readout.
    pub enc_h: Vec<f64>,
    pub enc_r: Vec<f64>,
    pub ro_h: Vec<f64>,
    pub ro_r: Vec<f64>,
    /// `decoderᵀ · ∂loss/∂z` (zero when the step carries no loss).
    pub pullback: Vec<f64>,
    pub dl_dz: Option<Vec<f64>>,
}

fn reset_factors(adv: &LifAdvance, cfg: &LifConfig) -> (Vec<f64>, Vec<f64>) {
    adv.v_pre
        .iter()
        .zip(&adv.spikes)
        .map(|(&v, &s)| {
            let h = surrogate_spike_grad(v, cfg);
            (h, (1.0 - s) + (cfg.v_reset - v) * h)
        })
        .unzip()
}

impl<'a> SensitivityContext<'a> {
    pub fn new(net: &'a BimNetwork, rec: &'a StepRecord, dl_dz: Option<Vec<f64>>) -> Result<Self> {
        let lif = &net.readout.lif;
        let (enc_h, enc_r) = reset_factors(&rec.encoder, lif);
        let (ro_h, ro_r) = reset_factors(&rec.readout, lif);
        let pullback = match &dl_dz {
            Some(g) => net.decoder.w.matvec_t(g)?,
            None => vec![0.0; net.decoder_inputs()],
        };
        Ok(Self {
            net,
            rec,
            u_sum: rec.u.iter().sum(),
            keep: 1.0 - lif.leak(),
            gain: lif.leak() * lif.r_m,
            trace_decay: lif.trace_decay(),
            enc_h,
            enc_r,
            ro_h,
            ro_r,
            pullback,
            dl_dz,
        })
    }

    /// Advance one parameter's sensitivity column through this step and
    /// return that parameter's instantaneous gradient contribution.
    pub fn advance_column(&self, kind: ParamKind, col: &mut [f64], scratch: &mut Vec<f64>) -> f64 {
        let d = &self.net.dims;
        let rec = self.rec;
        let (n, p_out) = (d.n_state, d.n_out);

        // State: dx = a ⊙ dx + ∂x/∂θ
        let (dx, rest) = col.split_at_mut(n);
        for (v, a) in dx.iter_mut().zip(&rec.mats.a_diag) {
            *v *= a;
        }
        if let ParamKind::Ssm(k) = kind {
            match k {
                SsmParamKind::BaseA { i } => dx[i] += rec.decay_slope[i] * rec.x_prev[i],
                SsmParamKind::GateA { i, j } => dx[i] += rec.decay_slope[i] * rec.x_prev[i] * rec.u[j],
                SsmParamKind::B0 { i, j } => dx[i] += rec.u[j],
                SsmParamKind::GateB { i, j } => dx[i] += rec.u[j] * self.u_sum,
                _ => {}
            }
        }

        // Output: dy = C·dx + ∂y/∂θ
        scratch.clear();
        scratch.extend((0..p_out).map(|k| dot(rec.mats.c.row(k), dx)));
        let dy = &mut scratch[..];
        if let ParamKind::Ssm(k) = kind {
            match k {
                SsmParamKind::C0 { k, i } => dy[k] += rec.x[i],
                SsmParamKind::GateC { i, j } => dy.iter_mut().for_each(|v| *v += rec.x[i] * rec.u[j]),
                SsmParamKind::D { k, j } => dy[k] += rec.u[j],
                _ => {}
            }
        }

        let direct = match (kind, &self.dl_dz) {
            (ParamKind::DecoderWeight { k, j }, Some(g)) => g[k] * rec.decoder_input(self.net.mode)[j],
            (ParamKind::DecoderBias { k }, Some(g)) => g[k],
            _ => 0.0,
        };

        if self.net.mode == ReadoutMode::Direct {
            return dot(&self.pullback, dy) + direct;
        }

        let r = d.n_readout;
        let (dv1, rest) = rest.split_at_mut(p_out);
        let (dq1, rest) = rest.split_at_mut(p_out);
        let (dv2, dq2) = rest.split_at_mut(r);

        for k in 0..p_out {
            let dv_pre = self.keep * dv1[k] + self.gain * dy[k];
            dv1[k] = self.enc_r[k] * dv_pre;
            dq1[k] = self.trace_decay * dq1[k] + self.enc_h[k] * dv_pre;
        }

        let w = &self.net.readout.weights.w;
        for i in 0..r {
            let mut di = dot(w.row(i), dq1);
            if let ParamKind::Synapse { post, pre } = kind {
                if post == i {
                    di += rec.pre_trace[pre];
                }
            }
            let dv_pre = self.keep * dv2[i] + self.gain * di;
            dv2[i] = self.ro_r[i] * dv_pre;
            dq2[i] = self.trace_decay * dq2[i] + self.ro_h[i] * dv_pre;
        }

        dot(&self.pullback, dq2) + direct
    }
}

/// Per-step targets for a sequence; `None` means no loss at that step.
pub type TargetSeq = [Option<Target>];
