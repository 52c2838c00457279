//! Discrete-time leaky integrate-and-fire layer.
//!
//! Membrane update (explicit Euler, `α = dt/τ_m`):
//!
//! ```text
//! v' = v + α(−v + R_m·(i_syn + i_ext))
//! s  = spike(v' − v_th)
//! v  ← v'(1 − s) + v_reset·s
//! q  ← q·exp(−dt/τ_s) + s           (outgoing PSP trace)
//! ```
//!
//! `spike` is the Heaviside step in [`SpikeMode::Hard`]. [`SpikeMode::Smooth`]
//! replaces it with `1/2 + x/(1 + k|x|)`, whose derivative is exactly the
//! fast-sigmoid surrogate; it exists so that finite differences have
//! something differentiable to look at.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, BimError, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeMode {
    #[default]
    Hard,
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifConfig {
    pub tau_m: f64,
    pub r_m: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub tau_s: f64,
    pub dt: f64,
    pub surrogate_slope: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau_m: 20.0,
            r_m: 1.0,
            v_th: 1.0,
            v_reset: 0.0,
            tau_s: 5.0,
            dt: 1.0,
            surrogate_slope: 10.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.tau_m,
            self.r_m,
            self.v_th,
            self.v_reset,
            self.tau_s,
            self.dt,
            self.surrogate_slope,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(BimError::Config("lif: non-finite parameter".into()));
        }
        if self.tau_m <= 0.0 || self.tau_s <= 0.0 || self.dt <= 0.0 {
            return Err(BimError::Config("lif: tau_m, tau_s and dt must be positive".into()));
        }
        if self.dt > self.tau_m / 2.0 {
            return Err(BimError::Config(format!(
                "lif: dt = {} exceeds tau_m/2 = {} (explicit Euler unstable)",
                self.dt,
                self.tau_m / 2.0
            )));
        }
        if self.v_th <= self.v_reset {
            return Err(BimError::Config("lif: v_th must exceed v_reset".into()));
        }
        if self.surrogate_slope <= 0.0 {
            return Err(BimError::Config("lif: surrogate_slope must be positive".into()));
        }
        Ok(())
    }

    /// Euler leak coefficient `dt/τ_m`.
    pub fn leak(&self) -> f64 {
        self.dt / self.tau_m
    }

    /// Per-step PSP trace decay `exp(−dt/τ_s)`.
    pub fn trace_decay(&self) -> f64 {
        (-self.dt / self.tau_s).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: Vec<f64>,
    /// Outgoing filtered spike trace `Σ_f α(t − t_f)` per neuron.
    pub syn: Vec<f64>,
    pub last_spike: Vec<Option<f64>>,
    /// Steps taken so far; the current time is `step · dt`.
    pub step: u64,
}

impl NeuronState {
    pub fn resting(n: usize) -> Self {
        Self {
            v: vec![0.0; n],
            syn: vec![0.0; n],
            last_spike: vec![None; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Synapse matrix `w[post][pre]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynapticWeights {
    pub w: Matrix,
}

impl SynapticWeights {
    pub fn new(w: Matrix) -> Self {
        Self { w }
    }

    pub fn n_post(&self) -> usize {
        self.w.rows()
    }

    pub fn n_pre(&self) -> usize {
        self.w.cols()
    }
}

/// Time-ordered `(neuron, time_ms)` spike events of one layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpikeTrain {
    n_neurons: usize,
    events: Vec<(usize, f64)>,
}

pub const SPIKE_TRAIN_HEADER: &str = "neuron_index\ttime_ms";

impl SpikeTrain {
    pub fn new(n_neurons: usize) -> Self {
        Self {
            n_neurons,
            events: Vec::new(),
        }
    }

    /// Single-neuron train from sorted times.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        let mut t = Self::new(1);
        for &time in times {
            t.push(0, time)?;
        }
        Ok(t)
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn events(&self) -> &[(usize, f64)] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, neuron: usize, time_ms: f64) -> Result<()> {
        if neuron >= self.n_neurons {
            return Err(BimError::Contract(format!(
                "spike from neuron {neuron} in a layer of {}",
                self.n_neurons
            )));
        }
        if !time_ms.is_finite() {
            return Err(BimError::Input("non-finite spike time".into()));
        }
        if let Some(&(_, last)) = self.events.last() {
            if time_ms < last {
                return Err(BimError::Input(format!("spike at {time_ms} ms precedes {last} ms")));
            }
        }
        if self.events.iter().rev().take_while(|e| e.1 == time_ms).any(|e| e.0 == neuron) {
            return Err(BimError::Input(format!("duplicate spike ({neuron}, {time_ms})")));
        }
        self.events.push((neuron, time_ms));
        Ok(())
    }

    /// Record every set flag of one step's spike vector at `time_ms`.
    pub fn record(&mut self, spikes: &[bool], time_ms: f64) -> Result<()> {
        for (i, _) in spikes.iter().enumerate().filter(|(_, &s)| s) {
            self.push(i, time_ms)?;
        }
        Ok(())
    }

    pub fn times_of(&self, neuron: usize) -> Vec<f64> {
        self.events.iter().filter(|e| e.0 == neuron).map(|e| e.1).collect()
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SPIKE_TRAIN_HEADER}")?;
        for (i, t) in &self.events {
            writeln!(out, "{i}\t{t}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R, n_neurons: usize) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == SPIKE_TRAIN_HEADER => {}
            _ => return Err(BimError::Format("spike train: missing header".into())),
        }
        let mut train = Self::new(n_neurons);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (i, t) = line
                .split_once('\t')
                .ok_or_else(|| BimError::Format(format!("spike train line {}: expected two columns", n + 2)))?;
            let i: usize = i
                .trim()
                .parse()
                .map_err(|e| BimError::Format(format!("line {}: {e}", n + 2)))?;
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|e| BimError::Format(format!("line {}: {e}", n + 2)))?;
            train.push(i, t)?;
        }
        Ok(train)
    }
}

/// Causal exponential PSP kernel with unit peak.
pub fn psp_kernel(s: f64, tau_s: f64) -> f64 {
    if s < 0.0 {
        0.0
    } else {
        (-s / tau_s).exp()
    }
}

/// `w · syn_traces`
pub fn synaptic_current(weights: &SynapticWeights, syn_traces: &[f64]) -> Result<Vec<f64>> {
    ensure_dim("synaptic_current traces", syn_traces.len(), weights.n_pre())?;
    weights.w.matvec(syn_traces)
}

/// Fast-sigmoid surrogate `1/(1 + k|v − v_th|)²`.
pub fn surrogate_spike_grad(v: f64, cfg: &LifConfig) -> f64 {
    let z = 1.0 + cfg.surrogate_slope * (v - cfg.v_th).abs();
    1.0 / (z * z)
}

/// Spike nonlinearity applied to the pre-reset potential.
#[inline]
pub fn spike_value(v_pre: f64, cfg: &LifConfig, mode: SpikeMode) -> f64 {
    let x = v_pre - cfg.v_th;
    match mode {
        SpikeMode::Hard => {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        SpikeMode::Smooth => 0.5 + x / (1.0 + cfg.surrogate_slope * x.abs()),
    }
}

/// Everything a gradient path needs from one layer step.
#[derive(Clone, Debug, PartialEq)]
pub struct LifAdvance {
    /// Potential after the leak/integration update, before reset.
    pub v_pre: Vec<f64>,
    /// Spike values fed downstream (0/1 in hard mode).
    pub spikes: Vec<f64>,
    /// Threshold crossings, regardless of mode.
    pub events: Vec<bool>,
}

/// Advance a layer by one step given its total input current.
pub fn lif_advance(state: &mut NeuronState, current: &[f64], cfg: &LifConfig, mode: SpikeMode) -> Result<LifAdvance> {
    ensure_dim("lif current", current.len(), state.len())?;
    let leak = cfg.leak();
    let decay = cfg.trace_decay();
    state.step += 1;
    let now = state.step as f64 * cfg.dt;
    let n = state.len();
    let mut out = LifAdvance {
        v_pre: Vec::with_capacity(n),
        spikes: Vec::with_capacity(n),
        events: Vec::with_capacity(n),
    };
    for i in 0..n {
        let v_pre = state.v[i] + leak * (-state.v[i] + cfg.r_m * current[i]);
        let s = spike_value(v_pre, cfg, mode);
        let fired = v_pre >= cfg.v_th;
        state.v[i] = match mode {
            SpikeMode::Hard if fired => cfg.v_reset,
            SpikeMode::Hard => v_pre,
            SpikeMode::Smooth => v_pre * (1.0 - s) + cfg.v_reset * s,
        };
        state.syn[i] = state.syn[i] * decay + s;
        if fired {
            state.last_spike[i] = Some(now);
        }
        out.v_pre.push(v_pre);
        out.spikes.push(s);
        out.events.push(fired);
    }
    Ok(out)
}

/// One hard-threshold step of the layer. Returns the new state and which
/// neurons fired.
pub fn lif_step(state: &NeuronState, i_syn: &[f64], i_ext: &[f64], cfg: &LifConfig) -> Result<(NeuronState, Vec<bool>)> {
    ensure_dim("lif_step i_syn", i_syn.len(), state.len())?;
    ensure_dim("lif_step i_ext", i_ext.len(), state.len())?;
    ensure_finite("lif_step i_syn", i_syn)?;
    ensure_finite("lif_step i_ext", i_ext)?;
    let current: Vec<f64> = i_syn.iter().zip(i_ext).map(|(a, b)| a + b).collect();
    let mut next = state.clone();
    let adv = lif_advance(&mut next, &current, cfg, SpikeMode::Hard)?;
    Ok((next, adv.events))
}
