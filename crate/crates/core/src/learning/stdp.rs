//! Pair-based STDP: the window function, the brute-force pair sum, and the
//! equivalent online trace form.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, BimError, Result};
use crate::matrix::Matrix;
use crate::spiking::SpikeTrain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdpConfig {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
}

impl Default for StdpConfig {
    fn default() -> Self {
        Self {
            a_plus: 0.01,
            a_minus: 0.012,
            tau_plus: 20.0,
            tau_minus: 20.0,
        }
    }
}

impl StdpConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_plus, self.a_minus, self.tau_plus, self.tau_minus];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(BimError::Config(
                "stdp: a_plus, a_minus, tau_plus, tau_minus must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `W(Δt)` with `Δt = t_post − t_pre`; `Δt = 0` takes the potentiation branch.
pub fn stdp_window(delta_t: f64, cfg: &StdpConfig) -> f64 {
    if delta_t >= 0.0 {
        cfg.a_plus * (-delta_t / cfg.tau_plus).exp()
    } else {
        -cfg.a_minus * (delta_t / cfg.tau_minus).exp()
    }
}

/// Brute-force `Σ_post Σ_pre W(t_post − t_pre)` over single-neuron trains.
pub fn stdp_pairwise(pre: &SpikeTrain, post: &SpikeTrain, cfg: &StdpConfig) -> f64 {
    let pre_times: Vec<f64> = pre.events().iter().map(|e| e.1).collect();
    post.events()
        .iter()
        .map(|&(_, t_post)| pre_times.iter().map(|&t_pre| stdp_window(t_post - t_pre, cfg)).sum::<f64>())
        .sum()
}

/// Online STDP bookkeeping for one synapse matrix `omega[post][pre]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdpState {
    pub pre_trace: Vec<f64>,
    pub post_trace: Vec<f64>,
    /// Accumulated `Ω` since the last weight application.
    pub omega: Matrix,
    /// Steps accumulated into `omega` since the last application.
    pub pending_steps: u64,
}

impl StdpState {
    pub fn new(n_pre: usize, n_post: usize) -> Self {
        Self {
            pre_trace: vec![0.0; n_pre],
            post_trace: vec![0.0; n_post],
            omega: Matrix::zeros(n_post, n_pre),
            pending_steps: 0,
        }
    }

    pub fn n_pre(&self) -> usize {
        self.pre_trace.len()
    }

    pub fn n_post(&self) -> usize {
        self.post_trace.len()
    }

    /// Clear traces (episode boundary); pending `omega` is kept.
    pub fn reset_traces(&mut self) {
        self.pre_trace.iter_mut().for_each(|v| *v = 0.0);
        self.post_trace.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Take the pending `Ω` normalized by the steps it covers, and zero the accumulator.
    pub fn take_normalized_omega(&mut self) -> Matrix {
        let steps = self.pending_steps.max(1) as f64;
        let empty = Matrix::zeros(self.n_post(), self.n_pre());
        let mut out = std::mem::replace(&mut self.omega, empty);
        if steps != 1.0 {
            out.as_mut_slice().iter_mut().for_each(|v| *v /= steps);
        }
        self.pending_steps = 0;
        out
    }
}

/// Advance the traces by one step of length `dt` and accumulate `Ω`.
///
/// Order: decay, pair the new spikes with older spikes through the decayed
/// traces, add the same-step (`Δt = 0`) pairs as potentiation, then add the
/// new spikes to the traces.
pub fn stdp_trace_step(
    state: &mut StdpState,
    pre_spikes: &[bool],
    post_spikes: &[bool],
    cfg: &StdpConfig,
    dt: f64,
) -> Result<()> {
    ensure_dim("stdp pre spikes", pre_spikes.len(), state.n_pre())?;
    ensure_dim("stdp post spikes", post_spikes.len(), state.n_post())?;
    let pre_decay = (-dt / cfg.tau_plus).exp();
    let post_decay = (-dt / cfg.tau_minus).exp();
    state.pre_trace.iter_mut().for_each(|v| *v *= pre_decay);
    state.post_trace.iter_mut().for_each(|v| *v *= post_decay);

    for (i, _) in post_spikes.iter().enumerate().filter(|(_, &s)| s) {
        let row = state.omega.row_mut(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o += cfg.a_plus * state.pre_trace[j];
            if pre_spikes[j] {
                *o += cfg.a_plus;
            }
        }
    }
    for (j, _) in pre_spikes.iter().enumerate().filter(|(_, &s)| s) {
        for i in 0..state.n_post() {
            state.omega[(i, j)] -= cfg.a_minus * state.post_trace[i];
        }
    }

    for (t, &s) in state.pre_trace.iter_mut().zip(pre_spikes) {
        if s {
            *t += 1.0;
        }
    }
    for (t, &s) in state.post_trace.iter_mut().zip(post_spikes) {
        if s {
            *t += 1.0;
        }
    }
    state.pending_steps += 1;
    Ok(())
}
