//! Stochastic magnitude pruning with a sparsity-tracking threshold.
//!
//! Each evaluation draws `Bernoulli(p)` for every alive synapse with
//! `p = σ(β(θ − |w|))` (small weights are the likely victims), then nudges the
//! threshold toward the target sparsity with `θ ← max(0, θ + γ(ρ − sparsity))`.
//! Pruned synapses never come back.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BimError, Result};
use crate::matrix::sigmoid;
use crate::spiking::SynapticWeights;

/// Alive/pruned flags congruent with a synapse matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    n_post: usize,
    n_pre: usize,
    alive: Vec<bool>,
}

impl Mask {
    pub fn all_alive(n_post: usize, n_pre: usize) -> Self {
        Self {
            n_post,
            n_pre,
            alive: vec![true; n_post * n_pre],
        }
    }

    pub fn from_flags(n_post: usize, n_pre: usize, alive: Vec<bool>) -> Result<Self> {
        if alive.len() != n_post * n_pre {
            return Err(BimError::Contract(format!(
                "mask {n_post}x{n_pre} needs {} flags",
                n_post * n_pre
            )));
        }
        Ok(Self { n_post, n_pre, alive })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_post, self.n_pre)
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.alive
    }

    #[inline]
    pub fn is_alive(&self, post: usize, pre: usize) -> bool {
        self.alive[post * self.n_pre + pre]
    }

    pub fn prune(&mut self, post: usize, pre: usize) {
        self.alive[post * self.n_pre + pre] = false;
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn alive_in_column(&self, pre: usize) -> usize {
        (0..self.n_post).filter(|&i| self.is_alive(i, pre)).count()
    }
}

/// Which weights the pruning probability favors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneOrientation {
    /// `σ(β(θ − |w|))`: small weights go first.
    #[default]
    Small,
    /// `σ(β(|w| − θ))` exactly as the formula is usually printed: large
    /// weights go first. Kept for comparison runs.
    LiteralLarge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningState {
    pub mask: Mask,
    pub theta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub interval: u64,
    pub orientation: PruneOrientation,
}

impl PruningState {
    pub fn new(n_post: usize, n_pre: usize, beta: f64, gamma: f64, rho: f64, interval: u64) -> Result<Self> {
        let s = Self {
            mask: Mask::all_alive(n_post, n_pre),
            theta: 0.0,
            beta,
            gamma,
            rho,
            interval,
            orientation: PruneOrientation::Small,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(BimError::Config("pruning beta must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(BimError::Config("pruning gamma must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(BimError::Config(format!("pruning rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.interval == 0 {
            return Err(BimError::Config("pruning interval must be positive".into()));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(BimError::Config("pruning theta must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// One pruning evaluation followed by one controller tick.
    pub fn evaluate<R: Rng + ?Sized>(&mut self, weights: &mut SynapticWeights, rng: &mut R) -> Result<f64> {
        let next = apply_pruning(weights, self, rng)?;
        *self = next;
        let sparsity = measure_sparsity(self)?;
        self.theta = threshold_step(self.theta, sparsity, self.rho, self.gamma, 1.0);
        Ok(sparsity)
    }
}

/// `σ(β(|w| − θ))`
pub fn prune_probability(w: f64, theta: f64, beta: f64) -> f64 {
    sigmoid(beta * (w.abs() - theta))
}

/// Draw pruning decisions for every alive synapse. Newly pruned weights are
/// set to exactly zero in `weights`.
pub fn apply_pruning<R: Rng + ?Sized>(weights: &mut SynapticWeights, state: &PruningState, rng: &mut R) -> Result<PruningState> {
    if weights.w.shape() != state.mask.shape() {
        return Err(BimError::Contract(format!(
            "pruning mask {:?} vs weights {:?}",
            state.mask.shape(),
            weights.w.shape()
        )));
    }
    let mut next = state.clone();
    let n_pre = state.mask.n_pre;
    for (idx, w) in weights.w.as_mut_slice().iter_mut().enumerate() {
        if !next.mask.alive[idx] {
            *w = 0.0;
            continue;
        }
        let p = match state.orientation {
            PruneOrientation::Small => sigmoid(state.beta * (state.theta - w.abs())),
            PruneOrientation::LiteralLarge => prune_probability(*w, state.theta, state.beta),
        };
        if rng.random::<f64>() < p {
            next.mask.prune(idx / n_pre, idx % n_pre);
            *w = 0.0;
        }
    }
    Ok(next)
}

pub fn measure_sparsity(state: &PruningState) -> Result<f64> {
    if state.mask.is_empty() {
        return Err(BimError::Input("sparsity of an empty mask".into()));
    }
    Ok((state.mask.len() - state.mask.alive_count()) as f64 / state.mask.len() as f64)
}

/// `θ' = max(0, θ + dt·γ·(ρ − sparsity))`
pub fn threshold_step(theta: f64, sparsity: f64, rho: f64, gamma: f64, dt_ctrl: f64) -> f64 {
    (theta + dt_ctrl * gamma * (rho - sparsity)).max(0.0)
}
