//! Flat run configuration, read from and echoed as TOML.
//!
//! Every key is optional and defaults as in [`RunConfig::default`]; unknown
//! keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BimError, Result};
use crate::exec::Execution;
use crate::harness::task::{TaskKind, TaskSpec};
use crate::learning::{HybridRuleConfig, NetworkDims, OnlineConfig, Plasticity, ReadoutMode, StdpConfig};
use crate::pruning::{PruneOrientation, PruningState};
use crate::spiking::{LifConfig, SpikeMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub task: TaskKind,
    pub episode_length: usize,
    pub input_dim: usize,
    pub delay: usize,
    pub classes: usize,
    pub anomaly_rate: f64,
    pub token_rate: f64,

    pub n_state: usize,
    pub n_out: usize,
    pub n_readout: usize,
    pub init_scale: f64,
    pub readout_mode: ReadoutMode,
    pub spike_mode: SpikeMode,

    pub tau_m: f64,
    pub r_m: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub tau_s: f64,
    pub dt: f64,
    pub surrogate_slope: f64,

    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,

    pub eta: f64,
    pub lambda: f64,
    pub omega_scale: f64,
    pub plasticity: Plasticity,

    pub pruning: bool,
    pub prune_beta: f64,
    pub prune_gamma: f64,
    pub prune_rho: f64,
    pub prune_interval: u64,
    pub prune_theta0: f64,
    pub prune_orientation: PruneOrientation,

    pub total_steps: u64,
    pub metric_every: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Record real elapsed time in `wall_ms`; off keeps logs byte-reproducible.
    pub wall_clock: bool,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = TaskSpec::default();
        let lif = LifConfig::default();
        let stdp = StdpConfig::default();
        let hybrid = HybridRuleConfig::default();
        Self {
            seed: 1,
            task: task.kind,
            episode_length: task.length,
            input_dim: task.dim,
            delay: task.delay,
            classes: task.classes,
            anomaly_rate: task.anomaly_rate,
            token_rate: task.token_rate,
            n_state: 32,
            n_out: 8,
            n_readout: 16,
            init_scale: 1.0,
            readout_mode: ReadoutMode::Spiking,
            spike_mode: SpikeMode::Hard,
            tau_m: lif.tau_m,
            r_m: lif.r_m,
            v_th: lif.v_th,
            v_reset: lif.v_reset,
            tau_s: lif.tau_s,
            dt: lif.dt,
            surrogate_slope: lif.surrogate_slope,
            a_plus: stdp.a_plus,
            a_minus: stdp.a_minus,
            tau_plus: stdp.tau_plus,
            tau_minus: stdp.tau_minus,
            eta: hybrid.eta,
            lambda: hybrid.lambda,
            omega_scale: hybrid.omega_scale,
            plasticity: Plasticity::Hybrid,
            pruning: true,
            prune_beta: 50.0,
            prune_gamma: 0.01,
            prune_rho: 0.8,
            prune_interval: 100,
            prune_theta0: 0.0,
            prune_orientation: PruneOrientation::Small,
            total_steps: 10_000,
            metric_every: 100,
            checkpoint_every: 0,
            wall_clock: false,
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BimError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.task_spec().validate()?;
        self.dims().validate()?;
        self.lif().validate()?;
        self.stdp().validate()?;
        self.hybrid().validate()?;
        if self.pruning {
            self.pruning_state()?;
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(BimError::Config("init_scale must be positive".into()));
        }
        if self.metric_every == 0 {
            return Err(BimError::Config("metric_every must be positive".into()));
        }
        Ok(())
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task,
            length: self.episode_length,
            dim: self.input_dim,
            delay: self.delay,
            classes: self.classes,
            anomaly_rate: self.anomaly_rate,
            token_rate: self.token_rate,
            seed: self.seed,
        }
    }

    pub fn dims(&self) -> NetworkDims {
        NetworkDims {
            n_in: self.input_dim,
            n_state: self.n_state,
            n_out: self.n_out,
            n_readout: self.n_readout,
            n_classes: self.task_spec().n_outputs(),
        }
    }

    pub fn lif(&self) -> LifConfig {
        LifConfig {
            tau_m: self.tau_m,
            r_m: self.r_m,
            v_th: self.v_th,
            v_reset: self.v_reset,
            tau_s: self.tau_s,
            dt: self.dt,
            surrogate_slope: self.surrogate_slope,
        }
    }

    pub fn stdp(&self) -> StdpConfig {
        StdpConfig {
            a_plus: self.a_plus,
            a_minus: self.a_minus,
            tau_plus: self.tau_plus,
            tau_minus: self.tau_minus,
        }
    }

    pub fn hybrid(&self) -> HybridRuleConfig {
        HybridRuleConfig {
            eta: self.eta,
            lambda: self.lambda,
            omega_scale: self.omega_scale,
        }
    }

    pub fn exec(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn online(&self) -> OnlineConfig {
        OnlineConfig {
            hybrid: self.hybrid(),
            stdp: self.stdp(),
            plasticity: self.plasticity,
            loss: self.task_spec().loss(),
            exec: self.exec(),
        }
    }

    /// Fresh controller sized to the readout synapses.
    pub fn pruning_state(&self) -> Result<PruningState> {
        let mut s = PruningState::new(
            self.n_readout,
            self.n_out,
            self.prune_beta,
            self.prune_gamma,
            self.prune_rho,
            self.prune_interval,
        )?;
        s.theta = self.prune_theta0;
        s.orientation = self.prune_orientation;
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig {
            seed: 9,
            task: TaskKind::OscillatoryAnomaly,
            lambda: 0.25,
            ..RunConfig::default()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn reads_documented_keys() {
        let cfg = RunConfig::from_toml_str(
            "task = \"spike-pattern-classification\"\nclasses = 3\nplasticity = \"gradient-only\"\nprune_orientation = \"literal-large\"\nspike_mode = \"smooth\"\n",
        )
        .unwrap();
        assert_eq!(cfg.task, TaskKind::SpikePatternClassification);
        assert_eq!(cfg.dims().n_classes, 3);
        assert_eq!(cfg.plasticity, Plasticity::GradientOnly);
        assert_eq!(cfg.prune_orientation, PruneOrientation::LiteralLarge);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("etaa = 0.1\n"), Err(BimError::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "lambda = 1.5",
            "dt = 15.0",
            "n_state = 0",
            "prune_rho = 1.0",
            "metric_every = 0",
            "delay = 500",
        ] {
            assert!(RunConfig::from_toml_str(text).is_err(), "{text}");
        }
        assert!(RunConfig::from_toml_str("pruning = false\nprune_rho = 1.0").is_ok());
    }
}
