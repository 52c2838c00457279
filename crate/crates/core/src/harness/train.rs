//! The online training loop: episodes stream through `online_step`, pruning
//! runs every `prune_interval` steps, and a metrics record is emitted every
//! `metric_every` steps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BimError, Result};
use crate::harness::checkpoint::{Checkpoint, RngSnapshot};
use crate::harness::config::RunConfig;
use crate::harness::metrics::{MetricsRecord, MetricsSink};
use crate::harness::task::{gen_episode, Episode};
use crate::learning::{online_step, BimNetwork, LearnerState, OnlineConfig, ParamKind};
use crate::pruning::{measure_sparsity, Mask, PruningState};
use crate::spiking::NeuronState;

/// Generator streams derived from the global seed. Episode streams are the
/// episode indices themselves, so these sit at the top of the range.
const INIT_STREAM: u64 = u64::MAX - 1;
const PRUNE_STREAM: u64 = u64::MAX - 2;

#[derive(Clone, Debug, Default, PartialEq)]
struct Window {
    loss_sum: f64,
    losses: u64,
    correct: u64,
    scored: u64,
}

pub struct Trainer {
    cfg: RunConfig,
    online: OnlineConfig,
    net: BimNetwork,
    kinds: Vec<ParamKind>,
    learner: LearnerState,
    pruning: Option<PruningState>,
    rng: ChaCha8Rng,
    step: u64,
    episode: Option<(u64, Episode)>,
    window: Window,
    spikes: u64,
    synops: u64,
    started: Instant,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: u64,
    /// Largest instrumented state size seen during the run.
    pub peak_state_bytes: usize,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = seeded(cfg.seed, INIT_STREAM);
        let mut net = BimNetwork::init(cfg.dims(), cfg.lif(), cfg.readout_mode, cfg.init_scale, &mut init)?;
        net.spike_mode = cfg.spike_mode;
        let learner = LearnerState::new(&net);
        let pruning = if cfg.pruning { Some(cfg.pruning_state()?) } else { None };
        Ok(Self {
            online: cfg.online(),
            kinds: net.param_kinds(),
            learner,
            pruning,
            rng: seeded(cfg.seed, PRUNE_STREAM),
            step: 0,
            episode: None,
            window: Window::default(),
            spikes: 0,
            synops: 0,
            started: Instant::now(),
            net,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn network(&self) -> &BimNetwork {
        &self.net
    }

    pub fn learner(&self) -> &LearnerState {
        &self.learner
    }

    pub fn pruning(&self) -> Option<&PruningState> {
        self.pruning.as_ref()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Keep a running sum of every applied parameter change.
    pub fn log_updates(&mut self) {
        self.learner = std::mem::replace(&mut self.learner, LearnerState::new(&self.net)).with_update_log();
    }

    /// Bytes of state carried between steps: parameters, learner state,
    /// pruning mask, and the cached episode.
    pub fn state_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        let episode = self.episode.as_ref().map_or(0, |(_, e)| {
            e.inputs.iter().map(|u| u.len() * f).sum::<usize>()
                + e.targets
                    .iter()
                    .map(|t| std::mem::size_of_val(t) + t.as_ref().map_or(0, target_heap))
                    .sum::<usize>()
        });
        self.net.param_count() * f + self.learner.state_bytes() + self.pruning.as_ref().map_or(0, |p| p.mask.len()) + episode
    }

    fn current_episode(&mut self, index: u64) -> Result<&Episode> {
        if self.episode.as_ref().map(|e| e.0) != Some(index) {
            self.episode = Some((index, gen_episode(&self.cfg.task_spec(), index)?));
        }
        Ok(&self.episode.as_ref().expect("cached").1)
    }

    /// Advance one step; returns a record on metric ticks.
    pub fn step(&mut self) -> Result<Option<MetricsRecord>> {
        let len = self.cfg.episode_length as u64;
        let (index, pos) = (self.step / len, (self.step % len) as usize);
        if pos == 0 {
            self.learner.reset_dynamics();
        }
        let episode = self.current_episode(index)?;
        let u = episode.inputs[pos].clone();
        let target = episode.targets[pos].clone();
        let mask = self.pruning.as_ref().map(|p| &p.mask);
        let out = online_step(
            &mut self.net,
            &mut self.learner,
            &self.kinds,
            &u,
            target.as_ref(),
            &self.online,
            mask,
        )?;

        if let Some(l) = out.loss {
            self.window.loss_sum += l;
            self.window.losses += 1;
        }
        if let Some(c) = out.correct {
            self.window.scored += 1;
            self.window.correct += u64::from(c);
        }
        self.spikes += (out.pre_spikes + out.post_spikes) as u64;
        self.synops += out.synops;
        self.step += 1;

        if let Some(p) = self.pruning.as_mut() {
            if self.step.is_multiple_of(p.interval) {
                p.evaluate(&mut self.net.readout.weights, &mut self.rng)?;
            }
        }
        if self.step.is_multiple_of(self.cfg.metric_every) {
            return Ok(Some(self.take_record()?));
        }
        Ok(None)
    }

    fn take_record(&mut self) -> Result<MetricsRecord> {
        let w = std::mem::take(&mut self.window);
        let mean = |sum: f64, n: u64| if n == 0 { f64::NAN } else { sum / n as f64 };
        let n_syn = self.net.readout.weights.w.as_slice().len() as u64;
        let (alive, sparsity, theta) = match &self.pruning {
            Some(p) => (p.mask.alive_count() as u64, measure_sparsity(p)?, p.theta),
            None => (n_syn, 0.0, 0.0),
        };
        Ok(MetricsRecord {
            step: self.step,
            loss: mean(w.loss_sum, w.losses),
            accuracy: mean(w.correct as f64, w.scored),
            spikes: self.spikes,
            synops: self.synops,
            alive_synapses: alive,
            sparsity,
            theta,
            wall_ms: if self.cfg.wall_clock {
                self.started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        })
    }

    /// Run up to `until` total steps. Periodic checkpoints go to `dir` when
    /// given; on divergence a diagnostic checkpoint is written there before
    /// the error is returned.
    pub fn run(&mut self, until: u64, sink: &mut dyn MetricsSink, dir: Option<&Path>) -> Result<usize> {
        let mut peak = self.state_bytes();
        while self.step < until {
            match self.step() {
                Ok(Some(rec)) => sink.record(&rec)?,
                Ok(None) => {}
                Err(e @ BimError::Numeric(_)) => {
                    if let Some(dir) = dir {
                        self.checkpoint().save(&dir.join("diverged.ckpt"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
            peak = peak.max(self.state_bytes());
            if let Some(dir) = dir {
                if self.cfg.checkpoint_every > 0 && self.step.is_multiple_of(self.cfg.checkpoint_every) {
                    self.checkpoint().save(&checkpoint_path(dir, self.step))?;
                }
            }
        }
        Ok(peak)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Vec<f64>)> = vec![("params".into(), self.net.params())];
        let l = &self.learner;
        tensors.push(("ssm.x".into(), l.net.ssm.x.clone()));
        for (name, n) in [("encoder", &l.net.encoder), ("readout", &l.net.readout)] {
            tensors.push((format!("{name}.v"), n.v.clone()));
            tensors.push((format!("{name}.syn"), n.syn.clone()));
            tensors.push((
                format!("{name}.last_spike"),
                n.last_spike.iter().map(|t| t.unwrap_or(f64::NAN)).collect(),
            ));
        }
        tensors.push(("eligibility".into(), l.eligibility.as_slice().to_vec()));
        tensors.push(("stdp.pre_trace".into(), l.stdp.pre_trace.clone()));
        tensors.push(("stdp.post_trace".into(), l.stdp.post_trace.clone()));
        tensors.push(("stdp.omega".into(), l.stdp.omega.as_slice().to_vec()));
        tensors.push(("stdp.last_omega".into(), l.last_omega.as_slice().to_vec()));
        if let Some(log) = &l.update_log {
            tensors.push(("update_log".into(), log.clone()));
        }
        if let Some(p) = &self.pruning {
            tensors.push((
                "pruning.mask".into(),
                p.mask.flags().iter().map(|&a| f64::from(u8::from(a))).collect(),
            ));
            tensors.push(("pruning.theta".into(), vec![p.theta]));
        }
        tensors.push(("window.loss_sum".into(), vec![self.window.loss_sum]));

        let counters = vec![
            ("ssm.t".into(), l.net.ssm.t),
            ("encoder.step".into(), l.net.encoder.step),
            ("readout.step".into(), l.net.readout.step),
            ("stdp.pending_steps".into(), l.stdp.pending_steps),
            ("window.losses".into(), self.window.losses),
            ("window.correct".into(), self.window.correct),
            ("window.scored".into(), self.window.scored),
            ("spikes".into(), self.spikes),
            ("synops".into(), self.synops),
        ];
        Checkpoint {
            step: self.step,
            counters,
            config_text: self.cfg.to_toml_string().expect("config serializes"),
            tensors,
            rng: RngSnapshot {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = RunConfig::from_toml_str(&ckpt.config_text)?;
        let mut t = Self::new(cfg)?;
        let sized = |name: &str, len: usize| -> Result<Vec<f64>> {
            let v = ckpt.tensor(name)?;
            if v.len() != len {
                return Err(BimError::Format(format!(
                    "tensor {name:?} has {} values, config implies {len}",
                    v.len()
                )));
            }
            Ok(v.to_vec())
        };
        t.net.set_params(&sized("params", t.net.param_count())?)?;
        let l = &mut t.learner;
        l.net.ssm.x = sized("ssm.x", l.net.ssm.x.len())?;
        l.net.ssm.t = ckpt.counter("ssm.t")?;
        for (name, n) in [("encoder", &mut l.net.encoder), ("readout", &mut l.net.readout)] {
            restore_neurons(ckpt, name, n)?;
        }
        let elig = sized("eligibility", l.eligibility.as_slice().len())?;
        l.eligibility.as_mut_slice().copy_from_slice(&elig);
        l.stdp.pre_trace = sized("stdp.pre_trace", l.stdp.pre_trace.len())?;
        l.stdp.post_trace = sized("stdp.post_trace", l.stdp.post_trace.len())?;
        let omega = sized("stdp.omega", l.stdp.omega.as_slice().len())?;
        l.stdp.omega.as_mut_slice().copy_from_slice(&omega);
        let last = sized("stdp.last_omega", l.last_omega.as_slice().len())?;
        l.last_omega.as_mut_slice().copy_from_slice(&last);
        l.stdp.pending_steps = ckpt.counter("stdp.pending_steps")?;
        if ckpt.tensors.iter().any(|(n, _)| n == "update_log") {
            l.update_log = Some(sized("update_log", t.net.param_count())?);
        }
        if let Some(p) = t.pruning.as_mut() {
            let (rows, cols) = p.mask.shape();
            let flags = sized("pruning.mask", rows * cols)?.iter().map(|&v| v != 0.0).collect();
            p.mask = Mask::from_flags(rows, cols, flags)?;
            p.theta = sized("pruning.theta", 1)?[0];
        }
        t.window = Window {
            loss_sum: sized("window.loss_sum", 1)?[0],
            losses: ckpt.counter("window.losses")?,
            correct: ckpt.counter("window.correct")?,
            scored: ckpt.counter("window.scored")?,
        };
        t.spikes = ckpt.counter("spikes")?;
        t.synops = ckpt.counter("synops")?;
        t.step = ckpt.step;
        let mut rng = ChaCha8Rng::from_seed(ckpt.rng.seed);
        rng.set_stream(ckpt.rng.stream);
        rng.set_word_pos(ckpt.rng.word_pos);
        t.rng = rng;
        Ok(t)
    }
}

fn target_heap(t: &crate::learning::Target) -> usize {
    match t {
        crate::learning::Target::Values(v) => v.len() * std::mem::size_of::<f64>(),
        crate::learning::Target::Class(_) => 0,
    }
}

fn restore_neurons(ckpt: &Checkpoint, name: &str, n: &mut NeuronState) -> Result<()> {
    let len = n.len();
    let get = |field: &str| -> Result<Vec<f64>> {
        let v = ckpt.tensor(&format!("{name}.{field}"))?;
        if v.len() != len {
            return Err(BimError::Format(format!(
                "tensor {name}.{field} has {} values, expected {len}",
                v.len()
            )));
        }
        Ok(v.to_vec())
    };
    n.v = get("v")?;
    n.syn = get("syn")?;
    n.last_spike = get("last_spike")?
        .into_iter()
        .map(|t| if t.is_nan() { None } else { Some(t) })
        .collect();
    n.step = ckpt.counter(&format!("{name}.step"))?;
    Ok(())
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:010}.ckpt"))
}

/// Train from scratch for `cfg.total_steps` steps.
pub fn train_online(cfg: &RunConfig, sink: &mut dyn MetricsSink, dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    finish(&mut trainer, sink, dir)
}

/// Continue a checkpointed run to its configured `total_steps`.
pub fn resume_online(ckpt: &Checkpoint, sink: &mut dyn MetricsSink, dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::from_checkpoint(ckpt)?;
    finish(&mut trainer, sink, dir)
}

fn finish(trainer: &mut Trainer, sink: &mut dyn MetricsSink, dir: Option<&Path>) -> Result<TrainOutcome> {
    let peak = trainer.run(trainer.cfg.total_steps, sink, dir)?;
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = dir {
        checkpoint.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        steps: trainer.step,
        peak_state_bytes: peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::TaskKind;

    fn small() -> RunConfig {
        RunConfig {
            n_state: 4,
            n_out: 3,
            n_readout: 4,
            input_dim: 3,
            delay: 2,
            episode_length: 20,
            total_steps: 120,
            metric_every: 20,
            prune_interval: 10,
            parallel: false,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let cfg = RunConfig {
            eta: 0.0,
            pruning: false,
            ..small()
        };
        let initial = Trainer::new(cfg.clone()).unwrap().network().params();
        let out = train_online(&cfg, &mut Vec::new(), None).unwrap();
        assert_eq!(out.checkpoint.tensor("params").unwrap(), &initial[..]);
    }

    #[test]
    fn records_follow_cadence_and_counts_are_monotone() {
        let mut log = Vec::new();
        train_online(&small(), &mut log, None).unwrap();
        assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![20, 40, 60, 80, 100, 120]);
        for w in log.windows(2) {
            assert!(w[1].spikes >= w[0].spikes && w[1].synops >= w[0].synops);
            assert!(w[1].alive_synapses <= w[0].alive_synapses);
        }
        assert!(log.iter().all(|r| r.loss.is_finite() && r.wall_ms == 0.0));
    }

    #[test]
    fn same_seed_same_log() {
        for task in [
            TaskKind::DelayedCopy,
            TaskKind::SpikePatternClassification,
            TaskKind::OscillatoryAnomaly,
        ] {
            let cfg = RunConfig { task, ..small() };
            let (mut a, mut b) = (Vec::new(), Vec::new());
            train_online(&cfg, &mut a, None).unwrap();
            train_online(&cfg, &mut b, None).unwrap();
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = RunConfig { lambda: 0.5, ..small() };
        let mut full = Vec::new();
        train_online(&cfg, &mut full, None).unwrap();

        let mut t = Trainer::new(cfg).unwrap();
        let mut head = Vec::new();
        t.run(47, &mut head, None).unwrap();
        let ckpt = Checkpoint::from_bytes(&t.checkpoint().to_bytes()).unwrap();
        let mut tail = Vec::new();
        resume_online(&ckpt, &mut tail, None).unwrap();
        head.extend(tail);
        assert_eq!(format!("{head:?}"), format!("{full:?}"));
    }

    #[test]
    fn checkpoint_restores_every_tensor() {
        let mut t = Trainer::new(small()).unwrap();
        t.run(33, &mut Vec::new(), None).unwrap();
        let c = t.checkpoint();
        let back = Trainer::from_checkpoint(&c).unwrap().checkpoint();
        assert_eq!(c.to_bytes(), back.to_bytes());
    }

    #[test]
    fn divergence_writes_a_diagnostic_checkpoint() {
        let cfg = RunConfig {
            eta: 1e6,
            init_scale: 5.0,
            pruning: false,
            lambda: 1.0,
            ..small()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(RunConfig {
            total_steps: 100_000,
            ..cfg
        })
        .unwrap();
        let err = t.run(100_000, &mut Vec::new(), Some(dir.path())).unwrap_err();
        assert!(matches!(err, BimError::Numeric(_)), "{err:?}");
        assert!(Checkpoint::load(&dir.path().join("diverged.ckpt")).is_ok());
    }
}
