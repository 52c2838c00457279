//! Event-driven cost accounting from a metrics log.
//!
//! One synaptic operation is one presynaptic spike delivered over one alive
//! synapse. The dense equivalent delivers every alive synapse every step.

use crate::error::{BimError, Result};
use crate::harness::metrics::MetricsRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub steps: u64,
    pub total_spikes: u64,
    pub total_synops: u64,
    pub spikes_per_step: f64,
    pub sparsity: f64,
    pub dense_synops: f64,
    /// `total_synops / dense_synops` (0 when nothing was alive).
    pub event_ratio: f64,
}

pub fn energy_report(log: &[MetricsRecord]) -> Result<EnergyReport> {
    let last = log
        .last()
        .ok_or_else(|| BimError::Input("energy report of an empty metrics log".into()))?;
    let mut prev = 0;
    let mut dense = 0.0;
    for r in log {
        if r.step < prev {
            return Err(BimError::Input(format!("metrics steps go backwards at {}", r.step)));
        }
        dense += r.alive_synapses as f64 * (r.step - prev) as f64;
        prev = r.step;
    }
    let steps = last.step;
    Ok(EnergyReport {
        steps,
        total_spikes: last.spikes,
        total_synops: last.synops,
        spikes_per_step: if steps == 0 { 0.0 } else { last.spikes as f64 / steps as f64 },
        sparsity: last.sparsity,
        dense_synops: dense,
        event_ratio: if dense > 0.0 { last.synops as f64 / dense } else { 0.0 },
    })
}

impl EnergyReport {
    pub fn to_text(&self) -> String {
        format!(
            "steps\t{}\ntotal_spikes\t{}\ntotal_synops\t{}\nspikes_per_step\t{}\nsparsity\t{}\ndense_synops\t{}\nevent_ratio\t{}\n",
            self.steps,
            self.total_spikes,
            self.total_synops,
            self.spikes_per_step,
            self.sparsity,
            self.dense_synops,
            self.event_ratio
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Log for `n_pre` inputs firing with probability `p` per step into
    /// `n_post` fully connected outputs.
    fn simulate(n_pre: u64, n_post: u64, p: f64, steps: u64, every: u64) -> Vec<MetricsRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut spikes, mut synops) = (0u64, 0u64);
        let mut log = Vec::new();
        for step in 1..=steps {
            let fired = (0..n_pre).filter(|_| rng.random::<f64>() < p).count() as u64;
            spikes += fired;
            synops += fired * n_post;
            if step % every == 0 {
                log.push(MetricsRecord {
                    step,
                    loss: 0.0,
                    accuracy: f64::NAN,
                    spikes,
                    synops,
                    alive_synapses: n_pre * n_post,
                    sparsity: 0.0,
                    theta: 0.0,
                    wall_ms: 0.0,
                });
            }
        }
        log
    }

    #[test]
    fn silent_network() {
        let r = energy_report(&simulate(10, 10, 0.0, 1000, 100)).unwrap();
        assert_eq!(r.total_synops, 0);
        assert_eq!(r.event_ratio, 0.0);
    }

    #[test]
    fn dense_limit() {
        let r = energy_report(&simulate(10, 7, 1.0, 1000, 100)).unwrap();
        assert_eq!(r.event_ratio, 1.0);
        assert_eq!(r.spikes_per_step, 10.0);
    }

    #[test]
    fn poisson_ten_hertz() {
        // 10 Hz at dt = 1 ms is a per-step probability of 0.01.
        let r = energy_report(&simulate(100, 20, 0.01, 20_000, 100)).unwrap();
        assert!((r.event_ratio - 0.01).abs() <= 0.002, "ratio {}", r.event_ratio);
    }

    #[test]
    fn empty_log_is_an_input_error() {
        assert!(matches!(energy_report(&[]), Err(BimError::Input(_))));
    }
}
