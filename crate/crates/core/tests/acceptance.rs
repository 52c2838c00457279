//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::time::Instant;

use bim_core::harness::train::checkpoint_path;
use bim_core::harness::verify::{
    bptt_vs_fd, gradient_case, poisson_train, pruning_trajectory, rtrl_vs_bptt, settling_eval, stdp_trace_vs_pairwise,
};
use bim_core::harness::{
    fit_window, probe_stdp_window, resume_online, train_online, Checkpoint, CsvSink, MetricsRecord, RunConfig, Trainer,
};
use bim_core::learning::{HybridRuleConfig, Plasticity, StdpConfig};
use bim_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rtrl_equals_bptt() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..24 {
        let case = gradient_case(seed).unwrap();
        for exec in [Execution::Sequential, Execution::Parallel] {
            worst = worst.max(rtrl_vs_bptt(&case, exec).unwrap());
        }
    }
    outcome(
        worst <= 1e-8,
        format!("24 configs x 2 execution modes, max rel err {worst:.2e} (tol 1e-8)"),
    )
}

fn bptt_matches_fd() -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut kept, mut total) = (0, 0);
    for seed in 0..12 {
        let case = gradient_case(500 + seed).unwrap();
        let (err, k) = bptt_vs_fd(&case, 1e-5, Execution::Parallel).unwrap();
        worst = worst.max(err);
        kept += k;
        total += case.net.param_count();
    }
    outcome(
        worst <= 1e-4 && kept * 2 > total,
        format!("12 configs, max rel err {worst:.2e} (tol 1e-4), {kept}/{total} coordinates smooth"),
    )
}

fn stdp_trace_equivalence() -> Outcome {
    let cfg = StdpConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut spikes = 0;
    for _ in 0..100 {
        let duration = rng.random_range(200.0..=2000.0);
        let pre = poisson_train(rng.random_range(5.0..=50.0), duration, &mut rng);
        let post = poisson_train(rng.random_range(5.0..=50.0), duration, &mut rng);
        spikes += pre.len() + post.len();
        worst = worst.max(stdp_trace_vs_pairwise(&pre, &post, &cfg).unwrap());
    }
    outcome(
        worst <= 1e-9,
        format!("100 Poisson pairs ({spikes} spikes), max |trace - pairwise| {worst:.2e} (tol 1e-9)"),
    )
}

fn stdp_window_shape() -> Outcome {
    let stdp = StdpConfig::default();
    let hybrid = HybridRuleConfig {
        eta: 0.01,
        lambda: 0.0,
        omega_scale: 1.0,
    };
    let grid: Vec<f64> = [1.0, 2.0, 5.0, 10.0, 20.0, 40.0].iter().flat_map(|&d| [d, -d]).collect();
    let table = probe_stdp_window(&stdp, &hybrid, 1.0, &grid).unwrap();
    let signs_ok = table.iter().all(|&(d, w)| if d >= 0.0 { w > 0.0 } else { w < 0.0 });
    let (pos, neg) = fit_window(&table).unwrap();
    let ep = (pos.tau - stdp.tau_plus).abs() / stdp.tau_plus;
    let em = (neg.tau - stdp.tau_minus).abs() / stdp.tau_minus;
    outcome(
        signs_ok && ep <= 0.1 && em <= 0.1,
        format!(
            "fitted tau+ {:.3} ms, tau- {:.3} ms (configured 20, tol 10%), signs {}",
            pos.tau,
            neg.tau,
            if signs_ok { "ok" } else { "wrong" }
        ),
    )
}

fn pruning_controller() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, rho) in [0.5, 0.8, 0.9].into_iter().enumerate() {
        let (traj, regrew) = pruning_trajectory(rho, 100, 100, 1500, 31 + i as u64).unwrap();
        let settle = settling_eval(&traj, rho, 0.05);
        ok &= !regrew && settle.is_some_and(|e| e <= 500);
        parts.push(format!(
            "rho {rho}: settled at eval {} final {:.3}",
            settle.map_or("never".into(), |e| e.to_string()),
            traj.last().unwrap()
        ));
    }
    outcome(ok, format!("{}; no regrowth", parts.join(", ")))
}

/// Loss of the best constant predictor for the copy task: each output is a
/// Bernoulli(token_rate / dim) indicator.
fn constant_predictor_loss(cfg: &RunConfig) -> f64 {
    let p = cfg.token_rate / cfg.input_dim as f64;
    0.5 * cfg.input_dim as f64 * p * (1.0 - p)
}

fn online_learning() -> Outcome {
    let cfg = RunConfig {
        input_dim: 8,
        delay: 10,
        n_state: 32,
        lambda: 1.0,
        init_scale: 8.0,
        total_steps: 50_000,
        ..RunConfig::default()
    };
    let mut log: Vec<MetricsRecord> = Vec::new();
    train_online(&cfg, &mut log, None).unwrap();
    let q = log.len() / 4;
    let mean = |s: &[MetricsRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&log[..q]), mean(&log[log.len() - q..]));
    outcome(
        last <= 0.5 * first,
        format!(
            "delayed copy 5e4 steps: first-quarter loss {first:.4}, final-quarter {last:.4}, ratio {:.3} (tol 0.5); constant predictor {:.4}",
            last / first,
            constant_predictor_loss(&cfg)
        ),
    )
}

fn small_config() -> RunConfig {
    RunConfig {
        n_state: 6,
        n_out: 4,
        n_readout: 5,
        input_dim: 4,
        delay: 3,
        episode_length: 40,
        total_steps: 600,
        metric_every: 50,
        prune_interval: 25,
        init_scale: 4.0,
        ..RunConfig::default()
    }
}

fn hybrid_endpoints() -> Outcome {
    let base = RunConfig {
        eta: 0.02,
        ..small_config()
    };
    let run = |cfg: &RunConfig| {
        let mut csv = CsvSink::new(Vec::new()).unwrap();
        let out = train_online(cfg, &mut csv, None).unwrap();
        (csv.into_inner().unwrap(), out.checkpoint.tensor("params").unwrap().to_vec())
    };
    let hybrid = run(&RunConfig {
        lambda: 1.0,
        plasticity: Plasticity::Hybrid,
        ..base.clone()
    });
    let gradient = run(&RunConfig {
        lambda: 1.0,
        plasticity: Plasticity::GradientOnly,
        ..base.clone()
    });
    let same_bits = hybrid.0 == gradient.0 && hybrid.1.iter().zip(&gradient.1).all(|(a, b)| a.to_bits() == b.to_bits());

    let cfg = RunConfig {
        lambda: 0.0,
        omega_scale: 1.7,
        pruning: false,
        ..base
    };
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let (mut mismatches, mut nonzero) = (0usize, 0usize);
    for _ in 0..cfg.total_steps {
        let before = t.network().params();
        t.step().unwrap();
        let after = t.network().params();
        let syn = t.network().synapse_offset();
        let omega = t.learner().last_omega.as_slice();
        for (p, (b, a)) in before.iter().zip(&after).enumerate() {
            let expect = match p.checked_sub(syn).filter(|&s| s < omega.len()) {
                Some(s) => b + cfg.eta * (cfg.omega_scale * omega[s]),
                None => *b,
            };
            mismatches += usize::from(a.to_bits() != expect.to_bits());
            nonzero += usize::from(a != b);
        }
    }
    outcome(
        same_bits && mismatches == 0 && nonzero > 0,
        format!(
            "lambda=1 vs gradient-only bit-identical: {same_bits}; lambda=0 mismatches vs eta*scale*omega: {mismatches} ({nonzero} nonzero updates)"
        ),
    )
}

fn temporal_locality() -> Outcome {
    let cfg = RunConfig {
        n_state: 4,
        n_out: 3,
        n_readout: 3,
        input_dim: 3,
        metric_every: 1000,
        ..small_config()
    };
    let peak = |steps: u64| {
        train_online(
            &RunConfig {
                total_steps: steps,
                ..cfg.clone()
            },
            &mut Vec::new(),
            None,
        )
        .unwrap()
        .peak_state_bytes
    };
    let (short, long) = (peak(1_000), peak(100_000));
    let diff = (long as f64 - short as f64).abs() / short as f64;
    outcome(
        diff < 0.05,
        format!(
            "peak state {short} B at 1e3 steps, {long} B at 1e5 steps, diff {:.2}% (tol 5%)",
            100.0 * diff
        ),
    )
}

fn determinism_and_resume() -> Outcome {
    let cfg = RunConfig {
        lambda: 0.5,
        checkpoint_every: 150,
        ..small_config()
    };
    let csv = |cfg: &RunConfig, dir: Option<&std::path::Path>| {
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        train_online(cfg, &mut sink, dir).unwrap();
        String::from_utf8(sink.into_inner().unwrap()).unwrap()
    };
    let dir = tempfile::tempdir().unwrap();
    let a = csv(&cfg, Some(dir.path()));
    let b = csv(&cfg, None);
    let k = 300;
    let ckpt = Checkpoint::load(&checkpoint_path(dir.path(), k)).unwrap();
    let mut tail = CsvSink::append(Vec::new());
    resume_online(&ckpt, &mut tail, None).unwrap();
    let tail = String::from_utf8(tail.into_inner().unwrap()).unwrap();
    let expected: String = a
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().unwrap().parse::<u64>().unwrap() > k)
        .map(|l| format!("{l}\n"))
        .collect();
    outcome(
        a == b && tail == expected && !tail.is_empty(),
        format!(
            "repeat run byte-identical: {}; resume at step {k} identical: {}",
            a == b,
            tail == expected
        ),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("rtrl equals bptt", rtrl_equals_bptt),
        ("bptt matches finite differences", bptt_matches_fd),
        ("stdp trace equals pair sum", stdp_trace_equivalence),
        ("stdp window reproduction", stdp_window_shape),
        ("pruning controller", pruning_controller),
        ("online learning end to end", online_learning),
        ("hybrid rule endpoints", hybrid_endpoints),
        ("temporal locality", temporal_locality),
        ("determinism and checkpoint resume", determinism_and_resume),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let o = check();
        failed += usize::from(!o.passed);
        println!(
            "criterion {} [{}] {name}: {} ({:.1}s)",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
