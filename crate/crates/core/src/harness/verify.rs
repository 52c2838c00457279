//! Built-in verification suites: gradient equivalences, STDP equivalence and
//! window shape, and the pruning controller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exec::Execution;
use crate::harness::probe::{fit_window, probe_stdp_window};
use crate::learning::{
    rtrl_gradient, stdp_pairwise, stdp_trace_step, BimNetwork, HybridRuleConfig, LossKind, NetworkDims, ReadoutMode, StdpConfig,
    StdpState, Target,
};
use crate::matrix::Matrix;
use crate::oracles::{bptt_gradient, finite_difference_gradient, relative_error};
use crate::pruning::PruningState;
use crate::spiking::{LifConfig, SpikeMode, SpikeTrain, SynapticWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Rtrl,
    Stdp,
    Pruning,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rtrl" => Ok(Self::Rtrl),
            "stdp" => Ok(Self::Stdp),
            "pruning" => Ok(Self::Pruning),
            "all" => Ok(Self::All),
            other => Err(format!("unknown suite {other:?} (rtrl, stdp, pruning, all)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: String,
    /// Measured quantity; passes when `value <= tolerance`.
    pub value: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

pub fn render(rows: &[CheckRow]) -> String {
    let mut s = String::from("suite\tcheck\tvalue\ttolerance\tstatus\n");
    for r in rows {
        s += &format!(
            "{}\t{}\t{:.3e}\t{:.1e}\t{}\n",
            r.suite,
            r.name,
            r.value,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    s
}

/// A small random network with an input sequence and per-step targets.
#[derive(Clone, Debug)]
pub struct GradientCase {
    pub net: BimNetwork,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Option<Target>>,
    pub loss: LossKind,
}

/// Random case with `n_state ≤ 8`, at most 200 parameters and at most 32 steps.
pub fn gradient_case(seed: u64) -> Result<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let dims = NetworkDims {
            n_in: rng.random_range(1..=3),
            n_state: rng.random_range(1..=8),
            n_out: rng.random_range(1..=3),
            n_readout: rng.random_range(1..=4),
            n_classes: rng.random_range(2..=3),
        };
        let mode = if rng.random::<f64>() < 0.75 {
            ReadoutMode::Spiking
        } else {
            ReadoutMode::Direct
        };
        let lif = LifConfig {
            tau_m: rng.random_range(5.0..30.0),
            tau_s: rng.random_range(2.0..10.0),
            ..LifConfig::default()
        };
        let mut net = BimNetwork::init(dims, lif, mode, 3.0, &mut rng)?;
        if net.param_count() > 200 {
            continue;
        }
        net.spike_mode = if rng.random::<bool>() {
            SpikeMode::Hard
        } else {
            SpikeMode::Smooth
        };
        let len = rng.random_range(4..=32);
        let inputs: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..dims.n_in).map(|_| rng.random_range(-0.5..2.5)).collect())
            .collect();
        let loss = if rng.random::<bool>() {
            LossKind::CrossEntropy
        } else {
            LossKind::MeanSquaredError
        };
        let targets = (0..len)
            .map(|t| {
                (t % 2 == 1 || t + 1 == len).then(|| match loss {
                    LossKind::CrossEntropy => Target::Class(rng.random_range(0..dims.n_classes)),
                    LossKind::MeanSquaredError => {
                        Target::Values((0..dims.n_classes).map(|_| rng.random_range(-1.0..1.0)).collect())
                    }
                })
            })
            .collect();
        return Ok(GradientCase {
            net,
            inputs,
            targets,
            loss,
        });
    }
}

/// Sequence-summed RTRL gradient against BPTT, relative error.
pub fn rtrl_vs_bptt(case: &GradientCase, exec: Execution) -> Result<f64> {
    let (_, rtrl) = rtrl_gradient(&case.net, &case.inputs, &case.targets, case.loss, exec)?;
    let (_, bptt) = bptt_gradient(&case.net, &case.inputs, &case.targets, case.loss)?;
    Ok(relative_error(&rtrl, &bptt, None))
}

/// BPTT on the smoothed network against central differences over the
/// coordinates whose probes keep every threshold decision. Returns the error
/// and the number of coordinates kept.
pub fn bptt_vs_fd(case: &GradientCase, epsilon: f64, exec: Execution) -> Result<(f64, usize)> {
    let smooth = case.net.smoothed();
    let (_, bptt) = bptt_gradient(&smooth, &case.inputs, &case.targets, case.loss)?;
    let fd = finite_difference_gradient(&smooth, &case.inputs, &case.targets, case.loss, epsilon, exec)?;
    Ok((relative_error(&bptt, &fd.grad, Some(&fd.smooth)), fd.smooth_count()))
}

/// Bernoulli spike times on a 1 ms grid.
pub fn poisson_train<R: Rng + ?Sized>(rate_hz: f64, duration_ms: f64, rng: &mut R) -> Vec<f64> {
    let p = rate_hz * 1e-3;
    (0..duration_ms as usize)
        .filter(|_| rng.random::<f64>() < p)
        .map(|t| t as f64)
        .collect()
}

/// Trace-accumulated `Ω` against the brute pair sum for one pair of trains
/// on a 1 ms grid. Returns the absolute difference.
pub fn stdp_trace_vs_pairwise(pre: &[f64], post: &[f64], cfg: &StdpConfig) -> Result<f64> {
    let end = pre.iter().chain(post).fold(0.0_f64, |m, &t| m.max(t)) as usize;
    let mut state = StdpState::new(1, 1);
    let (mut ip, mut iq) = (0, 0);
    for step in 0..=end {
        let t = step as f64;
        let fire_pre = ip < pre.len() && pre[ip] == t;
        let fire_post = iq < post.len() && post[iq] == t;
        ip += usize::from(fire_pre);
        iq += usize::from(fire_post);
        stdp_trace_step(&mut state, &[fire_pre], &[fire_post], cfg, 1.0)?;
    }
    let brute = stdp_pairwise(&SpikeTrain::from_times(pre)?, &SpikeTrain::from_times(post)?, cfg);
    Ok((state.omega[(0, 0)] - brute).abs())
}

/// Sparsity after each evaluation of a fresh controller on a static
/// `rows × cols` Uniform[−1, 1] matrix. Panics never; pruned entries are
/// checked to stay zero and out of the mask.
pub fn pruning_trajectory(rho: f64, rows: usize, cols: usize, evals: usize, seed: u64) -> Result<(Vec<f64>, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut w = SynapticWeights::new(Matrix::from_vec(rows, cols, data)?);
    let mut state = PruningState::new(rows, cols, 50.0, 0.01, rho, 1)?;
    let mut traj = Vec::with_capacity(evals);
    let mut regrew = false;
    let mut prev = state.mask.clone();
    for _ in 0..evals {
        traj.push(state.evaluate(&mut w, &mut rng)?);
        regrew |= prev.flags().iter().zip(state.mask.flags()).any(|(&was, &now)| !was && now);
        regrew |= state.mask.flags().iter().zip(w.w.as_slice()).any(|(&a, &v)| !a && v != 0.0);
        prev = state.mask.clone();
    }
    Ok((traj, regrew))
}

/// First evaluation (1-based) after which sparsity stays within `tol` of `rho`.
pub fn settling_eval(traj: &[f64], rho: f64, tol: f64) -> Option<usize> {
    let last_out = traj.iter().rposition(|s| (s - rho).abs() > tol);
    match last_out {
        None => Some(1),
        Some(i) if i + 1 < traj.len() => Some(i + 2),
        Some(_) => None,
    }
}

pub fn rtrl_suite(configs: u64, exec: Execution) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for seed in 0..configs {
        let case = gradient_case(seed)?;
        rows.push(CheckRow {
            suite: "rtrl",
            name: format!(
                "rtrl-vs-bptt seed={seed} P={} T={}",
                case.net.param_count(),
                case.inputs.len()
            ),
            value: rtrl_vs_bptt(&case, exec)?,
            tolerance: 1e-8,
        });
    }
    for seed in 0..configs.div_ceil(2) {
        let case = gradient_case(1000 + seed)?;
        let (err, kept) = bptt_vs_fd(&case, 1e-5, exec)?;
        rows.push(CheckRow {
            suite: "rtrl",
            name: format!("bptt-vs-fd seed={} kept={kept}/{}", 1000 + seed, case.net.param_count()),
            value: err,
            tolerance: 1e-4,
        });
    }
    Ok(rows)
}

pub fn stdp_suite(pairs: u64) -> Result<Vec<CheckRow>> {
    let cfg = StdpConfig::default();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..pairs {
        let duration = rng.random_range(100.0..=2000.0);
        let pre = poisson_train(rng.random_range(1.0..=50.0), duration, &mut rng);
        let post = poisson_train(rng.random_range(1.0..=50.0), duration, &mut rng);
        worst = worst.max(stdp_trace_vs_pairwise(&pre, &post, &cfg)?);
    }
    let mut rows = vec![CheckRow {
        suite: "stdp",
        name: format!("trace-vs-pairwise pairs={pairs}"),
        value: worst,
        tolerance: 1e-9,
    }];

    let hybrid = HybridRuleConfig {
        eta: 1.0,
        lambda: 0.0,
        omega_scale: 1.0,
    };
    let grid: Vec<f64> = [1.0, 2.0, 5.0, 10.0, 20.0, 40.0].iter().flat_map(|&d| [d, -d]).collect();
    let table = probe_stdp_window(&cfg, &hybrid, 1.0, &grid)?;
    let wrong_sign = table
        .iter()
        .filter(|&&(d, w)| if d >= 0.0 { w <= 0.0 } else { w >= 0.0 })
        .count();
    let (pos, neg) = fit_window(&table)?;
    rows.push(CheckRow {
        suite: "stdp",
        name: "window-signs".into(),
        value: wrong_sign as f64,
        tolerance: 0.0,
    });
    rows.push(CheckRow {
        suite: "stdp",
        name: format!("tau-plus fit={:.4}", pos.tau),
        value: (pos.tau - cfg.tau_plus).abs() / cfg.tau_plus,
        tolerance: 0.1,
    });
    rows.push(CheckRow {
        suite: "stdp",
        name: format!("tau-minus fit={:.4}", neg.tau),
        value: (neg.tau - cfg.tau_minus).abs() / cfg.tau_minus,
        tolerance: 0.1,
    });
    Ok(rows)
}

pub fn pruning_suite() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (i, rho) in [0.5, 0.8, 0.9].into_iter().enumerate() {
        let (traj, regrew) = pruning_trajectory(rho, 100, 100, 1000, 100 + i as u64)?;
        let settle = settling_eval(&traj, rho, 0.05).map_or(f64::INFINITY, |e| e as f64);
        rows.push(CheckRow {
            suite: "pruning",
            name: format!("settle rho={rho}"),
            value: settle,
            tolerance: 500.0,
        });
        rows.push(CheckRow {
            suite: "pruning",
            name: format!("no-regrowth rho={rho}"),
            value: f64::from(u8::from(regrew)),
            tolerance: 0.0,
        });
    }
    Ok(rows)
}

pub fn run_suite(suite: Suite, exec: Execution) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    if matches!(suite, Suite::Rtrl | Suite::All) {
        rows.extend(rtrl_suite(20, exec)?);
    }
    if matches!(suite, Suite::Stdp | Suite::All) {
        rows.extend(stdp_suite(100)?);
    }
    if matches!(suite, Suite::Pruning | Suite::All) {
        rows.extend(pruning_suite()?);
    }
    Ok(rows)
}
