//! Discrete-time selective state-space layer.
//!
//! The realized matrices for one step are conditioned on the input `u`:
//!
//! ```text
//! a[i]    = sigmoid(base_a[i] + gate_a[i,:]·u)      (diagonal A, always in (0, 1))
//! B[i,j]  = b0[i,j] + (gate_b[i,:]·u)
//! C[k,i]  = c0[k,i] + (gate_c[i,:]·u)
//! D       = d                                       (input independent)
//! x_t     = a ⊙ x_{t-1} + B·u
//! y_t     = C·x_t + D·u
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, BimError, Result};
use crate::matrix::{dot, logit, sigmoid, Matrix};

/// Which block of the flat SSM parameter vector an index falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsmParamKind {
    /// `base_a[i]`
    BaseA { i: usize },
    /// `gate_a[i, j]`
    GateA { i: usize, j: usize },
    /// `b0[i, j]`
    B0 { i: usize, j: usize },
    /// `gate_b[i, j]`
    GateB { i: usize, j: usize },
    /// `c0[k, i]`
    C0 { k: usize, i: usize },
    /// `gate_c[i, j]`
    GateC { i: usize, j: usize },
    /// `d[k, j]`
    D { k: usize, j: usize },
}

/// Trainable parameters of the selective SSM, stored as one flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsmParams {
    n_state: usize,
    n_in: usize,
    n_out: usize,
    theta: Vec<f64>,
}

impl SsmParams {
    pub fn param_count(n_state: usize, n_in: usize, n_out: usize) -> usize {
        n_state + 4 * n_state * n_in + n_out * n_state + n_out * n_in
    }

    /// All-zero parameters (every `a` equals 0.5).
    pub fn zeros(n_state: usize, n_in: usize, n_out: usize) -> Result<Self> {
        if n_state == 0 || n_in == 0 || n_out == 0 {
            return Err(BimError::Contract(format!(
                "ssm dimensions must be positive, got n_state={n_state} n_in={n_in} n_out={n_out}"
            )));
        }
        Ok(Self {
            n_state,
            n_in,
            n_out,
            theta: vec![0.0; Self::param_count(n_state, n_in, n_out)],
        })
    }

    pub fn from_theta(n_state: usize, n_in: usize, n_out: usize, theta: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(n_state, n_in, n_out)?;
        ensure_dim("ssm theta", theta.len(), p.theta.len())?;
        ensure_finite("ssm theta", &theta)?;
        p.theta = theta;
        Ok(p)
    }

    /// Initial decay factors spread log-uniformly over `[0.7, 0.99]` (at
    /// `u = 0`); every other weight uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(n_state: usize, n_in: usize, n_out: usize, rng: &mut R) -> Result<Self> {
        Self::init_scaled(n_state, n_in, n_out, 1.0, rng)
    }

    /// Like [`SsmParams::init`] with the uniform ranges multiplied by `scale`.
    pub fn init_scaled<R: Rng + ?Sized>(n_state: usize, n_in: usize, n_out: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(n_state, n_in, n_out)?;
        let (lo, hi) = (0.7_f64.ln(), 0.99_f64.ln());
        for i in 0..n_state {
            let frac = if n_state == 1 { 0.5 } else { i as f64 / (n_state - 1) as f64 };
            p.base_a_mut()[i] = logit((lo + frac * (hi - lo)).exp());
        }
        let lim_in = scale / (n_in as f64).sqrt();
        let lim_state = scale / (n_state as f64).sqrt();
        let mut fill = |s: &mut [f64], lim: f64| s.iter_mut().for_each(|v| *v = rng.random_range(-lim..=lim));
        fill(p.block_mut(Block::GateA), lim_in);
        fill(p.block_mut(Block::B0), lim_in);
        fill(p.block_mut(Block::GateB), lim_in);
        fill(p.block_mut(Block::C0), lim_state);
        fill(p.block_mut(Block::GateC), lim_in);
        fill(p.block_mut(Block::D), lim_in);
        Ok(p)
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        let (n, m, p) = (self.n_state, self.n_in, self.n_out);
        let sizes = [n, n * m, n * m, n * m, p * n, n * m, p * m];
        let idx = block as usize;
        let start: usize = sizes[..idx].iter().sum();
        start..start + sizes[idx]
    }

    fn block(&self, block: Block) -> &[f64] {
        &self.theta[self.block_range(block)]
    }

    fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.block_range(block);
        &mut self.theta[r]
    }

    pub fn base_a(&self) -> &[f64] {
        self.block(Block::BaseA)
    }

    pub fn base_a_mut(&mut self) -> &mut [f64] {
        self.block_mut(Block::BaseA)
    }

    /// `gate_a` as an `n_state × n_in` row-major slice.
    pub fn gate_a(&self) -> &[f64] {
        self.block(Block::GateA)
    }

    pub fn gate_a_mut(&mut self) -> &mut [f64] {
        self.block_mut(Block::GateA)
    }

    pub fn b0_mut(&mut self) -> &mut [f64] {
        self.block_mut(Block::B0)
    }

    pub fn gate_b_mut(&mut self) -> &mut [f64] {
        self.block_mut(Block::GateB)
    }

    pub fn c0_mut(&mut self) -> &mut [f64] {
        self.block_mut(Block::C0)
    }

    pub fn gate_c_mut(&mut self) -> &mut [f64] {
        self.block_mut(Block::GateC)
    }

    pub fn d_mut(&mut self) -> &mut [f64] {
        self.block_mut(Block::D)
    }

    /// Decode a flat index into its block and matrix coordinates.
    pub fn kind_of(&self, index: usize) -> SsmParamKind {
        let (n, m) = (self.n_state, self.n_in);
        for block in Block::ALL {
            let r = self.block_range(block);
            if r.contains(&index) {
                let o = index - r.start;
                return match block {
                    Block::BaseA => SsmParamKind::BaseA { i: o },
                    Block::GateA => SsmParamKind::GateA { i: o / m, j: o % m },
                    Block::B0 => SsmParamKind::B0 { i: o / m, j: o % m },
                    Block::GateB => SsmParamKind::GateB { i: o / m, j: o % m },
                    Block::C0 => SsmParamKind::C0 { k: o / n, i: o % n },
                    Block::GateC => SsmParamKind::GateC { i: o / m, j: o % m },
                    Block::D => SsmParamKind::D { k: o / m, j: o % m },
                };
            }
        }
        panic!("ssm parameter index {index} out of range {}", self.theta.len());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Block {
    BaseA = 0,
    GateA,
    B0,
    GateB,
    C0,
    GateC,
    D,
}

impl Block {
    const ALL: [Block; 7] = [
        Block::BaseA,
        Block::GateA,
        Block::B0,
        Block::GateB,
        Block::C0,
        Block::GateC,
        Block::D,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsmState {
    pub x: Vec<f64>,
    pub t: u64,
}

impl SsmState {
    pub fn zeros(n_state: usize) -> Self {
        Self {
            x: vec![0.0; n_state],
            t: 0,
        }
    }
}

/// Matrices realized for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmMats {
    pub a_diag: Vec<f64>,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl SsmMats {
    pub fn n_state(&self) -> usize {
        self.a_diag.len()
    }
}

pub fn selective_params(params: &SsmParams, u: &[f64]) -> Result<SsmMats> {
    let (n, m, p) = (params.n_state, params.n_in, params.n_out);
    ensure_dim("selective_params input", u.len(), m)?;
    ensure_finite("selective_params input", u)?;

    let base_a = params.base_a();
    let gate_a = params.gate_a();
    let b0 = params.block(Block::B0);
    let gate_b = params.block(Block::GateB);
    let c0 = params.block(Block::C0);
    let gate_c = params.block(Block::GateC);

    let mut a_diag = Vec::with_capacity(n);
    let mut b = Matrix::zeros(n, m);
    let mut s_c = Vec::with_capacity(n);
    for i in 0..n {
        let gate_row = |g: &[f64]| dot(&g[i * m..(i + 1) * m], u);
        a_diag.push(decay_with_slope(base_a[i] + gate_row(gate_a)).0);
        let s_b = gate_row(gate_b);
        for j in 0..m {
            b[(i, j)] = b0[i * m + j] + s_b;
        }
        s_c.push(gate_row(gate_c));
    }
    let mut c = Matrix::zeros(p, n);
    for k in 0..p {
        for i in 0..n {
            c[(k, i)] = c0[k * n + i] + s_c[i];
        }
    }
    let d = Matrix::from_vec(p, m, params.block(Block::D).to_vec())?;
    Ok(SsmMats { a_diag, b, c, d })
}

/// Decay-gate pre-activations are clamped to this magnitude so that the
/// realized decay stays strictly inside (0, 1) in floating point.
pub const DECAY_LOGIT_LIMIT: f64 = 30.0;

/// `(a, da/dz)` for the decay gate with pre-activation `z`.
#[inline]
pub fn decay_with_slope(z: f64) -> (f64, f64) {
    if z.abs() >= DECAY_LOGIT_LIMIT {
        (sigmoid(z.signum() * DECAY_LOGIT_LIMIT), 0.0)
    } else {
        let a = sigmoid(z);
        (a, a * (1.0 - a))
    }
}

/// Pre-activations of the decay gate, `base_a + gate_a·u`.
pub fn decay_logits(params: &SsmParams, u: &[f64]) -> Vec<f64> {
    let m = params.n_in;
    (0..params.n_state)
        .map(|i| params.base_a()[i] + dot(&params.gate_a()[i * m..(i + 1) * m], u))
        .collect()
}

/// One recurrence step; returns the new state (with `t + 1`) and the output.
pub fn ssm_step(state: &SsmState, u: &[f64], mats: &SsmMats) -> Result<(SsmState, Vec<f64>)> {
    let n = mats.n_state();
    ensure_dim("ssm_step state", state.x.len(), n)?;
    if mats.b.shape() != (n, u.len()) || mats.c.cols() != n || mats.d.shape() != (mats.c.rows(), u.len()) {
        return Err(BimError::Contract(format!(
            "ssm_step: inconsistent shapes a={n} B={:?} C={:?} D={:?} u={}",
            mats.b.shape(),
            mats.c.shape(),
            mats.d.shape(),
            u.len()
        )));
    }
    let bu = mats.b.matvec(u)?;
    let x: Vec<f64> = (0..n).map(|i| mats.a_diag[i] * state.x[i] + bu[i]).collect();
    let mut y = mats.c.matvec(&x)?;
    for (yk, dk) in y.iter_mut().zip(mats.d.matvec(u)?) {
        *yk += dk;
    }
    Ok((SsmState { x, t: state.t + 1 }, y))
}

/// Fold [`selective_params`] and [`ssm_step`] over a sequence.
pub fn ssm_scan(params: &SsmParams, inputs: &[Vec<f64>], x0: &SsmState) -> Result<Vec<(SsmState, Vec<f64>)>> {
    if inputs.is_empty() {
        return Err(BimError::Input("ssm_scan: empty input sequence".into()));
    }
    let mut out = Vec::with_capacity(inputs.len());
    let mut state = x0.clone();
    for u in inputs {
        let mats = selective_params(params, u)?;
        let (next, y) = ssm_step(&state, u, &mats)?;
        state = next.clone();
        out.push((next, y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, n: usize, m: usize, p: usize) -> SsmParams {
        SsmParams::init(n, m, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn gating_disabled_gives_constant_half() {
        let mut p = SsmParams::zeros(3, 2, 1).unwrap();
        p.base_a_mut().iter_mut().for_each(|v| *v = logit(0.5));
        for u in [[0.0, 0.0], [5.0, -3.0]] {
            let mats = selective_params(&p, &u).unwrap();
            assert_eq!(mats.a_diag, vec![0.5; 3]);
        }
    }

    #[test]
    fn origin_gives_bias_only_realization() {
        let p = random_params(1, 3, 2, 2);
        let mats = selective_params(&p, &[0.0, 0.0]).unwrap();
        for i in 0..3 {
            assert_eq!(mats.a_diag[i], sigmoid(p.base_a()[i]));
            for j in 0..2 {
                assert_eq!(mats.b[(i, j)], p.block(Block::B0)[i * 2 + j]);
            }
        }
        for k in 0..2 {
            for i in 0..3 {
                assert_eq!(mats.c[(k, i)], p.block(Block::C0)[k * 3 + i]);
            }
        }
    }

    #[test]
    fn gate_selects_per_channel_decay() {
        let mut p = SsmParams::zeros(2, 1, 1).unwrap();
        p.gate_a_mut().copy_from_slice(&[1.0, 0.0]);
        let mats = selective_params(&p, &[3.0_f64.ln()]).unwrap();
        assert!((mats.a_diag[0] - 0.75).abs() < 1e-15);
        assert!((mats.a_diag[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = SsmParams::zeros(2, 2, 1).unwrap();
        assert!(matches!(selective_params(&p, &[1.0]), Err(BimError::Contract(_))));
        assert!(matches!(selective_params(&p, &[1.0, f64::NAN]), Err(BimError::Input(_))));
        assert!(SsmParams::zeros(0, 1, 1).is_err());
    }

    #[test]
    fn initial_decays_span_range() {
        let p = random_params(3, 8, 2, 2);
        let a: Vec<f64> = p.base_a().iter().map(|&v| sigmoid(v)).collect();
        assert!((a[0] - 0.7).abs() < 1e-12 && (a[7] - 0.99).abs() < 1e-12);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn identity_dynamics_hold_state() {
        let mats = SsmMats {
            a_diag: vec![1.0, 1.0],
            b: Matrix::zeros(2, 1),
            c: Matrix::from_rows(&[vec![2.0, -1.0]]).unwrap(),
            d: Matrix::zeros(1, 1),
        };
        let s = SsmState { x: vec![0.3, 0.4], t: 7 };
        let (next, y) = ssm_step(&s, &[9.0], &mats).unwrap();
        assert_eq!(next.x, s.x);
        assert_eq!(next.t, 8);
        assert!((y[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_state_response_is_bu() {
        let p = random_params(5, 3, 2, 1);
        let u = [0.4, -1.2];
        let mats = selective_params(&p, &u).unwrap();
        let (next, _) = ssm_step(&SsmState::zeros(3), &u, &mats).unwrap();
        assert_eq!(next.x, mats.b.matvec(&u).unwrap());
    }

    #[test]
    fn worked_step() {
        let mats = SsmMats {
            a_diag: vec![0.5, 0.5],
            b: Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            c: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            d: Matrix::zeros(1, 1),
        };
        let (next, y) = ssm_step(&SsmState::zeros(2), &[1.0], &mats).unwrap();
        assert_eq!(next.x, vec![1.0, 0.0]);
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn scan_matches_manual_unrolling() {
        let p = random_params(11, 3, 2, 2);
        let inputs = vec![vec![0.1, -0.5], vec![1.3, 0.2], vec![-0.7, 0.9]];
        let scan = ssm_scan(&p, &inputs, &SsmState::zeros(3)).unwrap();
        let mut s = SsmState::zeros(3);
        for (k, u) in inputs.iter().enumerate() {
            let (next, y) = ssm_step(&s, u, &selective_params(&p, u).unwrap()).unwrap();
            assert_eq!(scan[k].0, next);
            assert_eq!(scan[k].1, y);
            s = next;
        }
        assert_eq!(scan.len(), 3);
    }

    #[test]
    fn scan_base_case_and_zero_input() {
        let p = random_params(2, 2, 2, 2);
        let one = ssm_scan(&p, &[vec![0.5, 0.5]], &SsmState::zeros(2)).unwrap();
        let mats = selective_params(&p, &[0.5, 0.5]).unwrap();
        assert_eq!(one[0], ssm_step(&SsmState::zeros(2), &[0.5, 0.5], &mats).unwrap());

        let zeros = ssm_scan(&p, &vec![vec![0.0, 0.0]; 5], &SsmState::zeros(2)).unwrap();
        assert!(zeros.iter().all(|(s, y)| s.x.iter().chain(y).all(|&v| v == 0.0)));
        assert!(matches!(ssm_scan(&p, &[], &SsmState::zeros(2)), Err(BimError::Input(_))));
    }

    #[test]
    fn bounded_inputs_never_blow_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = SsmParams::init(6, 3, 2, &mut rng).unwrap();
        let bound = 1.0;
        let mut s = SsmState::zeros(6);
        let mut worst_bound = 0.0_f64;
        for _ in 0..10_000 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-bound..=bound)).collect();
            let mats = selective_params(&p, &u).unwrap();
            // Per-step bound: ‖B‖∞·M / (1 - max a)
            let b_inf = (0..6)
                .map(|i| mats.b.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let a_max = mats.a_diag.iter().cloned().fold(0.0, f64::max);
            worst_bound = worst_bound.max(b_inf * bound / (1.0 - a_max));
            s = ssm_step(&s, &u, &mats).unwrap().0;
            assert!(s.x.iter().all(|v| v.is_finite()));
        }
        assert!(s.x.iter().all(|v| v.abs() <= worst_bound));
    }

    proptest! {
        #[test]
        fn step_is_linear_at_fixed_mats(
            seed in 0u64..1000,
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            x1 in proptest::collection::vec(-2.0f64..2.0, 3),
            x2 in proptest::collection::vec(-2.0f64..2.0, 3),
            u1 in proptest::collection::vec(-2.0f64..2.0, 2),
            u2 in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let p = random_params(seed, 3, 2, 2);
            let mats = selective_params(&p, &[0.3, -0.1]).unwrap();
            let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect::<Vec<_>>();
            let (s1, y1) = ssm_step(&SsmState { x: x1.clone(), t: 0 }, &u1, &mats).unwrap();
            let (s2, y2) = ssm_step(&SsmState { x: x2.clone(), t: 0 }, &u2, &mats).unwrap();
            let (s12, y12) = ssm_step(&SsmState { x: comb(&x1, &x2), t: 0 }, &comb(&u1, &u2), &mats).unwrap();
            for (got, want) in s12.x.iter().zip(comb(&s1.x, &s2.x)).chain(y12.iter().zip(comb(&y1, &y2))) {
                prop_assert!((got - want).abs() <= 1e-12);
            }
        }

        #[test]
        fn decays_stay_in_open_unit_interval(seed in 0u64..1000, u in proptest::collection::vec(-500.0f64..500.0, 2)) {
            let p = random_params(seed, 4, 2, 1);
            let mats = selective_params(&p, &u).unwrap();
            prop_assert!(mats.a_diag.iter().all(|&a| a > 0.0 && a < 1.0));
        }

        #[test]
        fn selective_params_is_deterministic(seed in 0u64..1000, u in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let p = random_params(seed, 3, 2, 2);
            prop_assert_eq!(selective_params(&p, &u).unwrap(), selective_params(&p, &u).unwrap());
        }
    }
}
