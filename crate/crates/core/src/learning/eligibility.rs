//! RTRL eligibility (forward sensitivity) tensors.

use serde::{Deserialize, Serialize};

use crate::error::{BimError, Result};
use crate::matrix::{dot, Matrix};

/// `∂x(t)/∂θ` for a state of size `n_state` and `n_params` parameters.
///
/// Stored column-major so that each parameter's sensitivity column is a
/// contiguous slice; columns evolve independently of each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EligibilityTensor {
    n_state: usize,
    n_params: usize,
    data: Vec<f64>,
}

impl EligibilityTensor {
    pub fn zeros(n_state: usize, n_params: usize) -> Self {
        Self {
            n_state,
            n_params,
            data: vec![0.0; n_state * n_params],
        }
    }

    pub fn from_columns(n_state: usize, n_params: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_state * n_params {
            return Err(BimError::Contract(format!(
                "eligibility {n_state}x{n_params} needs {} entries, got {}",
                n_state * n_params,
                data.len()
            )));
        }
        Ok(Self { n_state, n_params, data })
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    #[inline]
    pub fn get(&self, i: usize, p: usize) -> f64 {
        self.data[p * self.n_state + i]
    }

    pub fn column(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_state..(p + 1) * self.n_state]
    }

    /// Column-major backing storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_state, self.n_params);
        for p in 0..self.n_params {
            for i in 0..self.n_state {
                m[(i, p)] = self.get(i, p);
            }
        }
        m
    }
}

/// `e(t) = jac_state · e(t−1) + jac_param`
pub fn eligibility_step(e_prev: &EligibilityTensor, jac_state: &Matrix, jac_param: &Matrix) -> Result<EligibilityTensor> {
    let (n, p) = (e_prev.n_state, e_prev.n_params);
    if jac_state.shape() != (n, n) || jac_param.shape() != (n, p) {
        return Err(BimError::Contract(format!(
            "eligibility_step: trace {n}x{p}, jac_state {:?}, jac_param {:?}",
            jac_state.shape(),
            jac_param.shape()
        )));
    }
    if !e_prev.is_finite() {
        return Err(BimError::Contract("eligibility_step: non-finite previous trace".into()));
    }
    if !jac_state.is_finite() || !jac_param.is_finite() {
        return Err(BimError::Numeric("eligibility_step: non-finite Jacobian".into()));
    }
    let mut out = EligibilityTensor::zeros(n, p);
    for q in 0..p {
        let prev = e_prev.column(q);
        let col = &mut out.data[q * n..(q + 1) * n];
        for (i, c) in col.iter_mut().enumerate() {
            *c = dot(jac_state.row(i), prev) + jac_param[(i, q)];
        }
    }
    Ok(out)
}

/// `g_p = dl_dy · (dy_dx · e[:, p] + direct[:, p])`
pub fn instantaneous_gradient(e: &EligibilityTensor, dl_dy: &[f64], dy_dx: &Matrix, direct_terms: &Matrix) -> Result<Vec<f64>> {
    let n_out = dl_dy.len();
    if dy_dx.shape() != (n_out, e.n_state) || direct_terms.shape() != (n_out, e.n_params) {
        return Err(BimError::Contract(format!(
            "instantaneous_gradient: dl_dy {n_out}, dy_dx {:?}, direct {:?}, trace {}x{}",
            dy_dx.shape(),
            direct_terms.shape(),
            e.n_state,
            e.n_params
        )));
    }
    // Pull the loss gradient back onto the state once: v = dy_dxᵀ · dl_dy.
    let v = dy_dx.matvec_t(dl_dy)?;
    Ok((0..e.n_params)
        .map(|p| dot(&v, e.column(p)) + (0..n_out).map(|k| dl_dy[k] * direct_terms[(k, p)]).sum::<f64>())
        .collect())
}
