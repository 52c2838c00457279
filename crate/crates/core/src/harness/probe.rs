//! STDP window probe: one forced pre/post pair per offset, weight change read
//! off the hybrid rule with the gradient term held at zero.

use crate::error::{BimError, Result};
use crate::learning::{hybrid_update, stdp_trace_step, HybridRuleConfig, StdpConfig, StdpState};

/// `(Δt, Δw)` for each grid offset. Offsets are rounded to whole steps of
/// `dt`; the realized offset is reported.
pub fn probe_stdp_window(stdp: &StdpConfig, hybrid: &HybridRuleConfig, dt: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    stdp.validate()?;
    hybrid.validate()?;
    if hybrid.lambda >= 1.0 {
        return Err(BimError::Config(
            "the probe needs lambda < 1 so the STDP term reaches the weight".into(),
        ));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(BimError::Config("probe dt must be positive".into()));
    }
    grid.iter()
        .map(|&delta| {
            if !delta.is_finite() {
                return Err(BimError::Input(format!("non-finite probe offset {delta}")));
            }
            let k = (delta / dt).round() as i64;
            let first = 1 + (-k).max(0) as usize;
            let pre_at = first;
            let post_at = (first as i64 + k) as usize;
            let mut state = StdpState::new(1, 1);
            let mut dw = 0.0;
            for step in 0..=pre_at.max(post_at) {
                stdp_trace_step(&mut state, &[step == pre_at], &[step == post_at], stdp, dt)?;
                let omega = state.take_normalized_omega();
                dw += hybrid_update(0.0, omega[(0, 0)], hybrid);
            }
            Ok((k as f64 * dt, dw))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpFit {
    pub amplitude: f64,
    pub tau: f64,
}

/// Least-squares fit of `ln|Δw| = ln A − |Δt|/τ` over the given points.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<ExpFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 != 0.0)
        .map(|&(t, w)| (t.abs(), w.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return Err(BimError::Input("exponential fit needs two non-zero points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(BimError::Input("exponential fit needs distinct offsets".into()));
    }
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return Err(BimError::Numeric(format!("magnitudes do not decay (slope {slope})")));
    }
    Ok(ExpFit {
        amplitude: (my - slope * mx).exp(),
        tau: -1.0 / slope,
    })
}

/// Separate fits for the potentiation (`Δt ≥ 0`) and depression (`Δt < 0`) sides.
pub fn fit_window(table: &[(f64, f64)]) -> Result<(ExpFit, ExpFit)> {
    let pos: Vec<_> = table.iter().copied().filter(|p| p.0 >= 0.0).collect();
    let neg: Vec<_> = table.iter().copied().filter(|p| p.0 < 0.0).collect();
    Ok((fit_exponential(&pos)?, fit_exponential(&neg)?))
}

pub fn write_probe_csv<W: std::io::Write>(table: &[(f64, f64)], mut out: W) -> Result<()> {
    writeln!(out, "delta_t_ms,delta_w")?;
    for (t, w) in table {
        writeln!(
            out,
            "{},{}",
            crate::harness::metrics::format_number(*t),
            crate::harness::metrics::format_number(*w)
        )?;
    }
    Ok(())
}
