//! Central finite-difference verification of tape gradients.

use std::fmt;

use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};
use crate::par;

/// Step used for central differences.
pub const FD_EPSILON: f64 = 1e-5;

/// Lower bound on the relative-error denominator. Entries whose true
/// gradient is near zero are compared in absolute terms below this scale,
/// where finite-difference roundoff (~1e-11) dominates.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// A zero or negative tolerance never passes.
    pub fn passed(&self) -> bool {
        self.tolerance > 0.0 && self.params.iter().all(|p| p.max_rel_error <= self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<16} n={:<4} max_rel={:.3e} max|g|={:.3e} {}",
                p.name,
                p.entries,
                p.max_rel_error,
                p.max_abs_analytic,
                if self.tolerance > 0.0 && p.max_rel_error <= self.tolerance { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `forward` against central differences for
/// every entry of every trainable slot in `store`.
///
/// `forward` must be a deterministic function of the store values.
pub fn check_gradients<F>(store: &ParamStore, forward: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var> + Sync,
{
    let mut analytic = store.clone();
    analytic.zero_grads();
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &analytic)?;
    tape.backward(loss, 1.0, &mut analytic)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = forward(&mut t, s)?;
        Ok(t.value(l).item())
    };

    let mut params = Vec::new();
    for (name, slot) in store.iter() {
        if !slot.trainable {
            continue;
        }
        let grad = analytic.grad(name).expect("slot exists").clone();
        let numeric = par::map_range(slot.value.len(), |i| -> Result<f64> {
            let mut s = store.clone();
            let base = s.value(name).expect("slot exists").data()[i];
            s.value_mut(name).expect("slot exists").data_mut()[i] = base + FD_EPSILON;
            let up = eval(&s)?;
            s.value_mut(name).expect("slot exists").data_mut()[i] = base - FD_EPSILON;
            let down = eval(&s)?;
            Ok((up - down) / (2.0 * FD_EPSILON))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let max_rel_error = grad
            .data()
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        params.push(ParamCheck {
            name: name.to_string(),
            entries: numeric.len(),
            max_rel_error,
            max_abs_analytic: grad.data().iter().map(|v| v.abs()).fold(0.0, f64::max),
        });
    }
    Ok(GradCheckReport { tolerance, params })
}
