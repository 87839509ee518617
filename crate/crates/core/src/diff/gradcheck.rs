//! Central finite-difference checking of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so that entries that are zero up to
/// rounding do not dominate.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the tape gradient of `loss` with central differences for every
/// scalar in `stores`. `loss` must build a fresh graph from the current
/// parameter values and return its scalar root.
///
/// Perturbed evaluations replay the stop-gradient values of the base point,
/// so the differences are taken of the function backward actually
/// differentiates; for graphs without stop-gradients this is the loss itself.
pub fn check<F>(
    stores: &mut [&mut ParamStore],
    step: f64,
    floor: f64,
    mut loss: F,
) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &[&ParamStore]) -> Result<Var>,
{
    for s in stores.iter_mut() {
        s.zero_grad();
    }
    let frozen = {
        let mut tape = Tape::new();
        let views: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let root = loss(&mut tape, &views)?;
        tape.backward(root, stores)?;
        tape.stopped_values().to_vec()
    };
    let mut eval = |stores: &[&mut ParamStore]| -> Result<f64> {
        let mut tape = Tape::replaying(frozen.clone());
        let views: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let root = loss(&mut tape, &views)?;
        Ok(tape.scalar(root))
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for si in 0..stores.len() {
        for pi in 0..stores[si].len() {
            let n = stores[si].params()[pi].value.len();
            for k in 0..n {
                let orig = stores[si].params()[pi].value.as_slice().unwrap()[k];
                stores[si].params_mut()[pi].value.as_slice_mut().unwrap()[k] = orig + step;
                let up = eval(stores)?;
                stores[si].params_mut()[pi].value.as_slice_mut().unwrap()[k] = orig - step;
                let down = eval(stores)?;
                stores[si].params_mut()[pi].value.as_slice_mut().unwrap()[k] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = stores[si].params()[pi].grad.as_slice().unwrap()[k];
                worst = worst.max(relative_error(analytic, numeric, floor));
                checked += 1;
            }
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
