//! Central finite-difference gradient verification.

use super::tape::{Tape, TensorId};
use crate::error::{Result, SeldError};

/// Relative error with the conventional guard denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks the gradient of a scalar-valued graph against central differences.
///
/// `build` constructs the graph from leaves matching `inputs` (one id per
/// input, in order) and returns the scalar output. All coordinates of all
/// inputs are perturbed unless `coords` restricts to a subset of the
/// flattened (input-major) coordinate space.
///
/// Returns the max over checked coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check_multi<F>(
    build: F,
    inputs: &[(&[f64], &[usize])],
    h: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[TensorId]) -> Result<TensorId>,
{
    let eval = |datas: &[Vec<f64>], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::<f64>::new();
        let mut ids = Vec::with_capacity(inputs.len());
        for (d, (_, shape)) in datas.iter().zip(inputs) {
            ids.push(tape.leaf(d.clone(), shape, want_grad)?);
        }
        let out = build(&mut tape, &ids)?;
        if tape.numel(out) != 1 {
            return Err(SeldError::Contract(format!(
                "grad_check requires a scalar function, got shape {:?}",
                tape.shape(out)
            )));
        }
        let val = tape.scalar(out);
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(out)?;
            for &id in &ids {
                grads.push(tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| {
                    vec![0.0; tape.numel(id)]
                }));
            }
        }
        Ok((val, grads))
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.to_vec()).collect();
    let (_, analytic) = eval(&base, true)?;

    let total: usize = inputs.iter().map(|(d, _)| d.len()).sum();
    let all_coords: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all_coords = (0..total).collect();
            &all_coords
        }
    };

    let mut max_err = 0.0f64;
    for &flat in coords {
        // Map the flat coordinate to (input index, offset).
        let mut rem = flat;
        let mut which = 0usize;
        while rem >= base[which].len() {
            rem -= base[which].len();
            which += 1;
        }
        let mut plus = base.clone();
        plus[which][rem] += h;
        let mut minus = base.clone();
        minus[which][rem] -= h;
        let (fp, _) = eval(&plus, false)?;
        let (fm, _) = eval(&minus, false)?;
        let numeric = (fp - fm) / (2.0 * h);
        max_err = max_err.max(rel_err(analytic[which][rem], numeric));
    }
    Ok(max_err)
}

/// Single-input convenience wrapper with the default step `h = 1e-5`.
pub fn grad_check<F>(build: F, x: &[f64], shape: &[usize], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, TensorId) -> Result<TensorId>,
{
    grad_check_multi(|tape, ids| build(tape, ids[0]), &[(x, shape)], h, None)
}

pub const DEFAULT_H: f64 = 1e-5;
