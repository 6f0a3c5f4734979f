//! Finite-difference verification of analytic gradients.
//!
//! The oracle side is deliberately primitive: evaluate the loss twice per
//! random direction and form a central difference. It shares no code with the
//! backward pass it checks.

use super::{real, Real, Tensor};
use crate::error::NumericsError;
use crate::rng::SeedStream;

/// Outcome of a gradient check: worst relative error over all directions.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub directions: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Central-difference step, chosen per dtype.
///
/// At f32 the quotient is noise-dominated below ~1e-2: per-element rounding
/// of the forward pass is ~1e-7 absolute, so a 1e-3 step leaves only ~3
/// digits in the difference. Measured worst-case relative error on a small
/// net: 4.4e-3 at step 1e-3 vs 8e-4 at 1e-2.
pub fn fd_step<T: Real>() -> f64 {
    match std::mem::size_of::<T>() {
        4 => 1e-2,
        _ => 1e-5,
    }
}

/// Unit rounding of the dtype, for the oracle's resolution bound.
fn machine_eps<T: Real>() -> f64 {
    match std::mem::size_of::<T>() {
        4 => f32::EPSILON as f64,
        _ => f64::EPSILON,
    }
}

/// Mean of a tensor accumulated in f64. Loss probes hand this to the
/// finite-difference oracle so the f32 pipeline's loss is not quantized to
/// the f32 grid, which would swamp the difference quotient.
pub fn mean_f64<T: Real>(t: &Tensor<T>) -> f64 {
    t.data().iter().map(|&x| x.to_f64()).sum::<f64>() / t.numel() as f64
}

/// Mean squared error accumulated in f64; companion of [`mean_f64`].
pub fn mse_f64<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> f64 {
    debug_assert_eq!(pred.dims(), target.dims());
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.to_f64() - t.to_f64();
            d * d
        })
        .sum::<f64>()
        / pred.numel() as f64
}

/// Checks `d/deps loss(theta + eps*dir)` against the analytic gradient for
/// `directions` random unit directions in parameter space.
///
/// `loss_and_grad` evaluates the model at the given flat parameter vector and
/// returns (loss, gradient); `loss_only` is the forward-only probe used by
/// the finite-difference oracle. The parameter count is capped at 1e5 so a
/// check stays interactive.
pub fn grad_check<T: Real>(
    theta: &[T],
    directions: usize,
    tolerance: f64,
    seed: u64,
    mut loss_and_grad: impl FnMut(&[T]) -> Result<(f64, Vec<T>), NumericsError>,
    mut loss_only: impl FnMut(&[T]) -> Result<f64, NumericsError>,
) -> Result<GradCheckReport, NumericsError> {
    if theta.len() > 100_000 {
        return Err(NumericsError::Contract(format!(
            "grad_check capped at 1e5 parameters, got {}",
            theta.len()
        )));
    }
    let (_, grad) = loss_and_grad(theta)?;
    if grad.len() != theta.len() {
        return Err(NumericsError::Contract(format!(
            "gradient length {} does not match parameter length {}",
            grad.len(),
            theta.len()
        )));
    }
    let h = fd_step::<T>();
    let stream = SeedStream::new(seed, "grad-check");
    let mut max_rel = 0.0f64;

    for d in 0..directions {
        let mut rng = stream.rng(d as u64);
        let mut dir: Vec<f64> = (0..theta.len()).map(|_| stream.normal_f64(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
        for v in dir.iter_mut() {
            *v /= norm;
        }

        let analytic: f64 = grad
            .iter()
            .zip(dir.iter())
            .map(|(&g, &d)| g.to_f64() * d)
            .sum();

        let perturbed = |sign: f64| -> Vec<T> {
            theta
                .iter()
                .zip(dir.iter())
                .map(|(&t, &d)| t + real::<T>(sign * h * d))
                .collect()
        };
        let lp = loss_only(&perturbed(1.0))?;
        let lm = loss_only(&perturbed(-1.0))?;
        let numeric = (lp - lm) / (2.0 * h);

        // The quotient cannot be resolved below the rounding of the two loss
        // evaluations; directions whose derivative sits under that bound are
        // measured against it rather than against a meaningless tiny
        // denominator (the usual atol + rtol formulation).
        let resolution = machine_eps::<T>() * lp.abs().max(lm.abs()) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(resolution / tolerance).max(1e-300);
        let rel = (analytic - numeric).abs() / denom;
        max_rel = max_rel.max(rel);
    }

    Ok(GradCheckReport { directions, max_rel_error: max_rel, tolerance })
}

/// Flattens a parameter list into one vector; inverse of [`unflatten_params`].
pub fn flatten_params<T: Real>(params: &[&Tensor<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for p in params {
        out.extend_from_slice(p.data());
    }
    out
}

/// Splits a flat vector back into tensors shaped like `like`.
pub fn unflatten_params<T: Real>(flat: &[T], like: &[&Tensor<T>]) -> Vec<Tensor<T>> {
    let mut out = Vec::with_capacity(like.len());
    let mut offset = 0;
    for p in like {
        let n = p.numel();
        out.push(Tensor::from_vec(p.dims(), flat[offset..offset + n].to_vec()));
        offset += n;
    }
    debug_assert_eq!(offset, flat.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn linear_loss<T: Real>(theta: &[T], wrong_backward: bool) -> (f64, Vec<T>) {
        // loss = mean(sigmoid(x W)) for fixed x [16,4], W = theta reshaped [4,3].
        // The reported loss is the f64 accumulation of the on-tape values.
        let mut tape = Tape::<T>::new();
        let x = tape
            .constant(Tensor::from_vec(
                &[16, 4],
                (0..64).map(|i| real::<T>(((i * 37 % 64) as f64) * 0.04 - 1.2)).collect(),
            ))
            .unwrap();
        let w = tape.leaf(Tensor::from_vec(&[4, 3], theta.to_vec()), true).unwrap();
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sigmoid(y).unwrap();
        let loss_val = mean_f64(tape.value(s));
        let loss = tape.mean_all(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut g = grads.get(w).unwrap().data().to_vec();
        if wrong_backward {
            g[0] = g[0] + real::<T>(0.5); // deliberately corrupted rule
        }
        (loss_val, g)
    }

    #[test]
    fn linear_layer_passes_at_f32_tolerance() {
        let theta: Vec<f32> = (0..12).map(|i| (i as f32) * 0.1 - 0.55).collect();
        let report = grad_check(
            &theta,
            20,
            1e-3,
            7,
            |t| Ok(linear_loss::<f32>(t, false)),
            |t| Ok(linear_loss::<f32>(t, false).0),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn linear_layer_passes_at_f64_tolerance() {
        let theta: Vec<f64> = (0..12).map(|i| (i as f64) * 0.1 - 0.55).collect();
        let report = grad_check(
            &theta,
            20,
            1e-6,
            7,
            |t| Ok(linear_loss::<f64>(t, false)),
            |t| Ok(linear_loss::<f64>(t, false).0),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        let theta: Vec<f64> = (0..12).map(|i| (i as f64) * 0.1 - 0.55).collect();
        let report = grad_check(
            &theta,
            20,
            1e-6,
            7,
            |t| Ok(linear_loss::<f64>(t, true)),
            |t| Ok(linear_loss::<f64>(t, true).0),
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn parameter_cap_is_enforced() {
        let theta = vec![0.0f32; 100_001];
        let got = grad_check(&theta, 1, 1e-3, 0, |_| Ok((0.0, vec![])), |_| Ok(0.0));
        assert!(matches!(got, Err(NumericsError::Contract(_))));
    }
}
