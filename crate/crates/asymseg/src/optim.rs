//! SGD with classical momentum, L2 weight decay folded into the gradient,
//! and a polynomial learning-rate schedule.

use crate::net::ParamStore;
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient count or shape does not match parameter store")]
    ShapeMismatch,
}

/// One update step: v <- momentum * v + g + weight_decay * w,
/// then w <- w - lr * v. `grads` must be in parameter-entry order.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), OptimError> {
    if grads.len() != params.entries.len() {
        return Err(OptimError::ShapeMismatch);
    }
    for (entry, grad) in params.entries.iter_mut().zip(grads) {
        if grad.shape() != entry.values.shape() {
            return Err(OptimError::ShapeMismatch);
        }
        let w = entry.values.data_mut();
        let v = entry.momentum.data_mut();
        for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(grad.data()) {
            *v = momentum * *v + g + weight_decay * *w;
            *w -= lr * *v;
        }
    }
    if params.f32_storage {
        params.round_to_f32();
    }
    Ok(())
}

/// Polynomial decay: lr0 * (1 - iter/total)^power.
pub fn poly_lr(iter: usize, total: usize, lr0: f64, power: f64) -> f64 {
    assert!(iter <= total, "iteration beyond schedule end");
    lr0 * (1.0 - iter as f64 / total as f64).powf(power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ParamEntry;

    fn store_one(w: f64) -> ParamStore {
        ParamStore {
            entries: vec![ParamEntry {
                name: "p.w".into(),
                values: Tensor::scalar(w),
                momentum: Tensor::scalar(0.0),
            }],
            f32_storage: false,
        }
    }

    #[test]
    fn two_momentum_steps() {
        let mut s = store_one(1.0);
        let g = [Tensor::scalar(1.0)];
        sgd_step(&mut s, &g, 0.1, 0.9, 0.0).unwrap();
        assert!((s.entries[0].momentum.item() - 1.0).abs() < 1e-15);
        assert!((s.entries[0].values.item() - 0.9).abs() < 1e-15);
        sgd_step(&mut s, &g, 0.1, 0.9, 0.0).unwrap();
        assert!((s.entries[0].momentum.item() - 1.9).abs() < 1e-15);
        assert!((s.entries[0].values.item() - 0.71).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_alone() {
        let mut s = store_one(1.0);
        sgd_step(&mut s, &[Tensor::scalar(0.0)], 0.01, 0.9, 1e-4).unwrap();
        assert!((s.entries[0].values.item() - 0.999999).abs() < 1e-12);
    }

    #[test]
    fn f32_storage_rounds_updates() {
        let mut s = store_one(1.0);
        s.f32_storage = true;
        sgd_step(&mut s, &[Tensor::scalar(1.0 / 3.0)], 0.1, 0.0, 0.0).unwrap();
        let w = s.entries[0].values.item();
        assert_eq!(w, w as f32 as f64);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut s = store_one(1.0);
        assert!(sgd_step(&mut s, &[], 0.1, 0.9, 0.0).is_err());
        assert!(sgd_step(&mut s, &[Tensor::zeros(&[2])], 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn poly_schedule_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 1000, 0.01, 0.9), 0.01);
        assert_eq!(poly_lr(1000, 1000, 0.01, 0.9), 0.0);
        assert!((poly_lr(500, 1000, 0.01, 1.0) - 0.005).abs() < 1e-15);
        // Strictly decreasing for positive power.
        let mut prev = f64::INFINITY;
        for it in (0..=1000).step_by(50) {
            let lr = poly_lr(it, 1000, 0.01, 0.9);
            assert!(lr < prev);
            prev = lr;
        }
    }
}
