//! Shared helpers for unit tests.

use crate::rng::StreamRng;
use crate::tensor::Tensor;

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: {actual} vs {expected} (tol {tol})"
    );
}

pub fn assert_all_close(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "{what}[{i}]: {a} vs {e} (tol {tol})"
        );
    }
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut StreamRng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Tensor::new(shape, data)
}

pub fn random_param(shape: Vec<usize>, rng: &mut StreamRng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Tensor::param(shape, data)
}

/// Central finite differences against the analytic gradient.
///
/// `f` rebuilds the forward graph from scratch and returns the scalar loss;
/// this keeps the oracle independent of the recorded tape. Returns the
/// maximum relative error over all elements of all `params`.
pub fn gradcheck<F>(f: F, params: &[Tensor], h: f64) -> f64
where
    F: Fn() -> Tensor,
{
    let loss = f();
    for p in params {
        p.zero_grad();
    }
    loss.backward().expect("backward in gradcheck");

    let mut max_rel = 0.0f64;
    for p in params {
        let analytic = p.grad().expect("param missing grad in gradcheck");
        for i in 0..p.numel() {
            p.nudge(i, h);
            let up = f().item();
            p.nudge(i, -2.0 * h);
            let down = f().item();
            p.nudge(i, h);
            let fd = (up - down) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}
