use crate::geometry::RegressionTarget;
use crate::tensor::Real;

/// Softmax cross-entropy `-log p_u` and its gradient `p - onehot(u)`.
pub fn cross_entropy(scores: &[Real], u: usize) -> (Real, Vec<Real>) {
    assert!(u < scores.len(), "label {u} out of range for {} scores", scores.len());
    let p = softmax(scores);
    let max = scores.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<Real>().ln();
    let loss = log_z - scores[u];
    let mut grad = p;
    grad[u] -= 1.0;
    (loss, grad)
}

pub fn softmax(scores: &[Real]) -> Vec<Real> {
    let max = scores.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Huber loss with transition at 1: `0.5 x^2` inside, `|x| - 0.5` outside.
pub fn smooth_l1_scalar(x: Real) -> Real {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_derivative(x: Real) -> Real {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Sum of smooth-L1 over the four coordinates of `t - v`.
pub fn smooth_l1(t: &RegressionTarget, v: &RegressionTarget) -> f64 {
    t.as_array()
        .iter()
        .zip(v.as_array())
        .map(|(a, b)| f64::from(smooth_l1_scalar((a - b) as Real)))
        .sum()
}

/// Smooth-L1 of `pred - target` with its gradient w.r.t. `pred`.
pub fn smooth_l1_with_grad(pred: &[Real], target: &[Real]) -> (Real, Vec<Real>) {
    assert_eq!(pred.len(), target.len());
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let x = p - t;
            loss += smooth_l1_scalar(x);
            smooth_l1_derivative(x)
        })
        .collect();
    (loss, grad)
}
