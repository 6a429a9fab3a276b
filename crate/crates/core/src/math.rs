//! Scalar kernels shared by every module. All logs are natural.

/// Logistic function.
///
/// Evaluated on the non-negative branch so that `sigmoid(z) + sigmoid(-z)`
/// is exactly 1 in floating point: for `z >= 0` the value lies in `[0.5, 1]`
/// and `1 - s` is computed without rounding.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        1.0 - sigmoid(-z)
    }
}

/// `ln sigmoid(z)` without overflow for large `|z|`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Max-shifted log-sum-exp.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized log-probabilities of a logit row.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| x - lse).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Binary cross-entropy of `sigmoid(z)` against target probability `p`.
pub fn bce_with_logit(z: f64, p: f64) -> f64 {
    let mut loss = 0.0;
    if p > 0.0 {
        loss -= p * log_sigmoid(z);
    }
    if p < 1.0 {
        loss -= (1.0 - p) * log_sigmoid(-z);
    }
    loss
}

/// Largest absolute entry-wise difference between two matrices of equal shape.
pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}
