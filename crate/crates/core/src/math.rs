//! Small numeric helpers shared by the models.

/// `log Σ exp(x)`, stable for large magnitudes; `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax<const N: usize>(logits: &[f64; N]) -> [f64; N] {
    let lse = logsumexp(logits);
    logits.map(|l| l - lse)
}

/// Index of the first maximum, so ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
