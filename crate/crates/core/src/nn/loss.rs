/// Pinball (tilted absolute) loss of predicting `predicted` for quantile
/// level `tau` when `observed` is seen.
pub fn pinball_loss(tau: f64, predicted: f64, observed: f64) -> f64 {
    if observed >= predicted {
        tau * (observed - predicted)
    } else {
        (1.0 - tau) * (predicted - observed)
    }
}

/// Derivative of [`pinball_loss`] with respect to `predicted`; the
/// subgradient at `predicted == observed` is taken as 0.
pub fn pinball_grad(tau: f64, predicted: f64, observed: f64) -> f64 {
    if observed > predicted {
        -tau
    } else if observed < predicted {
        1.0 - tau
    } else {
        0.0
    }
}
