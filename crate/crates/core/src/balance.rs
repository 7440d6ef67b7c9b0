//! Per-epoch loss-weight adaptation: constant weights, self-adaptive
//! pointwise boundary weights, inverse-Dirichlet weighting, and
//! gradient-norm balancing.

use crate::error::{Error, Result};
use crate::optim::AdamState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BalanceScheme {
    /// User-chosen fixed weights.
    Constant,
    /// Trainable per-point boundary weights ascended on the residuals.
    SelfAdaptive,
    /// Weights proportional to inverse gradient standard deviations.
    InverseDirichlet,
    /// Weights equalizing per-term gradient norms.
    GradNorm,
    /// Loss balancing via the augmented Lagrangian term; the multiplier
    /// updates live in the optimizer, not here.
    Augmented,
}

/// Trainable pointwise boundary weights with their own Adam-ascent state.
#[derive(Clone, Debug)]
pub struct PointwiseWeights {
    pub lambda: Vec<f64>,
    adam: AdamState,
}

/// Current loss-term weights under the selected scheme.
#[derive(Clone, Debug)]
pub struct BalanceState {
    pub scheme: BalanceScheme,
    pub w_interior: f64,
    pub w_boundary: f64,
    pub pointwise: Option<PointwiseWeights>,
    pub ema_alpha: f64,
}

impl BalanceState {
    /// `n_boundary` sizes the pointwise weights for the self-adaptive scheme.
    pub fn new(scheme: BalanceScheme, n_boundary: usize) -> Self {
        let (pointwise, ema_alpha) = match scheme {
            BalanceScheme::SelfAdaptive => (
                Some(PointwiseWeights {
                    lambda: vec![1.0; n_boundary],
                    // the self-adaptive weights are trained by Adam with
                    // learning rate 1.0
                    adam: AdamState::new(n_boundary, 1.0),
                }),
                0.0,
            ),
            BalanceScheme::InverseDirichlet => (None, 0.5),
            BalanceScheme::GradNorm => (None, 0.9),
            BalanceScheme::Constant | BalanceScheme::Augmented => (None, 0.0),
        };
        BalanceState {
            scheme,
            w_interior: 1.0,
            w_boundary: 1.0,
            pointwise,
            ema_alpha,
        }
    }
}

/// Ascends the pointwise boundary weights on `sum lambda(x) r(x)^2`; the
/// gradient with respect to each weight is the squared residual. Interior
/// weights are left untouched.
pub fn self_adaptive_update(state: &mut BalanceState, boundary_residuals: &[f64]) -> Result<()> {
    if state.scheme != BalanceScheme::SelfAdaptive {
        return Err(Error::config("state is not configured for self-adaptive"));
    }
    let pw = state
        .pointwise
        .as_mut()
        .expect("self-adaptive state has pointwise weights");
    if boundary_residuals.len() != pw.lambda.len() {
        return Err(Error::config("residual count does not match the weights"));
    }
    let grad: Vec<f64> = boundary_residuals.iter().map(|r| r * r).collect();
    pw.adam.step_ascend(&mut pw.lambda, &grad)
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

fn ema(w: f64, w_hat: f64, alpha: f64) -> f64 {
    alpha * w + (1.0 - alpha) * w_hat
}

/// Inverse-Dirichlet update: targets are the ratios of the maximum gradient
/// standard deviation to each term's own, blended with EMA factor 1/2.
pub fn inverse_dirichlet_update(
    state: &mut BalanceState,
    grad_interior: &[f64],
    grad_boundary: &[f64],
) -> Result<()> {
    if state.scheme != BalanceScheme::InverseDirichlet {
        return Err(Error::config("state is not configured for inverse-Dirichlet"));
    }
    let std_i = population_std(grad_interior);
    let std_b = population_std(grad_boundary);
    let max = std_i.max(std_b);
    let hat_i = if std_i < 1e-30 { state.w_interior } else { max / std_i };
    let hat_b = if std_b < 1e-30 { state.w_boundary } else { max / std_b };
    state.w_interior = ema(state.w_interior, hat_i, state.ema_alpha);
    state.w_boundary = ema(state.w_boundary, hat_b, state.ema_alpha);
    Ok(())
}

/// Gradient-norm update: targets are `|sum_k grad J_k| / |grad J_k|`,
/// blended with EMA factor 0.9.
pub fn grad_norm_update(state: &mut BalanceState, grad_terms: &[&[f64]]) -> Result<()> {
    if state.scheme != BalanceScheme::GradNorm {
        return Err(Error::config("state is not configured for gradient-norm"));
    }
    if grad_terms.len() != 2 {
        return Err(Error::config("expected interior and boundary gradients"));
    }
    let len = grad_terms[0].len();
    if grad_terms.iter().any(|g| g.len() != len) {
        return Err(Error::config("per-term gradient length mismatch"));
    }
    let mut total_sq = 0.0;
    for i in 0..len {
        let s: f64 = grad_terms.iter().map(|g| g[i]).sum();
        total_sq += s * s;
    }
    let total = total_sq.sqrt();
    let norms: Vec<f64> = grad_terms
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let current = [state.w_interior, state.w_boundary];
    let mut hats = [0.0; 2];
    for k in 0..2 {
        hats[k] = if norms[k] < 1e-30 { current[k] } else { total / norms[k] };
    }
    state.w_interior = ema(state.w_interior, hats[0], state.ema_alpha);
    state.w_boundary = ema(state.w_boundary, hats[1], state.ema_alpha);
    Ok(())
}
