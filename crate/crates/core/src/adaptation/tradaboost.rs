//! Instance-transfer boosting.

use nalgebra::DMatrix;

use super::{vstack, AdaptedModel, DomainPair, Method, MethodParams};
use crate::error::{Error, Result};
use crate::linear::{fit_logistic, FitConfig, LinearClassifier};

/// Lower bound on the per-round target factor `eps / (1 - eps)`.
const BETA_FLOOR: f64 = 1e-10;

/// Per-round record of a boosting run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrAdaBoostTrace {
    /// Unnormalized weights (source rows first) at the start of each round.
    pub weights: Vec<Vec<f64>>,
    pub target_errors: Vec<f64>,
    pub round_betas: Vec<f64>,
    /// Fixed multiplier for misclassified source rows.
    pub source_beta: f64,
    pub stopped_early: bool,
}

/// Runs up to `n_rounds` rounds. Each round fits a weighted logistic model on
/// the source and target rows (weights rescaled to sum to the row count),
/// then multiplies the weight of misclassified source rows by
/// `1 / (1 + sqrt(2 ln ns / n_rounds))` and of misclassified target rows by
/// `(1 - eps) / eps`, where `eps` is the weighted target error. Prediction
/// is a vote over the last `ceil(rounds / 2)` members weighted by
/// `ln((1 - eps) / eps)`.
pub fn tradaboost(
    pair: &DomainPair,
    n_rounds: usize,
    cfg: &FitConfig,
) -> Result<(AdaptedModel, TrAdaBoostTrace)> {
    if n_rounds == 0 {
        return Err(Error::invalid("tradaboost needs at least one round"));
    }
    pair.require_supervised_target(Method::TrAdaBoost)?;
    let ns = pair.n_source();
    let n = ns + pair.n_target();
    let x: DMatrix<f64> = vstack(&pair.xs, &pair.xt);
    let mut y = pair.ys.clone();
    y.extend_from_slice(&pair.yt);
    let source_beta = 1.0 / (1.0 + (2.0 * (ns as f64).ln() / n_rounds as f64).sqrt());

    let mut w = vec![1.0; n];
    let mut trace = TrAdaBoostTrace {
        weights: Vec::new(),
        target_errors: Vec::new(),
        round_betas: Vec::new(),
        source_beta,
        stopped_early: false,
    };
    let mut members: Vec<(LinearClassifier, f64)> = Vec::new();
    let mut warnings = Vec::new();
    for round in 0..n_rounds {
        trace.weights.push(w.clone());
        let total: f64 = w.iter().sum();
        let scaled: Vec<f64> = w.iter().map(|v| v * n as f64 / total).collect();
        let model = fit_logistic(&x, &y, &scaled, cfg)?;
        let pred = model.predict_labels(&x)?;
        let wrong: Vec<bool> = pred.iter().zip(&y).map(|(p, t)| p != t).collect();
        let (err_w, tot_w) = (ns..n).fold((0.0, 0.0), |(e, t), i| {
            (e + if wrong[i] { w[i] } else { 0.0 }, t + w[i])
        });
        let eps = err_w / tot_w;
        trace.target_errors.push(eps);
        if eps >= 0.5 {
            warnings.push(format!(
                "target error {eps:.4} >= 0.5 at round {}; stopped early",
                round + 1
            ));
            trace.stopped_early = true;
            if members.is_empty() {
                members.push((model, 1.0));
            }
            break;
        }
        let beta_t = (eps / (1.0 - eps)).max(BETA_FLOOR);
        trace.round_betas.push(beta_t);
        members.push((model, (1.0 / beta_t).ln()));
        for i in 0..n {
            if wrong[i] {
                w[i] *= if i < ns { source_beta } else { 1.0 / beta_t };
            }
        }
    }
    let keep = members.len().div_ceil(2);
    let voters = members.split_off(members.len() - keep);
    let params = MethodParams {
        tradaboost_rounds: n_rounds,
        ..MethodParams::default()
    };
    let mut out = AdaptedModel::plain(Method::TrAdaBoost, voters[voters.len() - 1].0.clone(), &params);
    out.ensemble = Some(voters);
    out.warnings = warnings;
    Ok((out, trace))
}
