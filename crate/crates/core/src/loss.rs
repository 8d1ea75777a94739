//! Reference scalar implementation of the class-balanced (reweighted)
//! cross-entropy edge loss with its analytic gradient, and the weighted sum of
//! the three branch losses.
//!
//! For labels `Y` and predictions `f` the loss is
//! `sum_p -eta * (1 - Y_p) * ln(1 - f_p) - eta_bar * Y_p * ln(f_p)`, where
//! `eta` is the fraction of edge pixels and `eta_bar` the fraction of non-edge
//! pixels. The same function serves the semantic and the instance branch.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_CLIP_EPS: f64 = 1e-7;

/// Edge and non-edge pixel fractions of a binary label tensor.
pub fn balance_factors(gt: &[bool]) -> Result<(f64, f64)> {
    if gt.is_empty() {
        return Err(Error::Param("balance factors of an empty label".into()));
    }
    let pos = gt.iter().filter(|&&b| b).count();
    let n = gt.len();
    Ok((pos as f64 / n as f64, (n - pos) as f64 / n as f64))
}

/// How balance factors are computed over a multi-channel label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BalanceMode {
    /// One pair of factors over all channels together.
    #[default]
    Joint,
    /// Separate factors per channel.
    PerChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Balance factors over the whole label.
    pub eta: f64,
    pub eta_bar: f64,
    pub value: f64,
    /// d value / d f_p for every pixel, zero where f_p was clipped.
    pub gradient: Vec<f64>,
    /// Per-channel factors, filled only in [`BalanceMode::PerChannel`].
    pub channel_factors: Vec<(f64, f64)>,
}

/// Loss and gradient for predictions `pred` against binary labels `gt`,
/// both laid out as `channels` equal-sized planes.
pub fn reweighted_edge_loss(
    pred: &[f64],
    gt: &[bool],
    channels: usize,
    clip_eps: f64,
    mode: BalanceMode,
) -> Result<LossBreakdown> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            gt.len()
        )));
    }
    if channels == 0 || !gt.len().is_multiple_of(channels) {
        return Err(Error::Shape(format!(
            "{} values do not split into {channels} channels",
            gt.len()
        )));
    }
    if !(clip_eps > 0.0 && clip_eps < 0.5) {
        return Err(Error::Param(format!(
            "clip epsilon {clip_eps} outside (0, 0.5)"
        )));
    }
    let (eta, eta_bar) = balance_factors(gt)?;
    let plane = gt.len() / channels;
    let channel_factors = match mode {
        BalanceMode::Joint => Vec::new(),
        BalanceMode::PerChannel => gt
            .chunks(plane)
            .map(balance_factors)
            .collect::<Result<Vec<_>>>()?,
    };

    let mut value = 0.0;
    let mut gradient = vec![0.0; pred.len()];
    for (i, (&f, &y)) in pred.iter().zip(gt).enumerate() {
        let (e, eb) = match mode {
            BalanceMode::Joint => (eta, eta_bar),
            BalanceMode::PerChannel => channel_factors[i / plane],
        };
        let fc = f.clamp(clip_eps, 1.0 - clip_eps);
        if y {
            value -= eb * fc.ln();
        } else {
            value -= e * (1.0 - fc).ln();
        }
        if (clip_eps..=1.0 - clip_eps).contains(&f) {
            gradient[i] = if y { -eb / f } else { e / (1.0 - f) };
        }
    }
    Ok(LossBreakdown {
        eta,
        eta_bar,
        value,
        gradient,
        channel_factors,
    })
}

/// Weighted total `a1 * l_s + a2 * l_o + a3 * l_i`.
pub fn total_loss(l_s: f64, l_o: f64, l_i: f64, alphas: (f64, f64, f64)) -> f64 {
    alphas.0 * l_s + alphas.1 * l_o + alphas.2 * l_i
}
