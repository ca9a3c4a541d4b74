//! Central finite-difference checks of the analytic gradients.

use core::ops::Range;

use super::{batch_loss_and_grad, classification_loss_and_grad, ClassExample, ModelError, ModelParams, NegativeLoss, PairExample};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, floor)
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` with (f(x + h) − f(x − h)) / 2h on `coords`.
pub fn check_gradient<F>(analytic: &[f64], point: &[f64], coords: Range<usize>, step: f64, floor: f64, mut f: F) -> Result<GradCheck, ModelError>
where
    F: FnMut(&[f64]) -> Result<f64, ModelError>,
{
    let mut x = point.to_vec();
    let mut out = GradCheck {
        max_relative_error: 0.0,
        worst_index: coords.start,
        checked: 0,
    };
    for i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x)?;
        x[i] = orig - step;
        let down = f(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(floor);
        if rel > out.max_relative_error {
            out.max_relative_error = rel;
            out.worst_index = i;
        }
        out.checked += 1;
    }
    Ok(out)
}

/// Checks every coordinate of the summed pair-loss gradient.
pub fn check_pair_loss(params: &ModelParams, batch: &[PairExample], negative: NegativeLoss, step: f64, floor: f64) -> Result<GradCheck, ModelError> {
    let config = *params.config();
    let (_, grad) = batch_loss_and_grad(params, batch, negative)?;
    check_gradient(&grad, params.values(), 0..grad.len(), step, floor, |v| {
        let p = ModelParams::from_values(config, v.to_vec())?;
        Ok(batch_loss_and_grad(&p, batch, negative)?.0)
    })
}

/// Checks the cross-entropy gradient; with `freeze_encoder` only the head
/// coordinates are compared and the encoder gradient must be exactly zero.
pub fn check_classification(params: &ModelParams, batch: &[ClassExample], freeze_encoder: bool, step: f64, floor: f64) -> Result<GradCheck, ModelError> {
    let config = *params.config();
    let (_, grad) = classification_loss_and_grad(params, batch, freeze_encoder)?;
    let coords = if freeze_encoder {
        let enc = params.layout().encoder_len();
        if let Some(i) = grad[..enc].iter().position(|&g| g != 0.0) {
            return Ok(GradCheck {
                max_relative_error: f64::INFINITY,
                worst_index: i,
                checked: 0,
            });
        }
        enc..grad.len()
    } else {
        0..grad.len()
    };
    check_gradient(&grad, params.values(), coords, step, floor, |v| {
        let p = ModelParams::from_values(config, v.to_vec())?;
        Ok(classification_loss_and_grad(&p, batch, freeze_encoder)?.0)
    })
}
