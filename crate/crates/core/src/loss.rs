//! Huber photometric loss and PSNR.

use crate::error::{Error, Result};
use crate::imaging::RgbImage;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::out_of_range("huber delta", delta, "> 0"))
    }
}

/// Huber penalty of one absolute residual.
#[inline]
pub fn huber(rel: f64, delta: f64) -> f64 {
    if rel <= delta {
        0.5 * rel * rel
    } else {
        delta * (rel - 0.5 * delta)
    }
}

/// Derivative of `huber(|pred - target|)` with respect to `pred`.
#[inline]
pub fn huber_derivative(diff: f64, delta: f64) -> f64 {
    diff.clamp(-delta, delta)
}

/// Sum of per-component Huber penalties.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if pred.len() != target.len() {
        return Err(Error::dims("huber target", pred.len(), target.len()));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| huber((p - t).abs(), delta))
        .sum())
}

/// Gradient of [`huber_loss`] with respect to `pred`.
pub fn huber_grad(pred: &[f64], target: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    if pred.len() != target.len() {
        return Err(Error::dims("huber target", pred.len(), target.len()));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| huber_derivative(p - t, delta))
        .collect())
}

pub fn mse(image: &RgbImage, reference: &RgbImage) -> Result<f64> {
    if (image.width, image.height) != (reference.width, reference.height) {
        return Err(Error::InvalidArgument(format!(
            "image is {}x{} but reference is {}x{}",
            image.width, image.height, reference.width, reference.height
        )));
    }
    if image.is_empty() {
        return Err(Error::Empty("image"));
    }
    let sum: f64 = image
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * image.data.len()) as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(image: &RgbImage, reference: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(image, reference)?))
}
