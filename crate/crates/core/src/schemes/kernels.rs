//! Forward kernels of the eight candidate schemes.
//!
//! Conventions shared by every kernel: `sign(0) = -1`, `round` is
//! half-away-from-zero, statistics accumulate in f64, and a data-derived
//! scale of zero short-circuits to zeros (ZoomQ: to the input) instead of
//! dividing by zero.

use crate::error::{Error, Result};
use crate::schemes::SchemeId;
use crate::tensor::Tensor;

#[inline]
fn sign(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn signed_range(bits: u32) -> (f32, f32) {
    let half = (1u64 << (bits - 1)) as f32;
    (-half, half - 1.0)
}

pub(crate) fn check_bits(scheme: SchemeId, bits: u32) -> Result<()> {
    if scheme.bit_range().contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidBitwidth {
            scheme,
            bits: bits as f32,
        })
    }
}

fn non_empty(d: &Tensor, op: &'static str) -> Result<()> {
    if d.is_empty() {
        Err(Error::EmptyTensor(op))
    } else {
        Ok(())
    }
}

fn positive_alpha(alpha: f32) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must be positive and finite, got {alpha}"
        )))
    }
}

/// `α·sign(d)` with `α = E|d|`.
pub fn quantize_binary(d: &Tensor) -> Result<Tensor> {
    non_empty(d, "quantize_binary")?;
    let alpha = d.mean_abs().unwrap_or(0.0);
    if alpha == 0.0 {
        return Ok(Tensor::zeros(d.shape()));
    }
    Ok(d.map(|x| alpha * sign(x)))
}

/// `α·clip(round(d/2β), -1, 1)` with `β = 0.7·E|d|` and `α` the mean
/// magnitude of the elements with `|x| > β`.
pub fn quantize_ternary(d: &Tensor) -> Result<Tensor> {
    non_empty(d, "quantize_ternary")?;
    let beta = 0.7 * d.mean_abs().unwrap_or(0.0);
    if beta == 0.0 {
        return Ok(Tensor::zeros(d.shape()));
    }
    let (sum, count) = d
        .data()
        .iter()
        .filter(|x| x.abs() > beta)
        .fold((0.0f64, 0usize), |(s, n), x| (s + x.abs() as f64, n + 1));
    if count == 0 {
        return Ok(Tensor::zeros(d.shape()));
    }
    let alpha = (sum / count as f64) as f32;
    Ok(d.map(|x| alpha * (x / (2.0 * beta)).round().clamp(-1.0, 1.0)))
}

/// `α·(clip(⌊d/α⌋, -2, 1) + ½)` with `α = √D(d)` (population variance).
pub fn quantize_quaternary(d: &Tensor) -> Result<Tensor> {
    non_empty(d, "quantize_quaternary")?;
    let alpha = d.variance().unwrap_or(0.0).sqrt();
    if alpha == 0.0 {
        return Ok(Tensor::zeros(d.shape()));
    }
    Ok(d.map(|x| alpha * ((x / alpha).floor().clamp(-2.0, 1.0) + 0.5)))
}

/// Fixed-point quantization with a power-of-two step
/// `2^(⌊log2 max|d|⌋ - (b-2))`.
pub fn quantize_fixed(d: &Tensor, bits: u32) -> Result<Tensor> {
    check_bits(SchemeId::FixedQ, bits)?;
    non_empty(d, "quantize_fixed")?;
    let max_abs = d.data().iter().fold(0.0f32, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return Ok(Tensor::zeros(d.shape()));
    }
    let p = max_abs.log2().floor() - (bits as f32 - 2.0);
    fixed_with_step(d, bits, p.exp2())
}

/// `α·round(d/α)` on the signed `bits`-bit integer grid.
pub fn fixed_with_step(d: &Tensor, bits: u32, alpha: f32) -> Result<Tensor> {
    positive_alpha(alpha)?;
    let (lo, hi) = signed_range(bits);
    Ok(d.map(|x| alpha * (x / alpha).round().clamp(lo, hi)))
}

/// Sum of `bits` binarizations, each applied to the residual of the previous.
///
/// Accepts `bits = 1`, which is exactly [`quantize_binary`].
pub fn quantize_res(d: &Tensor, bits: u32) -> Result<Tensor> {
    if !(1..=SchemeId::ResQ.bit_range().end().to_owned()).contains(&bits) {
        return Err(Error::InvalidBitwidth {
            scheme: SchemeId::ResQ,
            bits: bits as f32,
        });
    }
    non_empty(d, "quantize_res")?;
    let mut residual = d.clone();
    let mut acc = vec![0.0f32; d.numel()];
    for _ in 0..bits {
        let part = quantize_binary(&residual)?;
        acc.iter_mut().zip(part.data()).for_each(|(a, p)| *a += p);
        residual = residual.zip_map(&part, |r, p| r - p)?;
    }
    Ok(Tensor::from_parts(d.shape().to_vec(), acc))
}

/// Uniform quantization over `[min, max]` with `2^b` intervals.
pub fn quantize_zoom(d: &Tensor, bits: u32) -> Result<Tensor> {
    check_bits(SchemeId::ZoomQ, bits)?;
    non_empty(d, "quantize_zoom")?;
    let (max, min) = (d.max_value().unwrap(), d.min_value().unwrap());
    let alpha = (max - min) / (1u64 << bits) as f32;
    if alpha == 0.0 {
        return Ok(d.clone());
    }
    zoom_with(d, bits, alpha, min)
}

/// `α·clip(⌊(d-β)/α⌋, 0, 2^b-1) + β + α/2` for given `α`, `β`.
pub fn zoom_with(d: &Tensor, bits: u32, alpha: f32, beta: f32) -> Result<Tensor> {
    positive_alpha(alpha)?;
    let top = ((1u64 << bits) - 1) as f32;
    Ok(d.map(|x| alpha * ((x - beta) / alpha).floor().clamp(0.0, top) + beta + alpha / 2.0))
}

#[inline]
pub(crate) fn clip_level(x: f32, bits: u32, alpha: f32) -> f32 {
    let (lo, hi) = signed_range(bits);
    alpha * ((x / alpha).floor().clamp(lo, hi) + 0.5)
}

/// `α·(clip(⌊d/α⌋, -2^(b-1), 2^(b-1)-1) + ½)`.
pub fn quantize_clip(d: &Tensor, bits: u32, alpha: f32) -> Result<Tensor> {
    check_bits(SchemeId::ClipQ, bits)?;
    non_empty(d, "quantize_clip")?;
    positive_alpha(alpha)?;
    Ok(d.map(|x| clip_level(x, bits, alpha)))
}

#[inline]
pub(crate) fn pot_level(x: f32, bits: u32, alpha: f32) -> f32 {
    if x == 0.0 {
        return 0.0;
    }
    let top = ((1u64 << (bits - 1)) - 1) as f32;
    let v = (x.abs() / alpha).log2().round().clamp(0.0, top);
    let e = if v == 0.0 { -1.0 } else { v };
    sign(x) * alpha * e.exp2()
}

/// Power-of-two levels `±α·2^e`, `e = v - [v = 0]`,
/// `v = clip(round(log2(|d|/α)), 0, 2^(b-1)-1)`. Exact zeros stay zero.
pub fn quantize_pot(d: &Tensor, bits: u32, alpha: f32) -> Result<Tensor> {
    check_bits(SchemeId::PotQ, bits)?;
    non_empty(d, "quantize_pot")?;
    positive_alpha(alpha)?;
    Ok(d.map(|x| pot_level(x, bits, alpha)))
}
