//! Learned per-quantizer bitwidths.
//!
//! A learnable quantizer evaluates `d_q = α·H(d/β)` with
//! `β = (max d − min d)·2^(−b)` and `α = λβ`. `b` is continuous, `H` is the
//! scheme's projection on the `⌊b⌉`-bit grid and is treated as the identity
//! when differentiating, so the gradient reaches `b` through `β` only.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::SchemeId;
use crate::tensor::{Parameter, Tape, Tensor, Var};

/// Integer grid used by `H` for a continuous bitwidth.
pub fn grid_bits(b: f32) -> u32 {
    b.round().max(1.0) as u32
}

/// Projection `H` of a range-form scheme, evaluated in f64. `offset` is
/// `min(d)/β` for ZoomQ and ignored otherwise.
pub fn projection(scheme: SchemeId, x: f64, bits: u32, offset: f64) -> f64 {
    let half = (1u64 << (bits - 1)) as f64;
    match scheme {
        SchemeId::FixedQ => x.round().clamp(-half, half - 1.0),
        SchemeId::ZoomQ => {
            let top = ((1u64 << bits) - 1) as f64;
            (x - offset).floor().clamp(0.0, top) + offset + 0.5
        }
        SchemeId::ClipQ => x.floor().clamp(-half, half - 1.0) + 0.5,
        SchemeId::PotQ => {
            if x == 0.0 {
                return 0.0;
            }
            let top = ((1u64 << (bits.max(2) - 1)) - 1) as f64;
            let v = x.abs().log2().round().clamp(0.0, top);
            let e = if v == 0.0 { -1.0 } else { v };
            if x > 0.0 {
                e.exp2()
            } else {
                -e.exp2()
            }
        }
        // Not in range form; callers reject these before getting here.
        SchemeId::Binary | SchemeId::Ternary | SchemeId::Quaternary | SchemeId::ResQ => {
            if x > 0.0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Default clamp range of a learned bitwidth.
pub fn default_clamp(scheme: SchemeId) -> (f32, f32) {
    match scheme {
        SchemeId::PotQ => (2.0, 4.0),
        _ => (1.0, 8.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnableBitwidth {
    pub id: String,
    pub scheme: SchemeId,
    pub bits: Parameter,
    pub lo: f32,
    pub hi: f32,
    /// Element count of the quantized tensor (per sample for activations).
    pub elements: usize,
    pub is_weight: bool,
    pub lambda: f32,
}

impl LearnableBitwidth {
    pub fn new(
        id: impl Into<String>,
        scheme: SchemeId,
        init: f32,
        elements: usize,
        is_weight: bool,
    ) -> Result<Self> {
        if !scheme.supports_learned_bits() {
            return Err(Error::InvalidArgument(format!(
                "{scheme} has no range form for learned bitwidths"
            )));
        }
        let (lo, hi) = default_clamp(scheme);
        Ok(Self {
            id: id.into(),
            scheme,
            bits: Parameter::new(Tensor::scalar(init.clamp(lo, hi))),
            lo,
            hi,
            elements,
            is_weight,
            lambda: 1.0,
        })
    }

    pub fn value(&self) -> f32 {
        self.bits.value().data()[0]
    }

    pub fn set_value(&mut self, b: f32) {
        self.bits
            .set_value(Tensor::scalar(b.clamp(self.lo, self.hi)))
            .expect("scalar shape");
    }

    pub fn grad(&self) -> f32 {
        self.bits.grad().data()[0]
    }
}

fn range_of(d: &Tensor) -> Result<(f32, f32)> {
    let max = d.max_value().ok_or(Error::EmptyTensor("quantize_learnable"))?;
    let min = d.min_value().ok_or(Error::EmptyTensor("quantize_learnable"))?;
    Ok((min, max - min))
}

fn check_scheme(scheme: SchemeId) -> Result<()> {
    if scheme.supports_learned_bits() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{scheme} has no range form for learned bitwidths"
        )))
    }
}

/// Forward value of the learnable quantizer at bitwidth `b`.
pub fn quantize_learnable(d: &Tensor, scheme: SchemeId, b: f32, lambda: f32) -> Result<Tensor> {
    check_scheme(scheme)?;
    let (min, range) = range_of(d)?;
    if range == 0.0 {
        return Ok(d.clone());
    }
    let beta = range as f64 * (-(b as f64)).exp2();
    let bits = grid_bits(b);
    let offset = min as f64 / beta;
    let alpha = lambda as f64 * beta;
    Ok(d.map(|v| (alpha * projection(scheme, v as f64 / beta, bits, offset)) as f32))
}

/// Records the learnable quantizer on `tape`. `b` must be a scalar var.
/// The range `max − min` is a constant of the step; a zero range passes the
/// input through and leaves `b` without gradient.
pub fn quantize_learnable_on_tape(
    tape: &mut Tape,
    x: Var,
    b: Var,
    scheme: SchemeId,
    lambda: f32,
) -> Result<Var> {
    check_scheme(scheme)?;
    let (min, range) = range_of(tape.value(x))?;
    if range == 0.0 {
        return tape.custom_grad(x, |d| Ok(d.clone()), lambda);
    }
    let b_val = tape.value(b).item().ok_or_else(|| {
        Error::InvalidArgument("learned bitwidth must be a scalar".into())
    })?;
    let bits = grid_bits(b_val);
    let neg = tape.scale(b, -(LN_2 as f32))?;
    let pow = tape.exp(neg)?;
    let beta = tape.scale(pow, range)?;
    let alpha = tape.scale(beta, lambda)?;
    let offset = min as f64 / tape.value(beta).data()[0] as f64;
    let xs = tape.div(x, beta)?;
    let h = tape.custom_grad(
        xs,
        |t| Ok(t.map(|v| projection(scheme, v as f64, bits, offset) as f32)),
        1.0,
    )?;
    tape.mul(h, alpha)
}

/// Closed form of `∂L/∂b = Σ g·λ·(H(x) − x)·(−β ln 2)` with `x = d/β`,
/// given the upstream gradient `g = ∂L/∂d_q`.
pub fn bit_gradient(
    d: &Tensor,
    upstream: &Tensor,
    scheme: SchemeId,
    b: f32,
    lambda: f32,
) -> Result<f64> {
    check_scheme(scheme)?;
    if d.shape() != upstream.shape() {
        return Err(Error::ShapeMismatch {
            op: "bit_gradient",
            lhs: d.shape().to_vec(),
            rhs: upstream.shape().to_vec(),
        });
    }
    let (min, range) = range_of(d)?;
    if range == 0.0 {
        return Ok(0.0);
    }
    let beta = range as f64 * (-(b as f64)).exp2();
    let bits = grid_bits(b);
    let offset = min as f64 / beta;
    let sum: f64 = d
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| {
            let x = v as f64 / beta;
            g as f64 * (projection(scheme, x, bits, offset) - x)
        })
        .sum();
    Ok(-(lambda as f64) * beta * LN_2 * sum)
}

/// `b̄` and the weight of the precision loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionTarget {
    pub target: f32,
    pub weight: f32,
}

impl PrecisionTarget {
    pub fn new(target: f32) -> Self {
        Self { target, weight: 1.0 }
    }
}

/// `E(𝔹)`: the element-count-weighted mean of `(bits, count)` pairs.
pub fn average_bits(bits: &[(f32, usize)]) -> Result<f64> {
    let total: usize = bits.iter().map(|&(_, c)| c).sum();
    if bits.is_empty() || total == 0 {
        return Err(Error::InvalidArgument("precision loss over no elements".into()));
    }
    Ok(bits.iter().map(|&(b, c)| b as f64 * c as f64).sum::<f64>() / total as f64)
}

/// `w·(E(𝔹) − b̄)²`.
pub fn precision_loss(bits: &[(f32, usize)], target: PrecisionTarget) -> Result<f64> {
    let e = average_bits(bits)?;
    Ok(target.weight as f64 * (e - target.target as f64).powi(2))
}

/// `∂L̄/∂b_l = 2w(E(𝔹) − b̄)·n_l/Σn`.
pub fn precision_gradients(bits: &[(f32, usize)], target: PrecisionTarget) -> Result<Vec<f64>> {
    let e = average_bits(bits)?;
    let total: usize = bits.iter().map(|&(_, c)| c).sum();
    let k = 2.0 * target.weight as f64 * (e - target.target as f64);
    Ok(bits.iter().map(|&(_, c)| k * c as f64 / total as f64).collect())
}

/// Records `L̄` on `tape`. Every entry is `(scalar bit var, element count)`;
/// constants for fixed-bit quantizers are ordinary leaves.
pub fn precision_loss_on_tape(
    tape: &mut Tape,
    bits: &[(Var, usize)],
    target: PrecisionTarget,
) -> Result<Var> {
    let total: usize = bits.iter().map(|&(_, c)| c).sum();
    if bits.is_empty() || total == 0 {
        return Err(Error::InvalidArgument("precision loss over no elements".into()));
    }
    let mut acc: Option<Var> = None;
    for &(b, c) in bits {
        let term = tape.scale(b, c as f32 / total as f32)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    let gap = tape.shift(acc.unwrap(), -target.target)?;
    let sq = tape.mul(gap, gap)?;
    tape.scale(sq, target.weight)
}

/// `b ← clamp(b − lr·g_b, lo, hi)` using each bitwidth's accumulated
/// gradient (task loss plus precision loss).
pub fn combined_bit_step(bits: &mut [LearnableBitwidth], lr: f32) {
    for lb in bits {
        let b = lb.value() - lr * lb.grad();
        lb.set_value(b);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBits {
    pub id: String,
    pub scheme: SchemeId,
    pub bits: u32,
    pub elements: usize,
    pub is_weight: bool,
}

/// Final integer policy with element-weighted averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitPolicy {
    pub layers: Vec<LayerBits>,
    pub average_weight: Option<f64>,
    pub average_activation: Option<f64>,
    pub average_all: f64,
}

impl BitPolicy {
    /// `"W/A"` with two decimals, `-` for a class without quantizers.
    pub fn summary(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        format!("{}/{}", f(self.average_weight), f(self.average_activation))
    }
}

impl fmt::Display for BitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            writeln!(
                f,
                "{:<24} {:<6} {:>10} {:>2} bits  {}",
                l.id,
                l.scheme,
                l.elements,
                l.bits,
                if l.is_weight { "weight" } else { "activation" }
            )?;
        }
        write!(f, "average bits W/A {}", self.summary())
    }
}

/// Input to [`finalize_bits`].
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousBits {
    pub id: String,
    pub scheme: SchemeId,
    pub bits: f32,
    pub elements: usize,
    pub is_weight: bool,
}

impl From<&LearnableBitwidth> for ContinuousBits {
    fn from(lb: &LearnableBitwidth) -> Self {
        Self {
            id: lb.id.clone(),
            scheme: lb.scheme,
            bits: lb.value(),
            elements: lb.elements,
            is_weight: lb.is_weight,
        }
    }
}

/// Rounds half away from zero, clamps into the scheme's range and averages.
pub fn finalize_bits(layers: &[ContinuousBits]) -> Result<BitPolicy> {
    let layers: Vec<LayerBits> = layers
        .iter()
        .map(|c| LayerBits {
            id: c.id.clone(),
            scheme: c.scheme,
            bits: c.scheme.fit_bits(c.bits.round().max(0.0) as u32),
            elements: c.elements,
            is_weight: c.is_weight,
        })
        .collect();
    let avg = |pick: &dyn Fn(&LayerBits) -> bool| {
        let sel: Vec<(f32, usize)> = layers
            .iter()
            .filter(|l| pick(l))
            .map(|l| (l.bits as f32, l.elements))
            .collect();
        average_bits(&sel).ok()
    };
    let average_all = avg(&|_| true)
        .ok_or_else(|| Error::InvalidArgument("no quantizers to finalize".into()))?;
    Ok(BitPolicy {
        average_weight: avg(&|l| l.is_weight),
        average_activation: avg(&|l| !l.is_weight),
        average_all,
        layers,
    })
}
