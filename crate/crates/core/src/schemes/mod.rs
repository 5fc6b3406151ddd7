//! The eight candidate quantizing schemes, their configuration, the offline
//! α optimizer, and the quantization-loss metric.

mod alpha;
mod kernels;

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use alpha::{optimize_alpha, optimize_alpha_on, AlphaSearch, AlphaTable};
pub use kernels::{
    fixed_with_step, quantize_binary, quantize_clip, quantize_fixed, quantize_pot,
    quantize_quaternary, quantize_res, quantize_ternary, quantize_zoom, zoom_with,
};
#[cfg(test)]
pub(crate) use kernels::{clip_level, pot_level};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SchemeId {
    Binary,
    Ternary,
    Quaternary,
    FixedQ,
    ResQ,
    ZoomQ,
    ClipQ,
    PotQ,
}

impl SchemeId {
    pub const ALL: [SchemeId; 8] = [
        SchemeId::Binary,
        SchemeId::Ternary,
        SchemeId::Quaternary,
        SchemeId::FixedQ,
        SchemeId::ResQ,
        SchemeId::ZoomQ,
        SchemeId::ClipQ,
        SchemeId::PotQ,
    ];

    /// Candidates for activation quantizers: everything but the 1- and 2-bit
    /// special forms.
    pub const ACTIVATION_DEFAULT: [SchemeId; 5] = [
        SchemeId::FixedQ,
        SchemeId::ResQ,
        SchemeId::ZoomQ,
        SchemeId::ClipQ,
        SchemeId::PotQ,
    ];

    pub fn bit_range(self) -> RangeInclusive<u32> {
        match self {
            SchemeId::Binary => 1..=1,
            SchemeId::Ternary | SchemeId::Quaternary => 2..=2,
            SchemeId::FixedQ | SchemeId::ResQ | SchemeId::ZoomQ | SchemeId::ClipQ => 2..=8,
            SchemeId::PotQ => 2..=4,
        }
    }

    /// Clamps a requested bitwidth into this scheme's range.
    pub fn fit_bits(self, bits: u32) -> u32 {
        let r = self.bit_range();
        bits.clamp(*r.start(), *r.end())
    }

    /// Whether α is a free parameter (tabulated offline) rather than data-derived.
    pub fn has_parametric_alpha(self) -> bool {
        matches!(self, SchemeId::ClipQ | SchemeId::PotQ)
    }

    /// Schemes that fit the `α·H(d/β)` range form and so accept a learnable bitwidth.
    pub fn supports_learned_bits(self) -> bool {
        matches!(
            self,
            SchemeId::FixedQ | SchemeId::ZoomQ | SchemeId::ClipQ | SchemeId::PotQ
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Binary => "binary",
            SchemeId::Ternary => "ternary",
            SchemeId::Quaternary => "quaternary",
            SchemeId::FixedQ => "fixedq",
            SchemeId::ResQ => "resq",
            SchemeId::ZoomQ => "zoomq",
            SchemeId::ClipQ => "clipq",
            SchemeId::PotQ => "potq",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == lower || id.name().trim_end_matches('q') == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme '{s}'")))
    }
}

impl From<SchemeId> for String {
    fn from(id: SchemeId) -> String {
        id.name().to_string()
    }
}

impl TryFrom<String> for SchemeId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

pub(crate) fn check_bits_parametric(scheme: SchemeId, bits: u32) -> Result<()> {
    if !scheme.has_parametric_alpha() {
        return Err(Error::InvalidArgument(format!(
            "{scheme} has no free alpha to optimize"
        )));
    }
    kernels::check_bits(scheme, bits)
}

/// Where ClipQ/PotQ take their α from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSpec {
    /// Derived from the data by the scheme's own formula.
    DataDerived,
    /// Used as-is.
    Fixed(f32),
    /// Multiplied by the input's standard deviation, for tables computed on
    /// unit-variance populations.
    PerUnitStd(f32),
}

/// One quantizer instance: a scheme, a bitwidth, the STE ratio λ and an α source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub scheme: SchemeId,
    pub bits: u32,
    pub lambda: f32,
    pub alpha: AlphaSpec,
}

impl QuantConfig {
    /// `bits` is clamped into the scheme's range; ClipQ/PotQ read α from the
    /// reference table, scaled by the input's standard deviation.
    pub fn new(scheme: SchemeId, bits: u32) -> Self {
        Self::with_table(scheme, bits, &AlphaTable::reference())
    }

    pub fn with_table(scheme: SchemeId, bits: u32, table: &AlphaTable) -> Self {
        let bits = scheme.fit_bits(bits);
        let alpha = if scheme.has_parametric_alpha() {
            table
                .get(scheme, bits)
                .map(AlphaSpec::PerUnitStd)
                .unwrap_or(AlphaSpec::DataDerived)
        } else {
            AlphaSpec::DataDerived
        };
        Self {
            scheme,
            bits,
            lambda: 1.0,
            alpha,
        }
    }

    pub fn with_alpha(mut self, alpha: AlphaSpec) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lambda(mut self, lambda: f32) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme != SchemeId::ResQ || self.bits != 1 {
            kernels::check_bits(self.scheme, self.bits)?;
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.scheme.has_parametric_alpha() && self.alpha == AlphaSpec::DataDerived {
            return Err(Error::InvalidArgument(format!(
                "{} needs an explicit alpha",
                self.scheme
            )));
        }
        Ok(())
    }

    fn resolve_alpha(&self, d: &Tensor) -> Option<f32> {
        match self.alpha {
            AlphaSpec::Fixed(a) => Some(a),
            AlphaSpec::PerUnitStd(a) => Some(a * d.variance().unwrap_or(0.0).sqrt()),
            AlphaSpec::DataDerived => None,
        }
    }

    /// Forward quantization of `d`.
    pub fn apply(&self, d: &Tensor) -> Result<Tensor> {
        self.validate()?;
        match self.scheme {
            SchemeId::Binary => quantize_binary(d),
            SchemeId::Ternary => quantize_ternary(d),
            SchemeId::Quaternary => quantize_quaternary(d),
            SchemeId::FixedQ => quantize_fixed(d, self.bits),
            SchemeId::ResQ => quantize_res(d, self.bits),
            SchemeId::ZoomQ => quantize_zoom(d, self.bits),
            SchemeId::ClipQ | SchemeId::PotQ => {
                if d.is_empty() {
                    return Err(Error::EmptyTensor("quantize"));
                }
                let alpha = self.resolve_alpha(d).unwrap_or(0.0);
                if alpha == 0.0 {
                    return Ok(Tensor::zeros(d.shape()));
                }
                if self.scheme == SchemeId::ClipQ {
                    quantize_clip(d, self.bits, alpha)
                } else {
                    quantize_pot(d, self.bits, alpha)
                }
            }
        }
    }

    /// Records the quantizer on `tape` with a straight-through backward of `λ·upstream`.
    pub fn quantize_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.custom_grad(x, |d| self.apply(d), self.lambda)
    }
}

/// Mean squared difference `‖d − q‖² / numel`.
pub fn quantization_loss(d: &Tensor, q: &Tensor) -> Result<f64> {
    if d.shape() != q.shape() {
        return Err(Error::ShapeMismatch {
            op: "quantization_loss",
            lhs: d.shape().to_vec(),
            rhs: q.shape().to_vec(),
        });
    }
    if d.is_empty() {
        return Err(Error::EmptyTensor("quantization_loss"));
    }
    let s: f64 = d
        .data()
        .iter()
        .zip(q.data())
        .map(|(&a, &b)| {
            let e = a as f64 - b as f64;
            e * e
        })
        .sum();
    Ok(s / d.numel() as f64)
}
