//! Quantization loss of every scheme across sample distributions.

use std::fmt::Write as _;

use super::{derive_seed, stream};
use crate::distributions::Distribution;
use crate::error::Result;
use crate::schemes::{quantization_loss, AlphaTable, QuantConfig, SchemeId};
use crate::tensor::Tensor;

pub const BENCH_HEADER: &str = "# qnn-bench v1";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub distribution: String,
    pub scheme: SchemeId,
    pub bits: u32,
    pub mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// `(scheme, bits)` pairs outside the scheme's range.
    pub skipped: Vec<String>,
}

impl BenchTable {
    pub fn get(&self, distribution: &str, scheme: SchemeId, bits: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.distribution == distribution && r.scheme == scheme && r.bits == bits)
            .map(|r| r.mse)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_HEADER}\n");
        for s in &self.skipped {
            writeln!(out, "# skipped {s}").unwrap();
        }
        out.push_str("distribution,scheme,bits,mse\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.distribution, r.scheme, r.bits, r.mse).unwrap();
        }
        out
    }
}

/// One row per `(distribution, scheme, bits)`; every distribution gets its
/// own seeded population of `n` samples. ClipQ/PotQ scale the table α by
/// the population's standard deviation.
pub fn bench_distributions(
    schemes: &[SchemeId],
    bits: &[u32],
    distributions: &[Distribution],
    n: usize,
    seed: u64,
    table: &AlphaTable,
) -> Result<BenchTable> {
    let mut out = BenchTable::default();
    for &s in schemes {
        for &b in bits {
            if !s.bit_range().contains(&b) {
                out.skipped.push(format!("{s} b={b}"));
            }
        }
    }
    for (i, dist) in distributions.iter().enumerate() {
        let samples = dist.sample(n, derive_seed(seed, stream::BENCH, i as u64))?;
        let d = Tensor::from_vec(samples)?;
        for &s in schemes {
            for &b in bits {
                if !s.bit_range().contains(&b) {
                    continue;
                }
                let q = QuantConfig::with_table(s, b, table).apply(&d)?;
                out.rows.push(BenchRow {
                    distribution: dist.name().to_string(),
                    scheme: s,
                    bits: b,
                    mse: quantization_loss(&d, &q)?,
                });
            }
        }
    }
    Ok(out)
}
