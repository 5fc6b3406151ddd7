//! Offline α for the schemes whose scale is a free parameter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::{check_bits_parametric, SchemeId};
use crate::distributions::Distribution;
use crate::error::{Error, Result};

const HEADER: &str = "# qnn-alpha-table v1";
const COLUMNS: &str = "scheme,bits,alpha";

/// Search interval for α is `(0, ALPHA_MAX]`.
const ALPHA_MAX: f64 = 8.0;
const ALPHA_TOL: f64 = 1e-4;
const GRID_STEP: f64 = 1e-3;
const MIN_SAMPLES: usize = 100_000;

/// `(scheme, bits) → α` for ClipQ and PotQ.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlphaTable {
    entries: BTreeMap<(SchemeId, u32), f32>,
}

impl AlphaTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Published optima for unit-variance normal data.
    pub fn reference() -> Self {
        let clip = [1.2832, 0.6694, 0.3570, 0.1939, 0.1056, 0.0573, 0.0308];
        let pot = [1.2240, 0.5181, 0.0381];
        let mut t = Self::new();
        for (b, a) in (2..).zip(clip) {
            t.insert(SchemeId::ClipQ, b, a);
        }
        for (b, a) in (2..).zip(pot) {
            t.insert(SchemeId::PotQ, b, a);
        }
        t
    }

    pub fn insert(&mut self, scheme: SchemeId, bits: u32, alpha: f32) {
        self.entries.insert((scheme, bits), alpha);
    }

    pub fn get(&self, scheme: SchemeId, bits: u32) -> Option<f32> {
        self.entries.get(&(scheme, bits)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SchemeId, u32, f32)> + '_ {
        self.entries.iter().map(|(&(s, b), &a)| (s, b, a))
    }

    /// Entries of `other` replace ours.
    pub fn merge(&mut self, other: &AlphaTable) {
        self.entries.extend(other.entries.iter());
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n{COLUMNS}\n");
        for (s, b, a) in self.iter() {
            // Display for f32 is the shortest string that parses back exactly.
            writeln!(out, "{s},{b},{a}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            _ => return Err(Error::parse("alpha table", 1, format!("expected '{HEADER}'"))),
        }
        let mut t = Self::new();
        for (i, line) in lines {
            let line = line.trim();
            if line == COLUMNS || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let [s, b, a] = cols[..] else {
                return Err(Error::parse("alpha table", i + 1, "expected scheme,bits,alpha"));
            };
            let scheme: SchemeId = s.parse().map_err(|e: Error| Error::parse("alpha table", i + 1, e.to_string()))?;
            let bits: u32 = b
                .parse()
                .map_err(|_| Error::parse("alpha table", i + 1, format!("bad bits '{b}'")))?;
            let alpha: f32 = a
                .parse()
                .map_err(|_| Error::parse("alpha table", i + 1, format!("bad alpha '{a}'")))?;
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::parse("alpha table", i + 1, "alpha must be positive"));
            }
            t.insert(scheme, bits, alpha);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Result of [`optimize_alpha`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaSearch {
    pub alpha: f32,
    pub mse: f64,
    /// The golden-section bracket was not unimodal and a dense grid was used.
    pub used_grid_fallback: bool,
}

/// Minimizes the scheme's mean squared quantization error over α on `n`
/// seeded draws from `dist`.
pub fn optimize_alpha(
    scheme: SchemeId,
    bits: u32,
    dist: &Distribution,
    n: usize,
    seed: u64,
) -> Result<AlphaSearch> {
    if n < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "optimize_alpha needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    check_bits_parametric(scheme, bits)?;
    let samples = dist.sample(n, seed)?;
    optimize_alpha_on(scheme, bits, &samples)
}

/// Same as [`optimize_alpha`] on a caller-supplied population.
pub fn optimize_alpha_on(scheme: SchemeId, bits: u32, samples: &[f32]) -> Result<AlphaSearch> {
    check_bits_parametric(scheme, bits)?;
    if samples.is_empty() {
        return Err(Error::EmptyTensor("optimize_alpha"));
    }
    let pop = SortedPopulation::new(samples, scheme == SchemeId::PotQ);
    let mse = |alpha: f64| -> f64 {
        match scheme {
            SchemeId::ClipQ => pop.clip_mse(bits, alpha),
            _ => pop.pot_mse(bits, alpha),
        }
    };

    let (mut alpha, mut best) = golden_section(&mse, 0.0, ALPHA_MAX, ALPHA_TOL);

    // Unimodality check against a coarse log-spaced scan.
    let coarse = (0..64)
        .map(|i| (1e-3f64.ln() + (ALPHA_MAX / 1e-3).ln() * i as f64 / 63.0).exp())
        .map(|a| (a, mse(a)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty scan");
    let mut used_grid_fallback = false;
    if coarse.1 < best * (1.0 - 1e-9) {
        warn!(
            "{scheme} b={bits}: golden-section bracket not unimodal \
             (found {alpha:.5}, scan has {:.5}); falling back to a dense grid",
            coarse.0
        );
        used_grid_fallback = true;
        let steps = (ALPHA_MAX / GRID_STEP).round() as usize;
        let (ga, gv) = (1..=steps)
            .map(|i| i as f64 * GRID_STEP)
            .map(|a| (a, mse(a)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty grid");
        let lo = (ga - GRID_STEP).max(0.0);
        let (ra, rv) = golden_section(&mse, lo, ga + GRID_STEP, ALPHA_TOL / 10.0);
        (alpha, best) = if rv < gv { (ra, rv) } else { (ga, gv) };
    }
    Ok(AlphaSearch {
        alpha: alpha as f32,
        mse: best,
        used_grid_fallback,
    })
}

/// Samples sorted once, with prefix sums of `x` and `x²`, so the squared
/// error of any piecewise-constant quantizer costs one binary search per
/// level instead of one pass over the data.
struct SortedPopulation {
    xs: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    /// Size of the original population, zeros included.
    n: usize,
}

impl SortedPopulation {
    /// With `magnitudes`, stores `|x|` and drops exact zeros, which PotQ
    /// reproduces without error.
    fn new(samples: &[f32], magnitudes: bool) -> Self {
        let mut xs: Vec<f64> = if magnitudes {
            samples.iter().filter(|&&x| x != 0.0).map(|&x| x.abs() as f64).collect()
        } else {
            samples.iter().map(|&x| x as f64).collect()
        };
        xs.sort_by(f64::total_cmp);
        let mut s1 = Vec::with_capacity(xs.len() + 1);
        let mut s2 = Vec::with_capacity(xs.len() + 1);
        let (mut a, mut b) = (0.0, 0.0);
        s1.push(a);
        s2.push(b);
        for &x in &xs {
            a += x;
            b += x * x;
            s1.push(a);
            s2.push(b);
        }
        Self {
            xs,
            s1,
            s2,
            n: samples.len(),
        }
    }

    fn rank(&self, t: f64) -> usize {
        self.xs.partition_point(|&x| x < t)
    }

    /// `Σ (x - level)²` over the samples in `[from, to)` (ranks).
    fn segment(&self, from: usize, to: usize, level: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        let cnt = (to - from) as f64;
        let s1 = self.s1[to] - self.s1[from];
        let s2 = self.s2[to] - self.s2[from];
        (s2 - 2.0 * level * s1 + level * level * cnt).max(0.0)
    }

    /// Levels `α(k + ½)` on the cells `[αk, α(k+1))`, `k` clipped to the signed range.
    fn clip_mse(&self, bits: u32, alpha: f64) -> f64 {
        let half = 1i64 << (bits - 1);
        let mut total = 0.0;
        let mut from = 0;
        for k in -half..half {
            let to = if k == half - 1 {
                self.xs.len()
            } else {
                self.rank(alpha * (k + 1) as f64)
            };
            total += self.segment(from, to, alpha * (k as f64 + 0.5));
            from = to;
        }
        total / self.n as f64
    }

    /// `v = k` on `[α·2^(k-½), α·2^(k+½))`, clipped to `[0, 2^(b-1)-1]`;
    /// the level is `α·2^e` with `e = v - [v = 0]`.
    fn pot_mse(&self, bits: u32, alpha: f64) -> f64 {
        let top = (1i32 << (bits - 1)) - 1;
        let mut total = 0.0;
        let mut from = 0;
        for v in 0..=top {
            let to = if v == top {
                self.xs.len()
            } else {
                self.rank(alpha * (v as f64 + 0.5).exp2())
            };
            let e = if v == 0 { -1 } else { v };
            total += self.segment(from, to, alpha * (e as f64).exp2());
            from = to;
        }
        total / self.n as f64
    }
}

/// Golden-section minimization on `[lo, hi]`; stops when the bracket is
/// narrower than `tol`. Returns `(x, f(x))` of the best interior point.
pub(crate) fn golden_section(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
