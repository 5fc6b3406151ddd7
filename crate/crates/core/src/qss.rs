//! Differentiable quantizing-scheme search.
//!
//! Each search state holds logits θ over an ordered candidate list. During
//! search a quantizer emits the Gumbel-Softmax weighted sum of all candidate
//! outputs; afterwards one candidate is picked per state.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::{QuantConfig, SchemeId};
use crate::tensor::{softmax_slice, Parameter, Tape, Tensor, Var};

/// Lowest temperature ever returned by a schedule.
pub const TAU_MIN: f32 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// One θ per quantizer.
    Fine,
    /// One θ shared by all weight quantizers and one by all activation quantizers.
    Coarse,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Fine => "fine",
            SearchMode::Coarse => "coarse",
        })
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fine" | "fine-grained" => Ok(SearchMode::Fine),
            "coarse" | "coarse-grained" => Ok(SearchMode::Coarse),
            _ => Err(Error::InvalidArgument(format!("unknown search mode '{s}'"))),
        }
    }
}

/// How the single scheme per state is chosen once search ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalSelection {
    /// `argmax θ`.
    Greedy,
    /// `argmax (θ + g)` with fresh noise.
    Sampled,
}

impl FromStr for FinalSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(FinalSelection::Greedy),
            "sampled" => Ok(FinalSelection::Sampled),
            _ => Err(Error::InvalidArgument(format!("unknown selection '{s}'"))),
        }
    }
}

impl fmt::Display for FinalSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinalSelection::Greedy => "greedy",
            FinalSelection::Sampled => "sampled",
        })
    }
}

/// `τ(δ) = τ0·(1 − δ/Δ)^p`, never below [`TAU_MIN`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    pub tau0: f32,
    pub total: u32,
    pub power: f32,
}

impl TemperatureSchedule {
    pub fn new(tau0: f32, total: u32, power: f32) -> Result<Self> {
        if !(tau0 > 0.0 && tau0.is_finite()) {
            return Err(Error::InvalidTemperature(tau0));
        }
        if total == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one epoch".into()));
        }
        if !(power >= 0.0 && power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature exponent must be non-negative, got {power}"
            )));
        }
        Ok(Self { tau0, total, power })
    }

    pub fn at(&self, epoch: u32) -> Result<f32> {
        if epoch > self.total {
            return Err(Error::EpochOutOfSchedule {
                epoch,
                total: self.total,
            });
        }
        if epoch == self.total {
            return Ok(TAU_MIN.min(self.tau0));
        }
        let frac = 1.0 - epoch as f64 / self.total as f64;
        let tau = self.tau0 as f64 * frac.powf(self.power as f64);
        Ok((tau as f32).max(TAU_MIN.min(self.tau0)))
    }
}

/// Gumbel(0, 1) draws `g = −ln(−ln u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelNoise {
    pub g: Vec<f32>,
}

impl GumbelNoise {
    pub fn zeros(n: usize) -> Self {
        Self { g: vec![0.0; n] }
    }

    pub fn draw(n: usize, seed: u64) -> Self {
        Self::draw_with(&mut ChaCha8Rng::seed_from_u64(seed), n)
    }

    pub fn draw_with<R: Rng>(rng: &mut R, n: usize) -> Self {
        let g = (0..n)
            .map(|_| {
                let u: f64 = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
                (-(-u.ln()).ln()) as f32
            })
            .collect();
        Self { g }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

/// θ over an ordered list of candidate quantizers.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSearchState {
    candidates: Vec<QuantConfig>,
    pub theta: Parameter,
}

impl SchemeSearchState {
    /// Starts from uniform θ = 0.
    pub fn new(candidates: Vec<QuantConfig>) -> Result<Self> {
        let n = candidates.len();
        Self::with_theta(candidates, vec![0.0; n])
    }

    pub fn with_theta(candidates: Vec<QuantConfig>, theta: Vec<f32>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("search needs at least one candidate".into()));
        }
        if theta.len() != candidates.len() {
            return Err(Error::ShapeMismatch {
                op: "SchemeSearchState",
                lhs: vec![candidates.len()],
                rhs: vec![theta.len()],
            });
        }
        for c in &candidates {
            c.validate()?;
        }
        Ok(Self {
            candidates,
            theta: Parameter::new(Tensor::from_vec(theta)?),
        })
    }

    pub fn candidates(&self) -> &[QuantConfig] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn schemes(&self) -> Vec<SchemeId> {
        self.candidates.iter().map(|c| c.scheme).collect()
    }

    /// `softmax((θ + g)/τ)`.
    pub fn probabilities(&self, noise: &GumbelNoise, tau: f32) -> Result<Vec<f32>> {
        self.check(noise, tau)?;
        let z: Vec<f32> = self
            .theta
            .value()
            .data()
            .iter()
            .zip(&noise.g)
            .map(|(t, g)| (t + g) / tau)
            .collect();
        Ok(softmax_slice(&z))
    }

    /// `softmax(θ)`.
    pub fn selection_probabilities(&self) -> Vec<f32> {
        softmax_slice(self.theta.value().data())
    }

    fn check(&self, noise: &GumbelNoise, tau: f32) -> Result<()> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidTemperature(tau));
        }
        if noise.len() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "gumbel noise",
                lhs: vec![self.len()],
                rhs: vec![noise.len()],
            });
        }
        Ok(())
    }
}

/// Records `Σ_k p_k·Q_k(x)` with `p = softmax((θ + g)/τ)` on `tape`, where
/// `theta` is the state's θ already bound to the tape. Several sites may
/// share one `theta` var; their gradients then add up in it.
pub fn soft_quantize_on_tape(
    tape: &mut Tape,
    x: Var,
    state: &SchemeSearchState,
    theta: Var,
    noise: &GumbelNoise,
    tau: f32,
) -> Result<Var> {
    state.check(noise, tau)?;
    let g = tape.leaf(Tensor::from_vec(noise.g.clone())?);
    let logits = tape.add(theta, g)?;
    let scaled = tape.scale(logits, 1.0 / tau)?;
    let p = tape.softmax(scaled)?;
    let mut acc: Option<Var> = None;
    for (k, cfg) in state.candidates().iter().enumerate() {
        let q = cfg.quantize_on_tape(tape, x)?;
        let pk = tape.index(p, k)?;
        let term = tape.mul(q, pk)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("state has candidates"))
}

/// Value-only form of [`soft_quantize_on_tape`].
pub fn soft_quantize(
    d: &Tensor,
    state: &SchemeSearchState,
    noise: &GumbelNoise,
    tau: f32,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(d.clone());
    let theta = state.theta.bind(&mut tape);
    let out = soft_quantize_on_tape(&mut tape, x, state, theta, noise, tau)?;
    Ok(tape.value(out).clone())
}

/// `argmax(θ + g)`, or `argmax θ` without noise; ties go to the lowest index.
pub fn hard_select(theta: &[f32], noise: Option<&GumbelNoise>) -> usize {
    let score = |i: usize| theta[i] + noise.map_or(0.0, |n| n.g[i]);
    (0..theta.len()).fold(0, |best, i| if score(i) > score(best) { i } else { best })
}

/// Gradient accumulated in each bound θ var after `backward`.
pub fn theta_gradients(tape: &Tape, bound: &[Var]) -> Result<Vec<Tensor>> {
    bound
        .iter()
        .map(|&v| {
            if !tape.contains(v) {
                return Err(Error::InvalidArgument(format!(
                    "θ var {v:?} is not on this tape"
                )));
            }
            Ok(tape.grad_or_zeros(v))
        })
        .collect()
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f32]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -(x as f64) * (x as f64).ln())
        .sum()
}

/// Maps quantizer sites to search states according to the mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub mode: SearchMode,
    /// State name → state. Fine mode names states after their quantizer;
    /// coarse mode uses `weights` and `activations`.
    pub states: BTreeMap<String, SchemeSearchState>,
    /// Quantizer id → state name.
    pub sites: BTreeMap<String, String>,
}

impl SearchSpace {
    /// `sites` lists `(quantizer id, is_weight)`.
    pub fn build(
        mode: SearchMode,
        sites: &[(String, bool)],
        weight_candidates: &[QuantConfig],
        activation_candidates: &[QuantConfig],
    ) -> Result<Self> {
        let mut states = BTreeMap::new();
        let mut map = BTreeMap::new();
        for (id, is_weight) in sites {
            let cands = if *is_weight {
                weight_candidates
            } else {
                activation_candidates
            };
            let name = match mode {
                SearchMode::Fine => id.clone(),
                SearchMode::Coarse if *is_weight => "weights".to_string(),
                SearchMode::Coarse => "activations".to_string(),
            };
            if !states.contains_key(&name) {
                states.insert(name.clone(), SchemeSearchState::new(cands.to_vec())?);
            }
            map.insert(id.clone(), name);
        }
        Ok(Self {
            mode,
            states,
            sites: map,
        })
    }

    pub fn state_of(&self, site: &str) -> Option<&SchemeSearchState> {
        self.states.get(self.sites.get(site)?)
    }
}

/// One row of the per-epoch probability trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: u32,
    pub state: String,
    pub scheme: SchemeId,
    pub probability: f32,
}

pub const TRACE_HEADER: &str = "# qnn-trace v1";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\nepoch,state,scheme,probability\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epoch, r.state, r.scheme, r.probability).unwrap();
    }
    out
}
