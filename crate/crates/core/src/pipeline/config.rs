//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::qss::{FinalSelection, SearchMode};
use crate::schemes::SchemeId;

pub const CONFIG_HEADER: &str = "# qnn-config v1";

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    /// Fully connected layers with the given widths, ReLU in between.
    Mlp(Vec<usize>),
    /// A graph file.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Blobs,
    Rings,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub dataset: DataSource,
    pub samples: usize,
    pub dim: usize,
    pub separation: f32,
    pub noise: f32,
    /// Scheme-search epochs Δ.
    pub qss_epochs: u32,
    /// Weight and bitwidth training epochs after the search.
    pub qpl_epochs: u32,
    pub tau0: f32,
    pub tau_power: f32,
    pub target_bits: f32,
    pub precision_weight: f32,
    pub mode: SearchMode,
    pub weight_candidates: Vec<SchemeId>,
    pub activation_candidates: Vec<SchemeId>,
    /// Bitwidth of every candidate during the search.
    pub search_bits: u32,
    pub lambda: f32,
    pub lr_weights: f32,
    pub lr_theta: f32,
    pub lr_bits: f32,
    pub batch_size: usize,
    pub seed: Option<u64>,
    pub exempt_first_last: bool,
    pub final_selection: FinalSelection,
    pub learn_bits: bool,
    pub fp_baseline: bool,
    pub alpha_table: Option<PathBuf>,
    /// Directory for the report and trace files.
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::Mlp(vec![2, 32, 2]),
            dataset: DataSource::Blobs,
            samples: 2500,
            dim: 2,
            separation: 4.0,
            noise: 0.1,
            qss_epochs: 10,
            qpl_epochs: 100,
            tau0: 5.0,
            tau_power: 1.0,
            target_bits: 3.0,
            precision_weight: 1.0,
            mode: SearchMode::Fine,
            weight_candidates: SchemeId::ALL.to_vec(),
            activation_candidates: SchemeId::ACTIVATION_DEFAULT.to_vec(),
            search_bits: 3,
            lambda: 1.0,
            lr_weights: 0.05,
            lr_theta: 0.5,
            lr_bits: 0.01,
            batch_size: 64,
            seed: None,
            exempt_first_last: true,
            final_selection: FinalSelection::Greedy,
            learn_bits: true,
            fp_baseline: true,
            alpha_table: None,
            output: None,
        }
    }
}

/// Every accepted key, in file order.
pub const KEYS: [&str; 28] = [
    "model",
    "dataset",
    "samples",
    "dim",
    "separation",
    "noise",
    "qss_epochs",
    "qpl_epochs",
    "tau0",
    "tau_power",
    "target_bits",
    "precision_weight",
    "mode",
    "weight_candidates",
    "activation_candidates",
    "search_bits",
    "lambda",
    "lr_weights",
    "lr_theta",
    "lr_bits",
    "batch_size",
    "seed",
    "exempt_first_last",
    "final_selection",
    "learn_bits",
    "fp_baseline",
    "alpha_table",
    "output",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn parse_schemes(v: &str) -> Result<Vec<SchemeId>> {
    if v.eq_ignore_ascii_case("all") {
        return Ok(SchemeId::ALL.to_vec());
    }
    v.split(',').map(|s| s.trim().parse()).collect()
}

fn join_schemes(s: &[SchemeId]) -> String {
    s.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

impl RunConfig {
    /// Applies one `key = value` setting. Relative paths are resolved
    /// against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let v = value.trim();
        match key {
            "model" => {
                self.model = match v.strip_prefix("mlp:") {
                    Some(dims) => ModelSpec::Mlp(
                        dims.split(',')
                            .map(|d| parse_num("model", d.trim()))
                            .collect::<Result<_>>()?,
                    ),
                    None => ModelSpec::File(resolve(base, v)),
                }
            }
            "dataset" => {
                self.dataset = match v {
                    "blobs" => DataSource::Blobs,
                    "rings" => DataSource::Rings,
                    path => DataSource::File(resolve(base, path)),
                }
            }
            "samples" => self.samples = parse_num(key, v)?,
            "dim" => self.dim = parse_num(key, v)?,
            "separation" => self.separation = parse_num(key, v)?,
            "noise" => self.noise = parse_num(key, v)?,
            "qss_epochs" => self.qss_epochs = parse_num(key, v)?,
            "qpl_epochs" => self.qpl_epochs = parse_num(key, v)?,
            "tau0" => self.tau0 = parse_num(key, v)?,
            "tau_power" => self.tau_power = parse_num(key, v)?,
            "target_bits" => self.target_bits = parse_num(key, v)?,
            "precision_weight" => self.precision_weight = parse_num(key, v)?,
            "mode" => self.mode = v.parse()?,
            "weight_candidates" => self.weight_candidates = parse_schemes(v)?,
            "activation_candidates" => self.activation_candidates = parse_schemes(v)?,
            "search_bits" => self.search_bits = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "lr_weights" => self.lr_weights = parse_num(key, v)?,
            "lr_theta" => self.lr_theta = parse_num(key, v)?,
            "lr_bits" => self.lr_bits = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = Some(parse_num(key, v)?),
            "exempt_first_last" => self.exempt_first_last = parse_bool(key, v)?,
            "final_selection" => self.final_selection = v.parse()?,
            "learn_bits" => self.learn_bits = parse_bool(key, v)?,
            "fp_baseline" => self.fp_baseline = parse_bool(key, v)?,
            "alpha_table" => self.alpha_table = Some(resolve(base, v)),
            "output" => self.output = Some(resolve(base, v)),
            _ => return Err(Error::InvalidArgument(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str, base: Option<&Path>) -> Result<Self> {
        const WHAT: &str = "config";
        let mut cfg = RunConfig::default();
        let mut saw_header = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != CONFIG_HEADER {
                    return Err(Error::parse(WHAT, i + 1, format!("expected '{CONFIG_HEADER}'")));
                }
                saw_header = true;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(WHAT, i + 1, "expected key = value"))?;
            cfg.set(k.trim(), v, base)
                .map_err(|e| Error::parse(WHAT, i + 1, e.to_string()))?;
        }
        if !saw_header {
            return Err(Error::parse(WHAT, 1, format!("expected '{CONFIG_HEADER}'")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path.parent())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CONFIG_HEADER}\n");
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv(
            "model",
            match &self.model {
                ModelSpec::Mlp(d) => format!(
                    "mlp:{}",
                    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
                ),
                ModelSpec::File(p) => p.display().to_string(),
            },
        );
        kv(
            "dataset",
            match &self.dataset {
                DataSource::Blobs => "blobs".into(),
                DataSource::Rings => "rings".into(),
                DataSource::File(p) => p.display().to_string(),
            },
        );
        kv("samples", self.samples.to_string());
        kv("dim", self.dim.to_string());
        kv("separation", self.separation.to_string());
        kv("noise", self.noise.to_string());
        kv("qss_epochs", self.qss_epochs.to_string());
        kv("qpl_epochs", self.qpl_epochs.to_string());
        kv("tau0", self.tau0.to_string());
        kv("tau_power", self.tau_power.to_string());
        kv("target_bits", self.target_bits.to_string());
        kv("precision_weight", self.precision_weight.to_string());
        kv("mode", self.mode.to_string());
        kv("weight_candidates", join_schemes(&self.weight_candidates));
        kv("activation_candidates", join_schemes(&self.activation_candidates));
        kv("search_bits", self.search_bits.to_string());
        kv("lambda", self.lambda.to_string());
        kv("lr_weights", self.lr_weights.to_string());
        kv("lr_theta", self.lr_theta.to_string());
        kv("lr_bits", self.lr_bits.to_string());
        kv("batch_size", self.batch_size.to_string());
        if let Some(s) = self.seed {
            kv("seed", s.to_string());
        }
        kv("exempt_first_last", self.exempt_first_last.to_string());
        kv("final_selection", self.final_selection.to_string());
        kv("learn_bits", self.learn_bits.to_string());
        kv("fp_baseline", self.fp_baseline.to_string());
        if let Some(p) = &self.alpha_table {
            kv("alpha_table", p.display().to_string());
        }
        if let Some(p) = &self.output {
            kv("output", p.display().to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.qss_epochs == 0 {
            return bad("qss_epochs must be at least 1".into());
        }
        for (name, v) in [
            ("lr_weights", self.lr_weights),
            ("lr_theta", self.lr_theta),
            ("lr_bits", self.lr_bits),
            ("tau0", self.tau0),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.precision_weight >= 0.0 && self.precision_weight.is_finite()) {
            return bad("precision_weight must be non-negative".into());
        }
        if !(1.0..=8.0).contains(&self.target_bits) {
            return bad(format!("target_bits must lie in [1, 8], got {}", self.target_bits));
        }
        if !(1..=8).contains(&self.search_bits) {
            return bad(format!("search_bits must lie in [1, 8], got {}", self.search_bits));
        }
        if self.batch_size == 0 || self.samples < 2 {
            return bad("batch_size and samples must be positive".into());
        }
        if self.weight_candidates.is_empty() || self.activation_candidates.is_empty() {
            return bad("candidate sets must not be empty".into());
        }
        if let ModelSpec::Mlp(d) = &self.model {
            if d.len() < 2 || d.contains(&0) {
                return bad("mlp needs at least two positive widths".into());
            }
        }
        Ok(())
    }
}
