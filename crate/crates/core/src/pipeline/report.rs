//! Run report: TOML with a version header line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qpl::BitPolicy;
use crate::qss::{SearchMode, TraceRow};
use crate::schemes::SchemeId;

pub const REPORT_HEADER: &str = "# qnn-report v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Schemes are selected; weights and bitwidths not yet fine-tuned.
    Search,
    Complete,
}

/// The scheme chosen for one quantizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub quantizer: String,
    pub state: String,
    pub scheme: SchemeId,
    pub bits: u32,
    pub is_weight: bool,
    pub elements: usize,
    /// `softmax(θ)` of the chosen candidate at the end of the search.
    pub probability: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f32>,
    pub train_loss: f32,
    pub test_accuracy: f32,
}

/// State handed from `search` to `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: BTreeMap<String, Vec<f32>>,
    pub theta: BTreeMap<String, Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: Stage,
    pub seed: u64,
    pub mode: SearchMode,
    /// The run configuration in its own text format.
    pub config: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fp_test_accuracy: Option<f32>,
    pub search_test_accuracy: f32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_accuracy: Option<f32>,
    /// Element-weighted averages as `W/A`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub average_bits: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_secs: Option<f64>,
    pub temperatures: Vec<f32>,
    pub selections: Vec<Selection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub policy: Option<BitPolicy>,
    pub curves: Vec<EpochLog>,
    pub trace: Vec<TraceRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<Checkpoint>,
}

impl RunReport {
    pub fn to_text(&self) -> Result<String> {
        let body = toml::to_string(self)
            .map_err(|e| Error::Runtime(format!("cannot serialize report: {e}")))?;
        Ok(format!("{REPORT_HEADER}\n{body}"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or("").trim();
        if first != REPORT_HEADER {
            return Err(Error::parse("report", 1, format!("expected '{REPORT_HEADER}'")));
        }
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(1, |s| text[..s.start].lines().count().max(1));
            Error::parse("report", line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let stage = match self.stage {
            Stage::Search => "search",
            Stage::Complete => "complete",
        };
        writeln!(out, "stage {stage}, seed {}, {} search", self.seed, self.mode).unwrap();
        if let Some(a) = self.fp_test_accuracy {
            writeln!(out, "full-precision test accuracy  {:.2}%", 100.0 * a).unwrap();
        }
        writeln!(
            out,
            "after search test accuracy    {:.2}%",
            100.0 * self.search_test_accuracy
        )
        .unwrap();
        if let Some(a) = self.test_accuracy {
            writeln!(out, "final test accuracy           {:.2}%", 100.0 * a).unwrap();
        }
        if let (Some(first), Some(last)) = (self.temperatures.first(), self.temperatures.last()) {
            writeln!(out, "temperature {first} -> {last} over {} epochs", self.temperatures.len())
                .unwrap();
        }
        writeln!(out, "\nselected schemes:").unwrap();
        for s in &self.selections {
            writeln!(
                out,
                "  {:<24} {:<6} p={:.3}  {}",
                s.quantizer,
                s.scheme,
                s.probability,
                if s.is_weight { "weight" } else { "activation" }
            )
            .unwrap();
        }
        if let Some(p) = &self.policy {
            writeln!(out, "\nbit policy:").unwrap();
            for line in p.to_string().lines() {
                writeln!(out, "  {line}").unwrap();
            }
        }
        if let Some(t) = self.wall_clock_secs {
            writeln!(out, "\nwall clock {t:.1} s").unwrap();
        }
        out
    }
}
