//! Model inspection reports and saved-model files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::StateAlignment;
use crate::nn::NnModel;
use crate::trellis::TrellisSpec;

pub const SAVED_MODEL_VERSION: u32 = 1;

/// Means, variances and transitions rounded to two decimals, stationary law to three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub num_states: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
}

fn round(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    let r = (v * s).round() / s;
    // avoid printing -0
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn report_model(trellis: &TrellisSpec) -> Result<ModelReport> {
    trellis.validate()?;
    Ok(ModelReport {
        num_states: trellis.num_states,
        means: trellis.emissions.iter().map(|e| round(e.mean, 2)).collect(),
        variances: trellis.emissions.iter().map(|e| round(e.variance, 2)).collect(),
        transitions: trellis
            .transitions
            .iter()
            .map(|row| row.iter().map(|&p| round(p, 2)).collect())
            .collect(),
        stationary: trellis.stationary()?.into_iter().map(|p| round(p, 3)).collect(),
    })
}

impl ModelReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header: String = (1..=self.num_states).map(|k| format!("{:>8}", format!("s{k}"))).collect();
        out.push_str(&format!("{:<10}{header}\n", ""));
        let line = |label: &str, vals: &[f64], digits: usize| {
            let cells: String = vals.iter().map(|v| format!("{v:>8.digits$}")).collect();
            format!("{label:<10}{cells}\n")
        };
        out.push_str(&line("mean", &self.means, 2));
        out.push_str(&line("variance", &self.variances, 2));
        for (i, row) in self.transitions.iter().enumerate() {
            out.push_str(&line(&format!("p(.|s{})", i + 1), row, 2));
        }
        out.push_str(&line("pi", &self.stationary, 3));
        out
    }
}

/// A trained model as written next to sweep results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Trellis { format_version: u32, detector: String, db: f64, trellis: TrellisSpec, alignment: Option<StateAlignment> },
    Nn { format_version: u32, detector: String, db: f64, trellis: TrellisSpec, model: NnModel },
}

impl SavedModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: SavedModel = serde_json::from_str(text)
            .map_err(|source| Error::Json { context: "model file".into(), source })?;
        let v = match &m {
            SavedModel::Trellis { format_version, .. } | SavedModel::Nn { format_version, .. } => *format_version,
        };
        if v != SAVED_MODEL_VERSION {
            return Err(Error::input(format!("unsupported model file version {v}")));
        }
        m.trellis().validate()?;
        Ok(m)
    }

    /// Transition structure used for detection.
    pub fn trellis(&self) -> &TrellisSpec {
        match self {
            SavedModel::Trellis { trellis, .. } | SavedModel::Nn { trellis, .. } => trellis,
        }
    }
}
