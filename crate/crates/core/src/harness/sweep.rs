use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, HarnessError, Result};
use crate::degrade::{Degradation, DegradationSpec, FRAME_LENGTHS};
use crate::model::RagcnModel;
use crate::skeleton::Dataset;

const RANDOM_PROBS: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];
const JITTER_PROBS: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];
const JITTER_SIGMAS: [f64; 2] = [0.1, 0.05];

/// Degradation family swept along one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Frame,
    Part,
    Block,
    Random,
    Jitter,
}

impl FromStr for Protocol {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "frame" => Self::Frame,
            "part" => Self::Part,
            "block" => Self::Block,
            "random" => Self::Random,
            "jitter" => Self::Jitter,
            _ => return Err(HarnessError::Config(format!("unknown protocol {s}"))),
        })
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Frame => "frame",
            Self::Part => "part",
            Self::Block => "block",
            Self::Random => "random",
            Self::Jitter => "jitter",
        })
    }
}

impl Protocol {
    /// One `(title, columns)` per table; the first column is always the
    /// clean setting.
    fn tables(self, seed: u64) -> Vec<(String, Vec<(String, DegradationSpec)>)> {
        let spec = |k| DegradationSpec::new(k, seed);
        let clean = (self.clean_label().to_string(), DegradationSpec::none());
        let one = |title: &str, rest: Vec<(String, DegradationSpec)>| {
            let mut cols = vec![clean.clone()];
            cols.extend(rest);
            (title.to_string(), cols)
        };
        match self {
            Self::Frame => vec![one(
                "Frame Occlusion",
                FRAME_LENGTHS
                    .iter()
                    .map(|&length| (length.to_string(), spec(Degradation::Frame { length })))
                    .collect(),
            )],
            Self::Part => vec![one(
                "Part Occlusion",
                (1..=5)
                    .map(|part| (part.to_string(), spec(Degradation::Part { part })))
                    .collect(),
            )],
            Self::Block => vec![one(
                "Block Occlusion",
                (1..=5)
                    .map(|range| (range.to_string(), spec(Degradation::Block { range })))
                    .collect(),
            )],
            Self::Random => vec![one(
                "Random Occlusion",
                RANDOM_PROBS
                    .iter()
                    .map(|&p| (p.to_string(), spec(Degradation::Random { p })))
                    .collect(),
            )],
            Self::Jitter => JITTER_SIGMAS
                .iter()
                .map(|&sigma| {
                    one(
                        &format!("sigma={sigma}"),
                        JITTER_PROBS
                            .iter()
                            .map(|&p| (format!("{p:.2}"), spec(Degradation::Jitter { p, sigma })))
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    fn clean_label(self) -> &'static str {
        match self {
            Self::Part | Self::Block => "None",
            _ => "0",
        }
    }
}

/// Accuracy of every model at every setting of one protocol table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub protocol: Protocol,
    pub title: String,
    pub columns: Vec<String>,
    /// `(model name, accuracy per column)`.
    pub rows: Vec<(String, Vec<f64>)>,
    /// Model with the most streams minus the one with the fewest.
    pub difference: Vec<f64>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| HarnessError::Data(e.to_string());
        let mut header = vec![self.title.clone()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(err)?;
        let fmt_row = |name: &str, xs: &[f64]| {
            std::iter::once(name.to_string())
                .chain(xs.iter().map(|x| format!("{x:.1}")))
                .collect::<Vec<_>>()
        };
        for (name, accs) in &self.rows {
            w.write_record(fmt_row(name, accs)).map_err(err)?;
        }
        w.write_record(fmt_row("difference", &self.difference))
            .map_err(err)?;
        w.flush()?;
        Ok(())
    }
}

/// Evaluates each named model at every setting of `protocol` on `ds`.
pub fn robustness_sweep(
    models: &[(String, &RagcnModel<f32>)],
    ds: &Dataset,
    protocol: Protocol,
    seed: u64,
) -> Result<Vec<SweepTable>> {
    if models.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs at least one model".into(),
        ));
    }
    let widest = models
        .iter()
        .enumerate()
        .max_by_key(|(i, (_, m))| (m.config.streams, usize::MAX - i))
        .map_or(0, |(i, _)| i);
    let narrowest = models
        .iter()
        .enumerate()
        .min_by_key(|(i, (_, m))| (m.config.streams, *i))
        .map_or(0, |(i, _)| i);
    protocol
        .tables(seed)
        .into_iter()
        .map(|(title, cols)| {
            let rows = models
                .iter()
                .map(|(name, model)| {
                    let accs = cols
                        .iter()
                        .map(|(_, spec)| evaluate(model, ds, spec))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((name.clone(), accs))
                })
                .collect::<Result<Vec<_>>>()?;
            let difference = rows[widest]
                .1
                .iter()
                .zip(&rows[narrowest].1)
                .map(|(a, b)| a - b)
                .collect();
            Ok(SweepTable {
                protocol,
                title,
                columns: cols.into_iter().map(|(c, _)| c).collect(),
                rows,
                difference,
            })
        })
        .collect()
}
