//! Per-session accuracy, average accuracy (AA), performance dropping (PD),
//! and report rendering.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifier::{HeadKind, TrainingConfig};
use crate::error::{Error, Result};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Base,
    Incremental,
    All,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Base, Group::Incremental, Group::All];

    pub fn name(&self) -> &'static str {
        match self {
            Group::Base => "Base",
            Group::Incremental => "Incremental",
            Group::All => "All",
        }
    }

    fn table_label(&self) -> &'static str {
        match self {
            Group::Base => "Base",
            Group::Incremental => "Incr.",
            Group::All => "All",
        }
    }
}

/// Accuracies (percent) after one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAccuracyRecord {
    pub session_index: usize,
    pub base_acc: Option<f64>,
    /// Absent in session 0.
    pub incr_acc: Option<f64>,
    pub all_acc: f64,
}

impl SessionAccuracyRecord {
    pub fn get(&self, group: Group) -> Option<f64> {
        match group {
            Group::Base => self.base_acc,
            Group::Incremental => self.incr_acc,
            Group::All => Some(self.all_acc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub base: Option<f64>,
    pub incremental: Option<f64>,
    pub all: f64,
}

impl GroupSummary {
    pub fn get(&self, group: Group) -> Option<f64> {
        match group {
            Group::Base => self.base,
            Group::Incremental => self.incremental,
            Group::All => Some(self.all),
        }
    }
}

/// The run parameters echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigEcho {
    pub classifier: HeadKind,
    pub num_sessions: usize,
    pub base_classes: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub base_epochs: usize,
    pub incremental_epochs: usize,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub classifier: HeadKind,
    pub seed: u64,
    pub config: RunConfigEcho,
    pub records: Vec<SessionAccuracyRecord>,
    pub aa: GroupSummary,
    pub pd: GroupSummary,
}

/// `100 · matches / total`.
pub fn accuracy(predictions: &[ClassId], truths: &[ClassId]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truths.len() as f64)
}

/// Arithmetic mean of the defined sessions of a group.
pub fn average_accuracy(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("average of an empty series".into()));
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// First defined entry minus the last entry. Base and All must be defined
/// from session 0; Incremental starts at its first defined session.
pub fn performance_dropping(series: &[Option<f64>], group: Group) -> Result<f64> {
    let last = match series.last() {
        None => return Err(Error::InvalidArgument("PD of an empty series".into())),
        Some(None) => {
            return Err(Error::InvalidArgument(format!(
                "{} accuracy undefined in the last session",
                group.name()
            )))
        }
        Some(Some(v)) => *v,
    };
    if group != Group::Incremental && series[0].is_none() {
        return Err(Error::InvalidArgument(format!(
            "{} accuracy undefined in session 0",
            group.name()
        )));
    }
    let first = series.iter().flatten().next().copied().expect("last entry is defined");
    Ok(first - last)
}

fn summarize(series: &[Option<f64>], group: Group) -> Result<Option<(f64, f64)>> {
    let defined: Vec<f64> = series.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Ok(None);
    }
    Ok(Some((average_accuracy(&defined)?, performance_dropping(series, group)?)))
}

impl RunReport {
    pub fn new(records: Vec<SessionAccuracyRecord>, config: RunConfigEcho, seed: u64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("report needs at least one session".into()));
        }
        for r in &records {
            for v in [r.base_acc, r.incr_acc, Some(r.all_acc)].into_iter().flatten() {
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "session {} accuracy {v} outside [0, 100]",
                        r.session_index
                    )));
                }
            }
            if (r.session_index == 0) != r.incr_acc.is_none() {
                return Err(Error::InvalidArgument(format!(
                    "session {}: incremental accuracy must be absent exactly in session 0",
                    r.session_index
                )));
            }
        }
        let base = summarize(&series(&records, Group::Base), Group::Base)?;
        let incr = summarize(&series(&records, Group::Incremental), Group::Incremental)?;
        let all = summarize(&series(&records, Group::All), Group::All)?.expect("All is always defined");
        Ok(Self {
            classifier: config.classifier,
            seed,
            config,
            records,
            aa: GroupSummary {
                base: base.map(|s| s.0),
                incremental: incr.map(|s| s.0),
                all: all.0,
            },
            pd: GroupSummary {
                base: base.map(|s| s.1),
                incremental: incr.map(|s| s.1),
                all: all.1,
            },
        })
    }

    pub fn series(&self, group: Group) -> Vec<Option<f64>> {
        series(&self.records, group)
    }

    /// Recomputes AA and PD from the records and compares within `1e-9`.
    pub fn verify(&self) -> Result<()> {
        let fresh = RunReport::new(self.records.clone(), self.config.clone(), self.seed)?;
        for g in Group::ALL {
            for (what, stored, recomputed) in [
                ("AA", self.aa.get(g), fresh.aa.get(g)),
                ("PD", self.pd.get(g), fresh.pd.get(g)),
            ] {
                let ok = match (stored, recomputed) {
                    (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                    (None, None) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Data(format!(
                        "{} {what} stored {stored:?} but records give {recomputed:?}",
                        g.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn last_all_accuracy(&self) -> f64 {
        self.records.last().map(|r| r.all_acc).unwrap_or(0.0)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("report json: {e}")))?;
        report.verify()?;
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }
}

fn series(records: &[SessionAccuracyRecord], group: Group) -> Vec<Option<f64>> {
    records.iter().map(|r| r.get(group)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Table => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

/// Half away from zero, two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", round2(x))).unwrap_or_else(|| "-".into())
}

pub fn render(report: &RunReport, format: ReportFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        ReportFormat::Json => {
            out = report.to_json()?;
            out.push('\n');
        }
        ReportFormat::Csv => {
            out.push_str("group,session,accuracy\n");
            for g in Group::ALL {
                for r in &report.records {
                    if let Some(v) = r.get(g) {
                        out.push_str(&format!("{},{},{}\n", g.name(), r.session_index, v));
                    }
                }
            }
            for g in Group::ALL {
                if let (Some(aa), Some(pd)) = (report.aa.get(g), report.pd.get(g)) {
                    out.push_str(&format!("{},AA,{aa}\n", g.name()));
                    out.push_str(&format!("{},PD,{pd}\n", g.name()));
                }
            }
        }
        ReportFormat::Table => {
            out.push_str(&format!(
                "Classifier: {}  seed: {}  lambda: {}\n",
                report.classifier, report.seed, report.config.training.lambda
            ));
            let mut header = format!("{:<8}", "Session");
            for r in &report.records {
                header.push_str(&format!("{:>8}", r.session_index));
            }
            header.push_str(&format!("{:>9}{:>9}\n", "AA (%)", "PD (%)"));
            out.push_str(&header);
            for g in Group::ALL {
                if report.aa.get(g).is_none() {
                    continue;
                }
                let mut line = format!("{:<8}", g.table_label());
                for r in &report.records {
                    line.push_str(&format!("{:>8}", cell(r.get(g))));
                }
                line.push_str(&format!("{:>9}{:>9}\n", cell(report.aa.get(g)), cell(report.pd.get(g))));
                out.push_str(&line);
            }
        }
    }
    Ok(out)
}

pub fn emit_report(report: &RunReport, format: ReportFormat, sink: &mut dyn Write) -> Result<()> {
    let text = render(report, format)?;
    sink.write_all(text.as_bytes())
        .and_then(|_| sink.flush())
        .map_err(|e| Error::io("<report sink>", e))
}
