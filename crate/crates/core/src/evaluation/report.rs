use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use super::loso::EerReport;
use super::trials::Condition;
use crate::compensation::EstimatorKind;
use crate::error::{Error, Result};

/// One row of the report CSV, as written: EER in percent rounded to two
/// decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub condition: Condition,
    pub estimator: EstimatorKind,
    #[serde(rename = "L")]
    pub pca_dim: usize,
    #[serde(rename = "K")]
    pub mixtures: usize,
    pub n_trials: usize,
    pub n_target: usize,
    #[serde(serialize_with = "two_decimals")]
    pub eer_percent: f64,
    pub threshold: f64,
}

fn two_decimals<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{x:.2}"))
}

impl From<&EerReport> for ReportRow {
    fn from(r: &EerReport) -> Self {
        let pct = format!("{:.2}", 100.0 * r.eer);
        ReportRow {
            scenario: r.scenario.clone(),
            condition: r.condition,
            estimator: r.estimator,
            pca_dim: r.pca_dim,
            mixtures: r.mixtures,
            n_trials: r.n_trials,
            n_target: r.n_target,
            eer_percent: pct.parse().expect("formatted float parses"),
            threshold: r.threshold,
        }
    }
}

const HEADER: [&str; 9] = [
    "scenario",
    "condition",
    "estimator",
    "L",
    "K",
    "n_trials",
    "n_target",
    "eer_percent",
    "threshold",
];

pub fn write_report<W: Write>(reports: &[EerReport], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(HEADER)?;
    for r in reports {
        w.serialize(ReportRow::from(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the report CSV. An empty list gives a header-only file.
pub fn export_report(reports: &[EerReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_report(reports, std::io::BufWriter::new(file))
}

pub fn read_report<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(rows)
}
