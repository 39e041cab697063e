use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::Species;
use crate::error::{Error, Result};

/// Classifier output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRecord {
    pub tree_id: String,
    pub scan_id: String,
    pub angle_deg: f64,
    pub sliced: bool,
    /// One entry per species of the owning table, in table order.
    pub probabilities: Vec<f64>,
}

/// Probability records sharing one species column order.
///
/// CSV form: header `tree_id,scan_id,angle,slice,<species...>`, one row per
/// image, `slice` written as `0`/`1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    pub species: Vec<Species>,
    pub records: Vec<ProbabilityRecord>,
}

const FIXED_COLUMNS: [&str; 4] = ["tree_id", "scan_id", "angle", "slice"];
const SUM_TOLERANCE: f64 = 1e-6;

impl ProbabilityTable {
    pub fn new(species: Vec<Species>) -> Self {
        ProbabilityTable {
            species,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: ProbabilityRecord) -> Result<()> {
        check_probabilities(&record.probabilities, self.species.len())?;
        self.records.push(record);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.species.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.tree_id.clone(),
                r.scan_id.clone(),
                format!("{}", r.angle_deg),
                if r.sliced { "1" } else { "0" }.to_string(),
            ];
            row.extend(r.probabilities.iter().map(|p| format!("{p}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < FIXED_COLUMNS.len() + 1
            || header.iter().take(4).ne(FIXED_COLUMNS.iter().copied())
        {
            return Err(Error::InvalidParameter(format!(
                "probability CSV header must start with `{}` followed by species columns",
                FIXED_COLUMNS.join(",")
            )));
        }
        let species = header
            .iter()
            .skip(4)
            .map(str::parse)
            .collect::<Result<Vec<Species>>>()?;
        let mut table = ProbabilityTable::new(species);
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let bad = |msg: String| Error::InvalidParameter(format!("probability CSV line {line}: {msg}"));
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            let sliced = match row.get(3).unwrap_or("").trim() {
                "1" | "true" | "slice" => true,
                "0" | "false" | "full" => false,
                other => return Err(bad(format!("bad slice flag `{other}`"))),
            };
            let probabilities = row.iter().skip(4).map(num).collect::<Result<Vec<f64>>>()?;
            let record = ProbabilityRecord {
                tree_id: row[0].to_string(),
                scan_id: row[1].to_string(),
                angle_deg: num(&row[2])?,
                sliced,
                probabilities,
            };
            table.push(record).map_err(|e| bad(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

fn check_probabilities(p: &[f64], expected: usize) -> Result<()> {
    if p.len() != expected {
        return Err(Error::LengthMismatch(p.len(), expected));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(format!("negative or non-finite probability in {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidParameter(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Ground-truth row: `tree_id,scan_id,species`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub tree_id: String,
    pub scan_id: String,
    pub species: Species,
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
