use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cloud::Species;
use crate::error::{Error, Result};

/// Rows are ground truth, columns predictions, both in `species` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub species: Vec<Species>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesMetrics {
    pub species: Species,
    pub support: u64,
    pub predicted: u64,
    pub true_positives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the species has neither true nor predicted samples; such
    /// species are left out of the macro averages.
    pub in_macro: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: u64,
    pub overall_accuracy: f64,
    pub macro_average_accuracy: f64,
    pub macro_f1: f64,
    pub kappa: f64,
    pub per_species: Vec<SpeciesMetrics>,
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: Vec<Vec<f64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// OA, per-species P/R/F1, MAA (mean recall), MA-F1 (mean F1) and Cohen's
/// kappa with chance agreement `p_e = Σ (row_s / N)(col_s / N)`. Zero
/// denominators give 0.
pub fn compute_metrics(truth: &[Species], predicted: &[Species], species: &[Species]) -> Result<EvalReport> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let index: HashMap<Species, usize> = species.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    if index.len() != species.len() {
        return Err(Error::InvalidParameter("species set has duplicates".into()));
    }
    let k = species.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        let ti = *index.get(t).ok_or_else(|| Error::LabelOutsideSet(t.to_string()))?;
        let pi = *index.get(p).ok_or_else(|| Error::LabelOutsideSet(p.to_string()))?;
        counts[ti][pi] += 1;
    }
    let confusion = ConfusionMatrix {
        species: species.to_vec(),
        counts,
    };
    let n = confusion.total();
    let correct: u64 = (0..k).map(|i| confusion.counts[i][i]).sum();
    let p_o = correct as f64 / n as f64;

    let per_species: Vec<SpeciesMetrics> = (0..k)
        .map(|i| {
            let tp = confusion.counts[i][i];
            let support = confusion.row_sum(i);
            let predicted = confusion.col_sum(i);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            SpeciesMetrics {
                species: species[i],
                support,
                predicted,
                true_positives: tp,
                precision,
                recall,
                f1,
                in_macro: support > 0 || predicted > 0,
            }
        })
        .collect();

    let included: Vec<&SpeciesMetrics> = per_species.iter().filter(|m| m.in_macro).collect();
    let macro_mean = |f: fn(&SpeciesMetrics) -> f64| {
        included.iter().map(|m| f(m)).sum::<f64>() / included.len() as f64
    };
    let maa = macro_mean(|m| m.recall);
    let ma_f1 = macro_mean(|m| m.f1);

    let nf = n as f64;
    let p_e: f64 = (0..k)
        .map(|i| (confusion.row_sum(i) as f64 / nf) * (confusion.col_sum(i) as f64 / nf))
        .sum();
    let kappa = if (1.0 - p_e).abs() < f64::EPSILON {
        // every sample in one class, on both axes
        if p_o == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };

    Ok(EvalReport {
        samples: n,
        overall_accuracy: p_o,
        macro_average_accuracy: maa,
        macro_f1: ma_f1,
        kappa,
        confusion_normalized: confusion.row_normalized(),
        per_species,
        confusion,
    })
}

impl EvalReport {
    /// Plain-text summary: the four headline metrics in percent, then the
    /// per-species table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8}", "OA(%)", "MAA(%)", "MAF1(%)", "κ(%)");
        let _ = writeln!(
            s,
            "{:>8.1} {:>8.1} {:>8.1} {:>8.1}",
            100.0 * self.overall_accuracy,
            100.0 * self.macro_average_accuracy,
            100.0 * self.macro_f1,
            100.0 * self.kappa
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<10} {:>7} {:>7} {:>7} {:>7}", "species", "n", "P(%)", "R(%)", "F1(%)");
        for m in self.per_species.iter().filter(|m| m.in_macro) {
            let _ = writeln!(
                s,
                "{:<10} {:>7} {:>7.1} {:>7.1} {:>7.1}",
                m.species.as_str(),
                m.support,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1
            );
        }
        s
    }
}
