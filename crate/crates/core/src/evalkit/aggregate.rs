use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cloud::Species;

use super::records::ProbabilityTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePrediction {
    pub tree_id: String,
    pub scan_id: String,
    pub predicted: Species,
    /// Elementwise sum of the tree's probability vectors.
    pub aggregated: Vec<f64>,
    pub image_count: usize,
}

/// Sums each tree's per-image probability vectors and predicts the species
/// with the largest sum; ties go to the species listed first. Output is
/// ordered by `(scan_id, tree_id)`.
pub fn aggregate_predictions(table: &ProbabilityTable) -> Vec<TreePrediction> {
    let mut sums: BTreeMap<(&str, &str), (Vec<f64>, usize)> = BTreeMap::new();
    for r in &table.records {
        let (acc, count) = sums
            .entry((r.scan_id.as_str(), r.tree_id.as_str()))
            .or_insert_with(|| (vec![0.0; table.species.len()], 0));
        for (a, p) in acc.iter_mut().zip(&r.probabilities) {
            *a += p;
        }
        *count += 1;
    }
    sums.into_iter()
        .filter(|_| !table.species.is_empty())
        .map(|((scan_id, tree_id), (aggregated, image_count))| {
            let mut best = 0;
            for (i, v) in aggregated.iter().enumerate() {
                if *v > aggregated[best] {
                    best = i;
                }
            }
            TreePrediction {
                tree_id: tree_id.to_string(),
                scan_id: scan_id.to_string(),
                predicted: table.species[best],
                aggregated,
                image_count,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::ProbabilityRecord;
    use proptest::prelude::*;

    fn table(rows: &[(&str, [f64; 2])]) -> ProbabilityTable {
        ProbabilityTable {
            species: vec![Species::Pine, Species::Birch],
            records: rows
                .iter()
                .map(|(t, p)| ProbabilityRecord {
                    tree_id: t.to_string(),
                    scan_id: "s".into(),
                    angle_deg: 0.0,
                    sliced: false,
                    probabilities: p.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn single_record() {
        let out = aggregate_predictions(&table(&[("t", [0.9, 0.1])]));
        assert_eq!(out[0].predicted, Species::Pine);
    }

    #[test]
    fn uniform_tie_picks_first_species() {
        let rows: Vec<_> = (0..50).map(|_| ("t", [0.5, 0.5])).collect();
        let out = aggregate_predictions(&table(&rows));
        assert_eq!(out[0].predicted, Species::Pine);
        assert_eq!(out[0].image_count, 50);
    }

    #[test]
    fn sums_decide() {
        let out = aggregate_predictions(&table(&[("t", [0.6, 0.4]), ("t", [0.1, 0.9]), ("t", [0.1, 0.9])]));
        assert!((out[0].aggregated[0] - 0.8).abs() < 1e-12);
        assert!((out[0].aggregated[1] - 2.2).abs() < 1e-12);
        assert_eq!(out[0].predicted, Species::Birch);
    }

    #[test]
    fn trees_are_kept_apart() {
        let out = aggregate_predictions(&table(&[("b", [0.2, 0.8]), ("a", [0.7, 0.3])]));
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].tree_id.as_str(), out[0].predicted), ("a", Species::Pine));
        assert_eq!((out[1].tree_id.as_str(), out[1].predicted), ("b", Species::Birch));
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_positive_scaling(ps in prop::collection::vec(0.0f64..1.0, 1..20), scale in 0.01f64..100.0) {
            let rows: Vec<(&str, [f64; 2])> = ps.iter().map(|&p| ("t", [p, 1.0 - p])).collect();
            let base = aggregate_predictions(&table(&rows));
            let mut scaled = table(&rows);
            for r in &mut scaled.records {
                for v in &mut r.probabilities {
                    *v *= scale;
                }
            }
            let sums = &base[0].aggregated;
            // skip near-ties where rounding of the scaled sums could flip the order
            prop_assume!((sums[0] - sums[1]).abs() > 1e-9);
            prop_assert_eq!(aggregate_predictions(&scaled)[0].predicted, base[0].predicted);
        }
    }
}
