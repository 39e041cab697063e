use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::Species;
use crate::cloud_io::{DatasetManifest, SplitTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

/// Species-stratified train/test split. Trees whose id occurs under more
/// than one scan always go to train. Per species, `round(fraction * total)`
/// trees are drawn for test from the single-scan trees, keeping at least one
/// tree in train; species with fewer than two single-scan trees are placed
/// entirely in train with a warning.
pub fn grouped_split(manifest: &DatasetManifest, test_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    manifest.check_unique()?;

    let mut scans_per_tree: HashMap<&str, HashSet<&str>> = HashMap::new();
    for e in &manifest.entries {
        scans_per_tree.entry(&e.id).or_default().insert(&e.scan_id);
    }
    let multi_scan = |id: &str| scans_per_tree.get(id).is_some_and(|s| s.len() > 1);

    let mut by_species: BTreeMap<Species, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_species.entry(e.species).or_default().push(i);
    }

    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = SplitTag::Train;
    }
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (species, members) in by_species {
        let mut free: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| !multi_scan(&manifest.entries[i].id))
            .collect();
        if free.len() < 2 {
            let msg = format!(
                "{species}: {} single-scan tree(s); all {} placed in train",
                free.len(),
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        free.sort_by(|&a, &b| {
            let (ea, eb) = (&manifest.entries[a], &manifest.entries[b]);
            (&ea.scan_id, &ea.id).cmp(&(&eb.scan_id, &eb.id))
        });
        free.shuffle(&mut rng);
        let target = (test_fraction * members.len() as f64).round() as usize;
        let n_test = target.min(free.len()).min(members.len() - 1);
        for &i in &free[..n_test] {
            out.entries[i].split = SplitTag::Test;
        }
    }
    Ok(SplitOutcome {
        manifest: out,
        warnings,
    })
}
