//! Nearest-centroid image classifier, used to run the pipeline end to end
//! without an external trainer.

use std::collections::BTreeMap;

use crate::cloud::Species;
use crate::error::{Error, Result};
use crate::projection::{resize_bilinear, Coloring, ProjectionImage};

use super::records::{ProbabilityRecord, ProbabilityTable};

/// Downsamples to `size × size` and flattens to `[0, 1]` values. Large
/// reductions go through repeated 2× bilinear steps so every source pixel
/// contributes.
pub fn image_features(img: &ProjectionImage, size: usize) -> Vec<f64> {
    let mut current = std::borrow::Cow::Borrowed(img);
    while current.width >= 4 * size && current.width == current.height {
        let half = current.width / 2;
        current = std::borrow::Cow::Owned(resize_bilinear(&current, half));
    }
    let small = resize_bilinear(&current, size);
    small.pixels.iter().map(|&b| b as f64 / 255.0).collect()
}

#[derive(Debug, Clone)]
pub struct CentroidAccumulator {
    downsample: usize,
    shape: Option<(usize, usize, Coloring)>,
    sums: BTreeMap<Species, (Vec<f64>, usize)>,
}

impl CentroidAccumulator {
    pub fn new(downsample: usize) -> Self {
        CentroidAccumulator {
            downsample,
            shape: None,
            sums: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, img: &ProjectionImage, species: Species) -> Result<()> {
        let shape = (img.width, img.height, img.meta.coloring);
        match self.shape {
            None => self.shape = Some(shape),
            Some(s) if s != shape => {
                return Err(Error::InvalidParameter(format!(
                    "image {}x{} {} differs from training images {}x{} {}",
                    shape.0, shape.1, shape.2, s.0, s.1, s.2
                )))
            }
            _ => {}
        }
        let f = image_features(img, self.downsample);
        let (sum, count) = self
            .sums
            .entry(species)
            .or_insert_with(|| (vec![0.0; f.len()], 0));
        for (a, v) in sum.iter_mut().zip(&f) {
            *a += v;
        }
        *count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<NearestCentroid> {
        if self.sums.is_empty() {
            return Err(Error::EmptyInput);
        }
        let (classes, centroids): (Vec<Species>, Vec<Vec<f64>>) = self
            .sums
            .into_iter()
            .map(|(s, (sum, n))| (s, sum.into_iter().map(|v| v / n as f64).collect()))
            .unzip();
        let mut pair_dists = Vec::new();
        for i in 0..centroids.len() {
            for j in i + 1..centroids.len() {
                pair_dists.push(euclid(&centroids[i], &centroids[j]));
            }
        }
        let mean = pair_dists.iter().sum::<f64>() / pair_dists.len().max(1) as f64;
        Ok(NearestCentroid {
            downsample: self.downsample,
            shape: self.shape,
            classes,
            centroids,
            temperature: if mean > 0.0 { mean } else { 1.0 },
        })
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct NearestCentroid {
    downsample: usize,
    shape: Option<(usize, usize, Coloring)>,
    pub classes: Vec<Species>,
    pub centroids: Vec<Vec<f64>>,
    /// Mean pairwise centroid distance (1 with fewer than two classes).
    pub temperature: f64,
}

impl NearestCentroid {
    /// Softmin over centroid distances, in `classes` order.
    pub fn predict(&self, img: &ProjectionImage) -> Result<Vec<f64>> {
        if let Some((w, h, coloring)) = self.shape {
            if (img.width, img.height, img.meta.coloring) != (w, h, coloring) {
                return Err(Error::InvalidParameter(format!(
                    "image {}x{} {} differs from training images {w}x{h} {coloring}",
                    img.width, img.height, img.meta.coloring
                )));
            }
        }
        let f = image_features(img, self.downsample);
        let d: Vec<f64> = self.centroids.iter().map(|c| euclid(c, &f)).collect();
        let d_min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = d.iter().map(|x| (-(x - d_min) / self.temperature).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }
}

/// Fits centroids on `train` and scores every image of `test`.
pub fn baseline_classify(
    train: &[(ProjectionImage, Species)],
    test: &[ProjectionImage],
    downsample: usize,
) -> Result<ProbabilityTable> {
    let mut acc = CentroidAccumulator::new(downsample);
    for (img, species) in train {
        acc.add(img, *species)?;
    }
    let model = acc.finish()?;
    let mut table = ProbabilityTable::new(model.classes.clone());
    for img in test {
        table.push(ProbabilityRecord {
            tree_id: img.meta.tree_id.clone(),
            scan_id: img.meta.scan_id.clone(),
            angle_deg: img.meta.angle_deg,
            sliced: img.meta.sliced,
            probabilities: model.predict(img)?,
        })?;
    }
    Ok(table)
}
