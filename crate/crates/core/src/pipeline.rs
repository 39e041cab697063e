//! Batch commands behind the `normalview` binary.
//!
//! Every command is deterministic in its inputs and configuration. With
//! `RunOptions::dry_run` a command returns its work plan and touches no file.
//! `RunOptions::jobs` caps the rayon worker count; results do not depend on it.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Species, TreeSegment};
use crate::cloud_io::{
    read_manifest_csv, read_segment, scan_manifest, write_manifest_csv, write_segment,
    DatasetManifest, Format, ManifestEntry,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evalkit::{
    aggregate_predictions, compute_metrics, grouped_split, read_truth_csv, CentroidAccumulator,
    EvalReport, ProbabilityRecord, ProbabilityTable, SplitOutcome, TreePrediction,
};
use crate::georeg::{apply_transform, fit_rigid, mutual_nn_match, write_match_csv, MatchResult, RigidFit};
use crate::normals::{estimate_normals, orient_outward};
use crate::preprocess::{estimate_trunk, min_spacing_subsample, sor_filter};
use crate::projection::{
    emit_dataset, empty_pixel_ratio, pixel_ground_size, read_png, render_view, Coloring,
    DatasetSummary, RenderConfig,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub jobs: Option<usize>,
    pub dry_run: bool,
}

/// Either the plan of a dry run or the result of a real one.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome<T> {
    Planned(Vec<String>),
    Done(T),
}

impl<T> Outcome<T> {
    pub fn done(self) -> Option<T> {
        match self {
            Outcome::Done(t) => Some(t),
            Outcome::Planned(_) => None,
        }
    }
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// A manifest CSV file, or a `<root>/<species>/<scan>__<tree>.<ext>` tree.
pub fn load_manifest(source: &Path) -> Result<DatasetManifest> {
    if source.is_file() {
        read_manifest_csv(source)
    } else {
        scan_manifest(source)
    }
}

fn output_path(entry: &ManifestEntry, out_root: &Path, format: Option<Format>) -> PathBuf {
    let dir = out_root.join(entry.species.as_str());
    match format {
        Some(f) => dir.join(format!("{}.{}", entry.stem(), f.extension())),
        None => dir.join(entry.path.file_name().unwrap_or_default()),
    }
}

fn read_entry(entry: &ManifestEntry) -> Result<TreeSegment> {
    let format = entry
        .format()
        .ok_or_else(|| Error::InvalidParameter(format!("{}: unrecognised extension", entry.path.display())))?;
    let mut segment = read_segment(&entry.path, format)?;
    segment.id = entry.id.clone();
    segment.scan_id = entry.scan_id.clone();
    segment.species = entry.species;
    Ok(segment)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentCounts {
    pub input: PathBuf,
    pub output: PathBuf,
    pub before: usize,
    pub after_sor: usize,
    pub after_subsample: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchReport<T> {
    pub segments: Vec<T>,
    /// `path: error` for each segment that could not be processed.
    pub failures: Vec<String>,
}

impl<T> BatchReport<T> {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }

    fn collect(entries: &[ManifestEntry], results: Vec<Result<T>>) -> Self {
        let mut report = BatchReport {
            segments: Vec::new(),
            failures: Vec::new(),
        };
        for (entry, r) in entries.iter().zip(results) {
            match r {
                Ok(v) => report.segments.push(v),
                Err(e) => {
                    log::error!("{}: {e}", entry.path.display());
                    report.failures.push(format!("{}: {e}", entry.path.display()));
                }
            }
        }
        report
    }
}

/// SOR filter then minimum-spacing subsample for every segment under
/// `in_root`; cleaned segments keep their format and relative path.
pub fn cmd_preprocess(
    in_root: &Path,
    out_root: &Path,
    cfg: &PipelineConfig,
    opts: RunOptions,
) -> Result<Outcome<BatchReport<SegmentCounts>>> {
    cfg.validate()?;
    let manifest = scan_manifest(in_root)?;
    if opts.dry_run {
        return Ok(Outcome::Planned(
            manifest
                .entries
                .iter()
                .map(|e| {
                    format!(
                        "preprocess {} -> {}",
                        e.path.display(),
                        output_path(e, out_root, None).display()
                    )
                })
                .collect(),
        ));
    }
    let run = |entry: &ManifestEntry| -> Result<SegmentCounts> {
        let segment = read_entry(entry)?;
        let before = segment.cloud.len();
        let cleaned = sor_filter(&segment.cloud, cfg.sor)?;
        let after_sor = cleaned.len();
        let thinned = if cfg.subsample.spacing > 0.0 {
            min_spacing_subsample(&cleaned, cfg.subsample.spacing, cfg.seed)?
        } else {
            cleaned
        };
        let output = output_path(entry, out_root, None);
        write_segment(&segment.with_cloud(thinned.clone()), &output, entry.format().expect("checked on read"))?;
        Ok(SegmentCounts {
            input: entry.path.clone(),
            output,
            before,
            after_sor,
            after_subsample: thinned.len(),
        })
    };
    let results = in_pool(opts.jobs, || manifest.entries.par_iter().map(run).collect())?;
    Ok(Outcome::Done(BatchReport::collect(&manifest.entries, results)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalCounts {
    pub input: PathBuf,
    pub output: PathBuf,
    pub points: usize,
    pub degenerate: usize,
}

/// Estimates outward-oriented normals and writes each segment as PLY.
pub fn cmd_normals(
    in_root: &Path,
    out_root: &Path,
    cfg: &PipelineConfig,
    opts: RunOptions,
) -> Result<Outcome<BatchReport<NormalCounts>>> {
    cfg.validate()?;
    let manifest = scan_manifest(in_root)?;
    if opts.dry_run {
        return Ok(Outcome::Planned(
            manifest
                .entries
                .iter()
                .map(|e| {
                    format!(
                        "normals {} -> {}",
                        e.path.display(),
                        output_path(e, out_root, Some(Format::Ply)).display()
                    )
                })
                .collect(),
        ));
    }
    let run = |entry: &ManifestEntry| -> Result<NormalCounts> {
        let segment = read_entry(entry)?;
        let trunk = estimate_trunk(&segment)?;
        let est = estimate_normals(&segment.cloud, cfg.normals)?;
        let oriented = orient_outward(&est.cloud, trunk)?;
        let output = output_path(entry, out_root, Some(Format::Ply));
        write_segment(&segment.with_cloud(oriented), &output, Format::Ply)?;
        Ok(NormalCounts {
            input: entry.path.clone(),
            output,
            points: est.cloud.len(),
            degenerate: est.degenerate.len(),
        })
    };
    let results = in_pool(opts.jobs, || manifest.entries.par_iter().map(run).collect())?;
    Ok(Outcome::Done(BatchReport::collect(&manifest.entries, results)))
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Renders the dataset for `source` (manifest CSV or segment root) into
/// `<out_root>/<split>/<species>/` and writes `summary.json`.
pub fn cmd_render(
    source: &Path,
    cfg: &PipelineConfig,
    out_root: &Path,
    opts: RunOptions,
) -> Result<Outcome<DatasetSummary>> {
    cfg.validate()?;
    let manifest = load_manifest(source)?;
    if opts.dry_run {
        let per_segment = 2 * cfg.render.angles_deg.len();
        let mut plan: Vec<String> = manifest
            .entries
            .iter()
            .map(|e| {
                format!(
                    "render {} -> {} images in {}",
                    e.path.display(),
                    per_segment,
                    out_root.join(e.split.as_str()).join(e.species.as_str()).display()
                )
            })
            .collect();
        plan.push(format!("write {}", out_root.join(SUMMARY_FILE).display()));
        return Ok(Outcome::Planned(plan));
    }
    let summary = in_pool(opts.jobs, || emit_dataset(&manifest, &cfg.render, cfg.normals, out_root))??;
    write_json(&summary, &out_root.join(SUMMARY_FILE))?;
    Ok(Outcome::Done(summary))
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct AnchorRow {
    xl: f64,
    yl: f64,
    zl: f64,
    xg: f64,
    yg: f64,
    zg: f64,
}

/// Matched `(local, global)` anchor coordinates.
pub type AnchorSets = (Vec<Vector3<f64>>, Vec<Vector3<f64>>);

/// Anchor pairs from a CSV with header `xl,yl,zl,xg,yg,zg`.
pub fn read_anchors(path: &Path) -> Result<AnchorSets> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let (mut local, mut global) = (Vec::new(), Vec::new());
    for row in r.deserialize() {
        let a: AnchorRow = row?;
        local.push(Vector3::new(a.xl, a.yl, a.zl));
        global.push(Vector3::new(a.xg, a.yg, a.zg));
    }
    Ok((local, global))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformJson {
    /// Row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub rms_residual: f64,
    pub anchor_count: usize,
}

impl From<&RigidFit> for TransformJson {
    fn from(fit: &RigidFit) -> Self {
        let r = &fit.transform.rotation;
        let t = &fit.transform.translation;
        TransformJson {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
            rms_residual: fit.rms_residual,
            anchor_count: fit.anchor_count,
        }
    }
}

pub const TRANSFORM_FILE: &str = "transform.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegisterReport {
    pub fit: TransformJson,
    pub segments: BatchReport<PathBuf>,
}

/// Fits the local-to-global transform from anchors, writes
/// `transform.json` and, when `segments_root` is given, the transformed
/// segments.
pub fn cmd_register(
    anchors_csv: &Path,
    segments_root: Option<&Path>,
    out_root: &Path,
    opts: RunOptions,
) -> Result<Outcome<RegisterReport>> {
    let (local, global) = read_anchors(anchors_csv)?;
    let fit = fit_rigid(&local, &global)?;
    let manifest = match segments_root {
        Some(root) => scan_manifest(root)?,
        None => DatasetManifest::default(),
    };
    if opts.dry_run {
        let mut plan = vec![format!(
            "fit {} anchors, rms {:.6} m -> {}",
            fit.anchor_count,
            fit.rms_residual,
            out_root.join(TRANSFORM_FILE).display()
        )];
        plan.extend(manifest.entries.iter().map(|e| {
            format!(
                "transform {} -> {}",
                e.path.display(),
                output_path(e, out_root, None).display()
            )
        }));
        return Ok(Outcome::Planned(plan));
    }
    let json = TransformJson::from(&fit);
    write_json(&json, &out_root.join(TRANSFORM_FILE))?;
    let run = |entry: &ManifestEntry| -> Result<PathBuf> {
        let segment = read_entry(entry)?;
        let moved = apply_transform(&segment.cloud, &fit.transform);
        let output = output_path(entry, out_root, None);
        write_segment(&segment.with_cloud(moved), &output, entry.format().expect("checked on read"))?;
        Ok(output)
    };
    let results = in_pool(opts.jobs, || manifest.entries.par_iter().map(run).collect())?;
    Ok(Outcome::Done(RegisterReport {
        fit: json,
        segments: BatchReport::collect(&manifest.entries, results),
    }))
}

/// Tree positions from a CSV with header `id,x,y` or `id,x,y,z`.
pub fn read_positions(path: &Path) -> Result<(Vec<String>, Vec<[f64; 3]>, bool)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let has_z = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["id", "x", "y"] => false,
        ["id", "x", "y", "z"] => true,
        _ => {
            return Err(Error::malformed(path, "line 1", "header must be `id,x,y` or `id,x,y,z`"));
        }
    };
    let (mut ids, mut points) = (Vec::new(), Vec::new());
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = format!("line {}", i + 2);
        let num = |k: usize| -> Result<f64> {
            row[k]
                .parse()
                .map_err(|_| Error::malformed(path, &line, format!("bad number `{}`", &row[k])))
        };
        ids.push(row[0].to_string());
        points.push([num(1)?, num(2)?, if has_z { num(3)? } else { 0.0 }]);
    }
    Ok((ids, points, has_z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub result: MatchResult,
    pub ids_a: Vec<String>,
    pub ids_b: Vec<String>,
    /// The match CSV as written.
    pub csv: String,
}

/// Mutual-nearest-neighbour matching of two position lists, in the
/// horizontal plane unless `use_z`. Writes the match CSV to `out` if given.
pub fn cmd_match(
    positions_a: &Path,
    positions_b: &Path,
    threshold: f64,
    use_z: bool,
    out: Option<&Path>,
    opts: RunOptions,
) -> Result<Outcome<MatchReport>> {
    let (ids_a, pa, za) = read_positions(positions_a)?;
    let (ids_b, pb, zb) = read_positions(positions_b)?;
    if use_z && !(za && zb) {
        return Err(Error::MissingAttribute("z column for 3D matching"));
    }
    if opts.dry_run {
        return Ok(Outcome::Planned(vec![format!(
            "match {} x {} positions ({}D, threshold {threshold} m) -> {}",
            ids_a.len(),
            ids_b.len(),
            if use_z { 3 } else { 2 },
            out.map_or("stdout".to_string(), |p| p.display().to_string())
        )]));
    }
    let result = if use_z {
        mutual_nn_match(&pa, &pb, threshold)?
    } else {
        let flat = |p: &[[f64; 3]]| p.iter().map(|q| [q[0], q[1]]).collect::<Vec<_>>();
        mutual_nn_match(&flat(&pa), &flat(&pb), threshold)?
    };
    let mut buf = Vec::new();
    write_match_csv(&mut buf, &result, &ids_a, &ids_b).map_err(|e| Error::io("<match csv>", e))?;
    if let Some(path) = out {
        std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(Outcome::Done(MatchReport {
        result,
        ids_a,
        ids_b,
        csv: String::from_utf8(buf).expect("ids come from UTF-8 CSV"),
    }))
}

/// Stores entry paths relative to the manifest's directory when they lie
/// below it, absolute otherwise.
fn relocate_paths(manifest: &mut DatasetManifest, manifest_path: &Path) -> Result<()> {
    let dir = manifest_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dir = dir.canonicalize().map_err(|e| Error::io(dir, e))?;
    for e in &mut manifest.entries {
        let abs = e.path.canonicalize().map_err(|err| Error::io(&e.path, err))?;
        e.path = abs.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or(abs);
    }
    Ok(())
}

/// Species-stratified split of the segments in `source`, written as a
/// manifest CSV.
pub fn cmd_split(
    source: &Path,
    cfg: &PipelineConfig,
    out_manifest: &Path,
    opts: RunOptions,
) -> Result<Outcome<SplitOutcome>> {
    cfg.validate()?;
    let manifest = load_manifest(source)?;
    let mut outcome = grouped_split(&manifest, cfg.split.test_fraction, cfg.seed)?;
    if opts.dry_run {
        let n_test = outcome
            .manifest
            .entries
            .iter()
            .filter(|e| e.split == crate::cloud_io::SplitTag::Test)
            .count();
        return Ok(Outcome::Planned(vec![format!(
            "split {} segments ({} train, {} test) -> {}",
            manifest.len(),
            manifest.len() - n_test,
            n_test,
            out_manifest.display()
        )]));
    }
    relocate_paths(&mut outcome.manifest, out_manifest)?;
    write_manifest_csv(&outcome.manifest, out_manifest)?;
    Ok(Outcome::Done(outcome))
}

/// PNG files below `root`, sorted by path.
fn png_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        let p = entry.path();
        if entry.file_type().is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.push(p.to_path_buf());
        }
    }
    Ok(out)
}

fn species_of_png(path: &Path) -> Result<Species> {
    path.parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::BadLayout(path.to_path_buf()))?
        .parse()
}

/// Fits the nearest-centroid baseline on `train_root/<species>/*.png` and
/// scores every PNG below `test_root`. Writes the probability CSV to `out`.
pub fn cmd_classify_baseline(
    train_root: &Path,
    test_root: &Path,
    coloring: Coloring,
    feature_size: usize,
    out: &Path,
    opts: RunOptions,
) -> Result<Outcome<ProbabilityTable>> {
    let train = png_files(train_root)?;
    let test = png_files(test_root)?;
    if opts.dry_run {
        return Ok(Outcome::Planned(vec![format!(
            "fit on {} images, score {} images -> {}",
            train.len(),
            test.len(),
            out.display()
        )]));
    }
    in_pool(opts.jobs, || -> Result<_> {
        let mut acc = CentroidAccumulator::new(feature_size);
        // Bounded batches keep memory flat on large datasets.
        for chunk in train.chunks(64) {
            let images = chunk
                .par_iter()
                .map(|p| Ok((read_png(p, coloring)?, species_of_png(p)?)))
                .collect::<Result<Vec<_>>>()?;
            for (img, species) in &images {
                acc.add(img, *species)?;
            }
        }
        let model = acc.finish()?;
        let records = test
            .par_iter()
            .map(|p| {
                let img = read_png(p, coloring)?;
                Ok(ProbabilityRecord {
                    tree_id: img.meta.tree_id.clone(),
                    scan_id: img.meta.scan_id.clone(),
                    angle_deg: img.meta.angle_deg,
                    sliced: img.meta.sliced,
                    probabilities: model.predict(&img)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = ProbabilityTable::new(model.classes.clone());
        for r in records {
            table.push(r)?;
        }
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
        table.write_csv(std::io::BufWriter::new(file))?;
        Ok(Outcome::Done(table))
    })?
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeOutcome {
    #[serde(flatten)]
    pub prediction: TreePrediction,
    pub truth: Species,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub trees: Vec<TreeOutcome>,
}

/// Aggregates per-image probabilities per tree, joins the truth labels and
/// computes the metrics. Truth species missing from the probability columns
/// are appended to the class set in species order.
pub fn evaluate_table(table: &ProbabilityTable, truth: &[crate::evalkit::TruthRecord]) -> Result<Evaluation> {
    let truth_by_tree: HashMap<(&str, &str), Species> = truth
        .iter()
        .map(|t| ((t.scan_id.as_str(), t.tree_id.as_str()), t.species))
        .collect();
    let predictions = aggregate_predictions(table);
    let mut missing = Vec::new();
    let mut trees = Vec::with_capacity(predictions.len());
    for p in predictions {
        match truth_by_tree.get(&(p.scan_id.as_str(), p.tree_id.as_str())) {
            Some(&truth) => trees.push(TreeOutcome { prediction: p, truth }),
            None => missing.push(format!("{}/{}", p.scan_id, p.tree_id)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no truth label for {} tree(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let mut species = table.species.clone();
    let extra: std::collections::BTreeSet<Species> =
        trees.iter().map(|t| t.truth).filter(|s| !species.contains(s)).collect();
    species.extend(extra);
    let t: Vec<Species> = trees.iter().map(|t| t.truth).collect();
    let p: Vec<Species> = trees.iter().map(|t| t.prediction.predicted).collect();
    Ok(Evaluation {
        report: compute_metrics(&t, &p, &species)?,
        trees,
    })
}

pub fn cmd_evaluate(
    probabilities_csv: &Path,
    truth_csv: &Path,
    out_json: Option<&Path>,
    opts: RunOptions,
) -> Result<Outcome<Evaluation>> {
    let table = ProbabilityTable::read_csv_path(probabilities_csv)?;
    let truth = read_truth_csv(truth_csv)?;
    let evaluation = evaluate_table(&table, &truth)?;
    if opts.dry_run {
        return Ok(Outcome::Planned(vec![format!(
            "evaluate {} images over {} trees -> {}",
            table.records.len(),
            evaluation.trees.len(),
            out_json.map_or("stdout".to_string(), |p| p.display().to_string())
        )]));
    }
    if let Some(path) = out_json {
        write_json(&evaluation, path)?;
    }
    Ok(Outcome::Done(evaluation))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub scan_id: String,
    pub tree_id: String,
    pub species: Species,
    pub points: usize,
    pub image_size: usize,
    pub pixel_size_m: f64,
    /// Mean over the configured angles, full (unsliced) views.
    pub empty_ratio: f64,
}

/// Pixel ground size and empty-pixel ratio per segment and image size. The
/// views are silhouettes, so no normals or intensities are needed.
pub fn cmd_stats(
    source: &Path,
    cfg: &PipelineConfig,
    sizes: &[usize],
    opts: RunOptions,
) -> Result<Outcome<BatchReport<Vec<StatsRow>>>> {
    cfg.validate()?;
    let manifest = load_manifest(source)?;
    let sizes: Vec<usize> = if sizes.is_empty() {
        vec![cfg.render.image_size]
    } else {
        sizes.to_vec()
    };
    if opts.dry_run {
        return Ok(Outcome::Planned(vec![format!(
            "stats for {} segments at sizes {sizes:?}",
            manifest.len()
        )]));
    }
    let run = |entry: &ManifestEntry| -> Result<Vec<StatsRow>> {
        let segment = read_entry(entry)?;
        let trunk = estimate_trunk(&segment)?;
        sizes
            .iter()
            .map(|&size| {
                let rcfg = RenderConfig {
                    image_size: size,
                    coloring: Coloring::Wop,
                    ..cfg.render.clone()
                };
                rcfg.validate()?;
                let mut ratio = 0.0;
                for &a in &rcfg.angles_deg {
                    ratio += empty_pixel_ratio(&render_view(&segment, trunk, a, false, &rcfg)?);
                }
                Ok(StatsRow {
                    scan_id: segment.scan_id.clone(),
                    tree_id: segment.id.clone(),
                    species: segment.species,
                    points: segment.cloud.len(),
                    image_size: size,
                    pixel_size_m: pixel_ground_size(&segment.cloud, &rcfg)?,
                    empty_ratio: ratio / rcfg.angles_deg.len().max(1) as f64,
                })
            })
            .collect()
    };
    let results = in_pool(opts.jobs, || manifest.entries.par_iter().map(run).collect())?;
    Ok(Outcome::Done(BatchReport::collect(&manifest.entries, results)))
}

/// Writes stats rows as CSV.
pub fn write_stats_csv<W: Write>(out: W, rows: &[StatsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<stats csv>", e))
}

/// Per-species image counts of a rendered dataset, keyed by split.
pub fn count_images(root: &Path) -> Result<BTreeMap<String, BTreeMap<Species, usize>>> {
    let mut out: BTreeMap<String, BTreeMap<Species, usize>> = BTreeMap::new();
    for p in png_files(root)? {
        let species = species_of_png(&p)?;
        let split = p
            .parent()
            .and_then(Path::parent)
            .and_then(|d| d.file_name())
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        *out.entry(split).or_default().entry(species).or_default() += 1;
    }
    Ok(out)
}
