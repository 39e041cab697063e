//! Python bindings. Points cross the boundary as lists of `(x, y, z)` tuples
//! and images as raw RGB `bytes`.

use std::path::PathBuf;

use nalgebra::Vector3;
use normalview::cloud_io::{self, Format};
use normalview::evalkit::{self, ProbabilityTable};
use normalview::projection::{self, Coloring, DepthRule, ProjectionImage, RenderConfig};
use normalview::synthetic::{self, TreeShape};
use normalview::{georeg, normals, preprocess, Point, PointCloud, Species, TreeSegment};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: normalview::Error) -> PyErr {
    match e {
        normalview::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = normalview::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn vectors(points: &[(f64, f64, f64)]) -> Vec<Vector3<f64>> {
    points.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect()
}

/// One tree's point cloud with its labels.
#[pyclass(name = "Segment", module = "normalview")]
pub struct PySegment {
    inner: TreeSegment,
}

#[pymethods]
impl PySegment {
    #[new]
    #[pyo3(signature = (tree_id, scan_id, species, positions, intensities=None))]
    fn new(
        tree_id: String,
        scan_id: String,
        species: &str,
        positions: Vec<(f64, f64, f64)>,
        intensities: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let channels = intensities.as_ref().and_then(|v| v.first()).map_or(0, Vec::len);
        let points = positions
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| {
                let p = Point::new(x, y, z);
                match &intensities {
                    Some(v) => p.with_intensity(v.get(i).map_or(&[][..], Vec::as_slice)),
                    None => p,
                }
            })
            .collect();
        let cloud = PointCloud::new(points, channels);
        cloud.validate().map_err(to_py)?;
        Ok(PySegment { inner: TreeSegment::new(tree_id, scan_id, parse::<Species>(species)?, cloud) })
    }

    /// Reads `.xyz`, `.txt`, `.ply` or `.las`, picking the reader by extension.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PySegment { inner: cloud_io::read_segment_auto(&path).map_err(to_py)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        let format = Format::from_path(&path)
            .ok_or_else(|| PyValueError::new_err(format!("{}: unrecognised extension", path.display())))?;
        cloud_io::write_segment(&self.inner, &path, format).map_err(to_py)
    }

    #[getter]
    fn tree_id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn scan_id(&self) -> &str {
        &self.inner.scan_id
    }

    #[getter]
    fn species(&self) -> &'static str {
        self.inner.species.as_str()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.cloud.channels
    }

    fn __len__(&self) -> usize {
        self.inner.cloud.len()
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner.cloud.points.iter().map(|p| (p.position.x, p.position.y, p.position.z)).collect()
    }

    /// `None` when the cloud carries no normals.
    fn normals(&self) -> Option<Vec<(f64, f64, f64)>> {
        self.inner
            .cloud
            .points
            .iter()
            .map(|p| p.normal.map(|n| (n.x, n.y, n.z)))
            .collect()
    }

    fn intensities(&self) -> Vec<Vec<f64>> {
        let c = self.inner.cloud.channels;
        self.inner.cloud.points.iter().map(|p| p.intensity[..c].to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Segment(tree_id={:?}, scan_id={:?}, species={:?}, points={})",
            self.inner.id,
            self.inner.scan_id,
            self.inner.species.as_str(),
            self.inner.cloud.len()
        )
    }
}

/// A rendered view: RGB bytes plus its naming metadata.
#[pyclass(name = "Image", module = "normalview", frozen)]
pub struct PyImage {
    inner: ProjectionImage,
}

#[pymethods]
impl PyImage {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn pixels(&self) -> &[u8] {
        &self.inner.pixels
    }

    #[getter]
    fn angle(&self) -> f64 {
        self.inner.meta.angle_deg
    }

    #[getter]
    fn sliced(&self) -> bool {
        self.inner.meta.sliced
    }

    #[getter]
    fn file_name(&self) -> String {
        projection::image_file_name(&self.inner.meta)
    }

    fn empty_ratio(&self) -> f64 {
        projection::empty_pixel_ratio(&self.inner)
    }

    fn png(&self) -> PyResult<Vec<u8>> {
        projection::encode_png(&self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Image({}, {}x{})", self.file_name(), self.inner.width, self.inner.height)
    }
}

#[pyfunction]
#[pyo3(signature = (segment, k_neighbors=8, n_sigma=1.0))]
fn sor_filter(segment: &PySegment, k_neighbors: usize, n_sigma: f64) -> PyResult<PySegment> {
    let params = preprocess::SorParams { k_neighbors, n_sigma };
    let cloud = preprocess::sor_filter(&segment.inner.cloud, params).map_err(to_py)?;
    Ok(PySegment { inner: segment.inner.with_cloud(cloud) })
}

#[pyfunction]
#[pyo3(signature = (segment, spacing=0.02, seed=0))]
fn subsample(segment: &PySegment, spacing: f64, seed: u64) -> PyResult<PySegment> {
    let cloud = preprocess::min_spacing_subsample(&segment.inner.cloud, spacing, seed).map_err(to_py)?;
    Ok(PySegment { inner: segment.inner.with_cloud(cloud) })
}

/// Planimetric trunk position `(t_x, t_y)`.
#[pyfunction]
fn estimate_trunk(segment: &PySegment) -> PyResult<(f64, f64)> {
    let t = preprocess::estimate_trunk(&segment.inner).map_err(to_py)?;
    Ok((t.t_x, t.t_y))
}

/// Normals from `neighbors`-point plane fits, optionally flipped away from the trunk.
#[pyfunction]
#[pyo3(signature = (segment, neighbors=20, orient=true))]
fn estimate_normals(segment: &PySegment, neighbors: usize, orient: bool) -> PyResult<PySegment> {
    let est = normals::estimate_normals(&segment.inner.cloud, normals::NormalParams { neighbor_count: neighbors })
        .map_err(to_py)?;
    let cloud = if orient {
        let trunk = preprocess::estimate_trunk(&segment.inner).map_err(to_py)?;
        normals::orient_outward(&est.cloud, trunk).map_err(to_py)?
    } else {
        est.cloud
    };
    Ok(PySegment { inner: segment.inner.with_cloud(cloud) })
}

/// Rigid fit mapping `local` onto `global`; returns rotation (row-major),
/// translation and RMS residual.
#[pyfunction]
fn fit_rigid<'py>(
    py: Python<'py>,
    local: Vec<(f64, f64, f64)>,
    global: Vec<(f64, f64, f64)>,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = georeg::fit_rigid(&vectors(&local), &vectors(&global)).map_err(to_py)?;
    let r = fit.transform.rotation;
    let t = fit.transform.translation;
    let rows: Vec<[f64; 3]> = (0..3).map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]).collect();
    let out = PyDict::new(py);
    out.set_item("rotation", rows)?;
    out.set_item("translation", [t.x, t.y, t.z])?;
    out.set_item("rms_residual", fit.rms_residual)?;
    out.set_item("anchor_count", fit.anchor_count)?;
    Ok(out)
}

/// Mutual nearest-neighbour pairs `(index_a, index_b, distance)` in the plane.
#[pyfunction]
#[pyo3(signature = (a, b, threshold=3.0))]
fn mutual_nn_match(a: Vec<(f64, f64)>, b: Vec<(f64, f64)>, threshold: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let a: Vec<[f64; 2]> = a.into_iter().map(|(x, y)| [x, y]).collect();
    let b: Vec<[f64; 2]> = b.into_iter().map(|(x, y)| [x, y]).collect();
    let m = georeg::mutual_nn_match(&a, &b, threshold).map_err(to_py)?;
    Ok(m.pairs.iter().map(|p| (p.index_a, p.index_b, p.distance)).collect())
}

/// Full and sliced views at each angle, in that order.
#[pyfunction]
#[pyo3(signature = (segment, size=1024, coloring="WOP", angles=None, channels=None, slice_offset=0.7, smoothing=true, depth_rule="nearest-viewer"))]
#[allow(clippy::too_many_arguments)]
fn render_tree(
    segment: &PySegment,
    size: usize,
    coloring: &str,
    angles: Option<Vec<f64>>,
    channels: Option<Vec<u8>>,
    slice_offset: f64,
    smoothing: bool,
    depth_rule: &str,
) -> PyResult<Vec<PyImage>> {
    let defaults = RenderConfig::default();
    let depth_rule = match depth_rule {
        "nearest-viewer" => DepthRule::NearestViewer,
        "last-write" => DepthRule::LastWrite,
        "max-intensity" => DepthRule::MaxIntensity,
        other => return Err(PyValueError::new_err(format!("unknown depth rule `{other}`"))),
    };
    let cfg = RenderConfig {
        image_size: size,
        angles_deg: angles.unwrap_or(defaults.angles_deg),
        slice_offset,
        coloring: parse::<Coloring>(coloring)?,
        channel_selection: channels.unwrap_or(defaults.channel_selection),
        smoothing,
        depth_rule,
    };
    let images = projection::render_tree(&segment.inner, &cfg).map_err(to_py)?;
    Ok(images.into_iter().map(|inner| PyImage { inner }).collect())
}

/// OA, MAA, MA-F1, kappa and the confusion matrix for label lists.
#[pyfunction]
#[pyo3(signature = (truth, predicted, species=None))]
fn compute_metrics<'py>(
    py: Python<'py>,
    truth: Vec<String>,
    predicted: Vec<String>,
    species: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let labels = |v: &[String]| v.iter().map(|s| parse::<Species>(s)).collect::<PyResult<Vec<_>>>();
    let (t, p) = (labels(&truth)?, labels(&predicted)?);
    let order = match species {
        Some(s) => labels(&s)?,
        None => {
            let mut all: Vec<Species> = t.iter().chain(&p).copied().collect();
            all.sort();
            all.dedup();
            all
        }
    };
    let r = evalkit::compute_metrics(&t, &p, &order).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("species", order.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    out.set_item("overall_accuracy", r.overall_accuracy)?;
    out.set_item("macro_average_accuracy", r.macro_average_accuracy)?;
    out.set_item("macro_f1", r.macro_f1)?;
    out.set_item("kappa", r.kappa)?;
    out.set_item("confusion", r.confusion.counts.clone())?;
    Ok(out)
}

type TreeRow = (String, String, &'static str, Vec<f64>);

/// Per-tree summed probabilities from a probability CSV:
/// `(scan_id, tree_id, predicted_species, sums)`, sorted by scan then tree.
#[pyfunction]
fn aggregate(path: PathBuf) -> PyResult<Vec<TreeRow>> {
    let table = ProbabilityTable::read_csv_path(&path).map_err(to_py)?;
    Ok(evalkit::aggregate_predictions(&table)
        .into_iter()
        .map(|t| (t.scan_id, t.tree_id, t.predicted.as_str(), t.aggregated))
        .collect())
}

/// Deterministic synthetic tree; `shape` is `conifer` or `broadleaf`.
#[pyfunction]
#[pyo3(signature = (shape, index=0, points=4000, seed=0))]
fn synthetic_tree(shape: &str, index: usize, points: usize, seed: u64) -> PyResult<PySegment> {
    let shape = match shape.to_ascii_lowercase().as_str() {
        "conifer" => TreeShape::Conifer,
        "broadleaf" => TreeShape::Broadleaf,
        other => return Err(PyValueError::new_err(format!("unknown shape `{other}`"))),
    };
    Ok(PySegment { inner: synthetic::tree_segment(shape, index, points, seed) })
}

#[pymodule]
#[pyo3(name = "normalview")]
fn normalview_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySegment>()?;
    m.add_class::<PyImage>()?;
    m.add_function(wrap_pyfunction!(sor_filter, m)?)?;
    m.add_function(wrap_pyfunction!(subsample, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_trunk, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_normals, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rigid, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_nn_match, m)?)?;
    m.add_function(wrap_pyfunction!(render_tree, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_tree, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
