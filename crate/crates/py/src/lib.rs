//! Python bindings: metrics, density maps, blobs, synthetic tiles and the
//! counting network. Images cross the boundary as flat row-major lists of
//! interleaved channel values in [0, 1].

use std::path::PathBuf;

use cownter_core::blobkit;
use cownter_core::density;
use cownter_core::inference::{self, ModelKind};
use cownter_core::lossfns;
use cownter_core::metrics::{self, CountPair};
use cownter_core::synthgen::{self, SceneConfig};
use cownter_core::tinyfcn::{self, ArchConfig, InitScheme, ModelParams};
use cownter_core::{Point, Raster};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: cownter_core::Error) -> PyErr {
    match e {
        cownter_core::Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_points(pts: Vec<(f64, f64)>) -> Vec<Point> {
    pts.into_iter().map(|(x, y)| Point::new(x, y)).collect()
}

fn from_points(pts: &[Point]) -> Vec<(f64, f64)> {
    pts.iter().map(|p| (p.x, p.y)).collect()
}

fn pairs(y: Vec<u64>, y_hat: Vec<f64>) -> PyResult<Vec<CountPair>> {
    if y.len() != y_hat.len() {
        return Err(PyValueError::new_err("y and y_hat differ in length"));
    }
    Ok(y.into_iter().zip(y_hat).map(|(a, b)| CountPair::new(a, b)).collect())
}

/// Mean absolute percentage error with a max(y, 1) denominator.
#[pyfunction]
fn mape(y: Vec<u64>, y_hat: Vec<f64>) -> PyResult<f64> {
    metrics::mape(&pairs(y, y_hat)?).map_err(err)
}

/// Grid-averaged MAPE from per-image lists of cell counts.
#[pyfunction]
fn gampe(pred_cells: Vec<Vec<f64>>, gt_cells: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::gampe(&pred_cells, &gt_cells).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y, y_hat, threshold = 0.5))]
fn presence_fscore<'py>(py: Python<'py>, y: Vec<u64>, y_hat: Vec<f64>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let s = metrics::presence_fscore(&pairs(y, y_hat)?, threshold);
    let d = PyDict::new(py);
    d.set_item("precision", s.precision)?;
    d.set_item("recall", s.recall)?;
    d.set_item("f_score", s.f_score)?;
    d.set_item("undefined", s.undefined)?;
    Ok(d)
}

/// Gaussian density map (row-major, `height * width` values) for points.
#[pyfunction]
#[pyo3(signature = (points, width, height, sigma = density::DEFAULT_SIGMA))]
fn render_density(points: Vec<(f64, f64)>, width: usize, height: usize, sigma: f64) -> PyResult<Vec<f64>> {
    Ok(density::render_density(&to_points(points), width, height, sigma)
        .map_err(err)?
        .values()
        .to_vec())
}

/// Integrated counts over a `grid_n x grid_n` partition of a density map.
#[pyfunction]
fn cell_counts(values: Vec<f64>, width: usize, height: usize, grid_n: usize) -> PyResult<Vec<f64>> {
    let m = density::DensityMap::from_values(width, height, values, f64::NAN).map_err(err)?;
    density::cell_counts(&m, grid_n).map_err(err)
}

/// 4-connected labels (0 = background) and the number of components.
#[pyfunction]
fn connected_components(mask: Vec<bool>, width: usize, height: usize) -> PyResult<(Vec<u32>, usize)> {
    let b = blobkit::connected_components(&mask, width, height).map_err(err)?;
    Ok((b.labels, b.count))
}

/// Blob count and centroids of `prob >= threshold`.
#[pyfunction]
#[pyo3(signature = (prob, width, height, threshold = 0.5))]
fn blob_count(prob: Vec<f64>, width: usize, height: usize, threshold: f64) -> PyResult<(usize, Vec<(f64, f64)>)> {
    let d = blobkit::blob_count(&prob, width, height, threshold).map_err(err)?;
    Ok((d.count, from_points(&d.centroids)))
}

/// Point-supervised blob loss; returns `(total, gradient)`.
#[pyfunction]
fn lcfcn_loss(prob: Vec<f64>, width: usize, height: usize, points: Vec<(f64, f64)>) -> PyResult<(f64, Vec<f64>)> {
    let (b, g) = lossfns::lcfcn_loss(&prob, width, height, &to_points(points)).map_err(err)?;
    Ok((b.total, g))
}

/// One synthetic tile as a dict with `pixels` (row-major RGB), `points`
/// and `label`.
#[pyfunction]
#[pyo3(signature = (seed, index, tile_size = 128, weights = None))]
fn generate_tile<'py>(
    py: Python<'py>,
    seed: u64,
    index: u64,
    tile_size: usize,
    weights: Option<[f64; 4]>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = SceneConfig {
        tile_size,
        seed,
        ..SceneConfig::default()
    };
    if let Some(w) = weights {
        cfg.count_weights = w;
    }
    let t = synthgen::generate_tile(&cfg, index).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("id", &t.id)?;
    d.set_item("width", t.image.width())?;
    d.set_item("height", t.image.height())?;
    d.set_item("channels", t.image.channels())?;
    d.set_item("pixels", t.image.data().to_vec())?;
    d.set_item("points", from_points(&t.points))?;
    d.set_item(
        "label",
        match t.label {
            cownter_core::TileLabel::Cow => "cow",
            cownter_core::TileLabel::NoCow => "no cow",
        },
    )?;
    Ok(d)
}

fn parse_kind(model: &str) -> PyResult<ModelKind> {
    model.parse().map_err(err)
}

/// A counting network: `lcfcn` (blob detection) or `density`.
#[pyclass]
struct Model {
    params: ModelParams,
}

#[pymethods]
impl Model {
    /// Fresh Xavier-initialized network.
    #[new]
    #[pyo3(signature = (model = "lcfcn", in_channels = 3, seed = 0))]
    fn new(model: &str, in_channels: usize, seed: u64) -> PyResult<Self> {
        let arch = ArchConfig::new(in_channels, parse_kind(model)?.head());
        Ok(Self {
            params: tinyfcn::init_params(arch, seed, InitScheme::Xavier).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            params: tinyfcn::load_params(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        tinyfcn::save_params(&self.params, &path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match ModelKind::from_head(self.params.arch.head) {
            ModelKind::Lcfcn => "lcfcn",
            ModelKind::Density => "density",
        }
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.values.len()
    }

    /// Returns `(count, points, map)` for a row-major interleaved image.
    fn predict(
        &self,
        pixels: Vec<f32>,
        width: usize,
        height: usize,
        channels: usize,
    ) -> PyResult<(f64, Vec<(f64, f64)>, Vec<f32>)> {
        let image = Raster::new(width, height, channels, pixels).map_err(err)?;
        let p = inference::predict(&self.params, &image).map_err(err)?;
        Ok((p.count, from_points(&p.points), p.map))
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, params={})", self.kind(), self.param_count())
    }
}

#[pymodule]
fn cownter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(gampe, m)?)?;
    m.add_function(wrap_pyfunction!(presence_fscore, m)?)?;
    m.add_function(wrap_pyfunction!(render_density, m)?)?;
    m.add_function(wrap_pyfunction!(cell_counts, m)?)?;
    m.add_function(wrap_pyfunction!(connected_components, m)?)?;
    m.add_function(wrap_pyfunction!(blob_count, m)?)?;
    m.add_function(wrap_pyfunction!(lcfcn_loss, m)?)?;
    m.add_function(wrap_pyfunction!(generate_tile, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
