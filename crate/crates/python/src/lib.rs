//! Python bindings for the hazeforge dehazing toolkit.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hazeforge::checkpoint::{file_hash, Checkpoint as CoreCheckpoint};
use hazeforge::config::RunConfig;
use hazeforge::dataset::{DatasetLayout, TrainingData};
use hazeforge::hazesynth::{self, ScalarField};
use hazeforge::image::{DepthMap, ImageBuffer};
use hazeforge::matting::{self, CgOptions, SparseMatrix, DEFAULT_EPS, DEFAULT_REFINE_LAMBDA, DEFAULT_WINDOW_RADIUS};
use hazeforge::{gradcheck as core_gradcheck, io, metrics, toy, trainer};

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Float image in [0, 1], row-major with interleaved channels.
#[pyclass(module = "pyhazeforge")]
struct Image {
    inner: ImageBuffer,
}

#[pymethods]
impl Image {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: ImageBuffer::new(width, height, channels, data).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_image(path).map_err(runtime_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_image(&self.inner, path).map_err(runtime_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn to_rgb(&self) -> Self {
        Self {
            inner: self.inner.to_rgb(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Image({}x{}x{})",
            self.inner.width(),
            self.inner.height(),
            self.inner.channels()
        )
    }
}

/// Sparse Matting Laplacian of an RGB image.
#[pyclass(module = "pyhazeforge")]
struct MattingLaplacian {
    inner: SparseMatrix,
}

#[pymethods]
impl MattingLaplacian {
    #[new]
    #[pyo3(signature = (image, eps = DEFAULT_EPS, window_radius = DEFAULT_WINDOW_RADIUS))]
    fn new(image: &Image, eps: f64, window_radius: usize) -> PyResult<Self> {
        Ok(Self {
            inner: matting::build_matting_laplacian(&image.inner, eps, window_radius).map_err(value_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    fn row_sums(&self) -> Vec<f64> {
        self.inner.row_sums()
    }

    fn max_asymmetry(&self) -> f64 {
        self.inner.max_asymmetry()
    }

    fn matvec(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(v.len())?;
        Ok(self.inner.matvec(&v))
    }

    fn quadratic_form(&self, v: Vec<f64>) -> PyResult<f64> {
        self.check_len(v.len())?;
        Ok(self.inner.quadratic_form(&v))
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        self.inner.to_dense()
    }

    /// Σ_c V_cᵀ M V_c over the channels of `image`.
    fn energy(&self, image: &Image) -> PyResult<f64> {
        matting::photorealism_energy(&self.inner, &image.inner).map_err(value_err)
    }

    /// 2·M·V_c per channel, laid out like the image data.
    fn gradient(&self, image: &Image) -> PyResult<Vec<f64>> {
        matting::photorealism_gradient(&self.inner, &image.inner).map_err(value_err)
    }
}

impl MattingLaplacian {
    fn check_len(&self, n: usize) -> PyResult<()> {
        if n != self.inner.dim() {
            return Err(value_err(format!(
                "vector has {n} entries, matrix is {0}x{0}",
                self.inner.dim()
            )));
        }
        Ok(())
    }
}

fn field(image: &Image, transmission: Vec<f32>) -> ScalarField {
    ScalarField {
        width: image.inner.width(),
        height: image.inner.height(),
        data: transmission,
    }
}

/// I = J·t + A·(1 − t) with a per-pixel transmission map.
#[pyfunction]
#[pyo3(signature = (clean, transmission, atmospheric_light = 0.85))]
fn add_haze(clean: &Image, transmission: Vec<f32>, atmospheric_light: f32) -> PyResult<Image> {
    let t = field(clean, transmission);
    Ok(Image {
        inner: hazesynth::add_haze(&clean.inner, &t, atmospheric_light).map_err(value_err)?,
    })
}

/// J = (I − A) / max(t, t_floor) + A.
#[pyfunction]
#[pyo3(signature = (hazy, transmission, atmospheric_light = 0.85, t_floor = 0.1))]
fn invert_haze(hazy: &Image, transmission: Vec<f32>, atmospheric_light: f32, t_floor: f32) -> PyResult<Image> {
    let t = field(hazy, transmission);
    Ok(Image {
        inner: hazesynth::invert_haze(&hazy.inner, &t, atmospheric_light, t_floor).map_err(value_err)?,
    })
}

/// Soft-matting refinement of a depth map; returns the refined depth values.
#[pyfunction]
#[pyo3(signature = (depth, guide, lam = DEFAULT_REFINE_LAMBDA, eps = DEFAULT_EPS, window_radius = DEFAULT_WINDOW_RADIUS))]
fn refine_depth(depth: Vec<f32>, guide: &Image, lam: f64, eps: f64, window_radius: usize) -> PyResult<Vec<f32>> {
    let depth = DepthMap::new(guide.inner.width(), guide.inner.height(), depth).map_err(value_err)?;
    let out = hazesynth::refine_depth(&depth, &guide.inner, lam, eps, window_radius, CgOptions::default())
        .map_err(value_err)?;
    Ok(out.into_data())
}

#[pyfunction]
fn psnr(a: &Image, b: &Image) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).map_err(value_err)
}

#[pyfunction]
fn ssim(a: &Image, b: &Image) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).map_err(value_err)
}

/// Run configuration; every key can be read and overridden by name.
#[pyclass(module = "pyhazeforge")]
struct Config {
    inner: RunConfig,
}

#[pymethods]
impl Config {
    /// Parses `key = value` text; with no argument, the defaults.
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => RunConfig::parse(t).map_err(value_err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(value_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| value_err(format!("unknown configuration key {key:?}")))
    }

    fn dump(&self) -> String {
        self.inner.dump()
    }
}

/// Parameters and optimizer state of all four networks.
#[pyclass(module = "pyhazeforge")]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreCheckpoint::load(path).map_err(runtime_err)?,
        })
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration
    }

    /// (name, shape) of every generator G_Y tensor.
    fn generator_tensors(&self) -> Vec<(String, [usize; 4])> {
        self.inner
            .g_y
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape()))
            .collect()
    }

    /// Hazy to clean with G_Y; the result has the input's size.
    fn dehaze(&self, image: &Image) -> PyResult<Image> {
        Ok(Image {
            inner: self.inner.g_y.translate(&image.inner).map_err(runtime_err)?,
        })
    }

    /// Clean to hazy with G_X.
    fn addhaze(&self, image: &Image) -> PyResult<Image> {
        Ok(Image {
            inner: self.inner.g_x.translate(&image.inner).map_err(runtime_err)?,
        })
    }
}

/// Hex SHA-256 of a file, as printed by `inspect-checkpoint`.
#[pyfunction]
fn checkpoint_hash(path: PathBuf) -> PyResult<String> {
    file_hash(path).map_err(runtime_err)
}

/// Trains on `config`'s data_dir into its out_dir; returns the final checkpoint path.
#[pyfunction]
#[pyo3(signature = (config, resume = None))]
fn train(config: &Config, resume: Option<PathBuf>) -> PyResult<PathBuf> {
    let cfg = &config.inner;
    let data = TrainingData::load(
        &DatasetLayout::new(&cfg.data_dir),
        cfg.arch.image_size,
        &cfg.matting_settings(),
        None,
    )
    .map_err(runtime_err)?;
    let outcome =
        trainer::train(&cfg.train, cfg.arch, &data, &cfg.out_dir, resume.as_deref(), |_, _| {}).map_err(runtime_err)?;
    Ok(outcome.final_checkpoint)
}

/// Writes a procedural toy dataset under `root`.
#[pyfunction]
#[pyo3(signature = (root, config = None))]
fn toy_dataset(root: PathBuf, config: Option<&Config>) -> PyResult<()> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    toy::generate_toy_dataset(
        &root,
        cfg.arch.image_size,
        toy::ToyCounts::default(),
        &cfg.synth_options(),
        cfg.seed,
    )
    .map_err(runtime_err)?;
    Ok(())
}

/// Runs every finite-difference suite; returns (passed, report lines).
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(seed: u64) -> PyResult<(bool, Vec<String>)> {
    let report = core_gradcheck::run_all(seed).map_err(runtime_err)?;
    Ok((report.passed(), report.lines()))
}

#[pymodule]
fn pyhazeforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Image>()?;
    m.add_class::<MattingLaplacian>()?;
    m.add_class::<Config>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(add_haze, m)?)?;
    m.add_function(wrap_pyfunction!(invert_haze, m)?)?;
    m.add_function(wrap_pyfunction!(refine_depth, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_hash, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(toy_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
