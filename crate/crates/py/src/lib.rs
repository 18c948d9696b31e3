//! Python bindings. Rasters cross the boundary as flat lists in
//! height × width × band order.

use std::str::FromStr;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use ::pansharp::fusion::Method;
use ::pansharp::imaging::{psr1, MsImage, PanImage, Resolution, SensorSpec};
use ::pansharp::metrics::{self, MetricOptions};
use ::pansharp::model::{self, decode_checkpoint, encode_checkpoint, TdnetConfig, TdnetModel, Variant};
use ::pansharp::tensor::gradcheck::{sweep, FdOptions};
use ::pansharp::wald;
use ::pansharp::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numeric(m) => PyArithmeticError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for ::pansharp::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A `height × width × bands` image with values in `[0, 1]`.
#[pyclass(name = "Raster", module = "pansharp", from_py_object)]
#[derive(Clone)]
pub struct PyRaster {
    pub inner: ::pansharp::imaging::Raster,
}

#[pymethods]
impl PyRaster {
    #[new]
    fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyRaster {
            inner: ::pansharp::imaging::Raster::new(height, width, bands, data).py()?,
        })
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, bands: usize, value: f64) -> Self {
        PyRaster {
            inner: ::pansharp::imaging::Raster::filled(height, width, bands, value),
        }
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn get(&self, y: usize, x: usize, band: usize) -> PyResult<f64> {
        let (h, w, c) = self.inner.dims();
        if y >= h || x >= w || band >= c {
            return Err(PyValueError::new_err(format!("({y}, {x}, {band}) outside {h}x{w}x{c}")));
        }
        Ok(self.inner.get(y, x, band))
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn band(&self, band: usize) -> PyResult<Vec<f64>> {
        if band >= self.inner.bands() {
            return Err(PyValueError::new_err(format!("band {band} of {}", self.inner.bands())));
        }
        Ok(self.inner.band(band))
    }

    fn __eq__(&self, other: &PyRaster) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.inner.dims();
        format!("Raster({h}x{w}x{c})")
    }
}

fn raster(inner: ::pansharp::imaging::Raster) -> PyRaster {
    PyRaster { inner }
}

fn sensor(name: &str) -> PyResult<SensorSpec> {
    SensorSpec::preset(name).py()
}

/// Reads a PSR1 file; returns `(raster, bit_depth, sensor)`.
#[pyfunction]
fn read_psr1(path: &str) -> PyResult<(PyRaster, u32, String)> {
    let file = psr1::read(path).py()?;
    Ok((raster(file.raster), file.bit_depth, file.sensor))
}

#[pyfunction]
fn write_psr1(path: &str, image: &PyRaster, bit_depth: u32, sensor: &str) -> PyResult<()> {
    psr1::write(path, &image.inner, bit_depth, sensor).py()
}

#[pyfunction]
fn encode_psr1(image: &PyRaster, bit_depth: u32, sensor: &str) -> Vec<u8> {
    psr1::encode(&image.inner, bit_depth, sensor)
}

/// A procedural MS/PAN pair of `size × size` MS pixels.
#[pyfunction]
#[pyo3(signature = (size, seed, sensor_name = "wv3"))]
fn synthetic_scene(size: usize, seed: u64, sensor_name: &str) -> PyResult<(PyRaster, PyRaster)> {
    let (ms, pan) =
        wald::synthetic_scene(size, size, &sensor(sensor_name)?, seed, &wald::SceneOptions::default()).py()?;
    Ok((raster(ms.raster), raster(pan.raster)))
}

/// Fuses an MS/PAN pair with a classic method (`exp`, `sfim`, `glp-hpm`,
/// `glp-reg`, `mra-unit`).
#[pyfunction]
#[pyo3(signature = (method, ms, pan, sensor_name = "wv3"))]
fn fuse(method: &str, ms: &PyRaster, pan: &PyRaster, sensor_name: &str) -> PyResult<PyRaster> {
    let spec = sensor(sensor_name)?;
    let method = Method::from_str(method).py()?;
    let ms = MsImage::new(ms.inner.clone(), spec.clone(), Resolution::Reduced).py()?;
    let pan = PanImage::new(pan.inner.clone(), spec).py()?;
    Ok(raster(method.fuse(&ms, &pan).py()?.raster))
}

/// Reduced-resolution degradation of `gt` as used for training pairs:
/// MTF blur and decimation by `factor`.
#[pyfunction]
#[pyo3(signature = (image, factor, sensor_name = "wv3"))]
fn degrade(image: &PyRaster, factor: usize, sensor_name: &str) -> PyResult<PyRaster> {
    Ok(raster(wald::degrade(&image.inner, &sensor(sensor_name)?, factor).py()?))
}

/// Train/validation/test partition of `0..n`.
#[pyfunction]
#[pyo3(signature = (n, ratios = (0.7, 0.2, 0.1), seed = 2024))]
fn split(n: u64, ratios: (f64, f64, f64), seed: u64) -> PyResult<(Vec<u64>, Vec<u64>, Vec<u64>)> {
    let ids: Vec<u64> = (0..n).collect();
    let s = wald::split(&ids, ratios, seed).py()?;
    Ok((s.train, s.val, s.test))
}

#[pyfunction]
fn sam(fused: &PyRaster, reference: &PyRaster) -> PyResult<f64> {
    metrics::sam(&fused.inner, &reference.inner).py()
}

#[pyfunction]
#[pyo3(signature = (fused, reference, ratio = 4))]
fn ergas(fused: &PyRaster, reference: &PyRaster, ratio: usize) -> PyResult<f64> {
    metrics::ergas(&fused.inner, &reference.inner, ratio).py()
}

#[pyfunction]
fn scc(fused: &PyRaster, reference: &PyRaster) -> PyResult<f64> {
    metrics::scc(&fused.inner, &reference.inner).py()
}

#[pyfunction]
#[pyo3(signature = (fused, reference, window = 32))]
fn q2n(fused: &PyRaster, reference: &PyRaster, window: usize) -> PyResult<f64> {
    metrics::q2n(&fused.inner, &reference.inner, window).py()
}

#[pyfunction]
fn qnr(d_lambda: f64, d_s: f64) -> PyResult<f64> {
    metrics::qnr(d_lambda, d_s, &MetricOptions::default()).py()
}

/// `(d_lambda, d_s, qnr)` of a fused image against its inputs.
#[pyfunction]
#[pyo3(signature = (fused, ms, pan, window = 32, sensor_name = "wv3"))]
fn full_scores(
    fused: &PyRaster,
    ms: &PyRaster,
    pan: &PyRaster,
    window: usize,
    sensor_name: &str,
) -> PyResult<(f64, f64, f64)> {
    let opts = MetricOptions {
        window,
        ..MetricOptions::default()
    };
    let s = metrics::full_scores(&fused.inner, &ms.inner, &pan.inner, &sensor(sensor_name)?, &opts).py()?;
    Ok((s.d_lambda, s.d_s, s.qnr))
}

/// Trainable parameters of the default network for `bands` bands, or of
/// a named variant.
#[pyfunction]
#[pyo3(signature = (bands = 8, variant = "TDNet"))]
fn parameter_count(bands: usize, variant: &str) -> PyResult<usize> {
    let config = Variant::from_str(variant).py()?.apply(&TdnetConfig::new(bands));
    config.validate().py()?;
    Ok(model::parameter_count(&config))
}

/// The two-level detail-injection network.
#[pyclass(name = "Tdnet", module = "pansharp")]
pub struct PyTdnet {
    inner: TdnetModel,
}

#[pymethods]
impl PyTdnet {
    #[new]
    #[pyo3(signature = (bands = 8, seed = 0, variant = "TDNet", feature_width = None))]
    fn new(bands: usize, seed: u64, variant: &str, feature_width: Option<usize>) -> PyResult<Self> {
        let mut base = TdnetConfig::new(bands);
        if let Some(w) = feature_width {
            base.feature_width = w;
        }
        let config = Variant::from_str(variant).py()?.apply(&base);
        Ok(PyTdnet {
            inner: TdnetModel::new(config, seed).py()?,
        })
    }

    #[staticmethod]
    fn from_checkpoint(data: Vec<u8>) -> PyResult<Self> {
        Ok(PyTdnet {
            inner: decode_checkpoint(&data).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTdnet {
            inner: model::read_checkpoint(path).py()?,
        })
    }

    fn checkpoint(&self) -> Vec<u8> {
        encode_checkpoint(&self.inner)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::write_checkpoint(path, &self.inner).py()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn bands(&self) -> usize {
        self.inner.config.bands
    }

    /// Fused image at PAN resolution (not clamped).
    fn fuse(&self, lrms: &PyRaster, pan: &PyRaster) -> PyResult<PyRaster> {
        Ok(raster(self.inner.fuse_raster(&lrms.inner, &pan.inner).py()?))
    }
}

/// Finite-difference sweep over every operator and the full network;
/// returns `(name, max_rel_error, passed)` rows.
#[pyfunction]
#[pyo3(signature = (seed = 2024, tolerance = 1e-2))]
fn gradcheck(py: Python<'_>, seed: u64, tolerance: f64) -> PyResult<Vec<(String, f64, bool)>> {
    let rows = py.detach(|| -> ::pansharp::Result<_> {
        let cases = model::gradient_cases(seed)?;
        Ok(sweep(&cases, &FdOptions::default(), tolerance))
    });
    Ok(rows
        .py()?
        .into_iter()
        .map(|r| (r.name, r.max_rel_error, r.passed))
        .collect())
}

#[pymodule]
#[pyo3(name = "pansharp")]
pub fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRaster>()?;
    m.add_class::<PyTdnet>()?;
    m.add_function(wrap_pyfunction!(read_psr1, m)?)?;
    m.add_function(wrap_pyfunction!(write_psr1, m)?)?;
    m.add_function(wrap_pyfunction!(encode_psr1, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_scene, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(sam, m)?)?;
    m.add_function(wrap_pyfunction!(ergas, m)?)?;
    m.add_function(wrap_pyfunction!(scc, m)?)?;
    m.add_function(wrap_pyfunction!(q2n, m)?)?;
    m.add_function(wrap_pyfunction!(qnr, m)?)?;
    m.add_function(wrap_pyfunction!(full_scores, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
