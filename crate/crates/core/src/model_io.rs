//! Binary model container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "GPFM"  u32 version  u8 family (0 exact, 1 sparse, 2 local)
//! string  kernel text fragment (u64 byte length + UTF-8)
//! f64     noise variance
//! f64     jitter multiplier
//! family body
//! ```
//!
//! Matrices are stored as `u64 rows, u64 cols` followed by row-major values,
//! vectors as `u64 len` followed by values. Exact models keep their training
//! data and weights and refactorize on load; sparse models keep only the
//! inducing inputs and the whitened posterior.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp_exact::{fit_with_escalation, ExactGPModel};
use crate::gp_local::{LocalGPModel, PredictionMode};
use crate::gp_sparse::SparseGPModel;
use crate::kernels::KernelSpec;
use crate::linalg::JITTER_ESCALATION;
use crate::Regressor;

const MAGIC: &[u8; 4] = b"GPFM";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub enum GpModel {
    Exact(ExactGPModel),
    Sparse(SparseGPModel),
    Local(LocalGPModel),
}

impl GpModel {
    pub fn family_name(&self) -> &'static str {
        match self {
            GpModel::Exact(_) => "exact",
            GpModel::Sparse(_) => "sparse",
            GpModel::Local(_) => "local",
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        match self {
            GpModel::Exact(m) => m.kernel(),
            GpModel::Sparse(m) => m.kernel(),
            GpModel::Local(m) => m.kernel(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        match self {
            GpModel::Exact(m) => m.noise_variance(),
            GpModel::Sparse(m) => m.noise_variance(),
            GpModel::Local(m) => m.noise_variance(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let (tag, mult) = match self {
            GpModel::Exact(m) => (0u8, m.jitter_multiplier()),
            GpModel::Sparse(m) => (1, m.jitter_multiplier()),
            GpModel::Local(_) => (2, 1.0),
        };
        w.0.push(tag);
        w.string(&self.kernel().to_fragment());
        w.f64(self.noise_variance());
        w.f64(mult);
        match self {
            GpModel::Exact(m) => write_exact(&mut w, m),
            GpModel::Sparse(m) => {
                w.matrix(&m.inducing_inputs);
                w.vector(&m.whitened_mean);
                w.matrix(&m.whitened_cov);
                w.f64(m.bound_value);
            }
            GpModel::Local(m) => {
                w.matrix(&m.centroids);
                w.0.push(match m.mode {
                    PredictionMode::NearestExpert => 0,
                    PredictionMode::WeightedAverage => 1,
                });
                w.f64(m.temperature);
                w.u64(m.experts.len() as u64);
                for e in &m.experts {
                    w.f64(e.jitter_multiplier());
                    write_exact(&mut w, e);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ModelFormat("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let tag = r.take(1)?[0];
        let kernel = KernelSpec::from_fragment(&r.string()?)?;
        let noise = r.f64()?;
        let mult = r.f64()?;
        let model = match tag {
            0 => GpModel::Exact(read_exact(&mut r, &kernel, noise, mult)?),
            1 => {
                let z = r.matrix()?;
                let mean = r.vector()?;
                let cov = r.matrix()?;
                let bound = r.f64()?;
                GpModel::Sparse(SparseGPModel::from_parts(z, kernel, noise, mult, mean, cov, bound)?)
            }
            2 => {
                let centroids = r.matrix()?;
                let mode = match r.take(1)?[0] {
                    0 => PredictionMode::NearestExpert,
                    1 => PredictionMode::WeightedAverage,
                    other => return Err(Error::ModelFormat(format!("unknown prediction mode {other}"))),
                };
                let temperature = r.f64()?;
                let count = r.u64()? as usize;
                let mut experts = Vec::with_capacity(count.min(1 << 16));
                for _ in 0..count {
                    let m = r.f64()?;
                    experts.push(read_exact(&mut r, &kernel, noise, m)?);
                }
                GpModel::Local(LocalGPModel::from_parts(centroids, experts, mode, temperature)?)
            }
            other => return Err(Error::ModelFormat(format!("unknown model family tag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes after model".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

impl Regressor for GpModel {
    fn input_dim(&self) -> usize {
        match self {
            GpModel::Exact(m) => m.input_dim(),
            GpModel::Sparse(m) => m.input_dim(),
            GpModel::Local(m) => m.input_dim(),
        }
    }

    fn predict(&self, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        match self {
            GpModel::Exact(m) => m.predict(xstar),
            GpModel::Sparse(m) => m.predict(xstar),
            GpModel::Local(m) => m.predict(xstar),
        }
    }
}

fn write_exact(w: &mut Writer, m: &ExactGPModel) {
    w.matrix(&m.train_inputs);
    w.vector(&m.train_targets);
    w.vector(&m.alpha);
}

fn read_exact(r: &mut Reader, kernel: &KernelSpec, noise: f64, mult: f64) -> Result<ExactGPModel> {
    let x = r.matrix()?;
    let y = r.vector()?;
    let alpha = r.vector()?;
    let start = JITTER_ESCALATION
        .iter()
        .position(|&v| v == mult)
        .ok_or_else(|| Error::ModelFormat(format!("unknown jitter multiplier {mult}")))?;
    let mut model = fit_with_escalation(&x, &y, kernel, noise, &JITTER_ESCALATION[start..])?;
    if alpha.len() != model.alpha.len() {
        return Err(Error::ModelFormat("weight vector length differs from training size".into()));
    }
    model.alpha = alpha;
    Ok(model)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }

    fn vector(&mut self, v: &DVector<f64>) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, elems: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(elems).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(Error::ModelFormat("length prefix exceeds file size".into()));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.len(rows.max(1) * 8)?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }

    fn vector(&mut self) -> Result<DVector<f64>> {
        let n = self.len(8)?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(self.f64()?);
        }
        Ok(DVector::from_vec(values))
    }
}
