//! Recorded trajectories, windowing into data matrices, and the row partition
//! `[W_p; U_f; Y_f]` used by every data-driven predictor.
//!
//! Windows are stacked chronologically: a length-`L` window is
//! `[w_tᵀ … w_{t+L−1}ᵀ]ᵀ` with each `w_t = [u_tᵀ y_tᵀ]ᵀ`. Hankel windowing
//! produces overlapping (hence correlated) columns; estimators treat them as
//! if they were independent samples.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalDims {
    pub m: usize,
    pub p: usize,
}

impl SignalDims {
    pub fn new(m: usize, p: usize) -> Result<Self> {
        if m == 0 || p == 0 {
            return Err(Error::Shape(format!(
                "need at least one input and one output channel, got m={m}, p={p}"
            )));
        }
        Ok(Self { m, p })
    }

    pub fn q(&self) -> usize {
        self.m + self.p
    }
}

/// A finite multichannel signal; row `t` holds `[u_tᵀ y_tᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dims: SignalDims,
    samples: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(dims: SignalDims, samples: DMatrix<f64>) -> Result<Self> {
        if samples.ncols() != dims.q() {
            return Err(Error::Shape(format!(
                "trajectory has {} channels, expected {}",
                samples.ncols(),
                dims.q()
            )));
        }
        if samples.nrows() == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        linalg::check_finite(&samples, "trajectory")?;
        Ok(Self { dims, samples })
    }

    /// Builds a trajectory from separate input (`T×m`) and output (`T×p`) blocks.
    pub fn from_io(inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() != outputs.nrows() {
            return Err(Error::Shape("input and output lengths differ".into()));
        }
        let dims = SignalDims::new(inputs.ncols(), outputs.ncols())?;
        let mut samples = DMatrix::zeros(inputs.nrows(), dims.q());
        samples.columns_mut(0, dims.m).copy_from(inputs);
        samples.columns_mut(dims.m, dims.p).copy_from(outputs);
        Self::new(dims, samples)
    }

    pub fn dims(&self) -> SignalDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn input(&self, t: usize) -> DVector<f64> {
        DVector::from_iterator(self.dims.m, self.samples.row(t).iter().take(self.dims.m).copied())
    }

    pub fn output(&self, t: usize) -> DVector<f64> {
        DVector::from_iterator(self.dims.p, self.samples.row(t).iter().skip(self.dims.m).copied())
    }

    /// Stacked window `[w_startᵀ … w_{start+len−1}ᵀ]ᵀ`.
    pub fn window(&self, start: usize, len: usize) -> Result<DVector<f64>> {
        if start + len > self.len() {
            return Err(Error::TooShort {
                needed: start + len,
                got: self.len(),
            });
        }
        let q = self.dims.q();
        Ok(DVector::from_fn(q * len, |r, _| self.samples[(start + r / q, r % q)]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Sliding windows starting at every sample (`T − L + 1` columns).
    Hankel,
    /// Non-overlapping windows (`⌊T/L⌋` columns).
    Disjoint,
}

/// Cuts `traj` into length-`l` windows, one per column, ordered by start time.
pub fn window_trajectory(traj: &Trajectory, l: usize, mode: WindowMode) -> Result<DMatrix<f64>> {
    if l == 0 {
        return Err(Error::Shape("window length must be positive".into()));
    }
    let t = traj.len();
    if t < l {
        return Err(Error::TooShort { needed: l, got: t });
    }
    let (count, stride) = match mode {
        WindowMode::Hankel => (t - l + 1, 1),
        WindowMode::Disjoint => (t / l, l),
    };
    let q = traj.dims.q();
    Ok(DMatrix::from_fn(q * l, count, |r, c| {
        traj.samples[(c * stride + r / q, r % q)]
    }))
}

/// Data matrix `W` (chronological rows) with its `(w_ini, u_f, y_f)` partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    dims: SignalDims,
    l_ini: usize,
    l_f: usize,
    w: DMatrix<f64>,
    /// `order[k]` is the chronological row placed at partitioned position `k`.
    order: Vec<usize>,
}

/// Partitioned position of every chronological row of a length-`L` window.
fn partition_order(dims: SignalDims, l_ini: usize, l_f: usize) -> Vec<usize> {
    let (m, p, q) = (dims.m, dims.p, dims.q());
    let mut order = Vec::with_capacity(q * (l_ini + l_f));
    order.extend(0..q * l_ini);
    for t in l_ini..l_ini + l_f {
        order.extend((0..m).map(|c| t * q + c));
    }
    for t in l_ini..l_ini + l_f {
        order.extend((0..p).map(|c| t * q + m + c));
    }
    order
}

impl DataMatrix {
    pub fn assemble(dims: SignalDims, columns: DMatrix<f64>, l_ini: usize, l_f: usize) -> Result<Self> {
        let l = l_ini + l_f;
        if l_f == 0 {
            return Err(Error::Shape("future horizon must be positive".into()));
        }
        if columns.nrows() != dims.q() * l {
            return Err(Error::Shape(format!(
                "window height {} does not match q·L = {}·{}",
                columns.nrows(),
                dims.q(),
                l
            )));
        }
        if columns.ncols() == 0 {
            return Err(Error::Shape("data matrix needs at least one column".into()));
        }
        linalg::check_finite(&columns, "data matrix")?;
        Ok(Self {
            dims,
            l_ini,
            l_f,
            w: columns,
            order: partition_order(dims, l_ini, l_f),
        })
    }

    /// Windows `traj` and partitions the result in one step.
    pub fn from_trajectory(traj: &Trajectory, l_ini: usize, l_f: usize, mode: WindowMode) -> Result<Self> {
        let cols = window_trajectory(traj, l_ini + l_f, mode)?;
        Self::assemble(traj.dims(), cols, l_ini, l_f)
    }

    pub fn dims(&self) -> SignalDims {
        self.dims
    }
    pub fn l_ini(&self) -> usize {
        self.l_ini
    }
    pub fn l_f(&self) -> usize {
        self.l_f
    }
    pub fn l(&self) -> usize {
        self.l_ini + self.l_f
    }
    /// Number of columns `D`.
    pub fn cols(&self) -> usize {
        self.w.ncols()
    }
    /// Chronologically ordered `W`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse_order(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (k, &r) in self.order.iter().enumerate() {
            inv[r] = k;
        }
        inv
    }

    fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.w.select_rows(idx)
    }

    /// Chronological row indices of the `w_ini` block.
    pub fn ini_rows(&self) -> &[usize] {
        &self.order[..self.dims.q() * self.l_ini]
    }
    /// Chronological row indices of the `u_f` block.
    pub fn uf_rows(&self) -> &[usize] {
        let s = self.dims.q() * self.l_ini;
        &self.order[s..s + self.dims.m * self.l_f]
    }
    /// Chronological row indices of the free block `(w_ini, u_f)`.
    pub fn free_rows(&self) -> &[usize] {
        &self.order[..self.dims.q() * self.l_ini + self.dims.m * self.l_f]
    }
    /// Chronological row indices of the dependent block `y_f`.
    pub fn dep_rows(&self) -> &[usize] {
        &self.order[self.dims.q() * self.l_ini + self.dims.m * self.l_f..]
    }

    pub fn w_p(&self) -> DMatrix<f64> {
        self.rows(self.ini_rows())
    }
    pub fn u_f(&self) -> DMatrix<f64> {
        self.rows(self.uf_rows())
    }
    pub fn y_f(&self) -> DMatrix<f64> {
        self.rows(self.dep_rows())
    }
    /// `[W_p; U_f]`.
    pub fn free(&self) -> DMatrix<f64> {
        self.rows(self.free_rows())
    }
    /// `[W_p; U_f; Y_f]`.
    pub fn partitioned(&self) -> DMatrix<f64> {
        self.rows(&self.order)
    }

    /// Reorders a chronological window into `[w_ini; u_f; y_f]`.
    pub fn partition_window(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.order.len(), self.order.iter().map(|&r| w[r]))
    }

    /// Inverse of [`DataMatrix::partition_window`].
    pub fn restore_window(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (k, &r) in self.order.iter().enumerate() {
            out[r] = v[k];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcitationReport {
    pub rank: usize,
    pub expected: usize,
    pub satisfied: bool,
}

/// Numerical rank of `W` compared against the expected `mL + n`.
pub fn excitation_rank(w: &DataMatrix, expected: usize, rank_tol: f64) -> ExcitationReport {
    let rank = linalg::numerical_rank(w.w(), rank_tol);
    ExcitationReport {
        rank,
        expected,
        satisfied: rank >= expected,
    }
}

pub fn channel_names(dims: SignalDims) -> Vec<String> {
    (1..=dims.m)
        .map(|i| format!("u_{i}"))
        .chain((1..=dims.p).map(|i| format!("y_{i}")))
        .collect()
}

/// Reads a trajectory CSV (`u_1..u_m, y_1..y_p` with a header row).
pub fn load_csv(path: impl AsRef<Path>, dims: SignalDims) -> Result<Trajectory> {
    let file = std::fs::File::open(path)?;
    read_csv(file, dims)
}

pub fn read_csv<R: std::io::Read>(reader: R, dims: SignalDims) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_len = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .len();
    if header_len != dims.q() {
        return Err(Error::Parse {
            line: 1,
            message: format!("header has {header_len} columns, expected {}", dims.q()),
        });
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != dims.q() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", dims.q(), record.len()),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value {field:?}"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Trajectory::new(dims, DMatrix::from_row_slice(rows, dims.q(), &values))
}

pub fn save_csv(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(traj, file)
}

/// Values are written in shortest round-trip decimal form, so reading them
/// back is bit-exact.
pub fn write_csv<W: std::io::Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wtr.write_record(channel_names(traj.dims)).map_err(io)?;
    for t in 0..traj.len() {
        wtr.write_record(traj.samples.row(t).iter().map(|v| v.to_string()))
            .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}
