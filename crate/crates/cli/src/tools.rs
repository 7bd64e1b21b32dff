//! File-based helpers behind the `identify` and `predict` subcommands.

use std::path::Path;

use gbpc_core::behavior::{ConditionalGaussian, GaussianBehavior};
use gbpc_core::trajectory::Trajectory;
use nalgebra::{DMatrix, DVector};

use crate::error::{HarnessError, Result};

/// Numeric CSV with a header row; every row must have `cols` fields.
pub fn read_matrix_csv(path: &Path, cols: usize) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::io(path, e))?;
        if rec.len() != cols {
            return Err(HarnessError::io(
                path,
                format!("row {} has {} fields, expected {cols}", i + 1, rec.len()),
            ));
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| HarnessError::io(path, format!("row {}: {e}", i + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub l_f: usize,
    pub p: usize,
    pub dist: ConditionalGaussian,
}

/// Conditions a window behavior on a measured past and planned future inputs.
/// `u_f` holds one row per future step.
pub fn predict(gb: &GaussianBehavior, w_ini: &Trajectory, u_f: &DMatrix<f64>, rank_tol: f64) -> Result<Prediction> {
    let gb = gb.to_interleaved();
    let (m, p, q) = (gb.dims.m, gb.dims.p, gb.dims.q());
    let (l_ini, l_f) = (w_ini.len(), u_f.nrows());
    if w_ini.dims() != gb.dims {
        return Err(HarnessError::Config("w_ini channels do not match the behavior".into()));
    }
    if u_f.ncols() != m {
        return Err(HarnessError::Config(format!(
            "u_f has {} columns, expected {m}",
            u_f.ncols()
        )));
    }
    if l_ini + l_f != gb.l {
        return Err(HarnessError::Config(format!(
            "behavior has window length {}, got L_ini = {l_ini} and L_f = {l_f}",
            gb.l
        )));
    }
    let mut free: Vec<usize> = (0..q * l_ini).collect();
    free.extend((l_ini..gb.l).flat_map(|t| t * q..t * q + m));
    let mut value: Vec<f64> = w_ini.window(0, l_ini)?.iter().copied().collect();
    value.extend(u_f.transpose().iter().copied());
    let dist = gb.condition_with_tol(&free, &DVector::from_vec(value), rank_tol)?;
    Ok(Prediction { l_f, p, dist })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gbpc_core::behavior::Ordering;
    use gbpc_core::trajectory::SignalDims;

    fn temp_csv(name: &str, text: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("gbpc-tools-{}-{name}", std::process::id()));
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn matrix_csv() {
        let path = temp_csv("ok.csv", "a,b\n1, 2\n3,-4.5\n");
        let m = read_matrix_csv(&path, 2).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -4.5]));
        assert!(read_matrix_csv(&path, 3).is_err());
        let bad = temp_csv("bad.csv", "a\nx\n");
        assert!(read_matrix_csv(&bad, 1).is_err());
        for p in [path, bad] {
            std::fs::remove_file(p).unwrap();
        }
    }

    #[test]
    fn predict_matches_scalar_conditioning() {
        // one input and one output over two steps: w = (u0, y0, u1, y1)
        let dims = SignalDims::new(1, 1).unwrap();
        let cov = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.2, 0.0, 0.3, 0.2, 1.0, 0.1, 0.5, 0.0, 0.1, 1.0, 0.4, 0.3, 0.5, 0.4, 2.0,
            ],
        );
        let gb = GaussianBehavior::new(dims, 2, DVector::zeros(4), cov.clone(), Ordering::Interleaved).unwrap();
        let w_ini = Trajectory::new(dims, DMatrix::from_row_slice(1, 2, &[0.5, -1.0])).unwrap();
        let u_f = DMatrix::from_element(1, 1, 2.0);
        let pred = predict(&gb, &w_ini, &u_f, 1e-12).unwrap();

        let s_ff = cov.view((0, 0), (3, 3)).into_owned();
        let s_df = cov.view((3, 0), (1, 3)).into_owned();
        let x = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let inv = s_ff.try_inverse().unwrap();
        let mean = (&s_df * &inv * x)[0];
        let var = cov[(3, 3)] - (&s_df * &inv * s_df.transpose())[(0, 0)];
        assert!((pred.dist.mean[0] - mean).abs() < 1e-12);
        assert!((pred.dist.cov[(0, 0)] - var).abs() < 1e-12);
        assert_eq!((pred.l_f, pred.p), (1, 1));

        assert!(predict(&gb, &w_ini, &DMatrix::zeros(2, 1), 1e-12).is_err());
        assert!(predict(&gb, &w_ini, &DMatrix::zeros(1, 2), 1e-12).is_err());
    }
}
