//! Closed-form stability, steady-state error and outer-loop convergence
//! analytics for linearized droop control around an operating point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rho_ma: f64,
    /// `1 - m_i * sum_j |a_ij|` per inverter.
    pub row_sum_margins: Vec<f64>,
    /// `1 / sum_j |a_ij|`; infinite for an all-zero row.
    pub critical_slopes: Vec<f64>,
    pub stable_sufficient: bool,
    pub stable_spectral: bool,
    /// Label of the operating point `A` was taken at.
    pub operating_point_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Row-major rows of `B`.
    pub b_matrix: Vec<Vec<f64>>,
    pub b_eigenvalue_magnitudes: Vec<f64>,
    pub rho_b: f64,
    pub converges: bool,
    /// Largest convergent `k_d` for a single inverter: `2 (1/a + m)`.
    pub k_d_upper_scalar: Option<f64>,
    pub operating_point_id: Option<String>,
}

fn check_square(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != x.ncols() {
        return Err(Error::NotSquare { rows: x.nrows(), cols: x.ncols() });
    }
    Ok(())
}

fn check_len(a: &DMatrix<f64>, len: usize, what: &str) -> Result<()> {
    if a.nrows() != len {
        return Err(Error::Dimension(format!("{what} has {len} entries for a {0}x{0} matrix", a.nrows())));
    }
    Ok(())
}

/// Eigenvalue magnitudes, largest first.
pub fn eigenvalue_magnitudes(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(x)?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("matrix has non-finite entries".into()));
    }
    let mut mags: Vec<f64> = x.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags)
}

pub fn spectral_radius(x: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalue_magnitudes(x)?.first().copied().unwrap_or(0.0))
}

/// Induced infinity norm (maximum absolute row sum).
pub fn norm_inf(x: &DMatrix<f64>) -> f64 {
    x.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Induced one norm (maximum absolute column sum).
pub fn norm_one(x: &DMatrix<f64>) -> f64 {
    x.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn critical_slopes(a: &DMatrix<f64>) -> Vec<f64> {
    a.row_iter()
        .map(|r| {
            let s: f64 = r.iter().map(|v| v.abs()).sum();
            if s == 0.0 {
                f64::INFINITY
            } else {
                1.0 / s
            }
        })
        .collect()
}

/// `M * A` for diagonal `M = diag(slopes)`.
fn scale_rows(slopes: &[f64], a: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| slopes[i] * a[(i, j)])
}

/// `A * M` for diagonal `M = diag(slopes)`.
fn scale_cols(a: &DMatrix<f64>, slopes: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * slopes[j])
}

pub fn stability_report(a: &DMatrix<f64>, slopes: &[f64]) -> Result<StabilityReport> {
    check_square(a)?;
    check_len(a, slopes.len(), "slope vector")?;
    if slopes.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidParams("slopes must be positive".into()));
    }
    let rho_ma = spectral_radius(&scale_rows(slopes, a))?;
    let row_sum_margins: Vec<f64> =
        a.row_iter().zip(slopes).map(|(r, m)| 1.0 - m * r.iter().map(|v| v.abs()).sum::<f64>()).collect();
    Ok(StabilityReport {
        rho_ma,
        stable_sufficient: row_sum_margins.iter().all(|g| *g > 0.0),
        row_sum_margins,
        critical_slopes: critical_slopes(a),
        stable_spectral: rho_ma < 1.0,
        operating_point_id: None,
    })
}

fn i_plus_am_inverse(a: &DMatrix<f64>, slopes: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    (DMatrix::identity(n, n) + scale_cols(a, slopes)).try_inverse().ok_or_else(|| Error::Singular("I + A M".into()))
}

fn require_convergent_series(a: &DMatrix<f64>, slopes: &[f64]) -> Result<()> {
    let rho = spectral_radius(&scale_rows(slopes, a))?;
    if rho >= 1.0 {
        return Err(Error::SeriesDiverges(rho));
    }
    Ok(())
}

/// New droop equilibrium after a disturbance `dv_d` applied at equilibrium
/// `v_bar`: returns `(V_new, V_new - mu)`.
pub fn predict_sse(
    a: &DMatrix<f64>,
    slopes: &[f64],
    dv_d: &DVector<f64>,
    v_bar: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_square(a)?;
    check_len(a, slopes.len(), "slope vector")?;
    for (v, what) in [(dv_d, "disturbance"), (v_bar, "equilibrium voltage"), (mu, "set-point")] {
        check_len(a, v.len(), what)?;
    }
    require_convergent_series(a, slopes)?;
    let v_new = v_bar + i_plus_am_inverse(a, slopes)? * dv_d;
    let sse = &v_new - mu;
    Ok((v_new, sse))
}

/// Offset change that cancels `sse` in one outer iteration: `-(A^-1 + M) sse`.
pub fn required_dq(a: &DMatrix<f64>, slopes: &[f64], sse: &DVector<f64>) -> Result<DVector<f64>> {
    check_square(a)?;
    check_len(a, slopes.len(), "slope vector")?;
    check_len(a, sse.len(), "sse vector")?;
    let a_inv = a.clone().try_inverse().ok_or_else(|| Error::Singular("sensitivity matrix A".into()))?;
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(slopes));
    Ok(-(a_inv + m) * sse)
}

/// Set-point error after shifting the offsets by `dq_p`.
pub fn sse_adaptive_prediction(
    a: &DMatrix<f64>,
    slopes: &[f64],
    dq_p: &DVector<f64>,
    v_bar: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_square(a)?;
    check_len(a, slopes.len(), "slope vector")?;
    for (v, what) in [(dq_p, "offset change"), (v_bar, "equilibrium voltage"), (mu, "set-point")] {
        check_len(a, v.len(), what)?;
    }
    require_convergent_series(a, slopes)?;
    Ok(v_bar - mu + i_plus_am_inverse(a, slopes)? * a * dq_p)
}

/// Outer-loop iteration matrix `B = I - (I + A M)^-1 A K`.
pub fn outer_b_matrix(a: &DMatrix<f64>, slopes: &[f64], k_d: &[f64]) -> Result<ConvergenceReport> {
    check_square(a)?;
    check_len(a, slopes.len(), "slope vector")?;
    check_len(a, k_d.len(), "k_d vector")?;
    let n = a.nrows();
    let b = DMatrix::identity(n, n) - i_plus_am_inverse(a, slopes)? * scale_cols(a, k_d);
    let mags = eigenvalue_magnitudes(&b)?;
    let rho_b = mags.first().copied().unwrap_or(0.0);
    Ok(ConvergenceReport {
        b_matrix: b.row_iter().map(|r| r.iter().copied().collect()).collect(),
        b_eigenvalue_magnitudes: mags,
        rho_b,
        converges: rho_b < 1.0,
        k_d_upper_scalar: (n == 1).then(|| 2.0 * (1.0 / a[(0, 0)] + slopes[0])),
        operating_point_id: None,
    })
}

/// Scalar outer-loop factor `1 - k / (1/a + m)`.
pub fn scalar_b(a: f64, m: f64, k: f64) -> f64 {
    1.0 - k / (1.0 / a + m)
}
