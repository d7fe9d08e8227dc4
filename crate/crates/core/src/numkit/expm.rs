use super::matrix::DenseMatrix;
use super::special::{poisson_pmf_vec, poisson_truncation};
use crate::error::{Error, Result};

/// Largest uniformized Poisson mean handled by one series before squaring.
const MAX_PIECE_MEAN: f64 = 8.0;

/// Tolerance used to recognise generator structure.
const STRUCTURE_TOL: f64 = 1e-12;

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(Error::InvalidInput(format!(
            "tolerance must lie in (0, 1e-3], got {tol}"
        )));
    }
    Ok(())
}

/// True when `a` has nonnegative off-diagonals and nonpositive row sums.
pub fn is_subgenerator(a: &DenseMatrix) -> bool {
    a.is_subgenerator(STRUCTURE_TOL)
}

/// `exp(A t)` with entrywise error at most `tol`.
///
/// Sub-generators go through uniformization, which keeps every intermediate
/// matrix nonnegative. Everything else uses Taylor with scaling and squaring.
pub fn mat_exp(a: &DenseMatrix, t: f64, tol: f64) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.all_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("time must be finite and >= 0, got {t}")));
    }
    check_tol(tol)?;
    if t == 0.0 {
        return Ok(DenseMatrix::identity(a.rows()));
    }
    if is_subgenerator(a) {
        uniformized_exp(a, t, tol)
    } else {
        taylor_exp(a, t, tol)
    }
}

fn uniformized_exp(a: &DenseMatrix, t: f64, tol: f64) -> Result<DenseMatrix> {
    let p = a.rows();
    let rate = a.max_abs_diagonal();
    if rate == 0.0 {
        return Ok(DenseMatrix::identity(p));
    }
    let mean = rate * t;
    let squarings = if mean > MAX_PIECE_MEAN {
        (mean / MAX_PIECE_MEAN).log2().ceil() as i32
    } else {
        0
    };
    let piece_mean = mean / 2f64.powi(squarings);
    // squaring a substochastic approximation at most doubles its error
    let piece_tol = (tol / 2f64.powi(squarings)).max(1e-300);
    let k = poisson_truncation(piece_mean, piece_tol)?;
    let weights = poisson_pmf_vec(piece_mean, k);
    let mut b = DenseMatrix::identity(p);
    b.axpy(1.0 / rate, a);
    let mut power = DenseMatrix::identity(p);
    let mut out = DenseMatrix::identity(p).scale(weights[0]);
    for w in weights.iter().skip(1) {
        power = power.matmul(&b);
        out.axpy(*w, &power);
    }
    for _ in 0..squarings {
        out = out.matmul(&out);
    }
    Ok(out)
}

fn taylor_exp(a: &DenseMatrix, t: f64, tol: f64) -> Result<DenseMatrix> {
    let p = a.rows();
    let at = a.scale(t);
    let norm = at.norm_inf();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = at.scale(1.0 / 2f64.powi(squarings));
    let mut term = DenseMatrix::identity(p);
    let mut out = DenseMatrix::identity(p);
    let target = (tol * 1e-3).min(1e-17);
    for k in 1..200 {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        out = out.add(&term);
        if term.norm_inf() <= target * out.norm_inf().max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        out = out.matmul(&out);
    }
    if !out.all_finite() {
        return Err(Error::NumericalConsistency(
            "matrix exponential overflowed".into(),
        ));
    }
    Ok(out)
}

/// Row-vector action `v exp(A t)` by uniformization, for a sub-generator
/// given only through its vector product `apply(x) = x A`.
///
/// `rate` must bound every `|A_ii|`.
pub fn uniformized_row_action<F>(v: &[f64], apply: F, rate: f64, t: f64, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    check_tol(tol)?;
    if !(rate >= 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidInput("rate and time must be >= 0".into()));
    }
    if rate == 0.0 || t == 0.0 {
        return Ok(v.to_vec());
    }
    let k = poisson_truncation(rate * t, tol)?;
    let weights = poisson_pmf_vec(rate * t, k);
    let mut x = v.to_vec();
    let mut out: Vec<f64> = x.iter().map(|xi| xi * weights[0]).collect();
    for w in weights.iter().skip(1) {
        let ax = apply(&x);
        for (xi, axi) in x.iter_mut().zip(&ax) {
            *xi += axi / rate;
        }
        for (o, xi) in out.iter_mut().zip(&x) {
            *o += w * xi;
        }
    }
    Ok(out)
}
