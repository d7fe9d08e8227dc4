//! Transition matrices of the uniformized approximation and the
//! product-integral reference solution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Intensity;
use crate::numkit::{mat_exp, poisson_pmf_vec, poisson_truncation, DenseMatrix};
use crate::qseq::{QSequence, VariantKind};

/// A truncated double Poisson series.
#[derive(Clone, Debug)]
pub struct SeriesResult {
    pub matrix: DenseMatrix,
    /// Poisson mass left out by the two truncations; bounds the error.
    pub defect: f64,
    pub k_s: usize,
    pub k_t: usize,
}

fn check_times(s: f64, t: f64) -> Result<()> {
    if !(s >= 0.0) || !(t >= s) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("need 0 <= s <= t < inf, got s = {s}, t = {t}")));
    }
    Ok(())
}

/// `sum_k sum_l Poi_{ns}(k) Poi_{n(t-s)}(l) Q_{k+1} ... Q_{k+l}`, truncated
/// where each Poisson tail drops below `tail_tol / 2`.
pub fn transition_series(qs: &QSequence, s: f64, t: f64, tail_tol: f64) -> Result<SeriesResult> {
    check_times(s, t)?;
    if !(tail_tol > 0.0 && tail_tol <= 1e-3) {
        return Err(Error::InvalidInput(format!(
            "tail tolerance must lie in (0, 1e-3], got {tail_tol}"
        )));
    }
    let p = qs.dim();
    if s == t {
        return Ok(SeriesResult {
            matrix: DenseMatrix::identity(p),
            defect: 0.0,
            k_s: 0,
            k_t: 0,
        });
    }
    let n = qs.n();
    let k_s = poisson_truncation(n * s, tail_tol / 2.0)?;
    let k_t = poisson_truncation(n * (t - s), tail_tol / 2.0)?;
    if let Some(max) = qs.max_index() {
        if max < k_s + k_t {
            return Err(Error::Precondition(format!(
                "sequence has {max} steps but the series needs {}",
                k_s + k_t
            )));
        }
    }
    let ws = poisson_pmf_vec(n * s, k_s);
    let wt = poisson_pmf_vec(n * (t - s), k_t);
    let mut out = DenseMatrix::zeros(p, p);
    for (k, &wk) in ws.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        let mut running = DenseMatrix::identity(p);
        let mut inner = DenseMatrix::identity(p).scale(wt[0]);
        for (l, &wl) in wt.iter().enumerate().skip(1) {
            running = running.matmul(&*qs.get(k + l)?);
            inner.axpy(wl, &running);
        }
        out.axpy(wk, &inner);
    }
    let defect = 1.0 - ws.iter().sum::<f64>() * wt.iter().sum::<f64>();
    Ok(SeriesResult {
        matrix: out,
        defect: defect.max(0.0),
        k_s,
        k_t,
    })
}

const MAX_PANELS: usize = 1 << 18;

fn midpoint_product(intensity: &Intensity, s: f64, t: f64, panels: usize, exp_tol: f64) -> Result<DenseMatrix> {
    let h = (t - s) / panels as f64;
    let mut out = DenseMatrix::identity(intensity.dim());
    for i in 0..panels {
        let mid = s + (i as f64 + 0.5) * h;
        out = out.matmul(&mat_exp(&intensity.at(mid), h, exp_tol)?);
    }
    Ok(out)
}

/// `P(s, t)` of the inhomogeneous process as a product of midpoint matrix
/// exponentials, halving the panels until two refinements agree to `step_tol`.
pub fn product_integral(intensity: &Intensity, s: f64, t: f64, step_tol: f64) -> Result<DenseMatrix> {
    check_times(s, t)?;
    if !(step_tol > 0.0) {
        return Err(Error::InvalidInput("step tolerance must be > 0".into()));
    }
    if s == t {
        return Ok(DenseMatrix::identity(intensity.dim()));
    }
    let mut panels = 1usize;
    let exp_tol = |panels: usize| (step_tol * 1e-3 / panels as f64).clamp(1e-300, 1e-3);
    let mut prev = midpoint_product(intensity, s, t, panels, exp_tol(panels))?;
    loop {
        panels *= 2;
        if panels > MAX_PANELS {
            return Err(Error::NumericalConsistency(format!(
                "product integral did not reach tolerance {step_tol} with {MAX_PANELS} panels"
            )));
        }
        let next = midpoint_product(intensity, s, t, panels, exp_tol(panels))?;
        if next.max_abs_diff(&prev) < step_tol {
            return Ok(next);
        }
        prev = next;
    }
}

/// Reference `P(0, t_k)` along an increasing grid starting at 0, built by
/// chaining the product integral over consecutive grid cells.
pub fn product_integral_path(intensity: &Intensity, times: &[f64], step_tol: f64) -> Result<Vec<DenseMatrix>> {
    if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("time grid must start at 0 and increase".into()));
    }
    let cells = times
        .par_windows(2)
        .map(|w| product_integral(intensity, w[0], w[1], step_tol))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(times.len());
    out.push(DenseMatrix::identity(intensity.dim()));
    for c in cells {
        let next = out.last().expect("nonempty").matmul(&c);
        out.push(next);
    }
    Ok(out)
}

/// One row of [`unconditional_error_scan`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub n: f64,
    pub variant: VariantKind,
    pub sup_error: f64,
    pub t_max: f64,
    pub tail_tol: f64,
}

pub const SCAN_CSV_HEADER: &str = "n,variant,sup_error,T,tail_tol";

pub fn scan_table_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from(SCAN_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.16e},{},{:.16e},{:.16e},{:.16e}\n",
            r.n, r.variant, r.sup_error, r.t_max, r.tail_tol
        ));
    }
    out
}

/// `sup ||P_n(s,t) - P(s,t)||_inf` over the pairs `s < t` of the grid
/// `{0, T/m, ..., T}` for each `n`, with a nonrandom variant.
pub fn unconditional_error_scan(
    intensity: &Intensity,
    n_values: &[f64],
    t_max: f64,
    cells: usize,
    variant: VariantKind,
    tail_tol: f64,
) -> Result<Vec<ScanRow>> {
    if variant == VariantKind::Conditional {
        return Err(Error::InvalidInput(
            "the error scan compares the nonrandom variants (hat, tilde)".into(),
        ));
    }
    if !(t_max > 0.0) || cells == 0 {
        return Err(Error::InvalidInput("need T > 0 and at least one cell".into()));
    }
    let times: Vec<f64> = (0..=cells).map(|i| t_max * i as f64 / cells as f64).collect();
    let oracle_tol = (tail_tol * 10.0).max(1e-10);
    let steps = times
        .par_windows(2)
        .map(|w| product_integral(intensity, w[0], w[1], oracle_tol))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..cells {
        let mut acc = DenseMatrix::identity(intensity.dim());
        for j in i + 1..=cells {
            acc = acc.matmul(&steps[j - 1]);
            pairs.push((times[i], times[j], acc.clone()));
        }
    }
    n_values
        .iter()
        .map(|&n| {
            let qs = match variant {
                VariantKind::Hat => QSequence::hat(intensity, n)?,
                _ => QSequence::tilde(intensity, n)?,
            };
            let sup_error = pairs
                .par_iter()
                .map(|(s, t, oracle)| {
                    let approx = transition_series(&qs, *s, *t, tail_tol)?;
                    Ok(approx.matrix.sub(oracle).norm_inf())
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(ScanRow {
                n,
                variant,
                sup_error,
                t_max,
                tail_tol,
            })
        })
        .collect()
}
