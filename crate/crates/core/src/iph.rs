//! Absorption-time densities of the uniformized chain as Erlang mixtures,
//! and the scalar hazard-rate density estimator built on them.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::IphModel;
use crate::numkit::{poisson_pmf_vec, DenseMatrix, ProbVector};
use crate::qseq::{scalar_q_from_data, QSequence, StepHazard};
use crate::transition::product_integral_path;

/// Slack allowed on negative weights before they count as an error.
pub const WEIGHT_TOL: f64 = 1e-12;

/// `sum_l w_l Erlang(l, n)` with `defect = 1 - sum_l w_l`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErlangMixture {
    pub n: f64,
    pub weights: Vec<f64>,
    pub defect: f64,
}

impl ErlangMixture {
    pub fn new(n: f64, weights: Vec<f64>) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput(format!("rate must be > 0, got {n}")));
        }
        if let Some(bad) = weights.iter().find(|w| !(**w >= -WEIGHT_TOL) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid mixture weight {bad}")));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-10 {
            return Err(Error::InvalidInput(format!("weights sum to {total} > 1")));
        }
        Ok(ErlangMixture {
            n,
            weights,
            defect: 1.0 - total,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_l w_l l / n`.
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * (i + 1) as f64)
            .sum::<f64>()
            / self.n
    }

    fn check_t(t: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("t must be >= 0, got {t}")));
        }
        Ok(())
    }

    /// `n sum_l w_l Poi_{nt}(l - 1)`.
    pub fn pdf(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        if self.weights.is_empty() || t.is_infinite() {
            return Ok(0.0);
        }
        let pmf = poisson_pmf_vec(self.n * t, self.weights.len() - 1);
        let s: f64 = self.weights.iter().zip(&pmf).map(|(w, p)| w * p).sum();
        Ok((self.n * s).max(0.0))
    }

    /// `sum_l w_l P(Erlang(l, n) <= t)`, written through Poisson tails as
    /// `sum_l w_l - sum_m Poi_{nt}(m) sum_{l > m} w_l`.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let total = self.mass();
        if self.weights.is_empty() || t == 0.0 {
            return Ok(0.0);
        }
        if t.is_infinite() {
            return Ok(total);
        }
        let l = self.weights.len();
        let pmf = poisson_pmf_vec(self.n * t, l - 1);
        let mut tail = 0.0;
        let mut survive = 0.0;
        for m in (0..l).rev() {
            // weights[m] is w_{m+1}, so tail is sum_{l > m} w_l here
            tail += self.weights[m];
            survive += pmf[m] * tail;
        }
        Ok((total - survive).clamp(0.0, 1.0))
    }

    pub fn pdf_grid(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.par_iter().map(|&t| self.pdf(t)).collect()
    }

    pub fn cdf_grid(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.par_iter().map(|&t| self.cdf(t)).collect()
    }
}

/// `w_l = v_{l-1} (I - Q_l) e` with `v_0 = alpha`, `v_l = v_{l-1} Q_l`,
/// stopping at `l_max` or once the surviving mass `v_l e` is below `mass_tol`.
pub fn iph_weights(alpha: &ProbVector, qs: &QSequence, l_max: usize, mass_tol: f64) -> Result<ErlangMixture> {
    if l_max == 0 {
        return Err(Error::InvalidInput("L_max must be >= 1".into()));
    }
    if alpha.len() != qs.dim() {
        return Err(Error::Dimension("alpha and Q dimensions differ".into()));
    }
    let mut v = alpha.as_slice().to_vec();
    let mut weights = Vec::new();
    for ell in 1..=l_max {
        if v.iter().sum::<f64>() < mass_tol {
            break;
        }
        let q = qs.get(ell)?;
        let exit = exit_probabilities(&q);
        let w: f64 = v.iter().zip(&exit).map(|(a, b)| a * b).sum();
        if w < -WEIGHT_TOL {
            return Err(Error::NumericalConsistency(format!("weight {ell} is negative ({w})")));
        }
        weights.push(w);
        v = q.vec_mul(&v);
    }
    let total: f64 = weights.iter().sum();
    Ok(ErlangMixture {
        n: qs.n(),
        weights,
        defect: 1.0 - total,
    })
}

/// `1 - (Q e)_j` per state.
pub fn exit_probabilities(q: &DenseMatrix) -> Vec<f64> {
    q.row_sums().iter().map(|r| 1.0 - r).collect()
}

/// Reference absorption density `alpha P(0, t) s(t)` from the product integral.
pub fn reference_density(model: &IphModel, times: &[f64], step_tol: f64) -> Result<Vec<f64>> {
    let mut grid = times.to_vec();
    let prepend = grid.first() != Some(&0.0);
    if prepend {
        grid.insert(0, 0.0);
    }
    let path = product_integral_path(&model.sub, &grid, step_tol)?;
    let alpha = model.alpha.as_slice();
    let dens: Vec<f64> = grid
        .iter()
        .zip(&path)
        .map(|(&t, p)| {
            let row = p.vec_mul(alpha);
            row.iter().zip(model.exit_vector(t)).map(|(a, b)| a * b).sum()
        })
        .collect();
    Ok(if prepend { dens[1..].to_vec() } else { dens })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HazardEstimator {
    NelsonAalen,
    NegLogEcdf,
}

impl std::str::FromStr for HazardEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nelson-aalen" | "nelson_aalen" => Ok(HazardEstimator::NelsonAalen),
            "neg-log-ecdf" | "neg_log_ecdf" => Ok(HazardEstimator::NegLogEcdf),
            other => Err(Error::InvalidInput(format!(
                "unknown estimator {other:?} (expected nelson-aalen or neg-log-ecdf)"
            ))),
        }
    }
}

/// Result of [`hazard_density_estimate`].
#[derive(Clone, Debug)]
pub struct HazardFit {
    pub mixture: ErlangMixture,
    /// Number of `Q_l` values clamped into `[0, 1]`.
    pub clamped: usize,
}

/// Coxian density estimate from a sample: scalar `Q_l` from a cumulative
/// hazard estimator, then `w_l = (1 - Q_l) prod_{m<l} Q_m`.
pub fn hazard_density_estimate(
    sample: &[f64],
    n: f64,
    l_max: usize,
    estimator: HazardEstimator,
) -> Result<HazardFit> {
    let h = match estimator {
        HazardEstimator::NelsonAalen => StepHazard::nelson_aalen(sample)?,
        HazardEstimator::NegLogEcdf => StepHazard::neg_log_ecdf(sample)?,
    };
    let qs = scalar_q_from_data(&h, n, l_max)?;
    let clamped = qs.iter().filter(|q| q.clamped).count();
    let seq = QSequence::explicit(
        n,
        qs.iter()
            .map(|q| DenseMatrix::from_row_major(1, 1, vec![q.value]))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let mixture = iph_weights(&ProbVector::unit(1, 0), &seq, l_max, 0.0)?;
    Ok(HazardFit { mixture, clamped })
}
