//! One-step matrices `Q_l` of the uniformized chain: conditional on a grid,
//! evaluated at `l/n`, or averaged over the Erlang law of the `l`-th epoch.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::grid::PoissonGrid;
use crate::model::{Inhomogeneity, Intensity, SeparableSubIntensity};
use crate::numkit::{
    erlang_cdf, erlang_logpdf, erlang_lower_quantile, erlang_upper_quantile, poisson_pmf_vec,
    DenseMatrix,
};

/// Slack allowed on entries and row sums of every `Q_l`.
pub const Q_ENTRY_TOL: f64 = 1e-12;

const QUAD_UPPER_TAIL: f64 = 1e-12;
const QUAD_LOWER_TAIL: f64 = 1e-14;
const QUAD_TOL: f64 = 1e-10;
const QUAD_MAX_PANELS: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantKind {
    Conditional,
    Hat,
    Tilde,
}

impl std::str::FromStr for VariantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(VariantKind::Conditional),
            "hat" => Ok(VariantKind::Hat),
            "tilde" => Ok(VariantKind::Tilde),
            other => Err(Error::InvalidInput(format!(
                "unknown variant {other:?} (expected conditional, hat or tilde)"
            ))),
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantKind::Conditional => "conditional",
            VariantKind::Hat => "hat",
            VariantKind::Tilde => "tilde",
        })
    }
}

fn check_n(n: f64) -> Result<()> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidInput(format!("rate n must be finite and > 0, got {n}")));
    }
    Ok(())
}

fn check_ell(ell: usize) -> Result<()> {
    if ell == 0 {
        return Err(Error::InvalidInput("step index starts at 1".into()));
    }
    Ok(())
}

/// Rejects matrices that are not substochastic within [`Q_ENTRY_TOL`].
fn check_q(q: DenseMatrix, ell: usize) -> Result<DenseMatrix> {
    if let Some(bad) = q
        .as_slice()
        .iter()
        .find(|&&x| !(x >= -Q_ENTRY_TOL && x <= 1.0 + Q_ENTRY_TOL))
    {
        return Err(Error::Precondition(format!(
            "Q_{ell} has entry {bad} outside [0, 1]; increase n or lower the cap"
        )));
    }
    if let Some(r) = q.row_sums().into_iter().find(|&r| r > 1.0 + Q_ENTRY_TOL) {
        return Err(Error::Precondition(format!("Q_{ell} has row sum {r} > 1")));
    }
    Ok(q)
}

/// `I + factor/n * S`, the shared form of every separable variant.
fn separable_q(sep: &SeparableSubIntensity, factor: f64, n: f64) -> DenseMatrix {
    let p = sep.base().rows();
    DenseMatrix::identity(p).add(&sep.base().scale(factor / n))
}

fn general_q(l: &DenseMatrix, n: f64) -> DenseMatrix {
    DenseMatrix::identity(l.rows()).add(&l.scale(1.0 / n))
}

/// `I + L(chi_ell)/n`.
pub fn q_conditional(intensity: &Intensity, grid: &PoissonGrid, ell: usize) -> Result<DenseMatrix> {
    check_ell(ell)?;
    let n = grid.rate();
    if n < intensity.bound() {
        return Err(Error::Precondition(format!(
            "rate {n} is below the uniformization bound {}",
            intensity.bound()
        )));
    }
    if ell > grid.len() {
        return Err(Error::Precondition(format!(
            "step {ell} exceeds the grid length {}",
            grid.len()
        )));
    }
    q_at_time(intensity, n, grid.epoch(ell), ell)
}

fn q_at_time(intensity: &Intensity, n: f64, t: f64, ell: usize) -> Result<DenseMatrix> {
    let q = match intensity {
        Intensity::Separable(sep) => separable_q(sep, sep.capped_lambda(t), n),
        Intensity::General(f) => general_q(&f.eval(t), n),
    };
    check_q(q, ell)
}

/// `I + L(ell/n)/n`.
pub fn q_hat(intensity: &Intensity, n: f64, ell: usize) -> Result<DenseMatrix> {
    check_n(n)?;
    check_ell(ell)?;
    q_at_time(intensity, n, ell as f64 / n, ell)
}

/// `I + E[L(chi_ell)]/n` with `chi_ell ~ Erlang(ell, n)`.
pub fn q_tilde(intensity: &Intensity, n: f64, ell: usize) -> Result<DenseMatrix> {
    check_n(n)?;
    check_ell(ell)?;
    let q = match intensity {
        Intensity::Separable(sep) => {
            let factor = match tilde_factor(sep, n, ell)? {
                Some(f) => f,
                None => {
                    let v = erlang_expectation(ell, n, 1, |s| vec![sep.capped_lambda(s)])?;
                    v[0]
                }
            };
            separable_q(sep, factor, n)
        }
        Intensity::General(f) => {
            if intensity.is_constant() {
                general_q(&f.eval(0.0), n)
            } else {
                let p = f.dim();
                let mean = erlang_expectation(ell, n, p * p, |s| f.eval(s).as_slice().to_vec())?;
                general_q(&DenseMatrix::from_row_major(p, p, mean)?, n)
            }
        }
    };
    check_q(q, ell)
}

/// `E[min(lambda(chi_ell), K)]` in closed form where the family allows it.
///
/// Without an explicit cap the uncapped expectation is used. With a cap the
/// expectation is split at the level where `lambda` crosses `K`, which is
/// exact and reduces to the uncapped value when the cap is never reached.
pub fn tilde_factor(sep: &SeparableSubIntensity, n: f64, ell: usize) -> Result<Option<f64>> {
    let l = ell as f64;
    let cap = sep.explicit_cap();
    let factor = match sep.lambda() {
        Inhomogeneity::Constant => 1.0f64.min(cap.unwrap_or(f64::INFINITY)),
        Inhomogeneity::Gompertz { beta } => {
            let beta = *beta;
            if n <= beta {
                return Err(Error::Domain(format!(
                    "E[exp(beta chi)] diverges for n = {n} <= beta = {beta}"
                )));
            }
            let uncapped = (n / (n - beta)).powi(ell as i32);
            match cap {
                None => uncapped,
                Some(k) if k <= 1.0 => k,
                Some(k) => {
                    let c = k.ln() / beta;
                    uncapped * gamma_lr(l, (n - beta) * c) + k * gamma_ur(l, n * c)
                }
            }
        }
        Inhomogeneity::Weibull { beta } => {
            let beta = *beta;
            let shape = l + beta - 1.0;
            let uncapped = beta * n.powf(1.0 - beta) * (ln_gamma(shape) - ln_gamma(l)).exp();
            match cap {
                Some(k) if beta != 1.0 => {
                    // beta t^(beta-1) = K at t = c
                    let c = (k / beta).powf(1.0 / (beta - 1.0));
                    if beta > 1.0 {
                        uncapped * gamma_lr(shape, n * c) + k * gamma_ur(l, n * c)
                    } else {
                        uncapped * gamma_ur(shape, n * c) + k * gamma_lr(l, n * c)
                    }
                }
                Some(k) => uncapped.min(k),
                None => uncapped,
            }
        }
        Inhomogeneity::Table { starts, values } => {
            let k = cap.unwrap_or(f64::INFINITY);
            let mut acc = 0.0;
            let mut prev_cdf = 0.0;
            for (i, v) in values.iter().enumerate() {
                let next_cdf = match starts.get(i + 1) {
                    Some(&t) => erlang_cdf(ell as u64, n, t),
                    None => 1.0,
                };
                acc += v.min(k) * (next_cdf - prev_cdf);
                prev_cdf = next_cdf;
            }
            acc
        }
        Inhomogeneity::Custom { .. } => return Ok(None),
    };
    if !factor.is_finite() {
        return Err(Error::NumericalConsistency(format!(
            "closed-form factor overflowed at step {ell}"
        )));
    }
    Ok(Some(factor))
}

/// `E[g(chi)]` for `chi ~ Erlang(ell, n)` by composite Simpson with panel
/// doubling over the central `1 - 1e-12` mass.
pub fn erlang_expectation<G>(ell: usize, n: f64, width: usize, g: G) -> Result<Vec<f64>>
where
    G: Fn(f64) -> Vec<f64>,
{
    let a = if ell == 1 {
        0.0
    } else {
        erlang_lower_quantile(ell as u64, n, QUAD_LOWER_TAIL)
    };
    let b = erlang_upper_quantile(ell as u64, n, QUAD_UPPER_TAIL);
    let f = |s: f64| -> Result<Vec<f64>> {
        let w = erlang_logpdf(ell as u64, n, s)?.exp();
        let v = g(s);
        if v.len() != width {
            return Err(Error::Dimension("integrand returned the wrong width".into()));
        }
        Ok(v.into_iter().map(|x| x * w).collect())
    };
    let add = |acc: &mut Vec<f64>, v: &[f64]| {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    };
    let mut panels = 32usize;
    let mut ends = f(a)?;
    add(&mut ends, &f(b)?);
    let h0 = (b - a) / panels as f64;
    let mut odd = vec![0.0; width];
    let mut even = vec![0.0; width];
    for k in 1..panels {
        let v = f(a + k as f64 * h0)?;
        if k % 2 == 1 {
            add(&mut odd, &v);
        } else {
            add(&mut even, &v);
        }
    }
    let simpson = |h: f64, ends: &[f64], odd: &[f64], even: &[f64]| -> Vec<f64> {
        (0..width)
            .map(|i| h / 3.0 * (ends[i] + 4.0 * odd[i] + 2.0 * even[i]))
            .collect::<Vec<f64>>()
    };
    let mut current = simpson(h0, &ends, &odd, &even);
    loop {
        panels *= 2;
        if panels > QUAD_MAX_PANELS {
            return Err(Error::NumericalConsistency(format!(
                "Erlang-weighted quadrature did not converge at step {ell}"
            )));
        }
        let h = (b - a) / panels as f64;
        add(&mut even, &odd.clone());
        odd = vec![0.0; width];
        for k in (1..panels).step_by(2) {
            add(&mut odd, &f(a + k as f64 * h)?);
        }
        let next = simpson(h, &ends, &odd, &even);
        let scale = next.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let change = next
            .iter()
            .zip(&current)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        current = next;
        if change < QUAD_TOL * scale {
            return Ok(current);
        }
    }
}

enum Source {
    Conditional(Arc<PoissonGrid>),
    Hat,
    Tilde,
    Explicit(Vec<Arc<DenseMatrix>>),
}

/// Lazily evaluated, memoized sequence `Q_1, Q_2, ...`.
pub struct QSequence {
    source: Source,
    intensity: Option<Intensity>,
    n: f64,
    dim: usize,
    memo: RwLock<HashMap<usize, Arc<DenseMatrix>>>,
}

impl fmt::Debug for QSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QSequence")
            .field("variant", &self.variant_name())
            .field("n", &self.n)
            .field("dim", &self.dim)
            .finish()
    }
}

impl QSequence {
    fn build(source: Source, intensity: Option<Intensity>, n: f64, dim: usize) -> Self {
        QSequence {
            source,
            intensity,
            n,
            dim,
            memo: RwLock::new(HashMap::new()),
        }
    }

    /// Requires `n >= lambda0`; steps beyond the grid are unavailable.
    pub fn conditional(intensity: &Intensity, grid: PoissonGrid) -> Result<Self> {
        let n = grid.rate();
        if n < intensity.bound() {
            return Err(Error::Precondition(format!(
                "rate {n} is below the uniformization bound {}",
                intensity.bound()
            )));
        }
        Ok(Self::build(
            Source::Conditional(Arc::new(grid)),
            Some(intensity.clone()),
            n,
            intensity.dim(),
        ))
    }

    pub fn hat(intensity: &Intensity, n: f64) -> Result<Self> {
        check_n(n)?;
        Ok(Self::build(Source::Hat, Some(intensity.clone()), n, intensity.dim()))
    }

    pub fn tilde(intensity: &Intensity, n: f64) -> Result<Self> {
        check_n(n)?;
        Ok(Self::build(Source::Tilde, Some(intensity.clone()), n, intensity.dim()))
    }

    /// A finite, user-supplied sequence.
    pub fn explicit(n: f64, qs: Vec<DenseMatrix>) -> Result<Self> {
        check_n(n)?;
        let dim = qs.first().map(DenseMatrix::rows).ok_or_else(|| {
            Error::InvalidInput("explicit sequence must be nonempty".into())
        })?;
        let mut checked = Vec::with_capacity(qs.len());
        for (i, q) in qs.into_iter().enumerate() {
            if q.rows() != dim || q.cols() != dim {
                return Err(Error::Dimension("all Q matrices must share one shape".into()));
            }
            checked.push(Arc::new(check_q(q, i + 1)?));
        }
        Ok(Self::build(Source::Explicit(checked), None, n, dim))
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variant_name(&self) -> &'static str {
        match self.source {
            Source::Conditional(_) => "conditional",
            Source::Hat => "hat",
            Source::Tilde => "tilde",
            Source::Explicit(_) => "explicit",
        }
    }

    /// Last available index, if the sequence is finite.
    pub fn max_index(&self) -> Option<usize> {
        match &self.source {
            Source::Conditional(g) => Some(g.len()),
            Source::Explicit(v) => Some(v.len()),
            _ => None,
        }
    }

    /// `Q_ell` for `ell >= 1`.
    pub fn get(&self, ell: usize) -> Result<Arc<DenseMatrix>> {
        check_ell(ell)?;
        if let Source::Explicit(v) = &self.source {
            return v.get(ell - 1).cloned().ok_or_else(|| {
                Error::Precondition(format!("step {ell} exceeds the sequence length {}", v.len()))
            });
        }
        if let Some(q) = self.memo.read().get(&ell) {
            return Ok(q.clone());
        }
        let intensity = self.intensity.as_ref().expect("model-backed sequence");
        let q = Arc::new(match &self.source {
            Source::Conditional(g) => q_conditional(intensity, g, ell)?,
            Source::Hat => q_hat(intensity, self.n, ell)?,
            Source::Tilde => q_tilde(intensity, self.n, ell)?,
            Source::Explicit(_) => unreachable!(),
        });
        Ok(self.memo.write().entry(ell).or_insert(q).clone())
    }
}

/// Nondecreasing step function given by its jumps.
#[derive(Clone, Debug, PartialEq)]
pub struct StepHazard {
    /// `(time, jump size)`, times nondecreasing.
    pub jumps: Vec<(f64, f64)>,
}

fn sorted_sample(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("sample is empty".into()));
    }
    if let Some(bad) = sample.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("sample value {bad} is not a finite nonnegative real")));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

impl StepHazard {
    pub fn new(jumps: Vec<(f64, f64)>) -> Result<Self> {
        if jumps.is_empty() {
            return Err(Error::InvalidInput("hazard estimator has no jumps".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for &(t, d) in &jumps {
            if !(t >= prev) || !t.is_finite() || !(d >= 0.0) || !d.is_finite() {
                return Err(Error::InvalidInput(
                    "jumps need nondecreasing finite times and finite nonnegative sizes".into(),
                ));
            }
            prev = t;
        }
        Ok(StepHazard { jumps })
    }

    /// Jump `1/(N - i + 1)` at the `i`-th order statistic.
    pub fn nelson_aalen(sample: &[f64]) -> Result<Self> {
        let s = sorted_sample(sample)?;
        let n = s.len();
        let jumps = s
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, 1.0 / (n - i) as f64))
            .collect();
        Ok(StepHazard { jumps })
    }

    /// `-ln(1 - F_N)` for the empirical cdf `F_N`, without the infinite jump
    /// at the sample maximum.
    pub fn neg_log_ecdf(sample: &[f64]) -> Result<Self> {
        let s = sorted_sample(sample)?;
        let n = s.len() as f64;
        let mut jumps = Vec::new();
        let mut prev_h = 0.0;
        let mut i = 0;
        while i < s.len() {
            let mut j = i;
            while j < s.len() && s[j] == s[i] {
                j += 1;
            }
            if j == s.len() {
                break;
            }
            let h = -(1.0 - j as f64 / n).ln();
            jumps.push((s[i], h - prev_h));
            prev_h = h;
            i = j;
        }
        if jumps.is_empty() {
            return Err(Error::DegenerateEstimator(
                "all observations are equal, so -ln(1 - F) has only the infinite jump".into(),
            ));
        }
        Ok(StepHazard { jumps })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.jumps.iter().take_while(|j| j.0 <= t).map(|j| j.1).sum()
    }
}

/// A scalar `Q` value with a flag for whether it had to be clamped into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarQ {
    pub value: f64,
    pub clamped: bool,
}

fn clamp_q(raw: f64) -> ScalarQ {
    let value = raw.clamp(0.0, 1.0);
    ScalarQ {
        value,
        clamped: value != raw,
    }
}

/// Scalar hazard given either as a function or as a step estimator.
pub enum HazardSource<'a> {
    Function(&'a (dyn Fn(f64) -> f64 + Sync)),
    Data(&'a StepHazard),
}

/// `1 - int Poi_{ns}(ell - 1) dH(s)`.
pub fn q_scalar_from_hazard(h: HazardSource<'_>, n: f64, ell: usize) -> Result<ScalarQ> {
    check_n(n)?;
    check_ell(ell)?;
    let raw = match h {
        HazardSource::Function(f) => {
            1.0 - erlang_expectation(ell, n, 1, |s| vec![f(s)])?[0] / n
        }
        HazardSource::Data(h) => {
            let mass: f64 = h
                .jumps
                .iter()
                .map(|&(s, d)| d * crate::numkit::log_poisson_pmf_unchecked(n * s, (ell - 1) as u64).exp())
                .sum();
            1.0 - mass
        }
    };
    Ok(clamp_q(raw))
}

/// `Q_1..Q_L` from a step estimator in one pass over the jumps.
pub fn scalar_q_from_data(h: &StepHazard, n: f64, l: usize) -> Result<Vec<ScalarQ>> {
    check_n(n)?;
    if l == 0 {
        return Err(Error::InvalidInput("L must be positive".into()));
    }
    let mut mass = vec![0.0; l];
    for &(s, d) in &h.jumps {
        if d == 0.0 {
            continue;
        }
        let pmf = poisson_pmf_vec(n * s, l - 1);
        for (m, p) in mass.iter_mut().zip(&pmf) {
            *m += d * p;
        }
    }
    Ok(mass.into_iter().map(|m| clamp_q(1.0 - m)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constant_model, gompertz_model, weibull_model, with_cap};
    use crate::grid::sample_grid;
    use proptest::prelude::*;

    fn gompertz() -> Intensity {
        let s = DenseMatrix::from_rows(&[vec![-0.78, 0.57], vec![0.91, -1.81]]).unwrap();
        gompertz_model(vec![0.42, 0.58], s, 1.0).unwrap().sub
    }

    fn scalar(m: &DenseMatrix) -> f64 {
        m[(0, 0)]
    }

    #[test]
    fn zero_intensity_gives_identity() {
        let z = constant_model(vec![1.0, 0.0], DenseMatrix::zeros(2, 2)).unwrap().sub;
        let g = sample_grid(5.0, 10, 1).unwrap();
        for ell in 1..=10 {
            assert_eq!(q_conditional(&z, &g, ell).unwrap(), DenseMatrix::identity(2));
            assert_eq!(q_hat(&z, 5.0, ell).unwrap(), DenseMatrix::identity(2));
            assert_eq!(q_tilde(&z, 5.0, ell).unwrap(), DenseMatrix::identity(2));
        }
    }

    #[test]
    fn constant_intensity_variants_coincide() {
        let s = DenseMatrix::from_rows(&[vec![-2.0, 1.0], vec![0.5, -1.0]]).unwrap();
        let m = constant_model(vec![1.0, 0.0], s.clone()).unwrap().sub;
        let g = sample_grid(4.0, 50, 2).unwrap();
        let want = DenseMatrix::identity(2).add(&s.scale(1.0 / 4.0));
        for ell in 1..=50 {
            let c = q_conditional(&m, &g, ell).unwrap();
            assert_eq!(c, want);
            assert_eq!(q_hat(&m, 4.0, ell).unwrap(), c);
            assert_eq!(q_tilde(&m, 4.0, ell).unwrap(), c);
        }
    }

    #[test]
    fn capped_scalar_gompertz_conditional() {
        let s = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let m = with_cap(&gompertz_model(vec![1.0], s, 1.0).unwrap(), 30.0).unwrap().sub;
        let g = sample_grid(30.0, 200, 4).unwrap();
        for ell in [1, 17, 90, 200] {
            let t = g.epoch(ell);
            let want = 1.0 - t.exp().min(30.0) / 30.0;
            assert!((scalar(&q_conditional(&m, &g, ell).unwrap()) - want).abs() < 1e-15);
        }
        assert!(matches!(
            q_conditional(&m, &sample_grid(20.0, 3, 1).unwrap(), 1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn hat_gompertz_scalar() {
        let s = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let m = gompertz_model(vec![1.0], s, 1.0).unwrap().sub;
        let q = q_hat(&m, 20.0, 20).unwrap();
        assert!((scalar(&q) - (1.0 - 1f64.exp() / 20.0)).abs() < 1e-15);
    }

    #[test]
    fn tilde_gompertz_first_step() {
        let m = gompertz();
        let Intensity::Separable(sep) = &m else { unreachable!() };
        let f = tilde_factor(sep, 20.0, 1).unwrap().unwrap();
        assert_eq!(f, 20.0 / 19.0);
        let q = q_tilde(&m, 20.0, 1).unwrap();
        let want = DenseMatrix::identity(2).add(&sep.base().scale(f / 20.0));
        assert_eq!(q, want);
        assert!(matches!(q_tilde(&m, 1.0, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn uncapped_gompertz_tilde_turns_invalid() {
        // (20/19)^l * 1.81 exceeds 20 around l = 47
        let qs = QSequence::tilde(&gompertz(), 20.0).unwrap();
        assert!(qs.get(40).is_ok());
        assert!(matches!(qs.get(60), Err(Error::Precondition(_))));
    }

    #[test]
    fn weibull_unit_shape_matches_constant_bitwise() {
        let s = DenseMatrix::from_rows(&[vec![-3.0, 0.1], vec![0.01, -0.1]]).unwrap();
        let w = weibull_model(vec![0.5, 0.5], s.clone(), 1.0).unwrap().sub;
        let c = constant_model(vec![0.5, 0.5], s).unwrap().sub;
        for ell in 1..=300 {
            assert_eq!(q_tilde(&w, 7.0, ell).unwrap(), q_tilde(&c, 7.0, ell).unwrap());
        }
    }

    fn custom_like(sep: &SeparableSubIntensity) -> Intensity {
        let f = match sep.lambda() {
            Inhomogeneity::Gompertz { beta } => {
                let b = *beta;
                Arc::new(move |t: f64| (b * t).exp()) as crate::model::ScalarFn
            }
            Inhomogeneity::Weibull { beta } => {
                let b = *beta;
                Arc::new(move |t: f64| b * t.powf(b - 1.0)) as crate::model::ScalarFn
            }
            _ => unreachable!(),
        };
        Intensity::Separable(
            SeparableSubIntensity::new(
                sep.base().clone(),
                Inhomogeneity::Custom { f, sup: f64::INFINITY },
                // no default cap, to match the uncapped closed forms
                Some(sep.explicit_cap().unwrap_or(f64::MAX)),
            )
            .unwrap(),
        )
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let weib = weibull_model(
            vec![0.5, 0.5],
            DenseMatrix::from_rows(&[vec![-3.0, 0.1], vec![0.01, -0.1]]).unwrap(),
            3.0,
        )
        .unwrap()
        .sub;
        for model in [gompertz(), weib] {
            let Intensity::Separable(sep) = &model else { unreachable!() };
            let quad = custom_like(sep);
            let Intensity::Separable(qsep) = &quad else { unreachable!() };
            for n in [20.0, 100.0] {
                for ell in [1usize, 2, 5, 17, 60, 133, 200] {
                    let closed = tilde_factor(sep, n, ell).unwrap().unwrap();
                    let num = erlang_expectation(ell, n, 1, |s| vec![qsep.capped_lambda(s)]).unwrap()[0];
                    assert!(
                        (closed - num).abs() < 1e-8 * closed.max(1.0),
                        "n={n} l={ell}: {closed} vs {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn capped_closed_forms_match_quadrature() {
        let g = with_cap(
            &gompertz_model(
                vec![0.42, 0.58],
                DenseMatrix::from_rows(&[vec![-0.78, 0.57], vec![0.91, -1.81]]).unwrap(),
                1.0,
            )
            .unwrap(),
            11.0,
        )
        .unwrap()
        .sub;
        let w = with_cap(
            &weibull_model(vec![1.0], DenseMatrix::from_rows(&[vec![-1.0]]).unwrap(), 0.5).unwrap(),
            4.0,
        )
        .unwrap()
        .sub;
        for model in [g, w] {
            let Intensity::Separable(sep) = &model else { unreachable!() };
            let quad = custom_like(sep);
            let Intensity::Separable(qsep) = &quad else { unreachable!() };
            for ell in [1usize, 3, 20, 45, 80, 150] {
                let closed = tilde_factor(sep, 40.0, ell).unwrap().unwrap();
                let num = erlang_expectation(ell, 40.0, 1, |s| vec![qsep.capped_lambda(s)]).unwrap()[0];
                assert!((closed - num).abs() < 1e-8, "l={ell}: {closed} vs {num}");
            }
        }
    }

    #[test]
    fn table_family_exact_sum() {
        let s = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let lam = Inhomogeneity::table(&[(0.0, 1.0), (0.5, 3.0), (1.5, 0.5)]).unwrap();
        let m = Intensity::Separable(SeparableSubIntensity::new(s, lam.clone(), None).unwrap());
        let Intensity::Separable(sep) = &m else { unreachable!() };
        for ell in [1usize, 4, 10, 30] {
            let n = 10.0;
            let want = erlang_cdf(ell as u64, n, 0.5)
                + 3.0 * (erlang_cdf(ell as u64, n, 1.5) - erlang_cdf(ell as u64, n, 0.5))
                + 0.5 * (1.0 - erlang_cdf(ell as u64, n, 1.5));
            let got = tilde_factor(sep, n, ell).unwrap().unwrap();
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn general_matrix_quadrature() {
        let s = DenseMatrix::from_rows(&[vec![-0.78, 0.57], vec![0.91, -1.81]]).unwrap();
        let base = s.clone();
        let f = crate::model::IntensityFunction::new(
            2,
            Arc::new(move |t| base.scale(t.exp())),
            1e6,
            None,
        )
        .unwrap();
        let general = Intensity::General(f);
        let sep = gompertz();
        for ell in [1, 10, 30] {
            let a = q_tilde(&general, 20.0, ell).unwrap();
            let b = q_tilde(&sep, 20.0, ell).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9);
        }
    }

    #[test]
    fn sequence_memo_and_explicit() {
        let qs = QSequence::tilde(&gompertz(), 20.0).unwrap();
        let a = qs.get(5).unwrap();
        let b = qs.get(5).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let e = QSequence::explicit(2.0, vec![DenseMatrix::identity(1); 3]).unwrap();
        assert_eq!(e.max_index(), Some(3));
        assert!(e.get(4).is_err());
        assert!(QSequence::explicit(2.0, vec![DenseMatrix::identity(1).scale(1.5)]).is_err());
    }

    #[test]
    fn scalar_hazard_constant_function() {
        let h = |_: f64| 2.0;
        for ell in [1usize, 3, 40] {
            let q = q_scalar_from_hazard(HazardSource::Function(&h), 50.0, ell).unwrap();
            assert!((q.value - (1.0 - 2.0 / 50.0)).abs() < 1e-10);
            assert!(!q.clamped);
        }
    }

    #[test]
    fn scalar_hazard_single_atom() {
        let (c, s0, n) = (0.7, 0.3, 20.0);
        let h = StepHazard::new(vec![(s0, c)]).unwrap();
        for ell in 1..=15usize {
            let q = q_scalar_from_hazard(HazardSource::Data(&h), n, ell).unwrap();
            let k = (ell - 1) as i32;
            let kern = (n * s0).powi(k) * (-n * s0).exp() / (1..=ell - 1).map(|x| x as f64).product::<f64>();
            assert!((q.value - (1.0 - c * kern)).abs() < 1e-14);
        }
        let batch = scalar_q_from_data(&h, n, 15).unwrap();
        for (ell, b) in batch.iter().enumerate() {
            let q = q_scalar_from_hazard(HazardSource::Data(&h), n, ell + 1).unwrap();
            assert!((q.value - b.value).abs() < 1e-14);
        }
    }

    #[test]
    fn clamping_is_reported() {
        let h = StepHazard::new(vec![(0.0, 5.0)]).unwrap();
        let q = q_scalar_from_hazard(HazardSource::Data(&h), 10.0, 1).unwrap();
        assert_eq!(q.value, 0.0);
        assert!(q.clamped);
    }

    #[test]
    fn exponential_sample_nelson_aalen() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Exp};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let sample: Vec<f64> = (0..5000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        let h = StepHazard::nelson_aalen(&sample).unwrap();
        let n = 10.0;
        let qs = scalar_q_from_data(&h, n, 5).unwrap();
        for q in &qs {
            // kernel mass for small l is dominated by a handful of jumps of size ~1/N;
            // allow a generous Monte Carlo band around 1 - 1/n
            assert!((q.value - (1.0 - 1.0 / n)).abs() < 0.02, "{}", q.value);
        }
    }

    #[test]
    fn estimators() {
        let na = StepHazard::nelson_aalen(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(na.jumps, vec![(1.0, 1.0 / 3.0), (2.0, 0.5), (3.0, 1.0)]);
        let nl = StepHazard::neg_log_ecdf(&[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(nl.jumps.len(), 2);
        assert!((nl.eval(2.0) - (-(0.25f64).ln())).abs() < 1e-15);
        assert!(matches!(
            StepHazard::neg_log_ecdf(&[2.0, 2.0]),
            Err(Error::DegenerateEstimator(_))
        ));
        assert!(StepHazard::nelson_aalen(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn defect_is_one_step_absorption(n in 5.0..50.0f64, ell in 1usize..30) {
            let s = DenseMatrix::from_rows(&[vec![-0.78, 0.57], vec![0.91, -1.81]]).unwrap();
            let m = with_cap(&gompertz_model(vec![0.42, 0.58], s.clone(), 1.0).unwrap(), n / 1.81)
                .unwrap()
                .sub;
            let q = q_tilde(&m, n, ell).unwrap();
            let Intensity::Separable(sep) = &m else { unreachable!() };
            let f = tilde_factor(sep, n, ell).unwrap().unwrap();
            let exit: Vec<f64> = s.row_sums().iter().map(|r| -r * f / n).collect();
            for (j, r) in q.row_sums().iter().enumerate() {
                prop_assert!(*r <= 1.0 + Q_ENTRY_TOL);
                prop_assert!((1.0 - r - exit[j]).abs() < 1e-12);
            }
        }
    }
}
