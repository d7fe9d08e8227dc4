//! Infinite-horizon ruin probabilities for compound Poisson surplus processes
//! whose claims follow a truncated block phase-type law, plus a Monte Carlo
//! reference.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{replication_rng, simulate_path_with, StopReason};
use crate::model::IphModel;
use crate::numkit::{poisson_pmf_vec, poisson_truncation, DenseMatrix, ProbVector};
use crate::qseq::QSequence;

/// Block sub-generator with `-nI` on the diagonal and `nQ_l` on the
/// superdiagonal, cut after `M` blocks. The last block exits at rate `n`.
#[derive(Clone, Debug)]
pub struct TruncatedBlockGenerator {
    n: f64,
    p: usize,
    alpha: Vec<f64>,
    /// `Q_1, ..., Q_{M-1}`
    blocks: Vec<Arc<DenseMatrix>>,
    defect: f64,
}

impl TruncatedBlockGenerator {
    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.p
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.p * self.block_count()
    }

    /// Mass that would survive past block `M` in the untruncated chain.
    pub fn defect(&self) -> f64 {
        self.defect
    }

    /// `(alpha, 0, ..., 0)`.
    pub fn initial(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[..self.p].copy_from_slice(&self.alpha);
        v
    }

    /// Dense `Mp x Mp` sub-generator.
    pub fn dense(&self) -> DenseMatrix {
        let (p, dim) = (self.p, self.dim());
        let mut s = DenseMatrix::zeros(dim, dim);
        for i in 0..dim {
            s[(i, i)] = -self.n;
        }
        for (b, q) in self.blocks.iter().enumerate() {
            for r in 0..p {
                for c in 0..p {
                    s[(b * p + r, (b + 1) * p + c)] = self.n * q[(r, c)];
                }
            }
        }
        s
    }

    /// `s = -S e`.
    pub fn exit_vector(&self) -> Vec<f64> {
        let mut s = vec![self.n; self.dim()];
        for (b, q) in self.blocks.iter().enumerate() {
            for (r, rs) in q.row_sums().iter().enumerate() {
                s[b * self.p + r] = self.n * (1.0 - rs);
            }
        }
        s
    }

    /// Row-vector product `y S`.
    pub fn left_apply(&self, y: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut out: Vec<f64> = y.iter().map(|v| -self.n * v).collect();
        for (b, q) in self.blocks.iter().enumerate() {
            let moved = q.vec_mul(&y[b * p..(b + 1) * p]);
            for (o, m) in out[(b + 1) * p..(b + 2) * p].iter_mut().zip(moved) {
                *o += self.n * m;
            }
        }
        out
    }

    /// Solves `x (-S) = b` block by block: `x_1 = b_1/n`,
    /// `x_j = b_j/n + x_{j-1} Q_{j-1}`.
    pub fn solve_left(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "right-hand side has length {}, expected {}",
                b.len(),
                self.dim()
            )));
        }
        let p = self.p;
        let mut x: Vec<f64> = b.iter().map(|v| v / self.n).collect();
        for (j, q) in self.blocks.iter().enumerate() {
            let carried = q.vec_mul(&x[j * p..(j + 1) * p]);
            for (xi, c) in x[(j + 1) * p..(j + 2) * p].iter_mut().zip(carried) {
                *xi += c;
            }
        }
        Ok(x)
    }

    /// `alpha (-S)^{-1} e`.
    pub fn mean(&self) -> f64 {
        self.solve_left(&self.initial()).expect("matching length").iter().sum()
    }

    /// `(zI - S)^{-1}`: block `(i, j)` with `i <= j` is
    /// `n^{j-i} / (z+n)^{j-i+1} Q_i ... Q_{j-1}`.
    pub fn resolvent(&self, z: f64) -> Result<DenseMatrix> {
        if !(z + self.n > 0.0) {
            return Err(Error::Domain(format!("z = {z} is not in the resolvent set")));
        }
        let (p, m) = (self.p, self.block_count());
        let mut out = DenseMatrix::zeros(self.dim(), self.dim());
        let ratio = self.n / (z + self.n);
        for i in 0..m {
            let mut prod = DenseMatrix::identity(p);
            let mut scale = 1.0 / (z + self.n);
            for j in i..m {
                if j > i {
                    prod = prod.matmul(&self.blocks[j - 1]);
                    scale *= ratio;
                }
                for r in 0..p {
                    for c in 0..p {
                        out[(i * p + r, j * p + c)] = scale * prod[(r, c)];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Truncated generator for the first `m` blocks of the sequence `qs`.
pub fn assemble_truncated(alpha: &ProbVector, qs: &QSequence, m: usize) -> Result<TruncatedBlockGenerator> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one block".into()));
    }
    if alpha.len() != qs.dim() {
        return Err(Error::Dimension("alpha and Q dimensions differ".into()));
    }
    let mut blocks = Vec::with_capacity(m - 1);
    let mut v = alpha.as_slice().to_vec();
    for ell in 1..=m {
        let q = qs.get(ell)?;
        v = q.vec_mul(&v);
        if ell < m {
            blocks.push(q);
        }
    }
    Ok(TruncatedBlockGenerator {
        n: qs.n(),
        p: qs.dim(),
        alpha: alpha.as_slice().to_vec(),
        blocks,
        defect: v.iter().sum::<f64>().max(0.0),
    })
}

/// Smallest block count `M <= m_max` whose defect is below `tol`.
pub fn assemble_until_defect(
    alpha: &ProbVector,
    qs: &QSequence,
    tol: f64,
    m_max: usize,
) -> Result<TruncatedBlockGenerator> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("defect tolerance must be > 0, got {tol}")));
    }
    let mut v = alpha.as_slice().to_vec();
    for m in 1..=m_max {
        v = qs.get(m)?.vec_mul(&v);
        if v.iter().sum::<f64>() < tol {
            return assemble_truncated(alpha, qs, m);
        }
    }
    Err(Error::Precondition(format!(
        "defect still above {tol} after {m_max} blocks"
    )))
}

/// Premium rate, claim arrival rate and initial capital.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CLParams {
    pub rho: f64,
    pub nu: f64,
    pub u: f64,
}

impl CLParams {
    pub fn new(rho: f64, nu: f64, u: f64) -> Result<Self> {
        ensure_finite(rho, "premium rate")?;
        ensure_finite(nu, "arrival rate")?;
        ensure_finite(u, "initial capital")?;
        if !(rho > 0.0) || !(nu > 0.0) || !(u >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "need rho > 0, nu > 0, u >= 0; got rho={rho}, nu={nu}, u={u}"
            )));
        }
        Ok(CLParams { rho, nu, u })
    }

    /// `rho - nu E[claim]`; ruin is certain when this is not positive.
    pub fn net_profit(&self, mean_claim: f64) -> f64 {
        self.rho - self.nu * mean_claim
    }
}

/// Ruin probabilities over a capital grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RuinCurve {
    pub u: Vec<f64>,
    pub psi: Vec<f64>,
    /// `alpha_- e = nu E[claim] / rho`
    pub ladder_mass: f64,
    /// Set when `alpha_- e >= 1`; every entry of `psi` is then 1.
    pub certain: bool,
    pub defect: f64,
}

fn check_ruin_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(Error::InvalidInput(format!("tolerance must lie in (0, 1e-4], got {tol}")));
    }
    Ok(())
}

/// `psi(u) = alpha_- exp((S + s alpha_-) u) e` with
/// `alpha_- = (nu/rho) alpha (-S)^{-1}`, for every `u` in `us`.
///
/// The exponential is applied by uniformization at rate `n` through the
/// block structure, so the dense matrix is never formed.
pub fn ruin_curve(gen: &TruncatedBlockGenerator, cl: &CLParams, us: &[f64], tol: f64) -> Result<RuinCurve> {
    check_ruin_tol(tol)?;
    for &u in us {
        if !(u >= 0.0) || !u.is_finite() {
            return Err(Error::InvalidInput(format!("capital must be finite and >= 0, got {u}")));
        }
    }
    let rhs: Vec<f64> = gen.initial().iter().map(|a| a * cl.nu / cl.rho).collect();
    let ladder = gen.solve_left(&rhs)?;
    let mass: f64 = ladder.iter().sum();
    let base = RuinCurve {
        u: us.to_vec(),
        psi: Vec::new(),
        ladder_mass: mass,
        certain: mass >= 1.0,
        defect: gen.defect(),
    };
    if base.certain {
        return Ok(RuinCurve {
            psi: vec![1.0; us.len()],
            ..base
        });
    }
    let n = gen.n();
    let u_max = us.iter().copied().fold(0.0, f64::max);
    let k_max = if u_max > 0.0 { poisson_truncation(n * u_max, tol)? } else { 0 };
    let exit = gen.exit_vector();
    // g_k = alpha_- P^k e with P = I + (S + s alpha_-)/n
    let mut g = Vec::with_capacity(k_max + 1);
    let mut y = ladder.clone();
    g.push(mass);
    for _ in 0..k_max {
        let ys = gen.left_apply(&y);
        let leak: f64 = y.iter().zip(&exit).map(|(a, b)| a * b).sum();
        for ((yi, si), li) in y.iter_mut().zip(&ys).zip(&ladder) {
            *yi += (si + leak * li) / n;
        }
        g.push(y.iter().sum());
    }
    let psi = us
        .iter()
        .map(|&u| {
            if u == 0.0 {
                return mass;
            }
            let k = poisson_truncation(n * u, tol).map_or(k_max, |k| k.min(k_max));
            let w = poisson_pmf_vec(n * u, k);
            w.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0)
        })
        .collect();
    Ok(RuinCurve { psi, ..base })
}

/// Ruin probability at the capital `cl.u`.
pub fn ruin_probability(gen: &TruncatedBlockGenerator, cl: &CLParams, tol: f64) -> Result<f64> {
    Ok(ruin_curve(gen, cl, &[cl.u], tol)?.psi[0])
}

/// Monte Carlo ruin estimates over a capital grid.
#[derive(Clone, Debug, PartialEq)]
pub struct McRuin {
    pub u: Vec<f64>,
    pub psi: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replications: usize,
    pub horizon_claims: usize,
    /// Smallest `rho t_N - (X_1 + ... + X_N)` among paths not ruined at
    /// `u = 0`. Large positive values mean later ruin is negligible.
    pub min_terminal_gain: f64,
}

/// Lowest value of `rho t - sum of claims` over the first `horizon` claim
/// epochs, and its terminal value.
fn surplus_extremes<F>(rng: &mut ChaCha8Rng, cl: &CLParams, sampler: &F, horizon: usize) -> Result<(f64, f64)>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64>,
{
    let gaps = Exp::new(cl.nu).expect("positive rate");
    let mut t = 0.0;
    let mut claims = 0.0;
    let mut low = f64::INFINITY;
    for _ in 0..horizon {
        t += gaps.sample(rng);
        let x = sampler(rng)?;
        if !(x >= 0.0) {
            return Err(Error::InvalidInput(format!("claim sampler returned {x}")));
        }
        claims += x;
        low = low.min(cl.rho * t - claims);
    }
    Ok((low, cl.rho * t - claims))
}

/// Fraction of `replications` surplus paths that go below zero at one of the
/// first `horizon_claims` claim epochs, for each capital in `us`.
pub fn cl_simulate_grid<F>(
    cl: &CLParams,
    sampler: F,
    horizon_claims: usize,
    replications: usize,
    seed: u64,
    us: &[f64],
) -> Result<McRuin>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    if replications < 2 || horizon_claims == 0 {
        return Err(Error::InvalidInput(
            "need at least two replications and one claim".into(),
        ));
    }
    let paths = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(seed, r as u64);
            surplus_extremes(&mut rng, cl, &sampler, horizon_claims)
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let reps = replications as f64;
    let (psi, stderr) = us
        .iter()
        .map(|&u| {
            let p = paths.iter().filter(|(low, _)| u + low < 0.0).count() as f64 / reps;
            (p, (p * (1.0 - p) / reps).sqrt())
        })
        .unzip();
    let min_terminal_gain = paths
        .iter()
        .filter(|(low, _)| *low >= 0.0)
        .map(|(_, end)| *end)
        .fold(f64::INFINITY, f64::min);
    Ok(McRuin {
        u: us.to_vec(),
        psi,
        stderr,
        replications,
        horizon_claims,
        min_terminal_gain,
    })
}

/// Single-capital version of [`cl_simulate_grid`]; returns the estimate and
/// its standard error.
pub fn cl_simulate<F>(
    cl: &CLParams,
    sampler: F,
    horizon_claims: usize,
    replications: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let mc = cl_simulate_grid(cl, sampler, horizon_claims, replications, seed, &[cl.u])?;
    Ok((mc.psi[0], mc.stderr[0]))
}

/// Draws one absorption time of `model` from an exact path.
pub fn sample_claim<R: Rng + ?Sized>(rng: &mut R, model: &IphModel) -> Result<f64> {
    let (path, stop) = simulate_path_with(rng, &model.sub, &model.alpha, 10_000_000)?;
    match (stop, path.absorption_time()) {
        (StopReason::Absorbed, Some(t)) => Ok(t),
        _ => Err(Error::NumericalConsistency(
            "claim path did not absorb within the jump budget".into(),
        )),
    }
}
