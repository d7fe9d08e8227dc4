//! Reward-transformed multivariate absorption vectors: mixture-of-hypoexponential
//! densities from the uniformized chain, and path simulation.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{occupation_times, replication_rng, simulate_path_with, StopReason};
use crate::model::Intensity;
use crate::numkit::{poisson_pmf_vec, poisson_truncation, DenseMatrix, ProbVector};
use crate::qseq::QSequence;

/// Default bound on stored `(profile, state)` entries per level.
pub const ALPHA_ENTRY_LIMIT: u128 = 10_000_000;

/// Tail mass dropped from the Poisson weights of a hypoexponential density.
const HYPOEXP_TAIL: f64 = 1e-16;

/// Nonnegative `p x m` reward rates `r(i, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardMatrix(DenseMatrix);

impl RewardMatrix {
    pub fn new(r: DenseMatrix) -> Result<Self> {
        if r.rows() == 0 || r.cols() == 0 {
            return Err(Error::Dimension("reward matrix must be nonempty".into()));
        }
        if let Some(bad) = r.as_slice().iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput(format!("reward {bad} is not a finite nonnegative number")));
        }
        Ok(RewardMatrix(r))
    }

    /// All-ones single column.
    pub fn ones(p: usize) -> Self {
        RewardMatrix(DenseMatrix::from_row_major(p, 1, vec![1.0; p]).expect("shape"))
    }

    pub fn states(&self) -> usize {
        self.0.rows()
    }

    pub fn margins(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, state: usize, margin: usize) -> f64 {
        self.0[(state, margin)]
    }
}

/// Visit counts `(i_1, ..., i_p)` with at least one visit.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VisitProfile(Vec<u32>);

impl VisitProfile {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::InvalidInput("a visit profile needs at least one visit".into()));
        }
        Ok(VisitProfile(counts))
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    /// `|i|`
    pub fn size(&self) -> usize {
        self.0.iter().map(|&c| c as usize).sum()
    }
}

/// `alpha_{i; j}` for every profile up to the recursion depth, stored per level.
#[derive(Clone, Debug)]
pub struct AlphaTable {
    p: usize,
    levels: Vec<BTreeMap<VisitProfile, Vec<f64>>>,
}

impl AlphaTable {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn states(&self) -> usize {
        self.p
    }

    /// Profiles of size `ell` with their state vectors.
    pub fn level(&self, ell: usize) -> Option<&BTreeMap<VisitProfile, Vec<f64>>> {
        ell.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    pub fn get(&self, i: &VisitProfile, j: usize) -> f64 {
        self.level(i.size())
            .and_then(|lvl| lvl.get(i))
            .map_or(0.0, |v| v[j])
    }

    /// `sum_{|i| = ell} sum_j alpha_{i; j}`.
    pub fn level_mass(&self, ell: usize) -> f64 {
        self.level(ell)
            .map_or(0.0, |lvl| lvl.values().flat_map(|v| v.iter()).sum())
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Level-by-level recursion with [`ALPHA_ENTRY_LIMIT`].
pub fn alpha_recursion(pi: &ProbVector, qs: &QSequence, depth: usize) -> Result<AlphaTable> {
    alpha_recursion_with_limit(pi, qs, depth, ALPHA_ENTRY_LIMIT)
}

/// `alpha_{e_h; j} = pi_j [h = j]` and, for `i_j > 0`,
/// `alpha_{i; j} = sum_h alpha_{i - e_j; h} [Q_{|i|-1}]_{hj}`.
///
/// Profiles whose state vector is identically zero are not stored.
pub fn alpha_recursion_with_limit(
    pi: &ProbVector,
    qs: &QSequence,
    depth: usize,
    limit: u128,
) -> Result<AlphaTable> {
    if depth == 0 {
        return Err(Error::InvalidInput("depth must be >= 1".into()));
    }
    let p = qs.dim();
    if pi.len() != p {
        return Err(Error::Dimension("pi and Q dimensions differ".into()));
    }
    let needed = binomial((depth + p - 1) as u128, (p - 1) as u128).saturating_mul(p as u128);
    if needed > limit {
        return Err(Error::Capacity { needed, limit });
    }
    let mut first = BTreeMap::new();
    for (j, &pj) in pi.as_slice().iter().enumerate() {
        if pj != 0.0 {
            let mut counts = vec![0; p];
            counts[j] = 1;
            let mut v = vec![0.0; p];
            v[j] = pj;
            first.insert(VisitProfile(counts), v);
        }
    }
    let mut levels = vec![first];
    for ell in 2..=depth {
        let q = qs.get(ell - 1)?;
        let prev = levels.last().expect("nonempty");
        // each (profile, j) entry has the single parent profile - e_j
        let entries: Vec<(VisitProfile, usize, f64)> = prev
            .par_iter()
            .flat_map_iter(|(profile, a)| {
                let moved = q.vec_mul(a);
                moved.into_iter().enumerate().filter(|(_, x)| *x != 0.0).map(|(j, x)| {
                    let mut counts = profile.0.clone();
                    counts[j] += 1;
                    (VisitProfile(counts), j, x)
                }).collect::<Vec<_>>()
            })
            .collect();
        let mut next: BTreeMap<VisitProfile, Vec<f64>> = BTreeMap::new();
        for (profile, j, x) in entries {
            next.entry(profile).or_insert_with(|| vec![0.0; p])[j] = x;
        }
        levels.push(next);
    }
    Ok(AlphaTable { p, levels })
}

/// `beta_{ell; j} = 1 - sum_a [Q_ell]_{ja}`.
fn exit_weights(qs: &QSequence, ell: usize) -> Result<Vec<f64>> {
    Ok(qs.get(ell)?.row_sums().iter().map(|r| 1.0 - r).collect())
}

/// `rho_i = sum_j alpha_{i; j} beta_{|i|; j}`.
pub fn mixture_weight(i: &VisitProfile, table: &AlphaTable, qs: &QSequence) -> Result<f64> {
    if i.counts().len() != table.states() {
        return Err(Error::Dimension("profile length differs from the state count".into()));
    }
    if i.size() > table.depth() {
        return Err(Error::Precondition(format!(
            "profile size {} exceeds the recursion depth {}",
            i.size(),
            table.depth()
        )));
    }
    let beta = exit_weights(qs, i.size())?;
    Ok((0..table.states()).map(|j| table.get(i, j) * beta[j]).sum())
}

/// All nonzero `(profile, rho)` pairs, ordered by size and then profile.
pub fn mixture_weights(table: &AlphaTable, qs: &QSequence) -> Result<Vec<(VisitProfile, f64)>> {
    let mut out = Vec::new();
    for ell in 1..=table.depth() {
        let beta = exit_weights(qs, ell)?;
        for (profile, a) in table.level(ell).expect("in range") {
            let rho: f64 = a.iter().zip(&beta).map(|(x, b)| x * b).sum();
            if rho != 0.0 {
                out.push((profile.clone(), rho));
            }
        }
    }
    Ok(out)
}

/// Stage rates `n / r(j, k)` repeated `i_j` times, over states with `r > 0`.
fn stage_rates(counts: &[u32], k: usize, r: &RewardMatrix, n: f64) -> Vec<f64> {
    counts
        .iter()
        .enumerate()
        .filter(|(j, _)| r.get(*j, k) > 0.0)
        .flat_map(|(j, &c)| std::iter::repeat_n(n / r.get(j, k), c as usize))
        .collect()
}

/// Densities at every `x` of the sum of exponential stages, by uniformizing the
/// bidiagonal stage chain at `rate >= max(stages)`:
/// `f(x) = sum_m Poi_{rate x}(m) g_m` with `g_m = e_1 P^m t`.
fn hypoexp_on_grid(stages: &[f64], rate: f64, xs: &[f64]) -> Result<Vec<f64>> {
    let x_max = xs.iter().copied().fold(0.0, f64::max);
    let k_max = if x_max > 0.0 { poisson_truncation(rate * x_max, HYPOEXP_TAIL)? } else { 0 };
    let last = stages.len() - 1;
    let mut v = vec![0.0; stages.len()];
    v[0] = 1.0;
    let mut g = Vec::with_capacity(k_max + 1);
    g.push(v[last] * stages[last]);
    for _ in 0..k_max {
        // v <- v (I + T/rate), T bidiagonal with -stages on the diagonal
        for s in (0..stages.len()).rev() {
            let stay = v[s] * (1.0 - stages[s] / rate);
            let inflow = if s > 0 { v[s - 1] * stages[s - 1] / rate } else { 0.0 };
            v[s] = stay + inflow;
        }
        g.push(v[last] * stages[last]);
    }
    Ok(xs
        .iter()
        .map(|&x| {
            let k = if x > 0.0 {
                poisson_truncation(rate * x, HYPOEXP_TAIL).map_or(k_max, |k| k.min(k_max))
            } else {
                0
            };
            let w = poisson_pmf_vec(rate * x, k);
            w.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>().max(0.0)
        })
        .collect())
}

/// Density at `x` of `sum_j Erlang(i_j, n / r(j, k))` over states with `r(j, k) > 0`.
pub fn hypoexp_pdf(i: &VisitProfile, margin: usize, r: &RewardMatrix, n: f64, x: f64) -> Result<f64> {
    if i.counts().len() != r.states() || margin >= r.margins() {
        return Err(Error::Dimension("profile or margin does not fit the reward matrix".into()));
    }
    if !(x >= 0.0) || !x.is_finite() || !(n > 0.0) {
        return Err(Error::InvalidInput(format!("need x >= 0 and n > 0, got x={x}, n={n}")));
    }
    let stages = stage_rates(i.counts(), margin, r, n);
    if stages.is_empty() {
        return Err(Error::DegenerateMargin { margin });
    }
    let rate = stages.iter().copied().fold(0.0, f64::max);
    Ok(hypoexp_on_grid(&stages, rate, &[x])?[0])
}

/// Density on the Cartesian product of `axes` (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct MphGrid {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// `sum_i rho_i` over profiles up to the depth.
    pub captured_mass: f64,
    /// Mass of profiles with a margin that is identically zero; those are
    /// left out of `values`.
    pub excluded_mass: f64,
    /// Surviving mass after `depth` steps.
    pub defect: f64,
}

/// `f(x) = sum_{|i| <= D} rho_i prod_k f_{k; i}(x_k)` on a grid.
pub fn mph_density_grid(
    axes: &[Vec<f64>],
    pi: &ProbVector,
    qs: &QSequence,
    r: &RewardMatrix,
    depth: usize,
) -> Result<MphGrid> {
    let m = r.margins();
    if axes.len() != m || r.states() != qs.dim() {
        return Err(Error::Dimension(format!(
            "need one axis per margin ({m}) and a reward row per state"
        )));
    }
    for x in axes.iter().flatten() {
        if !(*x >= 0.0) || !x.is_finite() {
            return Err(Error::InvalidInput(format!("grid value {x} is not finite and >= 0")));
        }
    }
    let table = alpha_recursion(pi, qs, depth)?;
    let weights = mixture_weights(&table, qs)?;
    let n = qs.n();
    let captured: f64 = weights.iter().map(|(_, w)| w).sum();
    // alive at the last visit and not absorbed at the following step
    let last = table.level(depth).expect("depth >= 1").values().fold(vec![0.0; qs.dim()], |mut acc, a| {
        for (s, x) in acc.iter_mut().zip(a) {
            *s += x;
        }
        acc
    });
    let defect: f64 = qs.get(depth)?.vec_mul(&last).iter().sum();

    // index the distinct hypoexponential laws per margin
    let mut keys: Vec<HashMap<Vec<u32>, usize>> = vec![HashMap::new(); m];
    let mut terms: Vec<(f64, Vec<usize>)> = Vec::with_capacity(weights.len());
    let mut excluded = 0.0;
    let mut degenerate_everywhere = vec![true; m];
    for (profile, rho) in &weights {
        let mut idx = Vec::with_capacity(m);
        let mut degenerate = false;
        for k in 0..m {
            let key: Vec<u32> = profile
                .counts()
                .iter()
                .enumerate()
                .map(|(j, &c)| if r.get(j, k) > 0.0 { c } else { 0 })
                .collect();
            if key.iter().all(|&c| c == 0) {
                degenerate = true;
                break;
            }
            degenerate_everywhere[k] = false;
            let next = keys[k].len();
            idx.push(*keys[k].entry(key).or_insert(next));
        }
        if degenerate {
            excluded += rho;
        } else {
            terms.push((*rho, idx));
        }
    }
    if let Some(k) = degenerate_everywhere.iter().position(|&d| d) {
        return Err(Error::DegenerateMargin { margin: k });
    }

    // tables[k][pos * keys + key]: one contiguous row of laws per grid value
    let tables: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            let rate = (0..r.states())
                .filter(|&j| r.get(j, k) > 0.0)
                .map(|j| n / r.get(j, k))
                .fold(0.0, f64::max);
            let mut ordered: Vec<(&Vec<u32>, &usize)> = keys[k].iter().collect();
            ordered.sort_by_key(|(_, &i)| i);
            let by_key = ordered
                .par_iter()
                .map(|(key, _)| hypoexp_on_grid(&stage_rates(key, k, r, n), rate, &axes[k]))
                .collect::<Result<Vec<_>>>()?;
            let width = by_key.len();
            let mut flat = vec![0.0; width * axes[k].len()];
            for (key, column) in by_key.iter().enumerate() {
                for (pos, v) in column.iter().enumerate() {
                    flat[pos * width + key] = *v;
                }
            }
            Ok(flat)
        })
        .collect::<Result<_>>()?;
    let widths: Vec<usize> = keys.iter().map(HashMap::len).collect();
    let rho: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let index: Vec<usize> = terms.iter().flat_map(|t| t.1.iter().copied()).collect();

    let total: usize = axes.iter().map(Vec::len).product();
    let values = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rest = flat;
            let mut rows: Vec<&[f64]> = vec![&[]; m];
            for k in (0..m).rev() {
                let pos = rest % axes[k].len();
                rest /= axes[k].len();
                rows[k] = &tables[k][pos * widths[k]..(pos + 1) * widths[k]];
            }
            rho.iter()
                .zip(index.chunks_exact(m))
                .map(|(w, idx)| w * idx.iter().zip(&rows).map(|(&i, row)| row[i]).product::<f64>())
                .sum()
        })
        .collect();
    Ok(MphGrid {
        axes: axes.to_vec(),
        values,
        captured_mass: captured,
        excluded_mass: excluded,
        defect,
    })
}

/// Density at a single point.
pub fn mph_density(
    x: &[f64],
    pi: &ProbVector,
    qs: &QSequence,
    r: &RewardMatrix,
    depth: usize,
) -> Result<f64> {
    let axes: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    Ok(mph_density_grid(&axes, pi, qs, r, depth)?.values[0])
}

/// Mean of margin `k` under the truncated mixture:
/// `sum_i rho_i sum_j i_j r(j, k) / n`.
pub fn mixture_margin_means(weights: &[(VisitProfile, f64)], r: &RewardMatrix, n: f64) -> Vec<f64> {
    (0..r.margins())
        .map(|k| {
            weights
                .iter()
                .map(|(i, rho)| {
                    rho * i.counts().iter().enumerate().map(|(j, &c)| c as f64 * r.get(j, k)).sum::<f64>()
                })
                .sum::<f64>()
                / n
        })
        .collect()
}

/// How reward paths are generated by [`mph_simulate`].
#[derive(Debug)]
pub enum SimMode<'a> {
    /// Exact paths of the jump process with a cap on transitions.
    Exact { max_jumps: usize },
    /// The uniformized chain stepping with `Q_1, Q_2, ...` at rate `n`, cut
    /// after `depth` visits.
    Approx { qs: &'a QSequence, depth: usize },
}

/// Reward vectors of paths that were absorbed within the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct MphSample {
    pub values: Vec<Vec<f64>>,
    /// Paths still alive at the horizon; they are not in `values`.
    pub excluded: usize,
}

impl MphSample {
    /// Sample mean and standard error per margin.
    pub fn margin_stats(&self) -> Vec<(f64, f64)> {
        let m = self.values.first().map_or(0, Vec::len);
        let len = self.values.len() as f64;
        (0..m)
            .map(|k| {
                let mean = self.values.iter().map(|v| v[k]).sum::<f64>() / len;
                let var = self.values.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (len - 1.0);
                (mean, (var / len).sqrt())
            })
            .collect()
    }
}

fn approx_path<R: Rng + ?Sized>(
    rng: &mut R,
    pi: &ProbVector,
    qs: &QSequence,
    r: &RewardMatrix,
    depth: usize,
) -> Result<Option<Vec<f64>>> {
    let hold = Exp::new(qs.n()).expect("positive rate");
    let mut y = vec![0.0; r.margins()];
    let mut state = pick(rng, pi.as_slice());
    for ell in 1..=depth {
        let Some(j) = state else { return Ok(Some(y)) };
        for (k, yk) in y.iter_mut().enumerate() {
            *yk += r.get(j, k) * hold.sample(rng);
        }
        state = pick(rng, qs.get(ell)?.row(j));
    }
    Ok(if state.is_none() { Some(y) } else { None })
}

/// Index drawn from the sub-probability row `w`; `None` for the leftover mass.
fn pick<R: Rng + ?Sized>(rng: &mut R, w: &[f64]) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return Some(i);
        }
    }
    None
}

/// Simulated `Y_k = int_0^tau r(J(t), k) dt`, one independent stream per path.
pub fn mph_simulate(
    pi: &ProbVector,
    intensity: &Intensity,
    r: &RewardMatrix,
    mode: SimMode<'_>,
    replications: usize,
    seed: u64,
) -> Result<MphSample> {
    if pi.len() != intensity.dim() || r.states() != pi.len() {
        return Err(Error::Dimension("pi, intensity and rewards disagree on the state count".into()));
    }
    if let SimMode::Approx { qs, .. } = &mode {
        if qs.dim() != pi.len() {
            return Err(Error::Dimension("Q sequence has the wrong dimension".into()));
        }
    }
    let draws = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, rep as u64);
            match &mode {
                SimMode::Exact { max_jumps } => {
                    let (path, stop) = simulate_path_with(&mut rng, intensity, pi, *max_jumps)?;
                    if stop != StopReason::Absorbed {
                        return Ok(None);
                    }
                    let occ = occupation_times(&path, pi.len());
                    Ok(Some(
                        (0..r.margins())
                            .map(|k| occ.iter().enumerate().map(|(j, o)| o * r.get(j, k)).sum())
                            .collect(),
                    ))
                }
                SimMode::Approx { qs, depth } => approx_path(&mut rng, pi, qs, r, *depth),
            }
        })
        .collect::<Result<Vec<Option<Vec<f64>>>>>()?;
    let excluded = draws.iter().filter(|d| d.is_none()).count();
    Ok(MphSample {
        values: draws.into_iter().flatten().collect(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iph::iph_weights;
    use crate::model::{constant_model, gompertz_model, with_cap};

    fn two_state() -> (ProbVector, QSequence, Intensity) {
        let s = DenseMatrix::from_rows(&[vec![-3.0, 1.0], vec![0.5, -2.0]]).unwrap();
        let m = with_cap(&gompertz_model(vec![0.4, 0.6], s, 0.7).unwrap(), 5.0).unwrap();
        let qs = QSequence::tilde(&m.sub, 20.0).unwrap();
        (m.alpha, qs, m.sub)
    }

    fn three_state() -> (ProbVector, QSequence, Intensity) {
        let s = DenseMatrix::from_rows(&[
            vec![-4.0, 1.0, 0.5],
            vec![0.3, -2.0, 0.7],
            vec![0.2, 0.4, -3.0],
        ])
        .unwrap();
        let m = constant_model(vec![0.2, 0.5, 0.3], s).unwrap();
        let qs = QSequence::tilde(&m.sub, 6.0).unwrap();
        (m.alpha, qs, m.sub)
    }

    #[test]
    fn first_level_is_pi() {
        let (pi, qs, _) = three_state();
        let t = alpha_recursion(&pi, &qs, 1).unwrap();
        for h in 0..3 {
            let mut c = vec![0; 3];
            c[h] = 1;
            let i = VisitProfile::new(c).unwrap();
            for j in 0..3 {
                assert_eq!(t.get(&i, j), if h == j { pi.as_slice()[j] } else { 0.0 });
            }
        }
    }

    #[test]
    fn single_state_chain_is_geometric() {
        let lam = 2.0;
        let n = 10.0;
        let m = constant_model(vec![1.0], DenseMatrix::from_rows(&[vec![-lam]]).unwrap()).unwrap();
        let qs = QSequence::tilde(&m.sub, n).unwrap();
        let t = alpha_recursion(&m.alpha, &qs, 30).unwrap();
        for ell in 1..=30u32 {
            let i = VisitProfile::new(vec![ell]).unwrap();
            let q = 1.0 - lam / n;
            assert!((t.get(&i, 0) - q.powi(ell as i32 - 1)).abs() < 1e-15);
            let rho = mixture_weight(&i, &t, &qs).unwrap();
            assert!((rho - q.powi(ell as i32 - 1) * lam / n).abs() < 1e-15);
        }
    }

    #[test]
    fn level_masses_match_survival() {
        let (pi, qs, _) = two_state();
        let d = 60;
        let t = alpha_recursion(&pi, &qs, d).unwrap();
        let mut v = pi.as_slice().to_vec();
        for ell in 1..=d {
            let mass: f64 = v.iter().sum();
            assert!((t.level_mass(ell) - mass).abs() < 1e-12, "level {ell}");
            v = qs.get(ell).unwrap().vec_mul(&v);
        }
        let rho: f64 = mixture_weights(&t, &qs).unwrap().iter().map(|(_, w)| w).sum();
        let defect: f64 = v.iter().sum();
        assert!((rho - (1.0 - defect)).abs() < 1e-12);
        let mix = iph_weights(&pi, &qs, d, 0.0).unwrap();
        assert!((mix.defect - defect).abs() < 1e-12);
    }

    #[test]
    fn stochastic_steps_never_absorb() {
        let q = DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let qs = QSequence::explicit(3.0, vec![q; 10]).unwrap();
        let pi = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let t = alpha_recursion(&pi, &qs, 10).unwrap();
        assert!(mixture_weights(&t, &qs).unwrap().is_empty());
    }

    #[test]
    fn capacity_guard() {
        let (pi, qs, _) = three_state();
        let err = alpha_recursion_with_limit(&pi, &qs, 40, 1000).unwrap_err();
        assert_eq!(err, Error::Capacity { needed: 861 * 3, limit: 1000 });
    }

    #[test]
    fn hypoexp_special_cases() {
        let n = 4.0;
        let r = RewardMatrix::new(DenseMatrix::from_rows(&[vec![1.0], vec![0.5]]).unwrap()).unwrap();
        let e1 = VisitProfile::new(vec![1, 0]).unwrap();
        let e11 = VisitProfile::new(vec![2, 0]).unwrap();
        let mixed = VisitProfile::new(vec![1, 1]).unwrap();
        for &x in &[0.0f64, 0.1, 0.7, 2.5] {
            let exp = n * (-n * x).exp();
            assert!((hypoexp_pdf(&e1, 0, &r, n, x).unwrap() - exp).abs() < 1e-13);
            let erl = n * n * x * (-n * x).exp();
            assert!((hypoexp_pdf(&e11, 0, &r, n, x).unwrap() - erl).abs() < 1e-13);
            // rates a = n, b = 2n
            let (a, b) = (n, 2.0 * n);
            let conv = a * b / (b - a) * ((-a * x).exp() - (-b * x).exp());
            assert!((hypoexp_pdf(&mixed, 0, &r, n, x).unwrap() - conv).abs() < 1e-12);
        }
    }

    #[test]
    fn hypoexp_integrates_to_one() {
        let r = RewardMatrix::new(DenseMatrix::from_rows(&[vec![0.3], vec![1.2], vec![1.2]]).unwrap()).unwrap();
        let i = VisitProfile::new(vec![3, 2, 4]).unwrap();
        let n = 5.0;
        let h = 1e-3;
        let xs: Vec<f64> = (0..=20_000).map(|k| k as f64 * h).collect();
        let stages = stage_rates(i.counts(), 0, &r, n);
        let f = hypoexp_on_grid(&stages, n / 0.3, &xs).unwrap();
        let simpson: f64 = f
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let w = if k == 0 || k == f.len() - 1 { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * v
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!((simpson - 1.0).abs() < 1e-6, "{simpson}");
    }

    #[test]
    fn zero_reward_margin_is_degenerate() {
        let (pi, qs, _) = two_state();
        let r = RewardMatrix::new(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap()).unwrap();
        let e = VisitProfile::new(vec![1, 0]).unwrap();
        assert_eq!(hypoexp_pdf(&e, 1, &r, 20.0, 0.5), Err(Error::DegenerateMargin { margin: 1 }));
        assert_eq!(
            mph_density(&[0.3, 0.3], &pi, &qs, &r, 10),
            Err(Error::DegenerateMargin { margin: 1 })
        );
    }

    #[test]
    fn partial_degeneracy_is_excluded_and_reported() {
        let (pi, qs, _) = two_state();
        // state 1 earns nothing on margin 0, so profiles visiting only state 1 drop out
        let r = RewardMatrix::new(DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let g = mph_density_grid(&[vec![0.2], vec![0.2]], &pi, &qs, &r, 40).unwrap();
        let t = alpha_recursion(&pi, &qs, 40).unwrap();
        let want: f64 = mixture_weights(&t, &qs)
            .unwrap()
            .iter()
            .filter(|(i, _)| i.counts()[0] == 0)
            .map(|(_, w)| w)
            .sum();
        assert!(want > 0.0);
        assert!((g.excluded_mass - want).abs() < 1e-15);
    }

    #[test]
    fn univariate_unit_rewards_reduce_to_erlang_mixture() {
        let (pi, qs, _) = two_state();
        let d = 80;
        let mix = iph_weights(&pi, &qs, d, 0.0).unwrap();
        let xs: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let g = mph_density_grid(&[xs.clone()], &pi, &qs, &RewardMatrix::ones(2), d).unwrap();
        for (x, f) in xs.iter().zip(&g.values) {
            assert!((mix.pdf(*x).unwrap() - f).abs() < 1e-12, "x={x}");
        }
        assert!((g.defect - mix.defect).abs() < 1e-12);
    }

    #[test]
    fn bivariate_density_integrates_to_captured_mass() {
        let (pi, qs, _) = three_state();
        let r = RewardMatrix::new(
            DenseMatrix::from_rows(&[vec![0.9, 0.4], vec![0.5, 0.5], vec![0.4, 0.8]]).unwrap(),
        )
        .unwrap();
        let h = 0.025;
        let axis: Vec<f64> = (0..=240).map(|k| k as f64 * h).collect();
        let g = mph_density_grid(&[axis.clone(), axis.clone()], &pi, &qs, &r, 25).unwrap();
        let w = |k: usize| if k == 0 || k == axis.len() - 1 { 0.5 } else { 1.0 };
        let mut integral = 0.0;
        for a in 0..axis.len() {
            for b in 0..axis.len() {
                integral += w(a) * w(b) * g.values[a * axis.len() + b];
            }
        }
        integral *= h * h;
        assert!((integral - g.captured_mass).abs() < 2e-3, "{integral} vs {}", g.captured_mass);
    }

    #[test]
    fn simulated_means_match_mixture() {
        let (pi, qs, sub) = three_state();
        let r = RewardMatrix::new(
            DenseMatrix::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap(),
        )
        .unwrap();
        let depth = 200;
        let t = alpha_recursion(&pi, &qs, depth).unwrap();
        let weights = mixture_weights(&t, &qs).unwrap();
        let captured: f64 = weights.iter().map(|(_, w)| w).sum();
        let means = mixture_margin_means(&weights, &r, qs.n());
        for mode in [SimMode::Exact { max_jumps: 100_000 }, SimMode::Approx { qs: &qs, depth }] {
            let s = mph_simulate(&pi, &sub, &r, mode, 20_000, 3).unwrap();
            for (k, (mean, se)) in s.margin_stats().into_iter().enumerate() {
                let want = means[k] / captured;
                assert!((mean - want).abs() < 4.0 * se, "margin {k}: {mean} vs {want}");
            }
        }
    }

    #[test]
    fn zero_reward_column_gives_zero_margin() {
        let (pi, _, sub) = two_state();
        let r = RewardMatrix::new(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        let s = mph_simulate(&pi, &sub, &r, SimMode::Exact { max_jumps: 10_000 }, 200, 1).unwrap();
        assert!(s.values.iter().all(|v| v[1] == 0.0 && v[0] > 0.0));
    }
}
