//! Poisson grids, the coupled construction of a jump process and its
//! projection onto an independent grid, and the time-change discrepancy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Intensity, IntensityFunction, SeparableSubIntensity};
use crate::numkit::ProbVector;

/// Generator for replication `stream` of an experiment seeded with `seed`.
///
/// Every replication reads its own ChaCha stream, so results do not depend
/// on how replications are scheduled across threads.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Arrival times `chi_1 < chi_2 < ...` of a rate-`n` Poisson process
/// (`chi_0 = 0` is implicit).
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonGrid {
    rate: f64,
    times: Vec<f64>,
}

impl PoissonGrid {
    pub fn new(rate: f64, times: Vec<f64>) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidInput(format!("grid rate must be > 0, got {rate}")));
        }
        let mut prev = 0.0;
        for &t in &times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::InvalidInput(
                    "grid times must be finite, positive and strictly increasing".into(),
                ));
            }
            prev = t;
        }
        Ok(PoissonGrid { rate, times })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Number of arrivals (excluding `chi_0`).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `chi_ell` with `chi_0 = 0`.
    pub fn epoch(&self, ell: usize) -> f64 {
        if ell == 0 {
            0.0
        } else {
            self.times[ell - 1]
        }
    }
}

fn check_rate(n: f64) -> Result<()> {
    if !(n >= 1.0) || !n.is_finite() {
        return Err(Error::InvalidInput(format!("grid rate must be finite and >= 1, got {n}")));
    }
    Ok(())
}

pub fn sample_grid_with<R: Rng + ?Sized>(rng: &mut R, n: f64, count: usize) -> Result<PoissonGrid> {
    check_rate(n)?;
    let exp = Exp::new(n).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut t = 0.0;
    let mut times = Vec::with_capacity(count);
    while times.len() < count {
        let dt: f64 = exp.sample(rng);
        // an exponential draw of exactly zero would break strict monotonicity
        if dt > 0.0 {
            t += dt;
            times.push(t);
        }
    }
    Ok(PoissonGrid { rate: n, times })
}

/// `count` arrivals of a rate-`n` Poisson process.
pub fn sample_grid(n: f64, count: usize, seed: u64) -> Result<PoissonGrid> {
    if count == 0 {
        return Err(Error::InvalidInput("grid count must be positive".into()));
    }
    sample_grid_with(&mut replication_rng(seed, 0), n, count)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum State {
    /// Transient phase, zero-based.
    Phase(usize),
    /// Absorbing cemetery.
    Cemetery,
}

/// Piecewise-constant path: `states[k]` holds on `[times[k], times[k+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub initial: State,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Grid index at which each recorded jump happened.
    pub indices: Vec<usize>,
}

impl PathRecord {
    fn start(initial: State) -> Self {
        PathRecord {
            initial,
            times: Vec::new(),
            states: Vec::new(),
            indices: Vec::new(),
        }
    }

    pub fn state_at(&self, t: f64) -> State {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial
        } else {
            self.states[k - 1]
        }
    }

    /// Time of entry into the cemetery, if it happened.
    pub fn absorption_time(&self) -> Option<f64> {
        if self.initial == State::Cemetery {
            return Some(0.0);
        }
        match self.states.last() {
            Some(State::Cemetery) => self.times.last().copied(),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Absorbed,
    GridExhausted,
}

/// Output of [`simulate_coupled`].
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRun {
    /// Path of the original process, jumping on the `chi` grid.
    pub j: PathRecord,
    /// Projected path, jumping on the `theta` grid.
    pub j_n: PathRecord,
    /// `J(chi_ell)` for `ell = 0, 1, ...` up to the stopping index.
    pub embedded: Vec<State>,
    /// Index `gamma` with `J(chi_gamma) = cemetery` for the first time.
    pub absorption_index: Option<usize>,
    pub stop: StopReason,
}

fn draw_initial<R: Rng + ?Sized>(rng: &mut R, alpha: &ProbVector) -> State {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, a) in alpha.as_slice().iter().enumerate() {
        acc += a;
        if u < acc {
            return State::Phase(i);
        }
    }
    State::Cemetery
}

/// Next state from row `i` of `I + L/lambda0` by inversion of `u`.
fn kernel_step(row: &[f64], i: usize, lambda0: f64, u: f64) -> State {
    let mut acc = 0.0;
    for (j, &x) in row.iter().enumerate() {
        acc += x / lambda0 + if i == j { 1.0 } else { 0.0 };
        if u < acc {
            return State::Phase(j);
        }
    }
    State::Cemetery
}

/// Simulates the jump process on the `chi` grid by thinned uniformization and
/// places its embedded chain on the `theta` grid.
///
/// At each `chi` epoch the kernel `I + L(chi)/lambda0` is consulted with
/// probability `lambda0/n`; otherwise the state is held. Together this is the
/// step law `I + L(chi)/n`.
pub fn simulate_coupled(
    intensity: &IntensityFunction,
    alpha: &ProbVector,
    chi: &PoissonGrid,
    theta: &PoissonGrid,
    seed: u64,
) -> Result<CoupledRun> {
    let mut rng = replication_rng(seed, 0);
    simulate_coupled_with(&mut rng, intensity, alpha, chi, theta)
}

pub fn simulate_coupled_with<R: Rng + ?Sized>(
    rng: &mut R,
    intensity: &IntensityFunction,
    alpha: &ProbVector,
    chi: &PoissonGrid,
    theta: &PoissonGrid,
) -> Result<CoupledRun> {
    if alpha.len() != intensity.dim() {
        return Err(Error::Dimension("alpha and intensity dimensions differ".into()));
    }
    if chi.rate != theta.rate || chi.len() != theta.len() {
        return Err(Error::Precondition(
            "chi and theta grids need the same rate and length".into(),
        ));
    }
    let n = chi.rate;
    let lambda0 = intensity.bound();
    if n < lambda0 {
        return Err(Error::Precondition(format!(
            "grid rate {n} is below the uniformization bound {lambda0}"
        )));
    }
    let thin = lambda0 / n;
    let initial = draw_initial(rng, alpha);
    let mut j = PathRecord::start(initial);
    let mut j_n = PathRecord::start(initial);
    let mut embedded = vec![initial];
    let mut state = initial;
    if state == State::Cemetery {
        return Ok(CoupledRun {
            j,
            j_n,
            embedded,
            absorption_index: Some(0),
            stop: StopReason::Absorbed,
        });
    }
    for ell in 1..=chi.len() {
        let State::Phase(i) = state else { unreachable!() };
        let consult: f64 = rng.random();
        let u: f64 = rng.random();
        let next = if consult < thin {
            let l = intensity.eval(chi.epoch(ell));
            kernel_step(l.row(i), i, lambda0, u)
        } else {
            state
        };
        embedded.push(next);
        if next != state {
            j.times.push(chi.epoch(ell));
            j.states.push(next);
            j.indices.push(ell);
            j_n.times.push(theta.epoch(ell));
            j_n.states.push(next);
            j_n.indices.push(ell);
            state = next;
        }
        if state == State::Cemetery {
            return Ok(CoupledRun {
                j,
                j_n,
                embedded,
                absorption_index: Some(ell),
                stop: StopReason::Absorbed,
            });
        }
    }
    Ok(CoupledRun {
        j,
        j_n,
        embedded,
        absorption_index: None,
        stop: StopReason::GridExhausted,
    })
}

/// Exact path of an absorbing jump process started from `alpha`.
///
/// Separable models with a closed-form cumulative inhomogeneity run the
/// homogeneous chain of the base matrix and map its jump times through the
/// inverse time change. Everything else is thinned at the rate `bound()`.
/// At most `max_jumps` transitions (or thinning epochs) are attempted.
pub fn simulate_path_with<R: Rng + ?Sized>(
    rng: &mut R,
    intensity: &Intensity,
    alpha: &ProbVector,
    max_jumps: usize,
) -> Result<(PathRecord, StopReason)> {
    if alpha.len() != intensity.dim() {
        return Err(Error::Dimension("alpha and intensity dimensions differ".into()));
    }
    let initial = draw_initial(rng, alpha);
    let mut path = PathRecord::start(initial);
    if initial == State::Cemetery {
        return Ok((path, StopReason::Absorbed));
    }
    if let Intensity::Separable(sep) = intensity {
        if sep.cumulative(0.0).is_some() {
            let stop = time_changed_path(rng, sep, &mut path, max_jumps);
            return Ok((path, stop));
        }
    }
    let lambda0 = intensity.bound();
    if !(lambda0 > 0.0) || !lambda0.is_finite() {
        return Err(Error::Precondition(format!(
            "cannot thin at rate {lambda0}; cap the model"
        )));
    }
    let clock = Exp::new(lambda0).expect("positive rate");
    let mut t = 0.0;
    let mut state = initial;
    for _ in 0..max_jumps {
        let State::Phase(i) = state else { break };
        t += clock.sample(rng);
        let l = intensity.at(t);
        let next = kernel_step(l.row(i), i, lambda0, rng.random());
        if next != state {
            path.times.push(t);
            path.states.push(next);
            path.indices.push(path.times.len());
            state = next;
        }
    }
    let stop = if state == State::Cemetery {
        StopReason::Absorbed
    } else {
        StopReason::GridExhausted
    };
    Ok((path, stop))
}

fn time_changed_path<R: Rng + ?Sized>(
    rng: &mut R,
    sep: &SeparableSubIntensity,
    path: &mut PathRecord,
    max_jumps: usize,
) -> StopReason {
    let base = sep.base();
    let mut z = 0.0;
    let mut state = path.initial;
    for k in 1..=max_jumps {
        let State::Phase(i) = state else { unreachable!() };
        let rate = -base[(i, i)];
        if !(rate > 0.0) {
            return StopReason::GridExhausted;
        }
        z += Exp::new(rate).expect("positive rate").sample(rng);
        let t = sep.inverse_cumulative(z).expect("closed form");
        if !t.is_finite() {
            return StopReason::GridExhausted;
        }
        let u: f64 = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = State::Cemetery;
        for (j, &x) in base.row(i).iter().enumerate() {
            if j != i {
                acc += x;
                if u < acc {
                    next = State::Phase(j);
                    break;
                }
            }
        }
        path.times.push(t);
        path.states.push(next);
        path.indices.push(k);
        state = next;
        if state == State::Cemetery {
            return StopReason::Absorbed;
        }
    }
    StopReason::GridExhausted
}

/// Time spent in each transient phase along a path, up to absorption or the
/// last recorded jump.
pub fn occupation_times(path: &PathRecord, dim: usize) -> Vec<f64> {
    let mut occ = vec![0.0; dim];
    let mut state = path.initial;
    let mut last = 0.0;
    for (&t, &s) in path.times.iter().zip(&path.states) {
        if let State::Phase(i) = state {
            occ[i] += t - last;
        }
        last = t;
        state = s;
    }
    occ
}

/// `max_{1 <= ell <= L} |theta_ell - chi_ell|`.
pub fn discrepancy(chi: &PoissonGrid, theta: &PoissonGrid, l: usize) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidInput("L must be positive".into()));
    }
    if chi.len() < l || theta.len() < l {
        return Err(Error::Precondition(format!(
            "L = {l} exceeds grid lengths {} and {}",
            chi.len(),
            theta.len()
        )));
    }
    Ok(chi.times[..l]
        .iter()
        .zip(&theta.times[..l])
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// One row of [`rate_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub n: f64,
    pub epsilon: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    /// `(ln n) n^(-1/2 + epsilon/2)`
    pub normalizer: f64,
}

/// Linear-interpolation sample quantile (Hyndman and Fan type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantiles of the normalized discrepancy over `replications` independent
/// grid pairs with `L = floor(n^(1+epsilon))` arrivals each.
pub fn rate_experiment(
    n_values: &[f64],
    epsilon: f64,
    replications: usize,
    seed: u64,
) -> Result<Vec<RateRow>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if replications == 0 {
        return Err(Error::InvalidInput("need at least one replication".into()));
    }
    n_values
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            check_rate(n)?;
            let l = n.powf(1.0 + epsilon).floor() as usize;
            let normalizer = n.ln() * n.powf(-0.5 + epsilon / 2.0);
            let mut values = (0..replications)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = replication_rng(seed, ((idx as u64) << 32) | rep as u64);
                    let chi = sample_grid_with(&mut rng, n, l)?;
                    let theta = sample_grid_with(&mut rng, n, l)?;
                    Ok(discrepancy(&chi, &theta, l)? / normalizer)
                })
                .collect::<Result<Vec<f64>>>()?;
            values.sort_by(f64::total_cmp);
            Ok(RateRow {
                n,
                epsilon,
                q50: quantile(&values, 0.5),
                q90: quantile(&values, 0.9),
                q99: quantile(&values, 0.99),
                normalizer,
            })
        })
        .collect()
}

pub const RATE_CSV_HEADER: &str = "n,epsilon,q50,q90,q99,normalizer";

pub fn rate_table_csv(rows: &[RateRow]) -> String {
    let mut out = String::from(RATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.n, r.epsilon, r.q50, r.q90, r.q99, r.normalizer
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::DenseMatrix;
    use proptest::prelude::*;

    #[test]
    fn unit_rate_mean_increment() {
        let g = sample_grid(1.0, 1000, 11).unwrap();
        let mean = g.epoch(1000) / 1000.0;
        assert!((mean - 1.0).abs() < 3.0 / 1000f64.sqrt());
    }

    #[test]
    fn single_arrival() {
        let g = sample_grid(100.0, 1, 3).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.epoch(1) > 0.0);
        assert!(sample_grid(0.5, 10, 1).is_err());
    }

    #[test]
    fn tenth_arrival_has_mean_ell_over_n() {
        let n = 25.0;
        let reps = 10_000;
        let xs: Vec<f64> = (0..reps)
            .map(|r| sample_grid_with(&mut replication_rng(5, r), n, 10).unwrap().epoch(10))
            .collect();
        let mean = xs.iter().sum::<f64>() / reps as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - 10.0 / n).abs() < 4.0 * se);
    }

    #[test]
    fn zero_intensity_never_moves() {
        let f = IntensityFunction::constant(DenseMatrix::zeros(2, 2)).unwrap();
        let alpha = ProbVector::new(vec![0.3, 0.7]).unwrap();
        let chi = sample_grid(10.0, 200, 1).unwrap();
        let theta = sample_grid(10.0, 200, 2).unwrap();
        let run = simulate_coupled(&f, &alpha, &chi, &theta, 9).unwrap();
        assert!(run.j.times.is_empty() && run.j_n.times.is_empty());
        assert!(run.embedded.iter().all(|s| *s == run.j.initial));
        assert_eq!(run.stop, StopReason::GridExhausted);
    }

    #[test]
    fn rate_below_bound_is_rejected() {
        let g = DenseMatrix::from_rows(&[vec![-20.0]]).unwrap();
        let f = IntensityFunction::constant(g).unwrap();
        let alpha = ProbVector::new(vec![1.0]).unwrap();
        let chi = sample_grid(10.0, 5, 1).unwrap();
        let r = simulate_coupled(&f, &alpha, &chi, &chi, 1);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn geometric_absorption_index() {
        // one phase, exit rate 1, n = 10: P(gamma <= k) = 1 - (1 - 1/10)^k
        let f = IntensityFunction::constant(DenseMatrix::from_rows(&[vec![-1.0]]).unwrap()).unwrap();
        let alpha = ProbVector::new(vec![1.0]).unwrap();
        let n = 10.0;
        let reps = 20_000u64;
        let k = 7;
        let hits = (0..reps)
            .filter(|&r| {
                let mut rng = replication_rng(21, r);
                let chi = sample_grid_with(&mut rng, n, 200).unwrap();
                let theta = sample_grid_with(&mut rng, n, 200).unwrap();
                let run = simulate_coupled_with(&mut rng, &f, &alpha, &chi, &theta).unwrap();
                matches!(run.absorption_index, Some(g) if g <= k)
            })
            .count();
        let p = 1.0 - 0.9f64.powi(k as i32);
        let phat = hits as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((phat - p).abs() < 4.0 * se, "{phat} vs {p}");
    }

    #[test]
    fn discrepancy_basics() {
        let chi = PoissonGrid::new(2.0, vec![0.1, 0.5, 0.9]).unwrap();
        assert_eq!(discrepancy(&chi, &chi, 3).unwrap(), 0.0);
        let theta = PoissonGrid::new(2.0, vec![0.1, 0.75, 0.9]).unwrap();
        assert!((discrepancy(&chi, &theta, 3).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(discrepancy(&chi, &theta, 4), Err(Error::Precondition(_))));
    }

    #[test]
    fn rate_experiment_shape() {
        let rows = rate_experiment(&[50.0], 0.5, 1, 3).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.q50 >= 0.0 && r.q50 == r.q90 && r.q90 == r.q99);
        let csv = rate_table_csv(&rows);
        assert!(csv.starts_with(RATE_CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn rate_experiment_is_deterministic() {
        let a = rate_experiment(&[30.0, 60.0], 0.5, 16, 8).unwrap();
        let b = rate_experiment(&[30.0, 60.0], 0.5, 16, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
    }

    fn two_phase() -> IntensityFunction {
        let s = DenseMatrix::from_rows(&[vec![-0.78, 0.57], vec![0.91, -1.81]]).unwrap();
        crate::model::gompertz_model(vec![0.42, 0.58], s, 1.0)
            .and_then(|m| crate::model::with_cap(&m, 10.0))
            .unwrap()
            .sub
            .to_function()
    }

    fn absorption_sample(intensity: &Intensity, alpha: &ProbVector, reps: u64, seed: u64) -> Vec<f64> {
        (0..reps)
            .map(|r| {
                let mut rng = replication_rng(seed, r);
                let (path, stop) = simulate_path_with(&mut rng, intensity, alpha, 100_000).unwrap();
                assert_eq!(stop, StopReason::Absorbed);
                path.absorption_time().unwrap()
            })
            .collect()
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (m, (v / xs.len() as f64).sqrt())
    }

    #[test]
    fn exact_paths_match_phase_type_mean() {
        let s = DenseMatrix::from_rows(&[vec![-2.0, 1.5], vec![0.5, -1.0]]).unwrap();
        let alpha = ProbVector::new(vec![0.3, 0.7]).unwrap();
        // alpha (-S)^{-1} e
        let neg = s.scale(-1.0);
        let mean = neg.solve_left(alpha.as_slice()).unwrap().iter().sum::<f64>();
        let sep = SeparableSubIntensity::new(s.clone(), crate::model::Inhomogeneity::Constant, None).unwrap();
        let thinned = Intensity::General(IntensityFunction::constant(s).unwrap());
        for intensity in [Intensity::Separable(sep), thinned] {
            let xs = absorption_sample(&intensity, &alpha, 20_000, 9);
            let (m, se) = mean_and_se(&xs);
            assert!((m - mean).abs() < 4.0 * se, "{m} vs {mean}");
        }
    }

    #[test]
    fn gompertz_time_change_survival() {
        // P(T > t) = exp(-(e^{bt} - 1)/b) for S = (-1)
        let s = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let sep = SeparableSubIntensity::new(s, crate::model::Inhomogeneity::Gompertz { beta: 2.0 }, None).unwrap();
        let alpha = ProbVector::unit(1, 0);
        let xs = absorption_sample(&Intensity::Separable(sep), &alpha, 20_000, 4);
        for &t in &[0.2, 0.5, 1.0] {
            let want = (-(2.0f64 * t).exp_m1() / 2.0).exp();
            let got = xs.iter().filter(|&&x| x > t).count() as f64 / xs.len() as f64;
            let se = (want * (1.0 - want) / xs.len() as f64).sqrt();
            assert!((got - want).abs() < 4.0 * se, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn occupation_sums_to_absorption_time() {
        let s = DenseMatrix::from_rows(&[vec![-2.0, 1.5], vec![0.5, -1.0]]).unwrap();
        let sep = SeparableSubIntensity::new(s, crate::model::Inhomogeneity::Weibull { beta: 1.7 }, None).unwrap();
        let alpha = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let mut rng = replication_rng(1, 1);
        for _ in 0..100 {
            let (path, _) = simulate_path_with(&mut rng, &Intensity::Separable(sep.clone()), &alpha, 1000).unwrap();
            let occ = occupation_times(&path, 2);
            let tau = path.absorption_time().unwrap();
            assert!((occ.iter().sum::<f64>() - tau).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn coupling_invariants(seed in any::<u64>()) {
            let f = two_phase();
            let alpha = ProbVector::new(vec![0.42, 0.58]).unwrap();
            let mut rng = replication_rng(seed, 0);
            let chi = sample_grid_with(&mut rng, 20.0, 400).unwrap();
            let theta = sample_grid_with(&mut rng, 20.0, 400).unwrap();
            let run = simulate_coupled_with(&mut rng, &f, &alpha, &chi, &theta).unwrap();
            // identical embedded sequences: same states at the same grid indices
            prop_assert_eq!(&run.j.states, &run.j_n.states);
            prop_assert_eq!(&run.j.indices, &run.j_n.indices);
            for (k, &ell) in run.j.indices.iter().enumerate() {
                prop_assert_eq!(run.embedded[ell], run.j.states[k]);
                prop_assert_eq!(run.j.times[k], chi.epoch(ell));
                prop_assert_eq!(run.j_n.times[k], theta.epoch(ell));
            }
            // absorption times share the index gamma
            if let Some(g) = run.absorption_index {
                prop_assert_eq!(run.j.absorption_time(), Some(chi.epoch(g)));
                prop_assert_eq!(run.j_n.absorption_time(), Some(theta.epoch(g)));
            }
            // nothing after the cemetery
            if let Some(pos) = run.embedded.iter().position(|s| *s == State::Cemetery) {
                prop_assert_eq!(pos + 1, run.embedded.len());
            }
        }

        #[test]
        fn discrepancy_symmetric(seed in any::<u64>(), l in 1usize..50) {
            let mut rng = replication_rng(seed, 1);
            let a = sample_grid_with(&mut rng, 5.0, 50).unwrap();
            let b = sample_grid_with(&mut rng, 5.0, 50).unwrap();
            prop_assert_eq!(discrepancy(&a, &b, l).unwrap(), discrepancy(&b, &a, l).unwrap());
        }
    }
}
