//! Intensity matrix functions, initial laws and the JSON model format.

use std::fmt;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{ensure_finite, Error, Result};
use crate::numkit::{DenseMatrix, ProbVector};

/// Cap applied to unbounded inhomogeneities when none is given.
pub const DEFAULT_CAP: f64 = 1e6;

/// Tolerance used by [`validate_intensity`].
pub const VALIDATION_TOL: f64 = 1e-10;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> DenseMatrix + Send + Sync>;

/// Scalar time change `lambda(t)` multiplying a base subintensity.
#[derive(Clone)]
pub enum Inhomogeneity {
    Constant,
    /// `exp(beta t)`
    Gompertz { beta: f64 },
    /// `beta t^(beta - 1)`
    Weibull { beta: f64 },
    /// Piecewise constant: `values[i]` on `(starts[i], starts[i+1]]`,
    /// `values[0]` at `t = 0`, last value extends to infinity.
    Table { starts: Vec<f64>, values: Vec<f64> },
    /// User function with a declared supremum.
    Custom { f: ScalarFn, sup: f64 },
}

impl fmt::Debug for Inhomogeneity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inhomogeneity::Constant => write!(f, "Constant"),
            Inhomogeneity::Gompertz { beta } => write!(f, "Gompertz {{ beta: {beta} }}"),
            Inhomogeneity::Weibull { beta } => write!(f, "Weibull {{ beta: {beta} }}"),
            Inhomogeneity::Table { starts, values } => {
                write!(f, "Table {{ starts: {starts:?}, values: {values:?} }}")
            }
            Inhomogeneity::Custom { sup, .. } => write!(f, "Custom {{ sup: {sup} }}"),
        }
    }
}

impl Inhomogeneity {
    pub fn table(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("table needs at least one entry".into()));
        }
        if pairs[0].0 != 0.0 {
            return Err(Error::InvalidInput("table must start at t = 0".into()));
        }
        for w in pairs.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidInput(
                    "table times must be strictly increasing".into(),
                ));
            }
        }
        for &(t, v) in pairs {
            ensure_finite(t, "table time")?;
            ensure_finite(v, "table value")?;
            if v < 0.0 {
                return Err(Error::InvalidInput(format!("table value {v} is negative")));
            }
        }
        Ok(Inhomogeneity::Table {
            starts: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        })
    }

    fn check(&self) -> Result<()> {
        match self {
            Inhomogeneity::Gompertz { beta } | Inhomogeneity::Weibull { beta } => {
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidInput(format!("beta must be > 0, got {beta}")));
                }
            }
            Inhomogeneity::Custom { sup, .. } => {
                if !(*sup >= 0.0) {
                    return Err(Error::InvalidInput("declared bound must be >= 0".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Uncapped value at `t >= 0`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Inhomogeneity::Constant => 1.0,
            Inhomogeneity::Gompertz { beta } => (beta * t).exp(),
            Inhomogeneity::Weibull { beta } => {
                if *beta == 1.0 {
                    1.0
                } else {
                    beta * t.powf(beta - 1.0)
                }
            }
            Inhomogeneity::Table { starts, values } => {
                // number of starts strictly below t, minus one
                let idx = starts.partition_point(|&s| s < t);
                values[idx.saturating_sub(1)]
            }
            Inhomogeneity::Custom { f, .. } => f(t),
        }
    }

    /// `sup_t lambda(t)`, possibly infinite.
    pub fn supremum(&self) -> f64 {
        match self {
            Inhomogeneity::Constant => 1.0,
            Inhomogeneity::Gompertz { .. } => f64::INFINITY,
            Inhomogeneity::Weibull { beta } => {
                if *beta == 1.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            Inhomogeneity::Table { values, .. } => values.iter().copied().fold(0.0, f64::max),
            Inhomogeneity::Custom { sup, .. } => *sup,
        }
    }
}

/// `S(t) = min(lambda(t), K) S` for a fixed base subintensity `S`.
#[derive(Clone, Debug)]
pub struct SeparableSubIntensity {
    base: DenseMatrix,
    lambda: Inhomogeneity,
    cap: Option<f64>,
}

impl SeparableSubIntensity {
    pub fn new(base: DenseMatrix, lambda: Inhomogeneity, cap: Option<f64>) -> Result<Self> {
        check_subintensity(&base)?;
        lambda.check()?;
        if let Some(k) = cap {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::InvalidInput(format!("cap must be finite and > 0, got {k}")));
            }
        }
        Ok(SeparableSubIntensity { base, lambda, cap })
    }

    pub fn base(&self) -> &DenseMatrix {
        &self.base
    }

    pub fn lambda(&self) -> &Inhomogeneity {
        &self.lambda
    }

    /// The explicitly requested cap, if any.
    pub fn explicit_cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn effective_cap(&self) -> f64 {
        self.cap.unwrap_or(DEFAULT_CAP)
    }

    pub fn capped_lambda(&self, t: f64) -> f64 {
        self.lambda.eval(t).min(self.effective_cap())
    }

    /// `sup_t min(lambda(t), K)`.
    pub fn lambda_bound(&self) -> f64 {
        self.lambda.supremum().min(self.effective_cap())
    }

    pub fn at(&self, t: f64) -> DenseMatrix {
        self.base.scale(self.capped_lambda(t))
    }

    pub fn bound(&self) -> f64 {
        self.lambda_bound() * self.base.max_abs_diagonal()
    }

    /// `int_0^t min(lambda(s), K) ds`, or `None` for custom functions.
    pub fn cumulative(&self, t: f64) -> Option<f64> {
        let k = self.effective_cap();
        Some(match &self.lambda {
            Inhomogeneity::Constant => k.min(1.0) * t,
            Inhomogeneity::Gompertz { beta } => {
                if k <= 1.0 {
                    return Some(k * t);
                }
                let c = k.ln() / beta;
                if t <= c {
                    (beta * t).exp_m1() / beta
                } else {
                    (k - 1.0) / beta + k * (t - c)
                }
            }
            Inhomogeneity::Weibull { beta } => {
                let b = *beta;
                if b == 1.0 {
                    return Some(k.min(1.0) * t);
                }
                let c = (k / b).powf(1.0 / (b - 1.0));
                match (b > 1.0, t <= c) {
                    (true, true) => t.powf(b),
                    (true, false) => c.powf(b) + k * (t - c),
                    (false, true) => k * t,
                    (false, false) => k * c + t.powf(b) - c.powf(b),
                }
            }
            Inhomogeneity::Table { starts, values } => {
                let mut acc = 0.0;
                for (i, &s) in starts.iter().enumerate() {
                    if s >= t {
                        break;
                    }
                    let end = starts.get(i + 1).copied().unwrap_or(f64::INFINITY).min(t);
                    acc += values[i].min(k) * (end - s);
                }
                acc
            }
            Inhomogeneity::Custom { .. } => return None,
        })
    }

    /// Smallest `t` with `cumulative(t) >= z`; infinite if never reached and
    /// `None` for custom functions.
    pub fn inverse_cumulative(&self, z: f64) -> Option<f64> {
        let k = self.effective_cap();
        Some(match &self.lambda {
            Inhomogeneity::Constant => z / k.min(1.0),
            Inhomogeneity::Gompertz { beta } => {
                if k <= 1.0 {
                    return Some(z / k);
                }
                let zc = (k - 1.0) / beta;
                if z <= zc {
                    (beta * z).ln_1p() / beta
                } else {
                    k.ln() / beta + (z - zc) / k
                }
            }
            Inhomogeneity::Weibull { beta } => {
                let b = *beta;
                if b == 1.0 {
                    return Some(z / k.min(1.0));
                }
                let c = (k / b).powf(1.0 / (b - 1.0));
                if b > 1.0 {
                    let zc = c.powf(b);
                    if z <= zc {
                        z.powf(1.0 / b)
                    } else {
                        c + (z - zc) / k
                    }
                } else if z <= k * c {
                    z / k
                } else {
                    (z - k * c + c.powf(b)).powf(1.0 / b)
                }
            }
            Inhomogeneity::Table { starts, values } => {
                let mut acc = 0.0;
                for (i, &s) in starts.iter().enumerate() {
                    let v = values[i].min(k);
                    let end = starts.get(i + 1).copied().unwrap_or(f64::INFINITY);
                    let piece = v * (end - s);
                    if acc + piece >= z && v > 0.0 {
                        return Some(s + (z - acc) / v);
                    }
                    acc += piece;
                }
                f64::INFINITY
            }
            Inhomogeneity::Custom { .. } => return None,
        })
    }
}

fn check_subintensity(s: &DenseMatrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Dimension("subintensity must be square".into()));
    }
    if !s.is_subgenerator(VALIDATION_TOL) {
        return Err(Error::InvalidInput(
            "matrix needs nonnegative off-diagonals and nonpositive row sums".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntensityKind {
    General,
    Separable,
    Constant,
}

/// Time-indexed intensity or subintensity matrix with a declared bound.
#[derive(Clone)]
pub struct IntensityFunction {
    dim: usize,
    eval: MatrixFn,
    bound: f64,
    lipschitz: Option<f64>,
    kind: IntensityKind,
}

impl fmt::Debug for IntensityFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensityFunction")
            .field("dim", &self.dim)
            .field("bound", &self.bound)
            .field("lipschitz", &self.lipschitz)
            .field("kind", &self.kind)
            .finish()
    }
}

impl IntensityFunction {
    pub fn new(dim: usize, eval: MatrixFn, bound: f64, lipschitz: Option<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("dimension must be positive".into()));
        }
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::InvalidInput(format!("bound must be finite and > 0, got {bound}")));
        }
        Ok(IntensityFunction {
            dim,
            eval,
            bound,
            lipschitz,
            kind: IntensityKind::General,
        })
    }

    pub fn constant(m: DenseMatrix) -> Result<Self> {
        check_subintensity(&m)?;
        let dim = m.rows();
        let bound = m.max_abs_diagonal().max(f64::MIN_POSITIVE);
        Ok(IntensityFunction {
            dim,
            eval: Arc::new(move |_| m.clone()),
            bound,
            lipschitz: Some(0.0),
            kind: IntensityKind::Constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn kind(&self) -> IntensityKind {
        self.kind
    }

    pub fn eval(&self, t: f64) -> DenseMatrix {
        (self.eval)(t)
    }
}

/// The two ways a model's (sub)intensity may be given.
#[derive(Clone, Debug)]
pub enum Intensity {
    Separable(SeparableSubIntensity),
    General(IntensityFunction),
}

impl Intensity {
    pub fn dim(&self) -> usize {
        match self {
            Intensity::Separable(s) => s.base.rows(),
            Intensity::General(f) => f.dim,
        }
    }

    pub fn at(&self, t: f64) -> DenseMatrix {
        match self {
            Intensity::Separable(s) => s.at(t),
            Intensity::General(f) => f.eval(t),
        }
    }

    /// Uniform bound on the diagonal magnitudes.
    pub fn bound(&self) -> f64 {
        match self {
            Intensity::Separable(s) => s.bound(),
            Intensity::General(f) => f.bound,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Intensity::Separable(s) => matches!(s.lambda, Inhomogeneity::Constant),
            Intensity::General(f) => f.kind == IntensityKind::Constant,
        }
    }

    pub fn to_function(&self) -> IntensityFunction {
        match self {
            Intensity::General(f) => f.clone(),
            Intensity::Separable(s) => {
                let kind = if matches!(s.lambda, Inhomogeneity::Constant) {
                    IntensityKind::Constant
                } else {
                    IntensityKind::Separable
                };
                let lipschitz = match s.lambda {
                    Inhomogeneity::Constant => Some(0.0),
                    Inhomogeneity::Gompertz { beta } => {
                        Some(beta * s.effective_cap() * s.base.norm_inf())
                    }
                    _ => None,
                };
                let sep = s.clone();
                IntensityFunction {
                    dim: s.base.rows(),
                    eval: Arc::new(move |t| sep.at(t)),
                    bound: s.bound().max(f64::MIN_POSITIVE),
                    lipschitz,
                    kind,
                }
            }
        }
    }
}

/// Initial law plus subintensity of an absorption-time model.
#[derive(Clone, Debug)]
pub struct IphModel {
    pub alpha: ProbVector,
    pub sub: Intensity,
}

impl IphModel {
    pub fn new(alpha: ProbVector, sub: Intensity) -> Result<Self> {
        if alpha.len() != sub.dim() {
            return Err(Error::Dimension(format!(
                "alpha has length {} but the subintensity is {}x{}",
                alpha.len(),
                sub.dim(),
                sub.dim()
            )));
        }
        Ok(IphModel { alpha, sub })
    }

    pub fn dim(&self) -> usize {
        self.sub.dim()
    }

    /// `s(t) = -S(t) e`.
    pub fn exit_vector(&self, t: f64) -> Vec<f64> {
        self.sub.at(t).row_sums().iter().map(|r| -r).collect()
    }
}

fn separable_model(
    alpha: Vec<f64>,
    base: DenseMatrix,
    lambda: Inhomogeneity,
    cap: Option<f64>,
) -> Result<IphModel> {
    let sub = SeparableSubIntensity::new(base, lambda, cap)?;
    IphModel::new(ProbVector::new(alpha)?, Intensity::Separable(sub))
}

/// `S(t) = S` for all `t`.
pub fn constant_model(alpha: Vec<f64>, s: DenseMatrix) -> Result<IphModel> {
    separable_model(alpha, s, Inhomogeneity::Constant, None)
}

/// `S(t) = exp(beta t) S`.
pub fn gompertz_model(alpha: Vec<f64>, s: DenseMatrix, beta: f64) -> Result<IphModel> {
    separable_model(alpha, s, Inhomogeneity::Gompertz { beta }, None)
}

/// `S(t) = beta t^(beta-1) S`.
pub fn weibull_model(alpha: Vec<f64>, s: DenseMatrix, beta: f64) -> Result<IphModel> {
    separable_model(alpha, s, Inhomogeneity::Weibull { beta }, None)
}

/// Same model with the inhomogeneity capped at `cap`.
pub fn with_cap(model: &IphModel, cap: f64) -> Result<IphModel> {
    match &model.sub {
        Intensity::Separable(s) => {
            let sub = SeparableSubIntensity::new(s.base.clone(), s.lambda.clone(), Some(cap))?;
            IphModel::new(model.alpha.clone(), Intensity::Separable(sub))
        }
        Intensity::General(_) => Err(Error::InvalidInput(
            "caps apply only to separable models".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    NegativeOffDiagonal,
    PositiveDiagonal,
    PositiveRowSum,
    BoundExceeded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub kind: ViolationKind,
    pub row: usize,
    pub value: f64,
}

/// Violations found by [`validate_intensity`]; empty means pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Spot-checks sign structure, row sums and the declared bound.
pub fn validate_intensity(f: &IntensityFunction, sample_times: &[f64]) -> Result<ValidationReport> {
    if sample_times.is_empty() {
        return Err(Error::InvalidInput("no sample times given".into()));
    }
    let tol = VALIDATION_TOL;
    let mut report = ValidationReport::default();
    for &t in sample_times {
        let m = f.eval(t);
        if m.rows() != f.dim || m.cols() != f.dim {
            return Err(Error::Dimension(format!(
                "evaluator returned {}x{} at t = {t}, expected {}x{}",
                m.rows(),
                m.cols(),
                f.dim,
                f.dim
            )));
        }
        let mut push = |kind, row, value| {
            report.violations.push(Violation { t, kind, row, value });
        };
        for i in 0..f.dim {
            let row = m.row(i);
            if row.iter().any(|x| !x.is_finite()) {
                push(ViolationKind::NonFinite, i, f64::NAN);
                continue;
            }
            for (j, &x) in row.iter().enumerate() {
                if j != i && x < -tol {
                    push(ViolationKind::NegativeOffDiagonal, i, x);
                }
            }
            let d = row[i];
            if d > tol {
                push(ViolationKind::PositiveDiagonal, i, d);
            }
            let s: f64 = row.iter().sum();
            if s > tol {
                push(ViolationKind::PositiveRowSum, i, s);
            }
            if d.abs() > f.bound * (1.0 + tol) + tol {
                push(ViolationKind::BoundExceeded, i, d);
            }
        }
    }
    Ok(report)
}

/// JSON model description.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub p: usize,
    pub alpha: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub table: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default, rename = "R")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Constant,
    Gompertz,
    Weibull,
    Table,
}

fn default_family() -> Family {
    Family::Constant
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| {
            schema(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        spec.check_shapes()?;
        Ok(spec)
    }

    fn check_shapes(&self) -> Result<()> {
        let p = self.p;
        if p == 0 {
            return Err(schema("field `p`: must be >= 1"));
        }
        if self.alpha.len() != p {
            return Err(schema(format!(
                "field `alpha`: expected {p} entries, got {}",
                self.alpha.len()
            )));
        }
        if self.s.len() != p || self.s.iter().any(|r| r.len() != p) {
            return Err(schema(format!("field `S`: expected a {p}x{p} array")));
        }
        match self.family {
            Family::Gompertz | Family::Weibull if self.beta.is_none() => {
                return Err(schema("field `beta`: required for this family"));
            }
            Family::Table if self.table.is_none() => {
                return Err(schema("field `table`: required for family \"table\""));
            }
            _ => {}
        }
        if let Some(r) = &self.r {
            let m = r.first().map_or(0, Vec::len);
            if r.len() != p || m == 0 || r.iter().any(|row| row.len() != m) {
                return Err(schema(format!("field `R`: expected {p} rows of equal positive length")));
            }
        }
        if let Some(pi) = &self.pi {
            if pi.len() != p {
                return Err(schema(format!("field `pi`: expected {p} entries, got {}", pi.len())));
            }
        }
        Ok(())
    }

    pub fn base_matrix(&self) -> Result<DenseMatrix> {
        DenseMatrix::from_rows(&self.s).map_err(|e| schema(format!("field `S`: {e}")))
    }

    pub fn inhomogeneity(&self) -> Result<Inhomogeneity> {
        Ok(match self.family {
            Family::Constant => Inhomogeneity::Constant,
            Family::Gompertz => Inhomogeneity::Gompertz {
                beta: self.beta.unwrap_or_default(),
            },
            Family::Weibull => Inhomogeneity::Weibull {
                beta: self.beta.unwrap_or_default(),
            },
            Family::Table => Inhomogeneity::table(self.table.as_deref().unwrap_or_default())
                .map_err(|e| schema(format!("field `table`: {e}")))?,
        })
    }

    pub fn to_model(&self) -> Result<IphModel> {
        let base = self.base_matrix()?;
        let lambda = self.inhomogeneity()?;
        let sub = SeparableSubIntensity::new(base, lambda, self.cap)
            .map_err(|e| schema(format!("fields `S`/`beta`/`cap`: {e}")))?;
        let alpha = ProbVector::new(self.alpha.clone())
            .map_err(|e| schema(format!("field `alpha`: {e}")))?;
        IphModel::new(alpha, Intensity::Separable(sub))
    }

    /// Initial law for the multivariate model: `pi` if given, else `alpha`.
    pub fn initial_law(&self) -> Result<ProbVector> {
        let v = self.pi.clone().unwrap_or_else(|| self.alpha.clone());
        ProbVector::new(v).map_err(|e| schema(format!("field `pi`: {e}")))
    }
}
