//! One function per subcommand, each returning CSV text plus metadata lines.

use std::fs;
use std::path::Path;

use homjp::grid::{rate_experiment as run_rate_experiment, rate_table_csv, sample_grid};
use homjp::iph::{hazard_density_estimate, iph_weights, HazardEstimator};
use homjp::model::{with_cap, Intensity, IphModel, ModelSpec};
use homjp::mph::{mph_density_grid, RewardMatrix};
use homjp::numkit::{poisson_truncation, DenseMatrix};
use homjp::qseq::{QSequence, VariantKind};
use homjp::ruin::{assemble_truncated, cl_simulate_grid, ruin_curve, sample_claim, CLParams};
use homjp::transition::{scan_table_csv, transition_series, unconditional_error_scan};

use crate::io::{fmt, parse_grid, parse_sample, read_text, CliError};
use crate::ModelArgs;

pub struct Output {
    pub csv: String,
    pub meta: Vec<String>,
}

struct Loaded {
    spec: ModelSpec,
    /// As written in the file.
    model: IphModel,
    /// After `--auto-cap`, if requested.
    approx: IphModel,
}

fn load(args: &ModelArgs, n: f64) -> Result<Loaded, CliError> {
    let spec = ModelSpec::from_json(&read_text(&args.model)?)?;
    let model = spec.to_model()?;
    let approx = match &model.sub {
        Intensity::Separable(sep) if args.auto_cap && sep.explicit_cap().is_none() => {
            with_cap(&model, n / sep.base().max_abs_diagonal())?
        }
        _ => model.clone(),
    };
    Ok(Loaded { spec, model, approx })
}

fn model_meta(l: &Loaded) -> Vec<String> {
    vec![
        format!("family: {:?}", l.spec.family),
        format!("lambda0: {}", fmt(l.approx.sub.bound())),
    ]
}

fn nonrandom(intensity: &Intensity, n: f64, variant: VariantKind) -> Result<QSequence, CliError> {
    match variant {
        VariantKind::Hat => Ok(QSequence::hat(intensity, n)?),
        VariantKind::Tilde => Ok(QSequence::tilde(intensity, n)?),
        VariantKind::Conditional => Err(CliError::Usage(
            "this subcommand takes the hat or tilde variant".into(),
        )),
    }
}

pub fn transition(
    args: &ModelArgs,
    n: f64,
    s: f64,
    t: f64,
    variant: VariantKind,
    tol: f64,
    seed: u64,
) -> Result<Output, CliError> {
    let l = load(args, n)?;
    let qs = match variant {
        VariantKind::Conditional => {
            if !(t >= s) || !(s >= 0.0) {
                return Err(CliError::Usage(format!("need 0 <= s <= t, got s={s}, t={t}")));
            }
            let len = poisson_truncation(n * s, tol / 2.0)? + poisson_truncation(n * (t - s), tol / 2.0)?;
            QSequence::conditional(&l.approx.sub, sample_grid(n, len.max(1), seed)?)?
        }
        v => nonrandom(&l.approx.sub, n, v)?,
    };
    let res = transition_series(&qs, s, t, tol)?;
    let mut csv = String::from("i,j,p\n");
    for i in 0..res.matrix.rows() {
        for j in 0..res.matrix.cols() {
            csv.push_str(&format!("{i},{j},{}\n", fmt(res.matrix[(i, j)])));
        }
    }
    let mut meta = model_meta(&l);
    meta.extend([
        format!("variant: {variant}"),
        format!("n: {}", fmt(n)),
        format!("tail_tol: {}", fmt(tol)),
        format!("defect: {}", fmt(res.defect)),
        format!("K_s: {}", res.k_s),
        format!("K_t: {}", res.k_t),
    ]);
    if variant == VariantKind::Conditional {
        meta.push(format!("seed: {seed}"));
    }
    Ok(Output { csv, meta })
}

fn density_csv(ts: &[f64], pdf: &[f64], cdf: &[f64]) -> String {
    let mut csv = String::from("t,pdf,cdf\n");
    for ((t, f), c) in ts.iter().zip(pdf).zip(cdf) {
        csv.push_str(&format!("{},{},{}\n", fmt(*t), fmt(*f), fmt(*c)));
    }
    csv
}

pub fn iph_density(
    args: &ModelArgs,
    n: f64,
    trunc: usize,
    grid: &str,
    variant: VariantKind,
    mixture_out: Option<&Path>,
) -> Result<Output, CliError> {
    let ts = parse_grid(grid)?;
    let l = load(args, n)?;
    let qs = nonrandom(&l.approx.sub, n, variant)?;
    let mix = iph_weights(&l.approx.alpha, &qs, trunc, 0.0)?;
    if let Some(path) = mixture_out {
        let json = serde_json::to_string_pretty(&mix).expect("plain data serializes");
        fs::write(path, json).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let csv = density_csv(&ts, &mix.pdf_grid(&ts)?, &mix.cdf_grid(&ts)?);
    let mut meta = model_meta(&l);
    meta.extend([
        format!("variant: {variant}"),
        format!("n: {}", fmt(n)),
        format!("trunc: {trunc}"),
        format!("defect: {}", fmt(mix.defect)),
        format!("mean: {}", fmt(mix.mean())),
    ]);
    Ok(Output { csv, meta })
}

pub fn hazard_fit(
    data: &Path,
    n: f64,
    estimator: HazardEstimator,
    trunc: Option<usize>,
    grid: Option<&str>,
) -> Result<Output, CliError> {
    let sample = parse_sample(&read_text(data)?)?;
    let max = sample.iter().copied().fold(0.0, f64::max);
    let trunc = trunc.unwrap_or_else(|| {
        let m = n * max;
        (m + 6.0 * m.sqrt()).ceil() as usize + 10
    });
    let ts = match grid {
        Some(g) => parse_grid(g)?,
        None => (0..=200).map(|k| max * k as f64 / 200.0).collect(),
    };
    let fit = hazard_density_estimate(&sample, n, trunc, estimator)?;
    let csv = density_csv(&ts, &fit.mixture.pdf_grid(&ts)?, &fit.mixture.cdf_grid(&ts)?);
    let meta = vec![
        format!("estimator: {estimator:?}"),
        format!("sample_size: {}", sample.len()),
        format!("n: {}", fmt(n)),
        format!("trunc: {trunc}"),
        format!("clamped_q: {}", fit.clamped),
        format!("defect: {}", fmt(fit.mixture.defect)),
    ];
    Ok(Output { csv, meta })
}

#[allow(clippy::too_many_arguments)]
pub fn ruin(
    args: &ModelArgs,
    n: f64,
    trunc: usize,
    rho: f64,
    nu: f64,
    u_grid: &str,
    mc: Option<usize>,
    horizon_claims: usize,
    seed: u64,
    tol: f64,
) -> Result<Output, CliError> {
    let us = parse_grid(u_grid)?;
    let l = load(args, n)?;
    let qs = QSequence::tilde(&l.approx.sub, n)?;
    let gen = assemble_truncated(&l.approx.alpha, &qs, trunc)?;
    let cl = CLParams::new(rho, nu, 0.0)?;
    let curve = ruin_curve(&gen, &cl, &us, tol)?;
    let mean = gen.mean();
    let mut meta = model_meta(&l);
    meta.extend([
        format!("n: {}", fmt(n)),
        format!("trunc: {trunc}"),
        format!("tol: {}", fmt(tol)),
        format!("defect: {}", fmt(gen.defect())),
        format!("mean_claim: {}", fmt(mean)),
        format!("net_profit: {}", fmt(cl.net_profit(mean))),
    ]);
    if curve.certain {
        meta.push("warning: nu E[claim] >= rho, ruin is certain".into());
    }
    let sim = match mc {
        Some(reps) => {
            let model = &l.model;
            let est = cl_simulate_grid(&cl, |rng| sample_claim(rng, model), horizon_claims, reps, seed, &us)?;
            meta.extend([
                format!("mc_replications: {reps}"),
                format!("mc_horizon_claims: {horizon_claims}"),
                format!("mc_seed: {seed}"),
                format!("mc_min_terminal_gain: {}", fmt(est.min_terminal_gain)),
            ]);
            Some(est)
        }
        None => None,
    };
    let mut csv = String::from("u,psi_approx,psi_mc,mc_stderr\n");
    for (k, (u, psi)) in curve.u.iter().zip(&curve.psi).enumerate() {
        let (p, se) = match &sim {
            Some(est) => (fmt(est.psi[k]), fmt(est.stderr[k])),
            None => (String::new(), String::new()),
        };
        csv.push_str(&format!("{},{},{p},{se}\n", fmt(*u), fmt(*psi)));
    }
    Ok(Output { csv, meta })
}

pub fn mph_density(
    args: &ModelArgs,
    n: f64,
    trunc: usize,
    grids: &[&str],
    variant: VariantKind,
) -> Result<Output, CliError> {
    let l = load(args, n)?;
    let rows = l
        .spec
        .r
        .clone()
        .ok_or_else(|| homjp::Error::Schema("field `R` is required for mph-density".into()))?;
    let r = RewardMatrix::new(DenseMatrix::from_rows(&rows).map_err(|e| homjp::Error::Schema(format!("field `R`: {e}")))?)
        .map_err(|e| homjp::Error::Schema(format!("field `R`: {e}")))?;
    if r.states() != l.spec.p {
        return Err(homjp::Error::Schema(format!("field `R` needs {} rows", l.spec.p)).into());
    }
    if grids.len() != r.margins() {
        return Err(CliError::Usage(format!(
            "the model has {} margins but {} grids were given",
            r.margins(),
            grids.len()
        )));
    }
    let axes = grids.iter().map(|g| parse_grid(g)).collect::<Result<Vec<_>, _>>()?;
    let pi = l.spec.initial_law()?;
    let qs = nonrandom(&l.approx.sub, n, variant)?;
    let g = mph_density_grid(&axes, &pi, &qs, &r, trunc)?;
    let m = axes.len();
    let mut csv: String = (1..=m).map(|k| format!("x{k},")).collect();
    csv.push_str("f\n");
    let mut pos = vec![0usize; m];
    for value in &g.values {
        for (k, &i) in pos.iter().enumerate() {
            csv.push_str(&fmt(axes[k][i]));
            csv.push(',');
        }
        csv.push_str(&fmt(*value));
        csv.push('\n');
        for k in (0..m).rev() {
            pos[k] += 1;
            if pos[k] < axes[k].len() {
                break;
            }
            pos[k] = 0;
        }
    }
    let mut meta = model_meta(&l);
    meta.extend([
        format!("variant: {variant}"),
        format!("n: {}", fmt(n)),
        format!("trunc: {trunc}"),
        format!("captured_mass: {}", fmt(g.captured_mass)),
        format!("defect: {}", fmt(g.defect)),
        format!("excluded_mass: {}", fmt(g.excluded_mass)),
    ]);
    if g.excluded_mass > 0.0 {
        meta.push("warning: profiles with a zero-valued margin are left out of the density".into());
    }
    Ok(Output { csv, meta })
}

pub fn rate_experiment(ns: &[f64], eps: f64, reps: usize, seed: u64) -> Result<Output, CliError> {
    if ns.is_empty() {
        return Err(CliError::Usage("--n needs at least one rate".into()));
    }
    let rows = run_rate_experiment(ns, eps, reps, seed)?;
    Ok(Output {
        csv: rate_table_csv(&rows),
        meta: vec![
            format!("epsilon: {}", fmt(eps)),
            format!("replications: {reps}"),
            format!("seed: {seed}"),
        ],
    })
}

pub fn error_scan(
    args: &ModelArgs,
    ns: &[f64],
    t_max: f64,
    cells: usize,
    variant: VariantKind,
    tol: f64,
) -> Result<Output, CliError> {
    if ns.is_empty() {
        return Err(CliError::Usage("--n needs at least one rate".into()));
    }
    let spec = ModelSpec::from_json(&read_text(&args.model)?)?;
    let model = spec.to_model()?;
    let rows = unconditional_error_scan(&model.sub, ns, t_max, cells, variant, tol)?;
    Ok(Output {
        csv: scan_table_csv(&rows),
        meta: vec![
            format!("family: {:?}", spec.family),
            format!("cells: {cells}"),
            format!("tail_tol: {}", fmt(tol)),
        ],
    })
}
