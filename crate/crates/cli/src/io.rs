//! File input, grid parsing and CSV output.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] homjp::Error),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Usage(_) => 2,
            CliError::Lib(e) if e.is_input_error() => 2,
            CliError::Lib(_) => 3,
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `start:stop:step`, keeping every `start + k step` up to `stop` plus half a step.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("grid `{spec}` is not start:stop:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(CliError::Usage(format!(
            "grid `{spec}` needs step > 0 and stop >= start"
        )));
    }
    let count = ((stop - start) / step + 0.5).floor() as usize;
    Ok((0..=count).map(|k| start + k as f64 * step).collect())
}

/// One positive value per line; a non-numeric first line is a header.
pub fn parse_sample(text: &str) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => out.push(v),
            Ok(v) => {
                return Err(CliError::Usage(format!("line {}: {v} is not a positive number", i + 1)));
            }
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(CliError::Usage(format!("line {}: cannot parse `{line}`", i + 1)));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("the data file holds no values".into()));
    }
    Ok(out)
}

/// 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn emit(csv: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, csv).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(csv.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io {
                    path: "stdout".into(),
                    source,
                })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_endpoint_within_half_step() {
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0:0.99:0.25").unwrap().len(), 5);
        assert_eq!(parse_grid("0:0.8:0.25").unwrap().len(), 4);
        assert_eq!(parse_grid("2:2:1").unwrap(), vec![2.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn sample_with_and_without_header() {
        assert_eq!(parse_sample("x\n1.5\n\n2\n").unwrap(), vec![1.5, 2.0]);
        assert_eq!(parse_sample("0.1\n0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_sample("1\nfoo\n").is_err());
        assert!(parse_sample("1\n-2\n").is_err());
        assert!(parse_sample("header\n").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Lib(homjp::Error::Schema("x".into())).exit_code(), 2);
        assert_eq!(CliError::Lib(homjp::Error::NumericalConsistency("x".into())).exit_code(), 3);
        assert_eq!(CliError::Lib(homjp::Error::Precondition("x".into())).exit_code(), 3);
    }
}
