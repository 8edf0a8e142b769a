use std::path::Path;

use dvlab::markov::stationary_distribution;
use dvlab::model_io::{parse_distribution, parse_model_spec, parse_reals, ModelSpec};
use dvlab::{Distribution, Observable, RateModel};

use crate::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub struct LoadedModel {
    pub spec: ModelSpec,
    pub model: RateModel,
}

impl LoadedModel {
    pub fn labels(&self) -> &[String] {
        &self.spec.states
    }
}

pub fn load_model(path: &Path) -> Result<LoadedModel, CliError> {
    let spec = parse_model_spec(&read(path)?)?;
    let model = spec.to_model()?;
    Ok(LoadedModel { spec, model })
}

/// A distribution file, or one of the keywords `rho` and `uniform`.
pub fn load_distribution(arg: &str, model: &RateModel) -> Result<Distribution, CliError> {
    let mu = match arg {
        "rho" => stationary_distribution(model)?,
        "uniform" => Distribution::uniform(model.n()),
        path => parse_distribution(&read(Path::new(path))?)?,
    };
    if mu.len() != model.n() {
        return Err(dvlab::Error::DimensionMismatch {
            expected: model.n(),
            found: mu.len(),
        }
        .into());
    }
    Ok(mu)
}

/// Inline values (`1,0,-2`), a single value broadcast to every state, or a file.
pub fn load_observable(arg: &str, n: usize) -> Result<Observable, CliError> {
    let path = Path::new(arg);
    let values = if path.is_file() {
        parse_reals(&read(path)?)?
    } else {
        parse_reals(arg)?
    };
    let values = match values.len() {
        1 => vec![values[0]; n],
        m if m == n => values,
        m => {
            return Err(dvlab::Error::DimensionMismatch { expected: n, found: m }.into());
        }
    };
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("observable value {v} is not finite")));
    }
    Ok(Observable::new(values))
}

/// `start:stop:count` (inclusive, evenly spaced) or a comma-separated list.
pub fn parse_time_grid(arg: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Usage(format!("time grid {arg:?}: {m}"));
    let grid = if arg.contains(':') {
        let parts: Vec<&str> = arg.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:count".into()));
        }
        let start: f64 = parts[0].trim().parse().map_err(|e| bad(format!("{e}")))?;
        let stop: f64 = parts[1].trim().parse().map_err(|e| bad(format!("{e}")))?;
        let count: usize = parts[2].trim().parse().map_err(|e| bad(format!("{e}")))?;
        match count {
            0 => return Err(bad("count must be positive".into())),
            1 => vec![start],
            _ => (0..count)
                .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                .collect(),
        }
    } else {
        parse_reals(arg)?
    };
    if grid.is_empty() {
        return Err(bad("empty".into()));
    }
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(bad("times must be finite and non-negative".into()));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grids() {
        assert_eq!(parse_time_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_time_grid("0.5, 2").unwrap(), vec![0.5, 2.0]);
        assert!(parse_time_grid("0:1").is_err());
        assert!(parse_time_grid("-1,2").is_err());
    }

    #[test]
    fn observables_broadcast() {
        assert_eq!(load_observable("0", 3).unwrap().as_slice(), &[0.0; 3]);
        assert_eq!(load_observable("1,-2", 2).unwrap().as_slice(), &[1.0, -2.0]);
        assert!(load_observable("1,2", 3).is_err());
    }
}
