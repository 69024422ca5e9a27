//! Flat `key = value` config files for experiment specs.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! List values are comma-separated. Recognized keys:
//!
//! ```text
//! dims = 5, 20              # problem dimensions
//! regimes = info_equality, general_sandwich
//! methods = identity, sa_rmsprop, ema_rmsprop:0.999
//! n_max = 500000
//! checkpoint_min = 5000
//! grid_per_decade = 10
//! replications = 50
//! base_seed = 20260814
//! eta0 = 0.2
//! alpha = 0.7
//! clip = 500               # or "none"
//! epsilon = 0.5
//! ridge_before_map = true
//! gain_c = 1.0
//! noise_scale = 1.0
//! out = runs/synth
//! workers = 8
//! data = path/to/fixture.csv   # logistic only
//! ridge = 0.1                  # logistic only
//! alphas = 0.7                 # saturate only
//! betas = 0.6, 0.75, 0.85, 1.0 # saturate only
//! ```
//!
//! Unknown keys are errors, so typos fail fast instead of silently keeping
//! a default.

use std::path::Path;

use super::{ExperimentSpec, HarnessError};
use crate::problems::Regime;

/// Applies a config file on top of `spec`'s current values.
pub fn apply_config_file(spec: &mut ExperimentSpec, path: &Path) -> Result<(), HarnessError> {
    let content = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    apply_config_str(spec, &content)
}

fn bad(line: usize, reason: impl Into<String>) -> HarnessError {
    HarnessError::Config { line, reason: reason.into() }
}

fn parse_list<T: std::str::FromStr>(
    line: usize,
    value: &str,
    what: &str,
) -> Result<Vec<T>, HarnessError> {
    let items: Result<Vec<T>, _> =
        value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect();
    let items = items.map_err(|_| bad(line, format!("cannot parse {what} list from {value:?}")))?;
    if items.is_empty() {
        return Err(bad(line, format!("{what} list is empty")));
    }
    Ok(items)
}

fn parse_scalar<T: std::str::FromStr>(
    line: usize,
    value: &str,
    what: &str,
) -> Result<T, HarnessError> {
    value.trim().parse().map_err(|_| bad(line, format!("cannot parse {what} from {value:?}")))
}

/// Same as [`apply_config_file`] but over in-memory content.
pub fn apply_config_str(spec: &mut ExperimentSpec, content: &str) -> Result<(), HarnessError> {
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| bad(line, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(bad(line, format!("key {key:?} has no value")));
        }
        match key {
            "dims" => spec.dims = parse_list(line, value, "dims")?,
            "regimes" => {
                spec.regimes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<Regime>().map_err(|_| bad(line, format!("unknown regime {s:?}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if spec.regimes.is_empty() {
                    return Err(bad(line, "regimes list is empty"));
                }
            }
            "methods" => {
                let tokens: Vec<String> = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                if tokens.is_empty() {
                    return Err(bad(line, "methods list is empty"));
                }
                for t in &tokens {
                    super::build_method(t, spec.epsilon, spec.ridge_before_map, spec.gain_c)
                        .map_err(|e| bad(line, e.to_string()))?;
                }
                spec.method_tokens = tokens;
            }
            "n_max" => spec.n_max = parse_scalar(line, value, "n_max")?,
            "checkpoint_min" => spec.checkpoint_min = parse_scalar(line, value, "checkpoint_min")?,
            "grid_per_decade" => {
                spec.grid_per_decade = parse_scalar(line, value, "grid_per_decade")?
            }
            "replications" => spec.replications = parse_scalar(line, value, "replications")?,
            "base_seed" => spec.base_seed = parse_scalar(line, value, "base_seed")?,
            "eta0" => spec.eta0 = parse_scalar(line, value, "eta0")?,
            "alpha" => spec.alpha = parse_scalar(line, value, "alpha")?,
            "clip" => {
                spec.clip_norm = if value == "none" {
                    None
                } else {
                    Some(parse_scalar(line, value, "clip")?)
                }
            }
            "epsilon" => spec.epsilon = parse_scalar(line, value, "epsilon")?,
            "ridge_before_map" => {
                spec.ridge_before_map = parse_scalar(line, value, "ridge_before_map")?
            }
            "gain_c" => spec.gain_c = parse_scalar(line, value, "gain_c")?,
            "noise_scale" => spec.noise_scale = parse_scalar(line, value, "noise_scale")?,
            "out" => spec.output_dir = value.into(),
            "workers" => spec.workers = parse_scalar(line, value, "workers")?,
            "data" => spec.data_path = Some(value.into()),
            "ridge" => spec.ridge = parse_scalar(line, value, "ridge")?,
            "alphas" => spec.alphas = parse_list(line, value, "alphas")?,
            "betas" => spec.betas = parse_list(line, value, "betas")?,
            other => return Err(bad(line, format!("unknown key {other:?}"))),
        }
    }
    Ok(())
}
