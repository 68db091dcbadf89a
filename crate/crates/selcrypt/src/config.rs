//! Run configuration. Values come from command-line flags first, then the
//! JSON config file, then built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

/// Every tunable a subcommand may read. Unknown keys are rejected so typos
/// do not silently fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub key_seed: Option<u64>,
    pub family: Option<u64>,
    pub fraction: Option<f64>,
    pub tiers: Option<usize>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub step_size: Option<f64>,
    pub batch_size: Option<usize>,
    pub select_epochs: Option<usize>,
    pub select_step: Option<f64>,
    pub trials: Option<usize>,
    pub window: Option<usize>,
    pub levels: Option<usize>,
    pub data_fraction: Option<f64>,
    pub surrogate_family: Option<u64>,
    pub considered: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>, default: T) -> T {
    flag.or_else(|| file.clone()).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), &Some(2), 3), 1);
        assert_eq!(pick(None, &Some(2), 3), 2);
        assert_eq!(pick(None::<i32>, &None, 3), 3);
    }

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 7, "fraction": 0.2, "considered": [0, 2]}"#).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.considered, Some(vec![0, 2]));
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 7}"#).is_err());
    }
}
