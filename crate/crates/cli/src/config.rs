use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cpm_core::bears;
use cpm_core::mdp::TabularMdp;

use crate::{Error, Result};

/// Reads a JSON config. A missing file path means all defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BearEnv {
    FuzzyBear,
    AvoidFuzzyBear,
}

impl BearEnv {
    pub fn build(self, p_teddy: f64) -> Result<TabularMdp> {
        let mdp = match self {
            BearEnv::FuzzyBear => bears::fuzzy_bear(p_teddy),
            BearEnv::AvoidFuzzyBear => bears::avoid_fuzzy_bear(p_teddy),
        };
        mdp.map_err(|e| Error::Config(e.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            BearEnv::FuzzyBear => "fuzzy-bear",
            BearEnv::AvoidFuzzyBear => "avoid-fuzzy-bear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Ncpm,
    Cpm,
    ExactNcpm,
    ExactCpm,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Ncpm => "ncpm",
            ModelChoice::Cpm => "cpm",
            ModelChoice::ExactNcpm => "exact-ncpm",
            ModelChoice::ExactCpm => "exact-cpm",
        }
    }
}

/// Which intent table generates the data a model is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataIntent {
    /// The optimal action in every state.
    Optimal,
    /// Forest or home with equal probability, then the right bear action
    /// nine times in ten.
    Mixed,
}

impl DataIntent {
    pub fn table(self, mdp: &TabularMdp) -> Vec<Vec<f64>> {
        match self {
            DataIntent::Optimal => bears::optimal_intent(mdp),
            DataIntent::Mixed => bears::mixed_behavior_intent(),
        }
    }
}

pub fn require(ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(message()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Small {
        n: usize,
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"n": 3, "m": 1}"#).unwrap();
        assert!(matches!(load::<Small>(Some(&path)), Err(Error::Config(_))));
        fs::write(&path, r#"{"n": 3}"#).unwrap();
        assert_eq!(load::<Small>(Some(&path)).unwrap().n, 3);
        assert_eq!(load::<Small>(None).unwrap().n, 0);
    }

    #[test]
    fn model_names_parse() {
        let m: ModelChoice = serde_json::from_str(r#""exact-cpm""#).unwrap();
        assert_eq!(m, ModelChoice::ExactCpm);
        assert!(serde_json::from_str::<ModelChoice>(r#""oracle""#).is_err());
    }
}
