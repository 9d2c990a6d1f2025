//! `train` settings read from a TOML or JSON file. Keys match the flag
//! names; dashes and underscores are interchangeable.

use std::fs;
use std::path::{Path, PathBuf};

use cmdp_core::ModeKind;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub instance: Option<PathBuf>,
    pub mode: Option<ModeKind>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub zeta: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    #[serde(rename = "U")]
    pub u: Option<f64>,
    pub eps1: Option<f64>,
    #[serde(alias = "bonus-scale")]
    pub bonus_scale: Option<f64>,
    #[serde(alias = "warm-start")]
    pub warm_start: Option<bool>,
    #[serde(alias = "eval-every")]
    pub eval_every: Option<u64>,
    #[serde(alias = "record-timing")]
    pub record_timing: Option<bool>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    #[serde(alias = "out-csv")]
    pub out_csv: Option<PathBuf>,
    #[serde(alias = "out-policy")]
    pub out_policy: Option<PathBuf>,
}

impl TrainFile {
    /// Parses JSON for `.json` files and TOML otherwise. Relative paths in
    /// the file are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, Box<dyn std::error::Error>> {
        let text = fs::read_to_string(path)?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.instance, &mut cfg.out, &mut cfg.out_csv, &mut cfg.out_policy]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(&t, "instance = \"i.json\"\nmode = \"strict\"\nepsilon = 0.5\nK = 10\nbonus-scale = 0.1\n").unwrap();
        let j = dir.path().join("c.json");
        fs::write(&j, r#"{"instance": "i.json", "mode": "strict", "epsilon": 0.5, "K": 10, "bonus_scale": 0.1}"#).unwrap();
        for p in [t, j] {
            let c = TrainFile::load(&p).unwrap();
            assert_eq!(c.mode, Some(ModeKind::Strict));
            assert_eq!(c.k, Some(10));
            assert_eq!(c.bonus_scale, Some(0.1));
            assert_eq!(c.instance.unwrap(), dir.path().join("i.json"));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(&t, "epsilon = 0.5\nepsilom = 1\n").unwrap();
        assert!(TrainFile::load(&t).is_err());
    }
}
