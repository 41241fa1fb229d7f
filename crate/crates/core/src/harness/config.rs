//! Declarative experiment configuration and its validation.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bandit::{EpisodeSpec, ModelSpec, WarmStartSource, WarmStartSpec};
use crate::distributions::PerturbationSpec;
use crate::environment::{AdversarySpec, MeanTable, MEAN_NORM_SLACK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Directory receiving traces and the summary; created if missing.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write one CSV per seed.
    #[serde(default = "yes")]
    pub traces: bool,
}

fn yes() -> bool {
    true
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            dir: None,
            traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub adversary: AdversarySpec,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub warm_start: WarmStartSpec,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub outputs: Outputs,
}

/// Renders a deserialisation path as a JSON pointer.
pub(crate) fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Enum { variant } => {
                out.push('/');
                out.push_str(variant);
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses JSON text into `T`, reporting the failing location as a pointer.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        Error::config(pointer, e.into_inner().to_string())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("/", format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text)
}

fn check_table(table: &MeanTable, arms: usize, dim: usize, ptr: &str) -> Result<()> {
    if table.len() != arms {
        return Err(Error::config(
            ptr,
            format!("expected {arms} means, got {}", table.len()),
        ));
    }
    for (i, m) in table.iter().enumerate() {
        let p = format!("{ptr}/{i}");
        if m.len() != dim {
            return Err(Error::config(p, format!("expected dimension {dim}, got {}", m.len())));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(p, "entries must be finite"));
        }
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1.0 + MEAN_NORM_SLACK {
            return Err(Error::config(p, format!("mean norm {norm} exceeds 1")));
        }
    }
    Ok(())
}

pub(crate) fn validate_adversary(adv: &AdversarySpec, arms: usize, dim: usize, ptr: &str) -> Result<()> {
    match adv {
        AdversarySpec::FixedMeans { means } => check_table(means, arms, dim, &format!("{ptr}/means")),
        AdversarySpec::LowerBound1 { n } => {
            if *n == 0 {
                return Err(Error::config(format!("{ptr}/n"), "instance size must be >= 1"));
            }
            lower_bound_shape(arms, dim, ptr)
        }
        AdversarySpec::LowerBound2 => lower_bound_shape(arms, dim, ptr),
        AdversarySpec::ScriptedAdaptive { rows } => {
            if rows.is_empty() {
                return Err(Error::config(format!("{ptr}/rows"), "need at least one row"));
            }
            for (r, row) in rows.iter().enumerate() {
                let rp = format!("{ptr}/rows/{r}");
                check_table(&row.default, arms, dim, &format!("{rp}/default"))?;
                for (arm, table) in &row.after_arm {
                    if *arm == 0 || *arm > arms {
                        return Err(Error::config(
                            format!("{rp}/after_arm/{arm}"),
                            format!("arm label must be in 1..={arms}"),
                        ));
                    }
                    check_table(table, arms, dim, &format!("{rp}/after_arm/{arm}"))?;
                }
            }
            Ok(())
        }
    }
}

fn lower_bound_shape(arms: usize, dim: usize, ptr: &str) -> Result<()> {
    if arms != 2 || dim != 1 {
        return Err(Error::config(ptr, "lower-bound instances need 2 arms in dimension 1"));
    }
    Ok(())
}

pub(crate) fn validate_perturbation(p: &PerturbationSpec, ptr: &str) -> Result<()> {
    p.validate()
        .map_err(|(field, msg)| Error::config(format!("{ptr}/{field}"), msg))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every cross-field invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|(ptr, msg)| Error::config(format!("/model{ptr}"), msg))?;
        let (k, d) = (self.model.arms, self.model.dim);
        validate_adversary(&self.adversary, k, d, "/adversary")?;
        validate_perturbation(&self.perturbation, "/perturbation")?;
        if let WarmStartSource::ExplicitData { rows } = &self.warm_start.source {
            let ptr = "/warm_start/source/rows";
            if rows.len() != k {
                return Err(Error::config(ptr, format!("expected data for {k} arms")));
            }
            for (i, arm_rows) in rows.iter().enumerate() {
                if arm_rows.len() != self.warm_start.n {
                    return Err(Error::config(
                        format!("{ptr}/{i}"),
                        format!("expected {} rows", self.warm_start.n),
                    ));
                }
                for (j, row) in arm_rows.iter().enumerate() {
                    if row.x.len() != d || row.x.iter().chain([&row.y]).any(|v| !v.is_finite()) {
                        return Err(Error::config(
                            format!("{ptr}/{i}/{j}"),
                            format!("need {d} finite features and a finite reward"),
                        ));
                    }
                }
            }
        }
        if self.horizon == 0 {
            return Err(Error::config("/horizon", "horizon must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("/seeds", "at least one seed is required"));
        }
        for (i, &c) in self.checkpoints.iter().enumerate() {
            if c == 0 || c > self.horizon {
                return Err(Error::config(
                    format!("/checkpoints/{i}"),
                    format!("checkpoint {c} outside 1..={}", self.horizon),
                ));
            }
        }
        Ok(())
    }

    pub fn episode(&self) -> EpisodeSpec {
        EpisodeSpec {
            model: self.model.clone(),
            adversary: self.adversary.clone(),
            perturbation: self.perturbation,
            warm_start: self.warm_start.clone(),
            horizon: self.horizon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"mode": "single", "dim": 2, "arms": 2, "betas": [[0.6, 0.8]]},
        "adversary": {"kind": "fixed_means", "means": [[1, 0], [0, 1]]},
        "perturbation": {"kind": "gaussian", "sigma": 0.1},
        "horizon": 10,
        "seeds": [1]
    }"#;

    fn with(replace: &str, by: &str) -> String {
        assert!(MINIMAL.contains(replace));
        MINIMAL.replace(replace, by)
    }

    fn pointer(text: &str) -> String {
        match ExperimentConfig::from_json(text).unwrap_err() {
            Error::Config { pointer, .. } => pointer,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.model.noise_s, 1.0);
        assert_eq!(cfg.warm_start.n, 0);
        assert!(cfg.outputs.traces);
    }

    #[test]
    fn beta_norm_violation_points_at_beta() {
        assert_eq!(pointer(&with("[[0.6, 0.8]]", "[[1.5, 0.0]]")), "/model/betas/0");
    }

    #[test]
    fn schema_errors_carry_pointers() {
        assert_eq!(
            pointer(&with("\"sigma\": 0.1", "\"sigma\": \"x\"")),
            "/perturbation/sigma"
        );
        assert_eq!(pointer(&with("\"horizon\": 10", "\"horizon\": -1")), "/horizon");
        assert_eq!(
            pointer(&with("[[1, 0], [0, 1]]", "[[1, 0], [0, 1.2]]")),
            "/adversary/means/1"
        );
        assert_eq!(pointer(&with("\"seeds\": [1]", "\"seeds\": []")), "/seeds");
        assert_eq!(
            pointer(&with("\"seeds\": [1]", "\"seeds\": [1], \"checkpoints\": [5, 11]")),
            "/checkpoints/1"
        );
        assert_eq!(
            pointer(&with(
                "\"kind\": \"gaussian\", \"sigma\": 0.1",
                "\"kind\": \"truncated_rotated\", \"sigma\": 0.5, \"rhat\": 0.1"
            )),
            "/perturbation/rhat"
        );
    }

    #[test]
    fn scripted_adversary_parses_with_arm_keys() {
        let scripted = r#"{"kind": "scripted_adaptive", "rows": [{"default": [[1, 0], [0, 1]], "after_arm": {"2": [[0, 1], [1, 0]]}}]}"#;
        let text = with(r#"{"kind": "fixed_means", "means": [[1, 0], [0, 1]]}"#, scripted);
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        match &cfg.adversary {
            AdversarySpec::ScriptedAdaptive { rows } => assert!(rows[0].after_arm.contains_key(&2)),
            other => panic!("{other:?}"),
        }
        let bad = text.replace("\"default\": [[1, 0]", "\"default\": [[\"a\", 0]");
        assert_eq!(pointer(&bad), "/adversary/rows/0/default/0/0");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert_eq!(
            pointer(&with("\"horizon\": 10", "\"horizon\": 10, \"extra\": 1")),
            "/extra"
        );
    }

    #[test]
    fn pointer_escaping() {
        let text = r#"{"a/b": {"c~d": [0, "x"]}}"#;
        let err = parse_json::<std::collections::BTreeMap<String, std::collections::BTreeMap<String, Vec<u32>>>>(text)
            .unwrap_err();
        match err {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/a~1b/c~0d/1"),
            other => panic!("{other:?}"),
        }
    }
}
