//! Layered run configuration: built-in defaults, then a TOML file, then
//! `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dti::{CollectConfig, DtiTrainConfig};
use crate::error::{PerpError, Result};
use crate::eval::{EvalConfig, PolicyKind};
use crate::pcp::PcpTrainConfig;
use crate::perp::PerpTrainConfig;
use crate::ring::{IdmParams, RingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DtiSection {
    pub collect: CollectConfig,
    pub train: DtiTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub policies: Vec<PolicyKind>,
    pub deltas: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.to_vec(),
            deltas: vec![20],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Checkpoints, datasets and logs.
    pub artifacts: PathBuf,
    /// Comparison CSV; empty means `<artifacts>/report.csv`.
    pub report: PathBuf,
    /// Per-episode evaluation trace dump; empty disables it.
    pub traces: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            artifacts: PathBuf::from("artifacts"),
            report: PathBuf::new(),
            traces: PathBuf::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Worker threads; 0 means all available cores.
    pub workers: usize,
    pub env: RingConfig,
    pub idm: IdmParams,
    pub pcp: PcpTrainConfig,
    pub dti: DtiSection,
    pub perp: PerpTrainConfig,
    pub eval: EvalConfig,
    pub compare: CompareSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            env: RingConfig::default(),
            idm: IdmParams::default(),
            pcp: PcpTrainConfig::default(),
            dti: DtiSection::default(),
            perp: PerpTrainConfig::default(),
            eval: EvalConfig::default(),
            compare: CompareSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    /// Reduced budget that fits a single workstation: fewer iterations,
    /// larger batches, and short evaluations.
    pub fn desk_scale() -> Self {
        let mut c = Self::default();
        c.pcp.iterations = 200;
        c.pcp.episodes_per_iteration = 32;
        c.pcp.ppo.learning_rate = 3e-4;
        c.perp.iterations = 50;
        c.perp.ppo.learning_rate = 3e-4;
        c.eval.episodes = 20;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| PerpError::Config(format!("invalid config syntax: {}", e.message())))?;
        Self::from_table(value)
    }

    /// Parses `text` as a layer over `base`: keys absent from the file keep
    /// `base`'s values.
    pub fn layered(base: &Self, text: &str) -> Result<Self> {
        let layer: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| PerpError::Config(format!("invalid config syntax: {}", e.message())))?;
        let mut merged = base.to_table();
        merge(&mut merged, layer);
        Self::from_table(merged)
    }

    pub fn load(path: &Path, base: &Self) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PerpError::io(path, e))?;
        Self::layered(base, &text).map_err(|e| match e {
            PerpError::Config(m) => PerpError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            match unknown_field(&inner) {
                Some(key) if path == key || path.ends_with(&format!(".{key}")) => {
                    PerpError::Config(format!("unknown config key `{path}`"))
                }
                Some(key) if path == "." => PerpError::Config(format!("unknown config key `{key}`")),
                Some(key) => PerpError::Config(format!("unknown config key `{path}.{key}`")),
                None => PerpError::Config(format!("bad value for `{path}`: {inner}")),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        match toml::Value::try_from(self).expect("config serializes") {
            toml::Value::Table(t) => t,
            _ => unreachable!("struct serializes to a table"),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one `section.key=value` override; the value is parsed as a
    /// TOML literal, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| PerpError::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let mut table = self.to_table();
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| PerpError::Config(format!("empty key in `{assignment}`")))?;
        let mut cursor = &mut table;
        let mut walked = String::new();
        for p in parts {
            if !walked.is_empty() {
                walked.push('.');
            }
            walked.push_str(p);
            cursor = match cursor.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
                toml::Value::Table(t) => t,
                _ => return Err(PerpError::Config(format!("`{walked}` is not a section"))),
            };
        }
        cursor.insert(last.to_string(), value);
        *self = Self::from_table(table)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.idm.validate()?;
        self.pcp.ppo.validate()?;
        self.perp.ppo.validate()?;
        if self.compare.deltas.contains(&0) {
            return Err(PerpError::Config("compare.deltas must be positive".into()));
        }
        Ok(())
    }

    /// Sets the hold length in every stage.
    pub fn set_delta(&mut self, delta: usize) {
        self.pcp.delta = delta;
        self.dti.collect.delta = delta;
        self.perp.delta = delta;
        self.compare.deltas = vec![delta];
    }

    pub fn report_path(&self) -> PathBuf {
        if self.paths.report.as_os_str().is_empty() {
            self.paths.artifacts.join("report.csv")
        } else {
            self.paths.report.clone()
        }
    }

    pub fn traces_path(&self) -> Option<&Path> {
        (!self.paths.traces.as_os_str().is_empty()).then_some(self.paths.traces.as_path())
    }

    /// Every key with its default, one `section.key = value` line each.
    pub fn key_listing(&self) -> Vec<String> {
        let mut out = Vec::new();
        flatten("", &toml::Value::Table(self.to_table()), &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn unknown_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = RunConfig::from_toml_str("[pcp.ppo]\nlearning_rat = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("`pcp.ppo.learning_rat`"), "{err}");
        let err = RunConfig::from_toml_str("bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("`bogus`"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let base = RunConfig::default();
        let file = RunConfig::layered(&base, "[pcp]\niterations = 7\nhorizon = 300\n").unwrap();
        assert_eq!(file.pcp.iterations, 7);
        assert_eq!(file.pcp.horizon, 300);
        assert_eq!(file.pcp.warmup, base.pcp.warmup);
        let mut cli = file.clone();
        cli.apply_override("pcp.iterations=9").unwrap();
        assert_eq!(cli.pcp.iterations, 9);
        assert_eq!(cli.pcp.horizon, 300);
    }

    #[test]
    fn layering_keeps_base_values() {
        let desk = RunConfig::desk_scale();
        let c = RunConfig::layered(&desk, "seed = 4\n").unwrap();
        assert_eq!(c.pcp.iterations, 200);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn override_parses_literals() {
        let mut c = RunConfig::default();
        c.apply_override("eval.pinned_trait=2.5").unwrap();
        assert_eq!(c.eval.pinned_trait, Some(2.5));
        c.apply_override("compare.policies=[\"pcp\", \"osl\"]").unwrap();
        assert_eq!(c.compare.policies, vec![PolicyKind::Pcp, PolicyKind::Osl]);
        c.apply_override("paths.artifacts=out/run1").unwrap();
        assert_eq!(c.paths.artifacts, PathBuf::from("out/run1"));
        assert!(c.apply_override("pcp.iterations=many").is_err());
        assert!(c.apply_override("pcp.nope=1").is_err());
    }

    #[test]
    fn listing_covers_nested_keys() {
        let keys = RunConfig::default().key_listing();
        for k in ["seed = 0", "idm.desired_speed = 30.0", "pcp.ppo.gamma = 0.99", "dti.train.model.latent = 2"] {
            assert!(keys.iter().any(|l| l == k), "missing {k}");
        }
    }
}
