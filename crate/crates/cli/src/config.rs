//! Experiment configuration: a sectioned TOML file with typed keys. Unknown
//! keys anywhere are errors.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use balancelab::balancing::{BalanceSpec, Mechanism, Target};
use balancelab::cbn::templates::GraphId;
use balancelab::datagen::GenSpec;
use balancelab::experiment::RunSpec;
use balancelab::learner::{Mmd, TrainSpec};
use balancelab::propcheck::default_grid_points;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestSet {
    /// drawn from P*
    Source,
    /// drawn from the jointly balanced Q
    Balanced,
    Ideal,
    ShiftGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sets: Vec<TestSet>,
    pub test_n: usize,
    pub shift_points: Vec<f64>,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sets: vec![TestSet::Source, TestSet::Balanced, TestSet::Ideal, TestSet::ShiftGrid],
            test_n: 2_000,
            shift_points: default_grid_points(),
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmdKind {
    Marginal,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub mmd: MmdKind,
    pub strengths: Vec<f64>,
    /// fixed kernel bandwidth; median heuristic when absent
    pub bandwidth: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            mmd: MmdKind::Conditional,
            strengths: vec![0.0],
            bandwidth: None,
        }
    }
}

impl GridConfig {
    pub fn regularizer(&self, strength: f64) -> Mmd {
        if strength == 0.0 {
            return Mmd::None;
        }
        let bandwidth = self.bandwidth;
        match self.mmd {
            MmdKind::Marginal => Mmd::Marginal { strength, bandwidth },
            MmdKind::Conditional => Mmd::Conditional { strength, bandwidth },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConfig {
    /// "joint" or the name of a single label column
    #[serde(default = "joint")]
    pub target: String,
    pub mechanism: String,
}

fn joint() -> String {
    "joint".into()
}

impl BalanceConfig {
    pub fn mechanism(&self) -> Result<Mechanism> {
        self.mechanism.parse().map_err(|e| Usage::new(format!("[balance] {e}")).into())
    }

    pub fn spec(&self, seed: u64) -> Result<BalanceSpec> {
        let m = self.mechanism()?;
        let target = match self.target.as_str() {
            "joint" => Target::joint("Y", "Z"),
            v @ ("Y" | "Z" | "V") => Target::single(v),
            other => return Err(Usage::new(format!("[balance] unknown target `{other}`")).into()),
        };
        Ok(BalanceSpec::new(target, m, m.resamples().then_some(seed))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub gen: GenSpec,
    pub balance: Option<BalanceConfig>,
    pub train: TrainSpec,
    pub eval: EvalConfig,
    pub grid: GridConfig,
    pub replicates: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gen: GenSpec::default(),
            balance: None,
            train: TrainSpec::default(),
            eval: EvalConfig::default(),
            grid: GridConfig::default(),
            replicates: vec![0],
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Usage::new(format!("config: {e}")))?;
        let cfg = Self::from_table(raw).map_err(|e| Usage::new(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Missing `gen` keys take the defaults of the chosen graph.
    fn from_table(mut raw: toml::Table) -> std::result::Result<Self, String> {
        let gen = match raw.remove("gen") {
            None => GenSpec::default(),
            Some(toml::Value::Table(t)) => {
                let graph = match t.get("graph") {
                    None => GraphId::A,
                    Some(v) => v.as_str().ok_or("gen.graph must be a string")?.parse().map_err(|e| format!("{e}"))?,
                };
                let mut merged = serde_json::to_value(GenSpec::for_graph(graph)).map_err(|e| e.to_string())?;
                let user = serde_json::to_value(&t).map_err(|e| e.to_string())?;
                for (k, v) in user.as_object().expect("table").clone() {
                    merged[k.as_str()] = v;
                }
                serde_json::from_value(merged).map_err(|e| format!("[gen] {e}"))?
            }
            Some(_) => return Err("`gen` must be a table".into()),
        };
        let mut cfg: ExperimentConfig = raw.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.gen = gen;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let u = |m: String| -> anyhow::Error { Usage::new(m).into() };
        if self.replicates.is_empty() {
            return Err(u("replicates must be nonempty".into()));
        }
        self.gen.validate().map_err(|e| u(format!("[gen] {e}")))?;
        self.train.validate().map_err(|e| u(format!("[train] {e}")))?;
        if let Some(b) = &self.balance {
            b.spec(0)?;
            if b.target == "V" && self.gen.graph != GraphId::C {
                return Err(u(format!("[balance] target V needs graph C, not {}", self.gen.graph)));
            }
        }
        let e = &self.eval;
        if e.sets.is_empty() {
            return Err(u("[eval] sets must be nonempty".into()));
        }
        if e.test_n < 2 {
            return Err(u("[eval] test_n must be at least 2".into()));
        }
        if e.sets.contains(&TestSet::ShiftGrid) {
            if e.shift_points.len() < 2 {
                return Err(u("[eval] shift-grid needs at least 2 shift_points".into()));
            }
            if e.shift_points.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(u("[eval] shift_points must lie in [0, 1]".into()));
            }
        }
        if !(0.0..=1.0).contains(&e.threshold) {
            return Err(u("[eval] threshold must lie in [0, 1]".into()));
        }
        if self.grid.strengths.is_empty() || self.grid.strengths.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(u("[grid] strengths must be nonempty, finite and nonnegative".into()));
        }
        if self.grid.bandwidth.is_some_and(|b| !(b > 0.0)) {
            return Err(u("[grid] bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Replicate seeds, or the single seed given on the command line.
    pub fn seeds(&self, seed: Option<u64>) -> Vec<u64> {
        seed.map_or_else(|| self.replicates.clone(), |s| vec![s])
    }

    /// Experiment cell without balancing or regularization overrides.
    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            gen: self.gen.clone(),
            balance: None,
            train: self.train.clone(),
            test_n: self.eval.test_n,
            shift_points: if self.eval.sets.contains(&TestSet::ShiftGrid) {
                self.eval.shift_points.clone()
            } else {
                Vec::new()
            },
        }
    }

    /// Balancing mechanism of the grid's "joint" arm.
    pub fn joint_mechanism(&self) -> Result<Mechanism> {
        match &self.balance {
            Some(b) if b.target != "joint" => Err(Usage::new("grid balancing needs target = \"joint\"").into()),
            Some(b) => b.mechanism(),
            None => Ok(Mechanism::SubsampleMajority),
        }
    }

    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

pub fn hash_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_defaults_fill_missing_keys() {
        let c = ExperimentConfig::parse("[gen]\ngraph = \"C\"\nn = 500\n").unwrap();
        assert_eq!(c.gen.dim_v, Some(8));
        assert_eq!(c.gen.n, 500);
        assert_eq!(c.train, TrainSpec::default());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        for text in ["[gen]\nsep_cor = 1.0\n", "[train]\nepoch = 3\n", "seed = 3\n", "[eval]\nsets = [\"nope\"]\n"] {
            let e = ExperimentConfig::parse(text).unwrap_err();
            assert!(e.downcast_ref::<Usage>().is_some(), "{text}: {e}");
        }
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::parse(
            r#"
replicates = [1, 2]
output_dir = "runs"
[gen]
graph = "B"
[balance]
mechanism = "importance"
[train]
epochs = 2
[train.mmd]
kind = "marginal"
strength = 4.0
[grid]
mmd = "marginal"
strengths = [0.0, 4.0]
"#,
        )
        .unwrap();
        assert_eq!(c.replicates, vec![1, 2]);
        assert_eq!(c.joint_mechanism().unwrap(), Mechanism::ImportanceWeights);
        assert_eq!(c.train.mmd.strength(), 4.0);
        assert_eq!(c.grid.regularizer(0.0), Mmd::None);
    }

    #[test]
    fn validation_rejects_bad_values() {
        for text in ["replicates = []\n", "[eval]\nshift_points = [0.5]\n", "[grid]\nstrengths = [-1.0]\n", "[balance]\nmechanism = \"magic\"\n"] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn shipped_configs_parse() {
        for text in [
            include_str!("../../../configs/confounded_a.toml"),
            include_str!("../../../configs/mmd_entangled_d.toml"),
            include_str!("../../../configs/mmd_confounder_c.toml"),
            include_str!("../../../configs/shift_causal_b.toml"),
        ] {
            ExperimentConfig::parse(text).unwrap();
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.replicates.push(9);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
