//! Experiment configuration: one JSON document, every field defaulted, plus
//! dotted `key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use acai_core::generative::{CodeDistribution, InfoGanConfig};
use acai_core::interventions::{InterventionConfig, InterventionKind};
use acai_core::metrics::DEFAULT_MIN_COUNT;
use acai_core::task::ClassifierConfig;
use acai_core::world::{DatasetSpec, RenderEffect};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "ACAI_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub generator: GeneratorConfig,
    pub classifier: ClassifierConfig,
    pub interventions: InterventionGrid,
    pub evaluation: EvaluationConfig,
    pub stages: StageSelection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "desk".into(),
            seed: 0,
            dataset: DatasetConfig::default(),
            generator: GeneratorConfig::default(),
            classifier: ClassifierConfig { epochs: 24, ..ClassifierConfig::default() },
            interventions: InterventionGrid::default(),
            evaluation: EvaluationConfig::default(),
            stages: StageSelection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub spec: DatasetSpec,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            spec: DatasetSpec { noise_sigma: 0.04, ..DatasetSpec::desk_with_sensitivity(RenderEffect::Brightness, 0.8) },
            train: 600,
            validation: 500,
            test: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// Renderer-backed generator with codes wired to named factors.
    Oracle { d_c: usize, mapping: Vec<CodeBinding> },
    InfoGan(InfoGanConfig),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Oracle {
            d_c: 10,
            mapping: vec![
                CodeBinding { code: 3, factor: "brightness".into() },
                CodeBinding { code: 6, factor: "position_x".into() },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeBinding {
    pub code: usize,
    pub factor: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionGrid {
    pub kinds: Vec<InterventionKind>,
    /// Number of top-ranked codes to intervene on.
    pub top_k: usize,
    /// Explicit codes; overrides `top_k` when set.
    pub codes: Option<Vec<usize>>,
    pub da_multiplier: f64,
    pub aa_weight: f64,
    pub aa_bins: usize,
    pub aa_hidden: usize,
    pub sc_weight: f64,
    pub sc_batch: usize,
    pub sc_symmetric: bool,
    pub sc_detach_reference: bool,
    pub sc_codes: CodeDistribution,
    pub sc_rampup: f64,
    pub sc_temperature: f64,
    pub sc_confidence: f64,
}

impl Default for InterventionGrid {
    fn default() -> Self {
        let d = InterventionConfig::new(InterventionKind::DA, 0, 0);
        InterventionGrid {
            kinds: InterventionKind::ALL.to_vec(),
            top_k: 2,
            codes: None,
            da_multiplier: d.da_multiplier,
            aa_weight: d.aa_weight,
            aa_bins: d.aa_bins,
            aa_hidden: d.aa_hidden,
            sc_weight: d.sc_weight,
            sc_batch: d.sc_batch,
            sc_symmetric: d.sc_symmetric,
            sc_detach_reference: d.sc_detach_reference,
            sc_codes: d.sc_codes,
            sc_rampup: d.sc_rampup,
            sc_temperature: d.sc_temperature,
            sc_confidence: d.sc_confidence,
        }
    }
}

impl InterventionGrid {
    pub fn config(&self, kind: InterventionKind, code: usize, seed: u64) -> InterventionConfig {
        InterventionConfig {
            kind,
            factor_index: code,
            da_multiplier: self.da_multiplier,
            aa_weight: self.aa_weight,
            aa_bins: self.aa_bins,
            aa_hidden: self.aa_hidden,
            sc_weight: self.sc_weight,
            sc_batch: self.sc_batch,
            sc_symmetric: self.sc_symmetric,
            sc_detach_reference: self.sc_detach_reference,
            sc_codes: self.sc_codes,
            sc_rampup: self.sc_rampup,
            sc_temperature: self.sc_temperature,
            sc_confidence: self.sc_confidence,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub min_count: usize,
    /// Factor name from the dataset spec, or `measured_brightness` for
    /// brightness measured from the pixels.
    pub real_factor: String,
    pub traversal_steps: usize,
    pub traversal_rows: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            min_count: DEFAULT_MIN_COUNT,
            real_factor: "brightness".into(),
            traversal_steps: 8,
            traversal_rows: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSelection {
    pub interventions: bool,
    pub acai: bool,
    pub figures: bool,
}

impl Default for StageSelection {
    fn default() -> Self {
        StageSelection { interventions: true, acai: true, figures: true }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        d.spec.validate()?;
        if d.train == 0 || d.test == 0 {
            return Err(Error::input("dataset.train and dataset.test must be positive"));
        }
        if self.stages.acai && d.validation == 0 {
            return Err(Error::input("ACAI selection needs dataset.validation > 0"));
        }
        self.classifier.validate()?;
        match &self.generator {
            GeneratorConfig::Oracle { d_c, mapping } => {
                for b in mapping {
                    if d.spec.factor_by_name(&b.factor).is_none() {
                        return Err(Error::input(format!("oracle mapping names unknown factor `{}`", b.factor)));
                    }
                    if b.code >= *d_c {
                        return Err(Error::input(format!("oracle mapping code {} outside [0, {d_c})", b.code)));
                    }
                }
            }
            GeneratorConfig::InfoGan(g) => g.validate()?,
        }
        let grid = &self.interventions;
        if self.stages.interventions && grid.kinds.is_empty() {
            return Err(Error::input("interventions.kinds is empty"));
        }
        if self.stages.interventions && grid.codes.as_ref().map_or(grid.top_k == 0, |c| c.is_empty()) {
            return Err(Error::input("no codes selected for interventions"));
        }
        grid.config(InterventionKind::DA, 0, 0).validate(usize::MAX)?;
        let e = &self.evaluation;
        if e.real_factor != "measured_brightness" && d.spec.factor_by_name(&e.real_factor).is_none() {
            return Err(Error::input(format!("unknown evaluation.real_factor `{}`", e.real_factor)));
        }
        if e.traversal_steps < 2 {
            return Err(Error::input("evaluation.traversal_steps must be at least 2"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        acai_core::config_hash(self)
    }
}

/// Sets `path` (dot-separated) in a JSON tree. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::input(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let keys: Vec<&str> = path.split('.').collect();
    for (depth, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::input(format!("override `{assignment}` has an empty key")));
        }
        let last = depth + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let i: usize = key.parse().map_err(|_| Error::input(format!("`{key}` is not an array index")))?;
                let slot = items.get_mut(i).ok_or_else(|| Error::input(format!("index {i} out of range in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::input(format!("`{path}` descends into a scalar"))),
        };
    }
    Ok(())
}

/// Defaults, then the file (if any), then overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut tree = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::read(p, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| Error::read(p, e))?;
        merge(&mut tree, file);
    }
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| Error::input(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Recursive object merge; anything else in `patch` replaces `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // A tagged enum switching variants must replace wholesale.
                    Some(slot) if !switches_variant(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn switches_variant(base: &Value, patch: &Value) -> bool {
    match (base.get("type"), patch.get("type")) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    }
}

/// Output root: explicit flag, else the environment, else `runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}
