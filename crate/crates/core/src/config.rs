//! Run configuration: one JSON document with a section per component.
//! Unknown keys are rejected; absent keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::{AugmentConfig, SynthConfig};
use crate::hierarchy::{HierarchyConfig, PostprocessConfig};
use crate::mpnn::{MpnnConfig, TrainConfig};
use crate::stage1::Stage1Config;
use crate::tgraph::GraphConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub stage1: Stage1Config,
    pub graph: GraphConfig,
    pub model: MpnnConfig,
    pub train: TrainConfig,
    pub hierarchy: HierarchyConfig,
    pub postprocess: PostprocessConfig,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.graph.validate()?;
        self.model.validate()?;
        self.synth.validate()?;
        self.augment.validate()?;
        if !(0.0..=1.0).contains(&self.train.teacher_merge_prob) {
            return Err(Error::Config(format!(
                "train.teacher_merge_prob must lie in [0, 1], got {}",
                self.train.teacher_merge_prob
            )));
        }
        if self.hierarchy.levels > self.model.levels {
            return Err(Error::Config(format!(
                "hierarchy.levels ({}) exceeds model.levels ({})",
                self.hierarchy.levels, self.model.levels
            )));
        }
        Ok(())
    }

    /// Applies `section.key=value`. The value is read as JSON when it
    /// parses, otherwise as a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        let key = key.trim();
        let value: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
        }
        *slot = value;
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid value for `{key}`: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Every key with its default value, one `key = value` line each.
    pub fn documented_defaults() -> String {
        fn walk(prefix: &str, v: &Value, out: &mut String) {
            match v {
                Value::Object(m) => {
                    for (k, v) in m {
                        let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&p, v, out);
                    }
                }
                other => out.push_str(&format!("  {prefix} = {other}\n")),
            }
        }
        let mut out = String::new();
        walk("", &serde_json::to_value(RunConfig::default()).expect("config serializes"), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        let d = RunConfig::default();
        assert_eq!((d.graph.k, d.model.message_steps, d.model.levels), (10, 12, 3));
        assert_eq!((d.train.adam.lr, d.train.adam.weight_decay, d.train.gamma), (3e-4, 1e-4, 1.0));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"graph": {"kk": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("kk"), "{err}");
        let mut c = RunConfig::default();
        let err = c.apply_override("graph.nope=1").unwrap_err().to_string();
        assert!(err.contains("graph.nope"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let mut c = RunConfig::default();
        c.apply_override("graph.k=4").unwrap();
        c.apply_override("stage1.cost_mode=fused_min").unwrap();
        c.apply_override("seed=9").unwrap();
        assert_eq!((c.graph.k, c.seed), (4, 9));
        assert!(c.apply_override("graph.k=-1").is_err());
        assert!(c.apply_override("hierarchy.levels=7").is_err());
        let text = c.to_json();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn defaults_listing_covers_nested_keys() {
        let s = RunConfig::documented_defaults();
        assert!(s.contains("graph.kalman.std_weight_position"));
        assert!(s.contains("model.message_uses_neighbor = false"));
    }
}
