//! Flat `key = value` run configuration.
//!
//! One file configures both the model and the training loop.  Keys are
//! dotted paths (`sgc.k = 20`, `head.hidden = 512,256`); `#` starts a
//! comment.  Unknown keys are errors so typos fail fast, and the resolved
//! configuration can be dumped back in the same format for the run log.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use dnet::fusion::FusionMode;
use dnet::model::{ModelConfig, TaskKind, TrainOptions};
use dnet::sgc::GateMode;
use dnet::sps::{NormalizeAxis, Sampling};
use dnet::{Error, Result};

/// Everything one run needs: the network and the optimizer schedule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainOptions,
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key '{key}': cannot parse {value:?} as {want}"))
}

fn num<T: FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, want))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value, "boolean")),
    }
}

fn widths(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|w| num(key, w, "comma-separated widths"))
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "classes" => m.classes = num(key, value, "integer")?,
            "task" => {
                m.task = match value.trim() {
                    "classify" => TaskKind::Classify,
                    "segment" => TaskKind::Segment,
                    _ => return Err(bad(key, value, "classify|segment")),
                }
            }
            "with_normals" => m.with_normals = flag(key, value)?,
            "n1_ratio" => m.n1_ratio = num(key, value, "fraction")?,
            "sampling" => {
                m.sampling = match value.trim() {
                    "attentive" => Sampling::Attentive,
                    "farthest" => Sampling::Farthest,
                    "random" => Sampling::Random,
                    _ => return Err(bad(key, value, "attentive|farthest|random")),
                }
            }
            "branches.full" => m.branches.full = flag(key, value)?,
            "branches.high" => m.branches.high = flag(key, value)?,
            "branches.low" => m.branches.low = flag(key, value)?,
            "sps.attn_dim" => m.sps.attn_dim = num(key, value, "integer")?,
            "sps.normalize_axis" => {
                m.sps.normalize_axis = match value.trim() {
                    "column" => NormalizeAxis::Column,
                    "row" => NormalizeAxis::Row,
                    _ => return Err(bad(key, value, "column|row")),
                }
            }
            "sgc.widths" => m.sgc.widths = widths(key, value)?,
            "sgc.k" => m.sgc.k = num(key, value, "integer")?,
            "sgc.set_width" => m.sgc.set_width = num(key, value, "integer")?,
            "sgc.dynamic_graph" => m.sgc.dynamic_graph = flag(key, value)?,
            "sgc.gate" => {
                m.sgc.gate = match value.trim() {
                    "scalar" => GateMode::Scalar,
                    "channel" => GateMode::Channel,
                    "off" => GateMode::Off,
                    _ => return Err(bad(key, value, "scalar|channel|off")),
                }
            }
            "transform.enabled" => m.transform.enabled = flag(key, value)?,
            "transform.conv_width" => m.transform.conv_width = num(key, value, "integer")?,
            "transform.hidden" => m.transform.hidden = num(key, value, "integer")?,
            "fusion.mode" => {
                m.fusion.mode = match value.trim() {
                    "learned" => FusionMode::Learned,
                    "max" => FusionMode::Max,
                    "mean" => FusionMode::Mean,
                    "concat" => FusionMode::Concat,
                    _ => return Err(bad(key, value, "learned|max|mean|concat")),
                }
            }
            "fusion.hidden" => m.fusion.hidden = num(key, value, "integer")?,
            "head.hidden" => m.head.hidden = widths(key, value)?,
            "head.dropout" => m.head.dropout = num(key, value, "fraction")?,
            "train.lr" => self.train.lr = num(key, value, "number")?,
            "train.batch_size" => self.train.batch_size = num(key, value, "integer")?,
            "train.epochs" => self.train.epochs = num(key, value, "integer")?,
            "train.seed" => self.train.seed = num(key, value, "integer")?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies every assignment in a config file.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected 'key = value', found {line:?}"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Dumps the configuration as the same `key = value` lines [`set`] reads.
    pub fn resolved(&self) -> String {
        fn line(out: &mut String, key: &str, value: impl Display) {
            out.push_str(&format!("{key} = {value}\n"));
        }
        fn list(values: &[usize]) -> String {
            values.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
        }
        let m = &self.model;
        let mut out = String::new();
        line(&mut out, "classes", m.classes);
        line(&mut out, "task", match m.task {
            TaskKind::Classify => "classify",
            TaskKind::Segment => "segment",
        });
        line(&mut out, "with_normals", m.with_normals);
        line(&mut out, "n1_ratio", m.n1_ratio);
        line(&mut out, "sampling", m.sampling.name());
        line(&mut out, "branches.full", m.branches.full);
        line(&mut out, "branches.high", m.branches.high);
        line(&mut out, "branches.low", m.branches.low);
        line(&mut out, "sps.attn_dim", m.sps.attn_dim);
        line(&mut out, "sps.normalize_axis", match m.sps.normalize_axis {
            NormalizeAxis::Column => "column",
            NormalizeAxis::Row => "row",
        });
        line(&mut out, "sgc.widths", list(&m.sgc.widths));
        line(&mut out, "sgc.k", m.sgc.k);
        line(&mut out, "sgc.set_width", m.sgc.set_width);
        line(&mut out, "sgc.dynamic_graph", m.sgc.dynamic_graph);
        line(&mut out, "sgc.gate", m.sgc.gate.name());
        line(&mut out, "transform.enabled", m.transform.enabled);
        line(&mut out, "transform.conv_width", m.transform.conv_width);
        line(&mut out, "transform.hidden", m.transform.hidden);
        line(&mut out, "fusion.mode", m.fusion.mode.name());
        line(&mut out, "fusion.hidden", m.fusion.hidden);
        line(&mut out, "head.hidden", list(&m.head.hidden));
        line(&mut out, "head.dropout", m.head.dropout);
        line(&mut out, "train.lr", self.train.lr);
        line(&mut out, "train.batch_size", self.train.batch_size);
        line(&mut out, "train.epochs", self.train.epochs);
        line(&mut out, "train.seed", self.train.seed);
        out
    }
}

// ── tests ─────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_output_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("sgc.k", "7").unwrap();
        cfg.set("fusion.mode", "concat").unwrap();
        cfg.set("head.hidden", "32,16").unwrap();
        cfg.set("train.lr", "0.01").unwrap();
        let mut back = RunConfig::default();
        for line in cfg.resolved().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("sgc.q", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("sgc.k", "many"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("sampling", "sometimes"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("branches.full", "maybe"), Err(Error::Config(_))));
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "sgc.k = 5\n\n# comment\nbroken line\n").unwrap();
        let mut cfg = RunConfig::default();
        match cfg.apply_file(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected a parse error, got {other:?}"),
        }
        std::fs::write(&path, "sgc.k = 5 # neighbourhood\nsampling = farthest\n").unwrap();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.model.sgc.k, 5);
        assert_eq!(cfg.model.sampling, Sampling::Farthest);
    }
}
