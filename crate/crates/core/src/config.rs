//! Run configuration: built-in profiles, TOML files and per-key overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{Frontend, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full published settings.
    Paper,
    /// Tiny model on a synthetic corpus; minutes on a laptop CPU.
    Desk,
    /// Seconds; used by the test suite.
    Test,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            "test" => Ok(Profile::Test),
            _ => Err(Error::validation(format!("unknown profile `{s}` (paper, desk, test)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
            Profile::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub trial_seed: u64,
    /// Held-out synthetic evaluation speakers (disjoint from training).
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub corpus_seed: u64,
    /// Ridge penalty of the linear speaker probe.
    pub probe_ridge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub frontend: Frontend,
    pub eval: EvalConfig,
}

impl Config {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Config {
                model: ModelConfig::paper(),
                train: TrainConfig::paper(),
                synthetic: SyntheticSpec {
                    feat_dim: 80,
                    min_frames: 400,
                    max_frames: 800,
                    ..SyntheticSpec::default()
                },
                frontend: Frontend::default(),
                eval: EvalConfig {
                    p_target: 0.01,
                    c_miss: 1.0,
                    c_fa: 1.0,
                    n_target: 2000,
                    n_nontarget: 2000,
                    trial_seed: 0,
                    num_speakers: 40,
                    utts_per_speaker: 20,
                    corpus_seed: 1000,
                    probe_ridge: 1e-2,
                },
            },
            Profile::Desk => Config {
                model: ModelConfig::tiny(),
                train: TrainConfig {
                    epochs: 20,
                    batch_pairs: 8,
                    warmup_epochs: 2,
                    seg_seconds: 0.335,
                    ..TrainConfig::paper()
                },
                synthetic: SyntheticSpec::default(),
                frontend: Frontend::default(),
                eval: EvalConfig {
                    p_target: 0.01,
                    c_miss: 1.0,
                    c_fa: 1.0,
                    n_target: 300,
                    n_nontarget: 300,
                    trial_seed: 0,
                    num_speakers: 10,
                    utts_per_speaker: 10,
                    corpus_seed: 1000,
                    probe_ridge: 1e-2,
                },
            },
            Profile::Test => Config {
                model: ModelConfig::test(),
                train: TrainConfig {
                    epochs: 2,
                    batch_pairs: 4,
                    warmup_epochs: 1,
                    seg_seconds: 0.135,
                    tau: 0.2,
                    ..TrainConfig::paper()
                },
                synthetic: SyntheticSpec {
                    num_speakers: 4,
                    utts_per_speaker: 3,
                    feat_dim: 6,
                    min_frames: 14,
                    max_frames: 18,
                    ..SyntheticSpec::default()
                },
                frontend: Frontend::default(),
                eval: EvalConfig {
                    p_target: 0.01,
                    c_miss: 1.0,
                    c_fa: 1.0,
                    n_target: 10,
                    n_nontarget: 10,
                    trial_seed: 0,
                    num_speakers: 3,
                    utts_per_speaker: 4,
                    corpus_seed: 1000,
                    probe_ridge: 1e-2,
                },
            },
        }
    }

    /// Synthetic spec for the held-out evaluation speakers.
    pub fn eval_synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_speakers: self.eval.num_speakers,
            utts_per_speaker: self.eval.utts_per_speaker,
            seed: self.eval.corpus_seed,
            ..self.synthetic.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synthetic.validate()?;
        if self.synthetic.feat_dim != self.model.feat_dim {
            return Err(Error::validation(format!(
                "synthetic.feat_dim {} differs from model.feat_dim {}",
                self.synthetic.feat_dim, self.model.feat_dim
            )));
        }
        let e = &self.eval;
        if !(e.p_target > 0.0 && e.p_target < 1.0) || !(e.c_miss > 0.0) || !(e.c_fa > 0.0) {
            return Err(Error::validation("eval: need 0 < p_target < 1 and positive costs"));
        }
        Ok(())
    }

    /// Dotted names of every leaf field, e.g. `train.lambda`.
    pub fn keys() -> Vec<String> {
        let v = serde_json::to_value(Config::profile(Profile::Paper)).expect("config serializes");
        let mut out = Vec::new();
        leaves(&v, String::new(), &mut out);
        out
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        let v = serde_json::to_value(self).ok()?;
        key.split('.').try_fold(&v, |v, k| v.get(k)).cloned()
    }

    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, text: &str) -> Result<()> {
        let mut v = serde_json::to_value(&*self).expect("config serializes");
        let slot = key
            .split('.')
            .try_fold(&mut v, |v, k| v.get_mut(k))
            .ok_or_else(|| Error::validation(format!("unknown config key `{key}`")))?;
        *slot = parse_like(slot, text).ok_or_else(|| Error::validation(format!("bad value `{text}` for {key}")))?;
        *self = serde_json::from_value(v).map_err(|e| Error::validation(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Profile defaults overlaid with a TOML document. A top-level
    /// `profile = "..."` picks the base; every other key must exist.
    pub fn from_toml_str(text: &str, default_profile: Profile) -> Result<Self> {
        let doc: toml::Value = toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        let mut doc = serde_json::to_value(doc).map_err(|e| Error::validation(format!("config: {e}")))?;
        let profile = match doc.as_object_mut().and_then(|o| o.remove("profile")) {
            Some(Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::validation("config: profile must be a string")),
            None => default_profile,
        };
        let mut base = serde_json::to_value(Config::profile(profile)).expect("config serializes");
        merge(&mut base, &doc, "")?;
        serde_json::from_value(base).map_err(|e| Error::validation(format!("config: {e}")))
    }

    pub fn load(path: &Path, default_profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, default_profile)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

fn leaves(v: &Value, prefix: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(child, p, out);
            }
        }
        _ => out.push(prefix),
    }
}

fn merge(base: &mut Value, over: &Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| Error::validation(format!("unknown config key `{p}`")))?;
                merge(slot, v, &p)?;
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

/// Parse `text` into a JSON value of the same kind as `like`.
fn parse_like(like: &Value, text: &str) -> Option<Value> {
    match like {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() || n.is_i64() => text.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => text.parse::<f64>().ok().and_then(|f| serde_json::Number::from_f64(f).map(Value::Number)),
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Array(items) => {
            let proto = items.first()?;
            text.split(',')
                .map(|t| parse_like(proto, t.trim()))
                .collect::<Option<Vec<_>>>()
                .map(Value::Array)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_paper_matches_published_settings() {
        for p in [Profile::Paper, Profile::Desk, Profile::Test] {
            Config::profile(p).validate().unwrap();
        }
        let c = Config::profile(Profile::Paper);
        assert_eq!((c.train.epochs, c.train.batch_pairs, c.train.warmup_epochs), (50, 256, 10));
        assert_eq!((c.train.lr_start, c.train.lr_peak, c.train.lr_final), (1e-4, 1e-3, 1e-5));
        assert_eq!((c.train.lambda, c.train.tau, c.train.seg_seconds), (0.01, 0.05, 3.5));
        assert_eq!(c.eval.p_target, 0.01);
        let d = Config::profile(Profile::Desk);
        assert_eq!((d.synthetic.num_speakers, d.synthetic.utts_per_speaker, d.train.epochs), (20, 20, 20));
    }

    #[test]
    fn set_and_get_by_key() {
        let mut c = Config::profile(Profile::Test);
        c.set("train.lambda", "0.5").unwrap();
        c.set("train.dsvae", "false").unwrap();
        c.set("train.denominator_rule", "strict_indicator").unwrap();
        c.set("model.decoder_dilations", "3,1").unwrap();
        c.set("train.epochs", "7").unwrap();
        assert_eq!(c.train.lambda, 0.5);
        assert!(!c.train.dsvae);
        assert_eq!(c.model.decoder_dilations, [3, 1]);
        assert_eq!(c.get("train.epochs"), Some(Value::from(7)));
        assert!(c.set("train.nope", "1").is_err());
        assert!(c.set("train.epochs", "many").is_err());
        assert!(c.set("train.denominator_rule", "bogus").is_err());
    }

    #[test]
    fn toml_overlays_profile_and_rejects_unknown_keys() {
        let c = Config::from_toml_str("profile = \"desk\"\n[train]\nlambda = 0.05\n", Profile::Test).unwrap();
        assert_eq!(c.train.lambda, 0.05);
        assert_eq!(c.model, ModelConfig::tiny());
        assert!(Config::from_toml_str("[train]\nlamda = 1.0\n", Profile::Test).is_err());
        let round = Config::from_toml_str(&c.to_toml(), Profile::Paper).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn keys_cover_every_section() {
        let keys = Config::keys();
        for k in ["model.d_s", "train.lambda", "synthetic.noise_scale", "frontend.n_mels", "eval.p_target"] {
            assert!(keys.iter().any(|x| x == k), "{k}");
        }
    }
}
