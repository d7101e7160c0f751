//! INI run configuration: a fixed key table with defaults, a config file
//! overlay, then `--set section.key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use sha2::{Digest, Sha256};

use roboclip_core::analysis::Arm;
use roboclip_core::ppo::{EnvSpec, PPOConfig};
use roboclip_core::reward::SpecifierDesc;
use roboclip_core::simworld::{Color, RenderStyle, Task};
use roboclip_core::vlm::{EncoderConfig, PretrainConfig};

use crate::error::CliError;

/// Every accepted key and its default. Empty string means "unset".
const KEYS: &[(&str, &str, &str)] = &[
    ("run", "seed", "0"),
    ("run", "out_dir", "runs/default"),
    ("world", "task", "press-button"),
    ("world", "color", "red"),
    ("world", "style", "robot"),
    ("vlm", "n_clips", "600"),
    ("vlm", "kind", "video"),
    ("vlm", "dim", "32"),
    ("vlm", "epochs", "30"),
    ("vlm", "batch_size", "32"),
    ("vlm", "lr", "0.002"),
    ("vlm", "temperature", "0.07"),
    ("reward.spec", "kind", "text"),
    ("reward.spec", "text", "robot pushing red button"),
    ("reward.spec", "video", ""),
    ("reward.spec", "minus", ""),
    ("reward.spec", "plus", ""),
    ("reward.spec", "blend", ""),
    ("ppo", "gamma", "0.99"),
    ("ppo", "lambda", "0.95"),
    ("ppo", "clip_eps", "0.2"),
    ("ppo", "epochs", "10"),
    ("ppo", "minibatch_size", "256"),
    ("ppo", "episodes_per_update", "16"),
    ("ppo", "lr", "0.0003"),
    ("ppo", "entropy_coef", "0.01"),
    ("ppo", "value_coef", "0.5"),
    ("ppo", "max_grad_norm", "0.5"),
    ("ppo", "max_kl", "0.5"),
    ("ppo", "total_env_steps", "606208"),
    ("ppo", "hidden", "64"),
    ("ppo", "init_log_std", "-0.5"),
    ("ppo", "select_best", "true"),
    ("ppo", "selection_episodes", "16"),
    ("ppo", "finetune_env_steps", "303104"),
    ("ppo", "bc_epochs", "500"),
    ("ppo", "bc_lr", "0.001"),
    ("analysis", "eval_episodes", "100"),
    ("analysis", "eval_seed", "9001"),
    ("analysis", "videos_per_task", "10"),
    ("analysis", "align_color", "red"),
    ("analysis", "arms", "demos-1,demos-2,demos-5,random-encoder,image-encoder,text-baseline"),
    ("analysis", "seeds", "0,1,2"),
    ("analysis", "demo_seed", "5000"),
    ("analysis", "random_encoder_seed", "1"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<(String, String), String>,
}

fn split_key(dotted: &str) -> Result<(String, String), CliError> {
    let (s, k) = dotted
        .rsplit_once('.')
        .ok_or_else(|| CliError::Config(format!("override {dotted:?} is not of the form section.key")))?;
    Ok((s.to_string(), k.to_string()))
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS.iter().map(|(s, k, v)| ((s.to_string(), k.to_string()), v.to_string())).collect();
        Self { values }
    }
}

impl RunConfig {
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        let slot = self
            .values
            .get_mut(&(section.to_string(), key.to_string()))
            .ok_or_else(|| CliError::Config(format!("unknown config key {section}.{key}")))?;
        *slot = value.trim().to_string();
        Ok(())
    }

    /// Defaults, then `file`, then `section.key=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|_| CliError::Missing(path.to_path_buf()))?;
            cfg.merge_ini(&text)?;
        }
        for o in overrides {
            let (lhs, value) =
                o.split_once('=').ok_or_else(|| CliError::Config(format!("override {o:?} has no '='")))?;
            let (section, key) = split_key(lhs.trim())?;
            cfg.set(&section, &key, value)?;
        }
        if let Ok(seed) = std::env::var("RCLIP_SEED") {
            cfg.set("run", "seed", &seed)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn merge_ini(&mut self, text: &str) -> Result<(), CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::Config(format!("key {k} appears outside any section")));
                }
                continue;
            };
            for (k, v) in props.iter() {
                self.set(section, k, v)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{section}.{key} is not in the key table"))
    }

    pub fn parse<T: FromStr>(&self, section: &str, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(section, key);
        raw.parse().map_err(|e| CliError::Config(format!("{section}.{key} = {raw:?}: {e}")))
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("{section}.{key}: {s:?}: {e}"))))
            .collect()
    }

    /// Parse every typed view once so bad values fail before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        self.env()?;
        self.pretrain()?;
        self.encoder()?;
        self.ppo()?.validate()?;
        self.specifier()?;
        self.arms()?;
        self.seeds()?;
        for key in ["eval_episodes", "videos_per_task"] {
            self.parse::<usize>("analysis", key)?;
        }
        self.parse::<u64>("analysis", "eval_seed")?;
        self.parse::<Color>("analysis", "align_color")?;
        self.parse::<usize>("vlm", "n_clips")?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("run", "seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("run", "out_dir"))
    }

    pub fn env(&self) -> Result<EnvSpec, CliError> {
        Ok(EnvSpec::new(
            self.parse::<Task>("world", "task")?,
            self.parse::<Color>("world", "color")?,
            self.parse::<RenderStyle>("world", "style")?,
        ))
    }

    pub fn encoder(&self) -> Result<EncoderConfig, CliError> {
        let base = match self.get("vlm", "kind") {
            "video" => EncoderConfig::default(),
            "final-frame" => EncoderConfig::final_frame(),
            other => return Err(CliError::Config(format!("vlm.kind = {other:?}: expected video or final-frame"))),
        };
        Ok(EncoderConfig { dim: self.parse("vlm", "dim")?, ..base })
    }

    pub fn pretrain(&self) -> Result<PretrainConfig, CliError> {
        let c = PretrainConfig {
            temperature: self.parse("vlm", "temperature")?,
            batch_size: self.parse("vlm", "batch_size")?,
            epochs: self.parse("vlm", "epochs")?,
            lr: self.parse("vlm", "lr")?,
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn ppo(&self) -> Result<PPOConfig, CliError> {
        let p = |k: &str| self.parse::<f32>("ppo", k);
        let u = |k: &str| self.parse::<usize>("ppo", k);
        Ok(PPOConfig {
            gamma: p("gamma")?,
            lambda: p("lambda")?,
            clip_eps: p("clip_eps")?,
            epochs: u("epochs")?,
            minibatch_size: u("minibatch_size")?,
            episodes_per_update: u("episodes_per_update")?,
            lr: p("lr")?,
            entropy_coef: p("entropy_coef")?,
            value_coef: p("value_coef")?,
            max_grad_norm: p("max_grad_norm")?,
            max_kl: p("max_kl")?,
            total_env_steps: u("total_env_steps")?,
            hidden: u("hidden")?,
            init_log_std: p("init_log_std")?,
            seed: self.seed()?,
            select_best_by_true_return: self.parse("ppo", "select_best")?,
            selection_episodes: u("selection_episodes")?,
        })
    }

    pub fn specifier(&self) -> Result<SpecifierDesc, CliError> {
        let get = |k: &str| Some(self.get("reward.spec", k)).filter(|v| !v.is_empty());
        Ok(SpecifierDesc::from_lookup(get)?)
    }

    pub fn arms(&self) -> Result<Vec<Arm>, CliError> {
        self.list("analysis", "arms")
    }

    pub fn seeds(&self) -> Result<Vec<u64>, CliError> {
        let s = self.list("analysis", "seeds")?;
        if s.is_empty() {
            return Err(CliError::Config("analysis.seeds is empty".into()));
        }
        Ok(s)
    }

    /// Fully resolved config as INI text, in key-table order.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (s, k, _) in KEYS {
            if *s != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                current = s;
            }
            out.push_str(&format!("{k} = {}\n", self.get(s, k)));
        }
        out
    }

    /// SHA-256 of the resolved config, ignoring where the run is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.values.remove(&("run".to_string(), "out_dir".to_string()));
        let text: String = c.values.iter().map(|((s, k), v)| format!("{s}.{k}={v}\n")).collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
