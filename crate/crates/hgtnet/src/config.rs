//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::str::FromStr;

use hgtnet_core::data::AugmentPolicy;
use hgtnet_core::model::GraphConnectivity;
use hgtnet_core::train::TrainConfig;
use hgtnet_core::ModelConfig;

use crate::error::{HgtError, Result};

/// Everything a command needs besides its own flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_policy: AugmentPolicy,
    pub test_policy: AugmentPolicy,
    /// Dataset tree root; empty when unset.
    pub data_root: String,
    /// Samples per class for a synthetic run; 0 when not synthetic.
    pub synth_per_class: usize,
    pub test_fraction: f64,
    pub eval_threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let size = model.image_size;
        Self {
            model,
            train: TrainConfig::default(),
            train_policy: AugmentPolicy::train(size),
            test_policy: AugmentPolicy::test(size),
            data_root: String::new(),
            synth_per_class: 0,
            test_fraction: 0.1,
            eval_threads: 1,
        }
    }
}

/// One `key = value` line with its 1-based line number.
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HgtError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(HgtError::Config(format!("line {}: empty key", i + 1)));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(HgtError::Config(format!(
                "line {}: `{key}` already set on line {}",
                i + 1,
                prev.line
            )));
        }
        out.push(Entry { line: i + 1, key, value: v.trim().to_string() });
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HgtError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

const POLICY_KEYS: [&str; 11] = [
    "flip_prob",
    "max_rotation_deg",
    "brightness",
    "contrast",
    "saturation",
    "hue",
    "sharpness_factor",
    "sharpness_prob",
    "blur_kernel",
    "blur_sigma_min",
    "blur_sigma_max",
];

fn policy_get(p: &AugmentPolicy, key: &str) -> String {
    match key {
        "flip_prob" => p.flip_prob.to_string(),
        "max_rotation_deg" => p.max_rotation_deg.to_string(),
        "brightness" => p.jitter.brightness.to_string(),
        "contrast" => p.jitter.contrast.to_string(),
        "saturation" => p.jitter.saturation.to_string(),
        "hue" => p.jitter.hue.to_string(),
        "sharpness_factor" => p.sharpness_factor.to_string(),
        "sharpness_prob" => p.sharpness_prob.to_string(),
        "blur_kernel" => p.blur_kernel.to_string(),
        "blur_sigma_min" => p.blur_sigma_range.0.to_string(),
        "blur_sigma_max" => p.blur_sigma_range.1.to_string(),
        _ => unreachable!("not a policy key: {key}"),
    }
}

fn policy_set(p: &mut AugmentPolicy, full: &str, key: &str, v: &str) -> Result<bool> {
    match key {
        "flip_prob" => p.flip_prob = num(full, v)?,
        "max_rotation_deg" => p.max_rotation_deg = num(full, v)?,
        "brightness" => p.jitter.brightness = num(full, v)?,
        "contrast" => p.jitter.contrast = num(full, v)?,
        "saturation" => p.jitter.saturation = num(full, v)?,
        "hue" => p.jitter.hue = num(full, v)?,
        "sharpness_factor" => p.sharpness_factor = num(full, v)?,
        "sharpness_prob" => p.sharpness_prob = num(full, v)?,
        "blur_kernel" => p.blur_kernel = num(full, v)?,
        "blur_sigma_min" => p.blur_sigma_range.0 = num(full, v)?,
        "blur_sigma_max" => p.blur_sigma_range.1 = num(full, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in parse_entries(text)? {
            cfg.set(&e.key, &e.value)
                .map_err(|err| HgtError::Config(format!("line {}: {}", e.line, strip(err))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "image_size" => m.image_size = num(key, v)?,
            "patch_size" => m.patch_size = num(key, v)?,
            "embed_dim" => m.embed_dim = num(key, v)?,
            "num_heads" => m.num_heads = num(key, v)?,
            "encoder_layers" => m.num_encoder_layers = num(key, v)?,
            "mlp_ratio" => m.mlp_ratio = num(key, v)?,
            "cnn_channels" => m.cnn_channels = list(key, v)?,
            "dropout" => m.dropout_p = num(key, v)?,
            "graph_connectivity" => m.graph_connectivity = GraphConnectivity::parse(v)?,
            "gat_leaky_slope" => m.gat_leaky_slope = num(key, v)?,
            "num_classes" => m.num_classes = num(key, v)?,
            "num_rotations" => m.num_rotations = num(key, v)?,
            "rotation_loss_weight" => m.rotation_loss_weight = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "max_epochs" => t.max_epochs = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "adam_beta1" => t.adam_beta1 = num(key, v)?,
            "adam_beta2" => t.adam_beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "data" => self.data_root = v.to_string(),
            "synth_per_class" => self.synth_per_class = num(key, v)?,
            "test_fraction" => self.test_fraction = num(key, v)?,
            "eval_threads" => self.eval_threads = num(key, v)?,
            _ => {
                let handled = match key.split_once('.') {
                    Some(("train_aug", k)) => policy_set(&mut self.train_policy, key, k, v)?,
                    Some(("test_aug", k)) => policy_set(&mut self.test_policy, key, k, v)?,
                    _ => false,
                };
                if !handled {
                    return Err(HgtError::Config(format!("unknown key `{key}`")));
                }
            }
        }
        let size = self.model.image_size;
        self.train_policy.target_size = (size, size);
        self.test_policy.target_size = (size, size);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.train_policy.validate()?;
        self.test_policy.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(HgtError::Config(format!("test_fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        if self.eval_threads == 0 {
            return Err(HgtError::Config("eval_threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let channels: Vec<String> = m.cnn_channels.iter().map(|c| c.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let section = match k {
                "image_size" => "model",
                "learning_rate" => "training",
                "data" => "run",
                "train_aug.flip_prob" => "augmentation",
                _ => "",
            };
            if !section.is_empty() {
                let gap = if s.is_empty() { "" } else { "\n" };
                write!(s, "{gap}# {section}\n").unwrap();
            }
            writeln!(s, "{k} = {v}").unwrap();
        };
        kv("image_size", m.image_size.to_string());
        kv("patch_size", m.patch_size.to_string());
        kv("embed_dim", m.embed_dim.to_string());
        kv("num_heads", m.num_heads.to_string());
        kv("encoder_layers", m.num_encoder_layers.to_string());
        kv("mlp_ratio", m.mlp_ratio.to_string());
        kv("cnn_channels", channels.join(","));
        kv("dropout", m.dropout_p.to_string());
        kv("graph_connectivity", m.graph_connectivity.to_string());
        kv("gat_leaky_slope", m.gat_leaky_slope.to_string());
        kv("num_classes", m.num_classes.to_string());
        kv("num_rotations", m.num_rotations.to_string());
        kv("rotation_loss_weight", m.rotation_loss_weight.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("max_epochs", t.max_epochs.to_string());
        kv("patience", t.patience.to_string());
        kv("adam_beta1", t.adam_beta1.to_string());
        kv("adam_beta2", t.adam_beta2.to_string());
        kv("adam_eps", t.adam_eps.to_string());
        kv("seed", t.seed.to_string());
        kv("data", self.data_root.clone());
        kv("synth_per_class", self.synth_per_class.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("eval_threads", self.eval_threads.to_string());
        for (prefix, p) in [("train_aug", &self.train_policy), ("test_aug", &self.test_policy)] {
            for k in POLICY_KEYS {
                kv(&format!("{prefix}.{k}"), policy_get(p, k));
            }
        }
        s
    }
}

fn strip(e: HgtError) -> String {
    match e {
        HgtError::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("image_size", "32").unwrap();
        cfg.set("learning_rate", "0.00030000000000000003").unwrap();
        cfg.set("cnn_channels", "4, 8").unwrap();
        cfg.set("train_aug.hue", "0.01").unwrap();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train_policy.target_size, (32, 32));
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::from_text("# header\n\nseed = 9  # trailing\nencoder_layers=2\n").unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model.num_encoder_layers, 2);
        for (text, needle) in [
            ("bogus = 1", "line 1: unknown key `bogus`"),
            ("seed = 1\nseed = 2", "line 2"),
            ("seed", "expected `key = value`"),
            ("patience = x", "cannot parse"),
            ("patience = 0", "patience"),
        ] {
            let err = RunConfig::from_text(text).unwrap_err();
            assert!(matches!(err, HgtError::Config(_) | HgtError::Core(_)), "{text}");
            assert_eq!(err.exit_code(), 2, "{text}");
            assert!(err.to_string().contains(needle), "{text}: {err}");
        }
    }
}
