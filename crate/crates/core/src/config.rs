//! Flat-text run configuration.
//!
//! One `key = value` per line, `#` comments, UTF-8. Unknown keys are
//! rejected; every key has a documented default; `parse(serialize(c)) == c`.

use crate::error::IoError;

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr ; )*) => {
        /// Every dataset / codec / network / flow / eval knob, flattened.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $key: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $key: $default, )* }
            }
        }

        impl RunConfig {
            /// Canonical text form; re-parses to an equal config.
            pub fn serialize(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(stringify!($key));
                    out.push_str(" = ");
                    out.push_str(&ConfigValue::render(&self.$key));
                    out.push('\n');
                )*
                out
            }

            fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), IoError> {
                match key {
                    $(
                        stringify!($key) => {
                            self.$key = ConfigValue::parse(value).map_err(|e| {
                                IoError::format(origin, format!("key {key}: {e}"))
                            })?;
                            Ok(())
                        }
                    )*
                    _ => Err(IoError::format(
                        origin,
                        format!("unknown key {key:?} (see documented defaults)"),
                    )),
                }
            }
        }
    };
}

run_config! {
    // ── dataset ──────────────────────────────────────────────────────
    /// Frames per clip.
    frames: usize = 8;
    /// Frame height in pixels; must be divisible by 4.
    height: usize = 32;
    /// Frame width in pixels; must be divisible by 4.
    width: usize = 32;
    /// Training split size.
    train_samples: usize = 2000;
    /// Validation split size.
    val_samples: usize = 200;
    /// Seed for dataset generation.
    data_seed: u64 = 0;
    /// Dataset root containing `train/` and `val/`.
    data_dir: String = "data".to_string();

    // ── codec ────────────────────────────────────────────────────────
    /// Latent channels C; the encoder emits 2C (mean, logvar).
    latent_channels: usize = 8;
    /// Codec pretraining epochs over the video split.
    codec_epochs: usize = 3;
    /// Codec pretraining learning rate.
    codec_lr: f64 = 1e-3;
    /// KL weight during codec pretraining.
    codec_kl_weight: f64 = 1e-4;
    /// Videos per codec optimizer step.
    codec_batch: usize = 4;
    /// Seed for codec init and pretraining order.
    codec_seed: u64 = 0;
    /// Path to a pretrained (or adapted) codec checkpoint.
    codec_checkpoint: String = String::new();
    /// Decoder adaptation: frozen | conv-head | finetuned.
    decoder_strategy: String = "finetuned".to_string();
    /// Decoder adaptation epochs over the mask split.
    finetune_epochs: usize = 1;
    /// Decoder adaptation learning rate.
    finetune_lr: f64 = 1e-3;

    // ── velocity net ─────────────────────────────────────────────────
    /// Model width D.
    model_width: usize = 128;
    /// Transformer block count.
    blocks: usize = 4;
    /// Attention heads; must divide model_width.
    heads: usize = 4;
    /// Condition slots K (query token positions).
    cond_slots: usize = 8;
    /// Seed for network initialization.
    net_seed: u64 = 0;

    // ── flow ─────────────────────────────────────────────────────────
    /// Paradigm: video2mask-flow | noise2mask-flow | onestep-mask | onestep-velocity.
    paradigm: String = "video2mask-flow".to_string();
    /// Probability mass placed exactly at t = 0 during training.
    p_bbs: f64 = 0.5;
    /// Start-point augmentation: sample the encoder posterior for z0.
    spa: bool = true;
    /// Direct video injection: concat the video latent at every net call.
    dvi: bool = true;
    /// Euler steps N at inference.
    ode_steps: usize = 10;
    /// Items per flow optimizer step.
    batch_size: usize = 8;
    /// Flow training epochs.
    epochs: usize = 10;
    /// Flow learning rate.
    flow_lr: f64 = 3e-4;
    /// Decoupled weight decay for all optimizers.
    weight_decay: f64 = 5e-4;
    /// Seed for flow training (shuffling, SPA, timesteps).
    seed: u64 = 0;
    /// Path to a trained flow checkpoint (for infer/eval).
    flow_checkpoint: String = String::new();
    /// Extra reproducibility checkpoint written at this step (0 = off).
    checkpoint_probe_step: u64 = 10;

    // ── eval ─────────────────────────────────────────────────────────
    /// Mask probability binarization threshold.
    binarize_threshold: f64 = 0.5;
    /// Jaccard aggregation: clip (sum of per-frame I over U) | frame (mean of per-frame IoU).
    j_aggregation: String = "clip".to_string();
    /// Worker threads for generation/evaluation; 0 = all cores. The
    /// FLOWSEG_THREADS environment variable overrides.
    threads: usize = 0;
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, IoError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(IoError::format(
                    origin,
                    format!("line {}: expected `key = value`, got {raw:?}", lineno + 1),
                ));
            };
            cfg.set(key.trim(), value.trim(), origin)?;
        }
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IoError::file(path.display().to_string(), e))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    fn validate(&self, origin: &str) -> Result<(), IoError> {
        let err = |reason: String| Err(IoError::format(origin, reason));
        if self.height % 4 != 0 || self.width % 4 != 0 {
            return err(format!(
                "height/width must be divisible by 4, got {}x{}",
                self.height, self.width
            ));
        }
        if self.model_width % self.heads != 0 {
            return err(format!(
                "model_width {} not divisible by heads {}",
                self.model_width, self.heads
            ));
        }
        if !(0.0..=1.0).contains(&self.p_bbs) {
            return err(format!("p_bbs must lie in [0,1], got {}", self.p_bbs));
        }
        if self.ode_steps == 0 {
            return err("ode_steps must be >= 1".into());
        }
        for (name, value, allowed) in [
            (
                "paradigm",
                self.paradigm.as_str(),
                &[
                    "video2mask-flow",
                    "noise2mask-flow",
                    "onestep-mask",
                    "onestep-velocity",
                ][..],
            ),
            (
                "decoder_strategy",
                self.decoder_strategy.as_str(),
                &["frozen", "conv-head", "finetuned"][..],
            ),
            ("j_aggregation", self.j_aggregation.as_str(), &["clip", "frame"][..]),
        ] {
            if !allowed.contains(&value) {
                return err(format!("{name} must be one of {allowed:?}, got {value:?}"));
            }
        }
        Ok(())
    }

    /// Worker count for parallel generation/evaluation.
    pub fn effective_threads(&self) -> usize {
        if let Ok(v) = std::env::var("FLOWSEG_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n > 0 {
                    return n;
                }
            }
        }
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }
}

/// Per-type value rendering/parsing for config fields.
trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse(s: &str) -> Result<Self, String>;
}

impl ConfigValue for usize {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected an unsigned integer, got {s:?}"))
    }
}

impl ConfigValue for u64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected an unsigned integer, got {s:?}"))
    }
}

impl ConfigValue for f64 {
    fn render(&self) -> String {
        format!("{self}")
    }
    fn parse(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("expected a number, got {s:?}"))?;
        if !v.is_finite() {
            return Err(format!("expected a finite number, got {s:?}"));
        }
        Ok(v)
    }
}

impl ConfigValue for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            _ => Err(format!("expected true/false/on/off, got {s:?}")),
        }
    }
}

impl ConfigValue for String {
    fn render(&self) -> String {
        self.clone()
    }
    fn parse(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialize_parse_roundtrip_of_defaults() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        let back = RunConfig::parse(&text, "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn roundtrip_with_modified_values() {
        let mut cfg = RunConfig::default();
        cfg.p_bbs = 0.25;
        cfg.spa = false;
        cfg.paradigm = "onestep-velocity".to_string();
        cfg.flow_lr = 6.5e-5;
        cfg.codec_checkpoint = "runs/codec/codec.frvs".to_string();
        let back = RunConfig::parse(&cfg.serialize(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("no_such_key = 3\n", "mem").unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# comment\n\nframes = 4\n", "mem").unwrap();
        assert_eq!(cfg.frames, 4);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(RunConfig::parse("height = 30\n", "mem").is_err());
        assert!(RunConfig::parse("p_bbs = 1.5\n", "mem").is_err());
        assert!(RunConfig::parse("paradigm = sideways\n", "mem").is_err());
        assert!(RunConfig::parse("ode_steps = 0\n", "mem").is_err());
    }

    #[test]
    fn bool_aliases_parse() {
        let cfg = RunConfig::parse("spa = off\ndvi = on\n", "mem").unwrap();
        assert!(!cfg.spa);
        assert!(cfg.dvi);
    }
}
