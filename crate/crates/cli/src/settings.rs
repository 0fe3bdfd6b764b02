//! Hyperparameters: defaults, overridden by a flat TOML config file,
//! overridden by command-line flags. Key `batch_size` is flag `--batch-size`.

use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

macro_rules! settings {
    ($($(#[doc = $doc:literal])* $name:ident: $ty:ty = $default:expr;)*) => {
        /// Values given on the command line or in a config file.
        #[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
        #[serde(deny_unknown_fields)]
        pub struct Overrides {
            $(
                $(#[doc = $doc])*
                #[arg(long, global = true, help_heading = "Settings")]
                pub $name: Option<$ty>,
            )*
        }

        /// Fully resolved settings.
        #[derive(Clone, Debug, PartialEq, Serialize)]
        pub struct Settings {
            $(pub $name: $ty,)*
        }

        impl Overrides {
            /// Keeps every value set here and fills the rest from `lower`.
            pub fn over(self, lower: Overrides) -> Overrides {
                Overrides {
                    $($name: self.$name.or(lower.$name),)*
                }
            }

            pub fn resolve(self) -> Settings {
                Settings {
                    $($name: self.$name.unwrap_or($default),)*
                }
            }
        }
    };
}

settings! {
    /// Weight of the contrastive loss, in [0, 1] [default: 0.5]
    lambda: f64 = 0.5;
    /// Adam learning rate [default: 0.001]
    lr: f64 = 1e-3;
    /// Gradient norm clip, 0 to disable [default: 5]
    clip_norm: f64 = 5.0;
    /// Sentences per batch [default: 16]
    batch_size: usize = 16;
    /// Training epochs [default: 10]
    epochs: usize = 10;
    /// Longer training sentences are skipped [default: 20]
    max_train_len: usize = 20;
    /// Longer sentences are not parsed [default: 60]
    max_parse_len: usize = 60;
    /// Unit-length region features and cosine matching [default: true]
    normalize_sim: bool = true;
    /// Epochs trained on the harmonic initializer first [default: 1]
    harmonic_warmup_epochs: usize = 1;
    /// Alignment candidates kept per token [default: 1]
    topk_align: usize = 1;
    /// Similarity below which a token stays unaligned [default: 0.4]
    align_threshold: f64 = 0.4;
    /// Seed for initialization, shuffling and synthetic data [default: 0]
    seed: u64 = 0;
    /// POS tag embedding width [default: 16]
    tag_dim: usize = 16;
    /// Hidden width of every MLP [default: 64]
    hidden: usize = 64;
    /// Attention key width [default: 32]
    attn_dim: usize = 32;
    /// Matching space width [default: 32]
    match_dim: usize = 32;
    /// Relationship biaffine rank [default: 16]
    rel_rank: usize = 16;
    /// Arc context biaffine rank [default: 16]
    arc_rank: usize = 16;
    /// Decoder tag embedding width [default: 16]
    dec_tag_dim: usize = 16;
    /// Train the pretrained word vectors too [default: false]
    finetune_words: bool = false;
    /// Synthetic sentences over all splits [default: 2000]
    sentences: usize = 2000;
    /// Longest synthetic sentence [default: 10]
    max_len: usize = 10;
    /// Synthetic POS tags [default: 8]
    tags: usize = 8;
    /// Synthetic words per tag [default: 4]
    words_per_tag: usize = 4;
    /// Dirichlet concentration of the synthetic grammar [default: 0.5]
    concentration: f64 = 0.5;
    /// Synthetic concept dimension; features are four times wider [default: 32]
    concept_dim: usize = 32;
    /// Synthetic feature noise [default: 0.1]
    sigma: f64 = 0.1;
    /// Unmentioned objects per synthetic image [default: 2]
    distractors: usize = 2;
    /// Synthetic dev share [default: 0.1]
    dev_fraction: f64 = 0.1;
    /// Synthetic test share [default: 0.1]
    test_fraction: f64 = 0.1;
}

impl Overrides {
    pub fn load(path: &Path) -> Result<Overrides, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.lambda) {
            bad.push(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            bad.push(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        if !(0.0..=1.0).contains(&self.align_threshold) {
            bad.push(format!("align_threshold must lie in [0, 1], got {}", self.align_threshold));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_train_len", self.max_train_len),
            ("max_parse_len", self.max_parse_len),
            ("topk_align", self.topk_align),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be positive"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(bad.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("settings serialize");
        Sha256::digest(&json).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_cli_then_config_then_default() {
        let cli = Overrides {
            lr: Some(0.1),
            ..Default::default()
        };
        let file: Overrides = toml::from_str("lr = 0.5\nepochs = 3\n").unwrap();
        let s = cli.over(file).resolve();
        assert_eq!(s.lr, 0.1);
        assert_eq!(s.epochs, 3);
        assert_eq!(s.batch_size, 16);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<Overrides>("learning_rate = 0.5\n").is_err());
    }

    #[test]
    fn digest_tracks_values() {
        let a = Overrides::default().resolve();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 7;
        assert_ne!(a.digest(), b.digest());
    }
}
