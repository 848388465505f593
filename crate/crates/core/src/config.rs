//! Flat `key=value` run configuration, scoped per subcommand.
//!
//! Values are resolved from built-in defaults, then a config file, then
//! command-line overrides. Unknown keys are errors. The resolved form starts
//! with a `# iert <subcommand>` comment line and can be fed back through
//! `--config` to repeat a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::corpus::{BuildOptions, ParseSchema, SyntheticSpec};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::FineTuneConfig;
use crate::pretrain::{MaskingConfig, PretrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Ingest,
    Synth,
    Pretrain,
    Finetune,
    Recommend,
    Evaluate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::Ingest,
        Subcommand::Synth,
        Subcommand::Pretrain,
        Subcommand::Finetune,
        Subcommand::Recommend,
        Subcommand::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Ingest => "ingest",
            Subcommand::Synth => "synth",
            Subcommand::Pretrain => "pretrain",
            Subcommand::Finetune => "finetune",
            Subcommand::Recommend => "recommend",
            Subcommand::Evaluate => "evaluate",
        }
    }

    /// Every accepted key with its default.
    pub fn defaults(self) -> Vec<(&'static str, &'static str)> {
        const COMMON: [(&str, &str); 2] = [("seed", "0"), ("out", "out")];
        const ENCODER: [(&str, &str); 8] = [
            ("hidden_size", "64"),
            ("num_layers", "2"),
            ("num_heads", "2"),
            ("feed_forward_size", "256"),
            ("max_sequence_length", "128"),
            ("dropout_rate", "0.1"),
            ("init_std", "0.02"),
            ("positions_per_basket", "false"),
        ];
        let own: &[(&str, &str)] = match self {
            Subcommand::Ingest => &[
                ("input", ""),
                ("delimiter", ";"),
                ("user_col", "user"),
                ("date_col", "date"),
                ("item_col", "item"),
                ("date_format", "%Y-%m-%d"),
                ("min_item_users", "10"),
                ("min_user_items", "10"),
                ("max_basket_items", "100"),
            ],
            Subcommand::Synth => &[
                ("n_users", "200"),
                ("n_items", "100"),
                ("n_baskets_per_user", "10"),
                ("n_pairs", "10"),
                ("n_rules", "10"),
                ("noise_rate", "0.05"),
                ("items_per_basket", "3"),
                ("trigger_rate", "1.0"),
                ("phases", "0"),
            ],
            Subcommand::Pretrain => &[
                ("corpus", ""),
                ("resume", ""),
                ("batch_size", "32"),
                ("steps", "40000"),
                ("learning_rate", "0.00002"),
                ("mask_rate", "0.15"),
                ("mask_token_prob", "0.8"),
                ("random_token_prob", "0.1"),
                ("negative_mode", "same_user"),
                ("mip_same_basket_only", "false"),
                ("checkpoint_every", "0"),
            ],
            Subcommand::Finetune => &[
                ("corpus", ""),
                ("pretrained", ""),
                ("neg_per_pos", "4"),
                ("m", ""),
                ("n", "1"),
                ("epochs", "1"),
                ("batch_size", "32"),
                ("learning_rate", "0.00002"),
                ("negative_sampling", "uniform"),
                ("user_init_mean", "0"),
                ("aux_mip_weight", "0"),
            ],
            Subcommand::Recommend => &[("corpus", ""), ("model", ""), ("k", "5"), ("exclude_seen", "false")],
            Subcommand::Evaluate => &[
                ("corpus", ""),
                ("recommendations", ""),
                ("baseline", "false"),
                ("model_name", "IERT"),
                ("k", "5"),
            ],
        };
        let mut all: Vec<(&str, &str)> = COMMON.to_vec();
        all.extend_from_slice(own);
        if matches!(self, Subcommand::Pretrain | Subcommand::Finetune) {
            all.extend_from_slice(&ENCODER);
        }
        all
    }
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand `{s}`")))
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(subcommand: Subcommand) -> Self {
        let values = subcommand
            .defaults()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RunConfig { subcommand, values }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!(
                "unknown key `{key}` for `{}`; accepted: {}",
                self.subcommand,
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("{origin}:{}", n + 1),
                reason: "expected key=value".into(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn resolved_text(&self) -> String {
        let mut out = format!("# iert {}\n", self.subcommand);
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("key `{key}` does not apply to `{}`", self.subcommand)))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("`{key}={raw}`: cannot parse as {}", std::any::type_name::<T>())))
    }

    /// `None` when the value is empty.
    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let raw = self.raw(key)?;
        Ok((!raw.is_empty()).then(|| PathBuf::from(raw)))
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)?
            .ok_or_else(|| Error::Config(format!("`{key}` is required for `{}`", self.subcommand)))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.required_path("out")
    }

    pub fn encoder_config(&self, vocab_size: usize) -> Result<EncoderConfig> {
        let c = EncoderConfig {
            hidden_size: self.get("hidden_size")?,
            num_layers: self.get("num_layers")?,
            num_heads: self.get("num_heads")?,
            feed_forward_size: self.get("feed_forward_size")?,
            max_sequence_length: self.get("max_sequence_length")?,
            vocab_size,
            num_segments: 2,
            dropout_rate: self.get("dropout_rate")?,
            init_std: self.get("init_std")?,
            positions_per_basket: self.get("positions_per_basket")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        let masking = MaskingConfig {
            mask_rate: self.get("mask_rate")?,
            mask_token_prob: self.get("mask_token_prob")?,
            random_token_prob: self.get("random_token_prob")?,
        };
        masking.validate()?;
        Ok(PretrainConfig {
            batch_size: self.get("batch_size")?,
            steps: self.get("steps")?,
            learning_rate: self.get("learning_rate")?,
            masking,
            negative_mode: self.get("negative_mode")?,
            mip_same_basket_only: self.get("mip_same_basket_only")?,
            seed: self.seed()?,
            checkpoint_every: self.get("checkpoint_every")?,
        })
    }

    /// `m` defaults to `neg_per_pos` when left empty.
    pub fn finetune_config(&self) -> Result<FineTuneConfig> {
        let neg_per_pos: usize = self.get("neg_per_pos")?;
        let m = if self.raw("m")?.is_empty() {
            neg_per_pos.max(1) as f64
        } else {
            self.get("m")?
        };
        let c = FineTuneConfig {
            neg_per_pos,
            pos_weight: m,
            neg_weight: self.get("n")?,
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            learning_rate: self.get("learning_rate")?,
            negative_sampling: self.get("negative_sampling")?,
            user_init_mean: self.get("user_init_mean")?,
            aux_mip_weight: self.get("aux_mip_weight")?,
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let mut spec = SyntheticSpec::planted(
            self.get("n_users")?,
            self.get("n_items")?,
            self.get("n_baskets_per_user")?,
            self.get("n_pairs")?,
            self.get("n_rules")?,
            self.get("noise_rate")?,
            self.seed()?,
        );
        spec.items_per_basket = self.get("items_per_basket")?;
        spec.trigger_rate = self.get("trigger_rate")?;
        spec.phases = self.get("phases")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse_schema(&self) -> Result<ParseSchema> {
        let delimiter = match self.raw("delimiter")? {
            "\\t" | "tab" => b'\t',
            d if d.len() == 1 => d.as_bytes()[0],
            other => return Err(Error::Config(format!("delimiter must be one byte or `tab`, got `{other}`"))),
        };
        Ok(ParseSchema {
            delimiter,
            user_col: self.raw("user_col")?.to_string(),
            date_col: self.raw("date_col")?.to_string(),
            item_col: self.raw("item_col")?.to_string(),
            date_format: self.raw("date_format")?.to_string(),
        })
    }

    pub fn build_options(&self) -> Result<BuildOptions> {
        Ok(BuildOptions {
            min_item_users: self.get("min_item_users")?,
            min_user_items: self.get("min_user_items")?,
            max_basket_items: self.get("max_basket_items")?,
            min_user_baskets: 3,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::new(Subcommand::Evaluate);
        assert!(matches!(c.set("steps", "3"), Err(Error::Config(_))));
        assert!(c.set("k", "10").is_ok());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::new(Subcommand::Pretrain);
        c.apply_override("steps=12").unwrap();
        let mut again = RunConfig::new(Subcommand::Pretrain);
        again.apply_text(&c.resolved_text(), "resolved").unwrap();
        assert_eq!(again, c);
        assert_eq!(again.pretrain_config().unwrap().steps, 12);
    }

    #[test]
    fn m_defaults_to_neg_per_pos() {
        let mut c = RunConfig::new(Subcommand::Finetune);
        c.set("neg_per_pos", "7").unwrap();
        assert_eq!(c.finetune_config().unwrap().pos_weight, 7.0);
        c.set("m", "2.5").unwrap();
        assert_eq!(c.finetune_config().unwrap().pos_weight, 2.5);
    }

    #[test]
    fn bad_value_is_config_error() {
        let mut c = RunConfig::new(Subcommand::Pretrain);
        c.set("negative_mode", "sideways").unwrap();
        assert!(matches!(c.pretrain_config(), Err(Error::Config(_))));
        assert!(c.apply_text("no equals sign", "x").is_err());
    }
}
