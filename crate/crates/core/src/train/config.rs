use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::read;
use crate::nn::{BlockType, ModelConfig};

use super::optim::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Cosine annealing restarted every period.
    Restarts,
    /// One half-cosine, then held at `min_lr`.
    Single,
}

impl Schedule {
    fn as_str(self) -> &'static str {
        match self {
            Schedule::Restarts => "restarts",
            Schedule::Single => "single",
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "restarts" => Ok(Schedule::Restarts),
            "single" => Ok(Schedule::Single),
            _ => Err(Error::Config(format!(
                "unknown schedule {s:?} (restarts|single)"
            ))),
        }
    }
}

/// Training recipe plus the model fields that vary between runs. Serialised
/// as flat `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scale: usize,
    pub block_type: BlockType,
    pub num_blocks: usize,
    pub nf: usize,
    pub unf: usize,
    pub pa_in_blocks: bool,
    pub pa_in_upsampler: bool,

    pub max_lr: f64,
    pub min_lr: f64,
    pub cosine_period: u64,
    pub schedule: Schedule,
    pub batch: usize,
    pub hr_patch: usize,
    pub augment: bool,
    pub total_iters: u64,
    pub seed: u64,
    /// 0 disables evaluation.
    pub eval_every: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scale: 4,
            block_type: BlockType::Scpa,
            num_blocks: 16,
            nf: 40,
            unf: 24,
            pa_in_blocks: true,
            pa_in_upsampler: true,
            max_lr: 1e-3,
            min_lr: 1e-7,
            cosine_period: 250_000,
            schedule: Schedule::Restarts,
            batch: 32,
            hr_patch: 256,
            augment: true,
            total_iters: 250_000,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            block_type: self.block_type,
            num_blocks: self.num_blocks,
            nf: self.nf,
            unf: self.unf,
            pa_in_blocks: self.pa_in_blocks,
            pa_in_upsampler: self.pa_in_upsampler,
            ..ModelConfig::pan(self.scale)
        }
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "scale" => self.scale = parse_value(key, raw)?,
            "block_type" => self.block_type = raw.parse()?,
            "num_blocks" => self.num_blocks = parse_value(key, raw)?,
            "nf" => self.nf = parse_value(key, raw)?,
            "unf" => self.unf = parse_value(key, raw)?,
            "pa_in_blocks" => self.pa_in_blocks = parse_value(key, raw)?,
            "pa_in_upsampler" => self.pa_in_upsampler = parse_value(key, raw)?,
            "max_lr" => self.max_lr = parse_value(key, raw)?,
            "min_lr" => self.min_lr = parse_value(key, raw)?,
            "cosine_period" => self.cosine_period = parse_value(key, raw)?,
            "schedule" => self.schedule = raw.parse()?,
            "batch" => self.batch = parse_value(key, raw)?,
            "hr_patch" => self.hr_patch = parse_value(key, raw)?,
            "augment" => self.augment = parse_value(key, raw)?,
            "total_iters" => self.total_iters = parse_value(key, raw)?,
            "seed" => self.seed = parse_value(key, raw)?,
            "eval_every" => self.eval_every = parse_value(key, raw)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, raw)?,
            "beta1" => self.adam.beta1 = parse_value(key, raw)?,
            "beta2" => self.adam.beta2 = parse_value(key, raw)?,
            "eps" => self.adam.eps = parse_value(key, raw)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    /// Errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let at = |e: Error| {
                Error::Config(format!(
                    "line {}: {}",
                    i + 1,
                    e.to_string().trim_start_matches("invalid config: ")
                ))
            };
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| at(Error::Config(format!("expected key = value, got {line:?}"))))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(Error::Config(format!("duplicate key {key:?}"))));
            }
            cfg.set(key, raw).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read(path)?)
            .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
        Self::parse(&text).map_err(|e| {
            Error::Config(format!(
                "{}: {}",
                path.display(),
                e.to_string().trim_start_matches("invalid config: ")
            ))
        })
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scale", &self.scale);
        kv("block_type", &self.block_type.as_str());
        kv("num_blocks", &self.num_blocks);
        kv("nf", &self.nf);
        kv("unf", &self.unf);
        kv("pa_in_blocks", &self.pa_in_blocks);
        kv("pa_in_upsampler", &self.pa_in_upsampler);
        kv("max_lr", &self.max_lr);
        kv("min_lr", &self.min_lr);
        kv("cosine_period", &self.cosine_period);
        kv("schedule", &self.schedule.as_str());
        kv("batch", &self.batch);
        kv("hr_patch", &self.hr_patch);
        kv("augment", &self.augment);
        kv("total_iters", &self.total_iters);
        kv("seed", &self.seed);
        kv("eval_every", &self.eval_every);
        kv("checkpoint_every", &self.checkpoint_every);
        kv("beta1", &self.adam.beta1);
        kv("beta2", &self.adam.beta2);
        kv("eps", &self.adam.eps);
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.min_lr >= 0.0 && self.min_lr < self.max_lr) {
            return bad(format!(
                "need 0 <= min_lr < max_lr, got {} and {}",
                self.min_lr, self.max_lr
            ));
        }
        if self.cosine_period == 0 {
            return bad("cosine_period must be positive".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if self.hr_patch == 0 || self.hr_patch % self.scale != 0 {
            return bad(format!(
                "hr_patch {} must be a positive multiple of scale {}",
                self.hr_patch, self.scale
            ));
        }
        let b = |v: f64| (0.0..1.0).contains(&v);
        if !b(self.adam.beta1) || !b(self.adam.beta2) || self.adam.eps <= 0.0 {
            return bad("adam needs betas in [0, 1) and eps > 0".into());
        }
        Ok(())
    }
}
