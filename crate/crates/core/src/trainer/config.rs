//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::env::DebateConfig;
use crate::error::{Error, Result};
use crate::model::ModelDims;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub debate: DebateConfig,
    pub dims: ModelDims,
    pub batch_size: usize,
    pub lr_agents: f64,
    pub lr_judge: f64,
    pub use_baseline: bool,
    pub baseline_decay: f64,
    pub entropy_weight: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Judge-only epochs against uniformly random debaters before
    /// adversarial training starts.
    pub pretrain_epochs: usize,
    pub eval_every: usize,
    /// Debates per training query per batch.
    pub train_rollouts: usize,
    /// Seed for evaluation debates.
    pub eval_seed: u64,
    /// Threads used to sample debates. Results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            debate: DebateConfig::default(),
            dims: ModelDims::default(),
            batch_size: 64,
            lr_agents: 1e-4,
            lr_judge: 1e-3,
            use_baseline: true,
            baseline_decay: 0.99,
            entropy_weight: 1e-2,
            weight_decay: 0.0,
            epochs: 20,
            pretrain_epochs: 10,
            eval_every: 1,
            train_rollouts: 1,
            eval_seed: 1234,
            workers: 1,
        }
    }
}

/// Every accepted key, in the order `to_text` writes them.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "rounds",
    "horizon",
    "rollouts_per_query",
    "mask_query_relation",
    "entity_dim",
    "relation_dim",
    "hidden_dim",
    "judge_hidden1",
    "judge_hidden2",
    "batch_size",
    "lr_agents",
    "lr_judge",
    "use_baseline",
    "baseline_decay",
    "entropy_weight",
    "weight_decay",
    "epochs",
    "pretrain_epochs",
    "eval_every",
    "train_rollouts",
    "eval_seed",
    "workers",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.debate.seed = parse(key, v)?,
            "rounds" => self.debate.rounds = parse(key, v)?,
            "horizon" => self.debate.horizon = parse(key, v)?,
            "rollouts_per_query" => self.debate.rollouts_per_query = parse(key, v)?,
            "mask_query_relation" => self.debate.mask_query_relation = parse(key, v)?,
            "entity_dim" => self.dims.entity_dim = parse(key, v)?,
            "relation_dim" => self.dims.relation_dim = parse(key, v)?,
            "hidden_dim" => self.dims.hidden_dim = parse(key, v)?,
            "judge_hidden1" => self.dims.judge_hidden1 = parse(key, v)?,
            "judge_hidden2" => self.dims.judge_hidden2 = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_agents" => self.lr_agents = parse(key, v)?,
            "lr_judge" => self.lr_judge = parse(key, v)?,
            "use_baseline" => self.use_baseline = parse(key, v)?,
            "baseline_decay" => self.baseline_decay = parse(key, v)?,
            "entropy_weight" => self.entropy_weight = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "train_rollouts" => self.train_rollouts = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.debate.seed.to_string(),
            "rounds" => self.debate.rounds.to_string(),
            "horizon" => self.debate.horizon.to_string(),
            "rollouts_per_query" => self.debate.rollouts_per_query.to_string(),
            "mask_query_relation" => self.debate.mask_query_relation.to_string(),
            "entity_dim" => self.dims.entity_dim.to_string(),
            "relation_dim" => self.dims.relation_dim.to_string(),
            "hidden_dim" => self.dims.hidden_dim.to_string(),
            "judge_hidden1" => self.dims.judge_hidden1.to_string(),
            "judge_hidden2" => self.dims.judge_hidden2.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_agents" => self.lr_agents.to_string(),
            "lr_judge" => self.lr_judge.to_string(),
            "use_baseline" => self.use_baseline.to_string(),
            "baseline_decay" => self.baseline_decay.to_string(),
            "entropy_weight" => self.entropy_weight.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "epochs" => self.epochs.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "train_rollouts" => self.train_rollouts.to_string(),
            "eval_seed" => self.eval_seed.to_string(),
            "workers" => self.workers.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply(text)?;
        Ok(config)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.debate.validate()?;
        let dims = [
            self.dims.entity_dim,
            self.dims.relation_dim,
            self.dims.hidden_dim,
            self.dims.judge_hidden1,
            self.dims.judge_hidden2,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.train_rollouts == 0 || self.workers == 0 {
            return Err(Error::Config(
                "batch_size, eval_every, train_rollouts and workers must be positive".into(),
            ));
        }
        if !(self.lr_agents > 0.0 && self.lr_judge > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("baseline_decay must lie in [0, 1)".into()));
        }
        if !(self.entropy_weight >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("entropy_weight and weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}
