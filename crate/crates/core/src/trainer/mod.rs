//! Training: judge pretraining on random debates, then alternating judge and
//! agent updates on self-play debates, with periodic evaluation.
//!
//! Every random draw comes from a stream derived from the configured seed
//! and the position of the draw (phase, epoch, batch, query, rollout), and
//! all updates are applied sequentially. The same seed and data therefore
//! reproduce the same parameters and metrics log regardless of `workers`.

mod config;
mod eval;
mod reinforce;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{TrainConfig, CONFIG_KEYS};
pub use eval::{evaluate, evaluate_with, majority_vote, EvalReport, Evaluation, QueryOutcome, RelationAccuracy};
pub use reinforce::{
    argument_reward, policy_gradient, reinforce_step, round_rewards, samples_for, Baseline, ReinforceSettings,
    ReinforceStats, RoundSample,
};

use crate::autodiff::Adam;
use crate::env::{run_debate, AgentId, DebateConfig, DebateTranscript};
use crate::error::{Error, Result};
use crate::judge::judge_update;
use crate::kg::{build_index, DatasetSplit, GraphIndex, LabeledQuery, Triple, Vocab};
use crate::model::Model;
use crate::policy::UniformPolicy;
use crate::rng::{derived, DebateRng};

const STREAM_INIT: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_TRAIN: u64 = 3;

/// The stream for debate `k` on `query` under `seed`.
pub fn debate_rng(seed: u64, query: &Triple, k: u64) -> DebateRng {
    derived(seed, &[query.s as u64, query.p as u64, query.o as u64, k])
}

/// Maps over `0..n`, in parallel when more than one worker is configured.
/// Output order always matches input order.
pub struct Runner {
    pool: Option<rayon::ThreadPool>,
}

impl Runner {
    pub fn new(workers: usize) -> Result<Self> {
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { pool })
    }

    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync,
    {
        match &self.pool {
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            None => (0..n).map(f).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEpochStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochStats {
    pub batches: usize,
    pub judge_loss: f64,
    pub agent1: AgentEpochStats,
    pub agent2: AgentEpochStats,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub pretrain_judge_loss: Option<f64>,
    pub train: Option<EpochStats>,
    pub eval: EvalReport,
}

/// Where training writes as it goes.
#[derive(Default)]
pub struct TrainSinks<'a> {
    /// Receives one JSON record per evaluation.
    pub metrics: Option<&'a mut dyn Write>,
    /// Rewritten at every evaluation.
    pub checkpoint: Option<&'a Path>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

pub fn checkpoint_metadata(config: &TrainConfig, epoch: usize) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("config".to_owned(), config.to_text()),
        ("epoch".to_owned(), epoch.to_string()),
    ])
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    vocab: &'a Vocab,
    split: &'a DatasetSplit,
    index: GraphIndex,
    runner: Runner,
    optimizer: Adam,
    model: Model,
    baselines: [Baseline; 2],
}

impl<'a> Trainer<'a> {
    fn debates<P1, P2>(
        &self,
        queries: &[LabeledQuery],
        rollouts: usize,
        stream: &[u64],
        pro: &P1,
        con: &P2,
    ) -> Result<Vec<(DebateTranscript, bool)>>
    where
        P1: crate::policy::Policy + Sync,
        P2: crate::policy::Policy + Sync,
    {
        let debate = self.config.debate;
        let seed = debate.seed;
        let index = &self.index;
        let nested = self.runner.map(queries.len(), |i| {
            (0..rollouts)
                .map(|k| {
                    let mut path = stream.to_vec();
                    path.extend([i as u64, k as u64]);
                    let mut rng = derived(seed, &path);
                    let t = run_debate(index, &debate, queries[i].triple, pro, con, &mut rng)?;
                    Ok((t, queries[i].label))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(nested.into_iter().flatten().collect())
    }

    fn shuffled(&self, stream: &[u64]) -> Vec<LabeledQuery> {
        let mut queries = self.split.train.clone();
        queries.shuffle(&mut derived(self.config.debate.seed, stream));
        queries
    }

    fn pretrain_epoch(&mut self, epoch: usize) -> Result<f64> {
        let queries = self.shuffled(&[STREAM_PRETRAIN, epoch as u64]);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in queries.chunks(self.config.batch_size).enumerate() {
            let stream = [STREAM_PRETRAIN, epoch as u64, b as u64];
            let debates = self.debates(batch, self.config.train_rollouts, &stream, &UniformPolicy, &UniformPolicy)?;
            let labelled: Vec<(&DebateTranscript, bool)> = debates.iter().map(|(t, l)| (t, *l)).collect();
            total += judge_update(
                &mut self.model.store,
                &self.model.judge,
                &self.optimizer,
                self.config.lr_judge,
                &labelled,
            )?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<EpochStats> {
        let queries = self.shuffled(&[STREAM_TRAIN, epoch as u64]);
        let mut judge_loss = 0.0;
        let mut agent_sums = [[0.0; 3]; 2];
        let mut batches = 0;
        let settings = ReinforceSettings {
            lr: self.config.lr_agents,
            entropy_weight: self.config.entropy_weight,
            use_baseline: self.config.use_baseline,
            mask_query_relation: self.config.debate.mask_query_relation,
        };
        for (b, batch) in queries.chunks(self.config.batch_size).enumerate() {
            let stream = [STREAM_TRAIN, epoch as u64, b as u64];
            let debates = {
                let pro = self.model.agent(AgentId::Pro);
                let con = self.model.agent(AgentId::Con);
                self.debates(batch, self.config.train_rollouts, &stream, &pro, &con)?
            };
            let labelled: Vec<(&DebateTranscript, bool)> = debates.iter().map(|(t, l)| (t, *l)).collect();
            judge_loss += judge_update(
                &mut self.model.store,
                &self.model.judge,
                &self.optimizer,
                self.config.lr_judge,
                &labelled,
            )?;

            let transcripts: Vec<DebateTranscript> = debates.into_iter().map(|(t, _)| t).collect();
            let rewards = {
                let judge = self.model.judge();
                self.runner.map(transcripts.len(), |i| round_rewards(&judge, &transcripts[i]))?
            };
            for agent in AgentId::BOTH {
                let samples = samples_for(agent, &transcripts, &rewards);
                let params = self.model.agents[agent.index()].clone();
                let stats = reinforce_step(
                    &mut self.model.store,
                    &params,
                    &self.index,
                    &samples,
                    &mut self.baselines[agent.index()],
                    &self.optimizer,
                    &settings,
                )?;
                let sums = &mut agent_sums[agent.index()];
                sums[0] += stats.loss;
                sums[1] += stats.mean_reward;
                sums[2] += stats.baseline;
            }
            let step = self.model.store.step() + 1;
            self.model.store.set_step(step);
            batches += 1;
        }
        let n = batches as f64;
        let agent_stats = |s: [f64; 3]| AgentEpochStats {
            loss: s[0] / n,
            mean_reward: s[1] / n,
            baseline: s[2] / n,
        };
        Ok(EpochStats {
            batches,
            judge_loss: judge_loss / n,
            agent1: agent_stats(agent_sums[0]),
            agent2: agent_stats(agent_sums[1]),
        })
    }

    fn evaluate(&self) -> Result<EvalReport> {
        let eval = evaluate(
            &self.model,
            self.vocab,
            &self.index,
            &self.split.test,
            &self.config.debate,
            self.config.eval_seed,
            &self.runner,
        )?;
        Ok(eval.report)
    }
}

fn emit(sinks: &mut TrainSinks<'_>, record: &EpochRecord, model: &Model, config: &TrainConfig) -> Result<()> {
    log::info!(
        "epoch {} step {}: accuracy {:.4}, leak rate {:.4}",
        record.epoch,
        record.step,
        record.eval.accuracy,
        record.eval.leak_rate
    );
    if let Some(out) = sinks.metrics.as_mut() {
        serde_json::to_writer(&mut **out, record)?;
        writeln!(out)?;
        out.flush()?;
    }
    if let Some(path) = sinks.checkpoint {
        model.save(path, &checkpoint_metadata(config, record.epoch))?;
    }
    Ok(())
}

/// Trains a fresh model on `split.train`, evaluating on `split.test` before
/// training and every `eval_every` epochs. With `epochs == 0` only the
/// initial evaluation runs. Errors abort training and leave the last
/// written checkpoint in place.
pub fn train(vocab: &Vocab, split: &DatasetSplit, config: &TrainConfig, mut sinks: TrainSinks<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidInput("training and test sets must be non-empty".into()));
    }
    let index = build_index(vocab, &split.graph_facts)?;
    let model = Model::new(
        vocab,
        config.dims,
        config.debate.hops(),
        &mut derived(config.debate.seed, &[STREAM_INIT]),
    )?;
    let mut trainer = Trainer {
        config,
        vocab,
        split,
        index,
        runner: Runner::new(config.workers)?,
        optimizer: Adam {
            weight_decay: config.weight_decay,
            ..Adam::default()
        },
        model,
        baselines: [Baseline::new(config.baseline_decay); 2],
    };

    let mut history = Vec::new();
    let initial = EpochRecord {
        epoch: 0,
        step: 0,
        pretrain_judge_loss: None,
        train: None,
        eval: trainer.evaluate()?,
    };
    emit(&mut sinks, &initial, &trainer.model, config)?;
    history.push(initial);
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model: trainer.model,
            history,
        });
    }

    let mut pretrain_loss = None;
    for epoch in 0..config.pretrain_epochs {
        let loss = trainer.pretrain_epoch(epoch)?;
        log::debug!("judge pretraining epoch {epoch}: loss {loss:.4}");
        pretrain_loss = Some(loss);
    }

    for epoch in 1..=config.epochs {
        let stats = trainer.train_epoch(epoch)?;
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let record = EpochRecord {
                epoch,
                step: trainer.model.store.step(),
                pretrain_judge_loss: pretrain_loss.take(),
                train: Some(stats),
                eval: trainer.evaluate()?,
            };
            emit(&mut sinks, &record, &trainer.model, config)?;
            history.push(record);
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        history,
    })
}

/// Debates for a fixed configuration, exposed for tools that only need
/// transcripts.
pub fn debate_query(
    model: &Model,
    index: &GraphIndex,
    debate: &DebateConfig,
    seed: u64,
    query: Triple,
    k: u64,
) -> Result<DebateTranscript> {
    let mut rng = debate_rng(seed, &query, k);
    let mut t = run_debate(
        index,
        debate,
        query,
        &model.agent(AgentId::Pro),
        &model.agent(AgentId::Con),
        &mut rng,
    )?;
    t.judge_score = Some(model.judge().score_transcript(&t)?);
    Ok(t)
}
