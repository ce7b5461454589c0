//! Held-out evaluation: majority vote over several debates per query.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{debate_rng, Runner};
use crate::env::{run_debate, DebateConfig, DebateTranscript};
use crate::error::{Error, Result};
use crate::kg::{GraphIndex, LabeledQuery, Vocab};
use crate::model::Model;
use crate::policy::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationAccuracy {
    pub queries: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub queries: usize,
    pub debates: usize,
    pub accuracy: f64,
    pub per_relation: BTreeMap<String, RelationAccuracy>,
    /// Mean debate score over debates on true queries.
    pub mean_score_true: Option<f64>,
    pub mean_score_false: Option<f64>,
    /// Fraction of debates in which some argument walked the query edge.
    pub leak_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query: LabeledQuery,
    pub debates: Vec<DebateTranscript>,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub outcomes: Vec<QueryOutcome>,
}

/// Majority vote with ties resolved to `true`.
pub fn majority_vote(scores: &[f64]) -> bool {
    let yes = scores.iter().filter(|&&s| s >= 0.5).count();
    2 * yes >= scores.len()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Debates each query `rollouts_per_query` times with the given policies
/// and scores every debate with `scorer`. Debate `k` on a query uses the
/// stream `debate_rng(eval_seed, query, k)`, so results depend only on the
/// seed and the query, never on order or thread count.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with<P1, P2, F>(
    vocab: &Vocab,
    index: &GraphIndex,
    queries: &[LabeledQuery],
    debate: &DebateConfig,
    eval_seed: u64,
    pro: &P1,
    con: &P2,
    scorer: F,
    runner: &Runner,
) -> Result<Evaluation>
where
    P1: Policy + Sync,
    P2: Policy + Sync,
    F: Fn(&DebateTranscript) -> Result<f64> + Sync,
{
    if queries.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    debate.validate()?;
    let outcomes = runner.map(queries.len(), |i| {
        let q = queries[i];
        let mut debates = Vec::with_capacity(debate.rollouts_per_query);
        for k in 0..debate.rollouts_per_query {
            let mut rng = debate_rng(eval_seed, &q.triple, k as u64);
            let mut t = run_debate(index, debate, q.triple, pro, con, &mut rng)?;
            t.judge_score = Some(scorer(&t)?);
            t.label = Some(q.label);
            debates.push(t);
        }
        let scores: Vec<f64> = debates.iter().map(|t| t.judge_score.unwrap_or(0.5)).collect();
        Ok(QueryOutcome {
            query: q,
            predicted: majority_vote(&scores),
            debates,
        })
    })?;

    let mut per_relation: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for o in &outcomes {
        let entry = per_relation
            .entry(vocab.relation_name(o.query.triple.p).to_owned())
            .or_default();
        entry.0 += 1;
        entry.1 += usize::from(o.predicted == o.query.label);
    }
    let correct: usize = per_relation.values().map(|v| v.1).sum();
    let all = outcomes.iter().flat_map(|o| o.debates.iter());
    let debates = all.clone().count();
    let leaks = all.clone().filter(|t| t.leak_flag).count();
    let score_of = |label: bool| {
        mean(
            all.clone()
                .filter(move |t| t.label == Some(label))
                .filter_map(|t| t.judge_score),
        )
    };
    let report = EvalReport {
        queries: outcomes.len(),
        debates,
        accuracy: correct as f64 / outcomes.len() as f64,
        per_relation: per_relation
            .into_iter()
            .map(|(name, (n, c))| {
                (
                    name,
                    RelationAccuracy {
                        queries: n,
                        accuracy: c as f64 / n as f64,
                    },
                )
            })
            .collect(),
        mean_score_true: score_of(true),
        mean_score_false: score_of(false),
        leak_rate: leaks as f64 / debates as f64,
    };
    Ok(Evaluation { report, outcomes })
}

/// Evaluates a model's agents and judge.
pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    index: &GraphIndex,
    queries: &[LabeledQuery],
    debate: &DebateConfig,
    eval_seed: u64,
    runner: &Runner,
) -> Result<Evaluation> {
    let judge = model.judge();
    evaluate_with(
        vocab,
        index,
        queries,
        debate,
        eval_seed,
        &model.agent(crate::env::AgentId::Pro),
        &model.agent(crate::env::AgentId::Con),
        |t| judge.score_transcript(t),
        runner,
    )
}
