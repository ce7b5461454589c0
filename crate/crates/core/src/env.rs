//! The walk MDP and debate orchestration.
//!
//! A state is the walker's current entity plus the (constant) query. The
//! admissible actions are exactly the index's action list for that entity,
//! so every state has at least its self loop. A debate runs `rounds` rounds;
//! in each, the pro agent and then the con agent walk `horizon - 1` hops
//! from the query subject. The end-of-argument marker is implicit.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{inverse_of, Action, EntityId, GraphIndex, Triple, Vocab, SELF_LOOP};
use crate::policy::{sample_and_advance, Policy};
use crate::rng::DebateRng;

pub const END_MARKER: &str = "END";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum AgentId {
    /// Argues the query is true.
    Pro,
    /// Argues the query is false.
    Con,
}

impl AgentId {
    pub const BOTH: [AgentId; 2] = [AgentId::Pro, AgentId::Con];

    pub fn number(self) -> u8 {
        match self {
            AgentId::Pro => 1,
            AgentId::Con => 2,
        }
    }

    pub fn index(self) -> usize {
        self.number() as usize - 1
    }
}

impl From<AgentId> for u8 {
    fn from(a: AgentId) -> u8 {
        a.number()
    }
}

impl TryFrom<u8> for AgentId {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(AgentId::Pro),
            2 => Ok(AgentId::Con),
            other => Err(format!("agent must be 1 or 2, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub current: EntityId,
    pub query: Triple,
}

impl State {
    pub fn initial(query: Triple) -> Self {
        Self {
            current: query.s,
            query,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    True,
    False,
    Abstain,
}

/// One agent's path for one round, starting implicitly at the query subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub agent: AgentId,
    pub round: usize,
    pub steps: Vec<Action>,
    /// `ln p` of each sampled step under the policy that produced it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_probs: Vec<f64>,
}

impl Argument {
    pub fn render(&self, vocab: &Vocab, start: EntityId) -> String {
        render_argument(vocab, start, &self.steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateConfig {
    pub rounds: usize,
    /// Path horizon `T`; each argument has `T - 1` hops.
    pub horizon: usize,
    pub rollouts_per_query: usize,
    pub seed: u64,
    /// Hide the query subject's edges under the query relation from the
    /// walkers, so no argument can simply look the answer up.
    #[serde(default)]
    pub mask_query_relation: bool,
}

impl Default for DebateConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            horizon: 3,
            rollouts_per_query: 5,
            seed: 0,
            mask_query_relation: false,
        }
    }
}

impl DebateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 || self.horizon < 2 || self.rollouts_per_query < 1 {
            return Err(Error::Config(format!(
                "need rounds >= 1, horizon >= 2, rollouts_per_query >= 1; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn hops(&self) -> usize {
        self.horizon - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub query: Triple,
    /// Pro round 1, con round 1, pro round 2, ...
    pub arguments: Vec<Argument>,
    pub judge_score: Option<f64>,
    pub label: Option<bool>,
    pub human_verdict: Option<Verdict>,
    /// Some argument walked the query edge itself.
    pub leak_flag: bool,
}

impl DebateTranscript {
    pub fn arguments_of(&self, agent: AgentId) -> impl Iterator<Item = &Argument> {
        self.arguments.iter().filter(move |a| a.agent == agent)
    }

    pub fn to_record(&self, vocab: &Vocab) -> TranscriptRecord {
        let (subject, predicate, object) = vocab.triple_names(&self.query);
        TranscriptRecord {
            query: QueryRecord {
                subject,
                predicate,
                object,
            },
            arguments: self
                .arguments
                .iter()
                .map(|a| ArgumentRecord {
                    agent: a.agent,
                    round: a.round,
                    hops: HopRecord::from_steps(vocab, &a.steps),
                    terminated_by: END_MARKER.to_owned(),
                    rendered: a.render(vocab, self.query.s),
                })
                .collect(),
            judge_score: self.judge_score,
            label: self.label,
            human_verdict: self.human_verdict,
            leak_flag: self.leak_flag,
        }
    }
}

/// JSON form of a transcript with names instead of ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub query: QueryRecord,
    pub arguments: Vec<ArgumentRecord>,
    pub judge_score: Option<f64>,
    pub label: Option<bool>,
    pub human_verdict: Option<Verdict>,
    pub leak_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArgumentRecord {
    pub agent: AgentId,
    pub round: usize,
    pub hops: Vec<HopRecord>,
    pub terminated_by: String,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopRecord {
    pub relation: String,
    pub entity: String,
}

impl HopRecord {
    pub fn from_steps(vocab: &Vocab, steps: &[Action]) -> Vec<HopRecord> {
        steps
            .iter()
            .map(|s| HopRecord {
                relation: vocab.relation_name(s.relation).to_owned(),
                entity: vocab.entity_name(s.target).to_owned(),
            })
            .collect()
    }
}

pub fn available_actions<'g>(index: &'g GraphIndex, state: &State) -> &'g [Action] {
    index.actions(state.current)
}

/// Admissible actions, optionally without the subject's edges under the
/// query relation (in both directions). The self loop is never masked, so
/// the result is never empty.
pub fn masked_actions<'g>(index: &'g GraphIndex, state: &State, mask_query_relation: bool) -> Cow<'g, [Action]> {
    let all = index.actions(state.current);
    if !mask_query_relation || !all.iter().any(|a| is_masked(&state.query, state.current, a)) {
        return Cow::Borrowed(all);
    }
    Cow::Owned(
        all.iter()
            .filter(|a| !is_masked(&state.query, state.current, a))
            .copied()
            .collect(),
    )
}

fn is_masked(query: &Triple, from: EntityId, action: &Action) -> bool {
    (from == query.s && action.relation == query.p)
        || (action.target == query.s && action.relation == inverse_of(query.p))
}

/// The deterministic transition: move to the action's target.
pub fn step(index: &GraphIndex, state: &State, action: Action) -> Result<State> {
    if !index.has_action(state.current, action) {
        return Err(Error::Contract(format!(
            "action {action:?} is not admissible at entity {}",
            state.current
        )));
    }
    Ok(State {
        current: action.target,
        query: state.query,
    })
}

/// Replays `steps` from `start`, returning every visited state (including
/// the initial one). Fails at the first inadmissible hop with its index.
pub fn replay(index: &GraphIndex, query: Triple, steps: &[Action]) -> std::result::Result<Vec<State>, usize> {
    let mut states = vec![State::initial(query)];
    for (i, &a) in steps.iter().enumerate() {
        let next = step(index, states.last().expect("non-empty"), a).map_err(|_| i)?;
        states.push(next);
    }
    Ok(states)
}

/// Whether a hop from `from` via `action` is the query edge (either direction).
pub fn is_query_edge(query: &Triple, from: EntityId, action: &Action) -> bool {
    (from == query.s && action.relation == query.p && action.target == query.o)
        || (from == query.o && action.relation == inverse_of(query.p) && action.target == query.s)
}

/// Samples one argument of exactly `hops` steps from the query subject.
pub fn walk<P: Policy>(
    index: &GraphIndex,
    query: Triple,
    hops: usize,
    mask_query_relation: bool,
    policy: &P,
    rng: &mut DebateRng,
) -> Result<(Vec<Action>, Vec<f64>, bool)> {
    let mut state = State::initial(query);
    let mut history = policy.init_history(&query)?;
    let mut steps = Vec::with_capacity(hops);
    let mut log_probs = Vec::with_capacity(hops);
    let mut leaked = false;
    for _ in 0..hops {
        let actions = masked_actions(index, &state, mask_query_relation);
        let (action, log_prob, next) = sample_and_advance(policy, history, &actions, rng)?;
        leaked |= is_query_edge(&query, state.current, &action);
        state = step(index, &state, action)?;
        history = next;
        steps.push(action);
        log_probs.push(log_prob);
    }
    Ok((steps, log_probs, leaked))
}

/// Runs one debate: for each round the pro agent argues, then the con agent.
pub fn run_debate<P1: Policy, P2: Policy>(
    index: &GraphIndex,
    config: &DebateConfig,
    query: Triple,
    pro: &P1,
    con: &P2,
    rng: &mut DebateRng,
) -> Result<DebateTranscript> {
    config.validate()?;
    if query.s >= index.num_entities() {
        return Err(Error::Contract(format!("query subject {} not in graph", query.s)));
    }
    let mut arguments = Vec::with_capacity(2 * config.rounds);
    let mut leak_flag = false;
    for round in 1..=config.rounds {
        for agent in AgentId::BOTH {
            let (steps, log_probs, leaked) = match agent {
                AgentId::Pro => walk(index, query, config.hops(), config.mask_query_relation, pro, rng)?,
                AgentId::Con => walk(index, query, config.hops(), config.mask_query_relation, con, rng)?,
            };
            leak_flag |= leaked;
            arguments.push(Argument {
                agent,
                round,
                steps,
                log_probs,
            });
        }
    }
    if leak_flag {
        log::debug!("debate on {query:?} traversed the query edge");
    }
    Ok(DebateTranscript {
        query,
        arguments,
        judge_score: None,
        label: None,
        human_verdict: None,
        leak_flag,
    })
}

/// Renders a path as a conjunction of hop statements. Inverse hops are shown
/// in forward orientation with the base relation name.
pub fn render_argument(vocab: &Vocab, start: EntityId, steps: &[Action]) -> String {
    let mut current = start;
    let mut parts = Vec::with_capacity(steps.len());
    for step in steps {
        let from = vocab.entity_name(current);
        let to = vocab.entity_name(step.target);
        let text = if step.relation == SELF_LOOP {
            format!("(stays at {from})")
        } else if vocab.is_inverse(step.relation) {
            let base = vocab.relation_name(vocab.base_of(step.relation));
            format!("({to}, {base}, {from})")
        } else {
            format!("({from}, {}, {to})", vocab.relation_name(step.relation))
        };
        parts.push(text);
        current = step.target;
    }
    parts.join(" ∧ ")
}
