//! Agent policies.
//!
//! [`Policy`] is the interface the debate loop samples from. [`NeuralAgent`]
//! is the learned policy: an LSTM over the walk history, seeded with the
//! query encoding, feeding a two-layer head whose output is dotted with
//! each admissible action's `[relation; entity]` embedding.

use rand::Rng;

use crate::autodiff::{LstmCell, ParamId, ParameterStore, Tape, Tensor, Var};
use crate::env::{masked_actions, State};
use crate::error::{Error, Result};
use crate::kg::{Action, GraphIndex, Triple};
use crate::rng::DebateRng;

pub trait Policy {
    type History;

    /// History for a fresh argument about `query`.
    fn init_history(&self, query: &Triple) -> Result<Self::History>;

    /// Probabilities aligned with `actions`.
    fn action_distribution(&self, history: &Self::History, actions: &[Action]) -> Result<Vec<f64>>;

    fn advance(&self, history: Self::History, chosen: &Action) -> Result<Self::History>;
}

/// Picks uniformly among admissible actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    type History = ();

    fn init_history(&self, _query: &Triple) -> Result<()> {
        Ok(())
    }

    fn action_distribution(&self, _history: &(), actions: &[Action]) -> Result<Vec<f64>> {
        if actions.is_empty() {
            return Err(Error::Contract("no admissible actions".into()));
        }
        Ok(vec![1.0 / actions.len() as f64; actions.len()])
    }

    fn advance(&self, _history: (), _chosen: &Action) -> Result<()> {
        Ok(())
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut DebateRng) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // Rounding left `u` above the running total: take the last supported entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples an action, returning it with its log-probability and the
/// advanced history.
pub fn sample_and_advance<P: Policy + ?Sized>(
    policy: &P,
    history: P::History,
    actions: &[Action],
    rng: &mut DebateRng,
) -> Result<(Action, f64, P::History)> {
    if actions.is_empty() {
        return Err(Error::Contract("no admissible actions".into()));
    }
    let probs = policy.action_distribution(&history, actions)?;
    if probs.len() != actions.len() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Contract(format!(
            "policy returned an invalid distribution of {} entries for {} actions",
            probs.len(),
            actions.len()
        )));
    }
    let index = sample_categorical(&probs, rng);
    let chosen = actions[index];
    let next = policy.advance(history, &chosen)?;
    Ok((chosen, probs[index].ln(), next))
}

/// Sizes of the agent networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentDims {
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub hidden_dim: usize,
}

impl AgentDims {
    pub fn action_dim(&self) -> usize {
        self.relation_dim + self.entity_dim
    }
}

/// Parameter handles of one agent, all named under `prefix/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentParams {
    pub prefix: String,
    pub entities: ParamId,
    pub relations: ParamId,
    /// Consumes the query encoding `[E(s); R(p); E(o)]` on the first step.
    pub query_cell: LstmCell,
    /// Consumes action embeddings `[R(r); E(e)]` afterwards.
    pub action_cell: LstmCell,
    pub head_w1: ParamId,
    pub head_b1: ParamId,
    pub head_w2: ParamId,
    pub head_b2: ParamId,
    pub dims: AgentDims,
}

const EMBEDDING_STD: f64 = 0.1;

impl AgentParams {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        num_entities: usize,
        num_relations: usize,
        dims: AgentDims,
        rng: &mut DebateRng,
    ) -> Result<Self> {
        let AgentDims {
            entity_dim: de,
            relation_dim: dr,
            hidden_dim: h,
        } = dims;
        let name = |s: &str| format!("{prefix}/{s}");
        let entities = store.insert(name("entity_embeddings"), Tensor::normal(vec![num_entities, de], EMBEDDING_STD, rng))?;
        let relations = store.insert(name("relation_embeddings"), Tensor::normal(vec![num_relations, dr], EMBEDDING_STD, rng))?;
        let w_query = store.insert(name("lstm/w_query"), Tensor::xavier_uniform(4 * h, 2 * de + dr, rng))?;
        let w_input = store.insert(name("lstm/w_input"), Tensor::xavier_uniform(4 * h, dr + de, rng))?;
        let w_hidden = store.insert(name("lstm/w_hidden"), Tensor::xavier_uniform(4 * h, h, rng))?;
        let bias = store.insert(name("lstm/bias"), Tensor::zeros(vec![4 * h]))?;
        let head_w1 = store.insert(name("head/w1"), Tensor::xavier_uniform(h, h + dr + de, rng))?;
        let head_b1 = store.insert(name("head/b1"), Tensor::zeros(vec![h]))?;
        let head_w2 = store.insert(name("head/w2"), Tensor::xavier_uniform(dr + de, h, rng))?;
        let head_b2 = store.insert(name("head/b2"), Tensor::zeros(vec![dr + de]))?;
        Ok(Self {
            prefix: prefix.to_owned(),
            entities,
            relations,
            query_cell: LstmCell {
                input: w_query,
                hidden: w_hidden,
                bias,
            },
            action_cell: LstmCell {
                input: w_input,
                hidden: w_hidden,
                bias,
            },
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            dims,
        })
    }

    /// Looks up an agent's parameters by name and infers its sizes.
    pub fn bind(store: &ParameterStore, prefix: &str) -> Result<Self> {
        let id = |s: &str| store.id(&format!("{prefix}/{s}"));
        let entities = id("entity_embeddings")?;
        let relations = id("relation_embeddings")?;
        let w_hidden = id("lstm/w_hidden")?;
        let bias = id("lstm/bias")?;
        let dims = AgentDims {
            entity_dim: store.get(entities).cols(),
            relation_dim: store.get(relations).cols(),
            hidden_dim: store.get(w_hidden).cols(),
        };
        Ok(Self {
            prefix: prefix.to_owned(),
            entities,
            relations,
            query_cell: LstmCell {
                input: id("lstm/w_query")?,
                hidden: w_hidden,
                bias,
            },
            action_cell: LstmCell {
                input: id("lstm/w_input")?,
                hidden: w_hidden,
                bias,
            },
            head_w1: id("head/w1")?,
            head_b1: id("head/b1")?,
            head_w2: id("head/w2")?,
            head_b2: id("head/b2")?,
            dims,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.entities,
            self.relations,
            self.query_cell.input,
            self.action_cell.input,
            self.action_cell.hidden,
            self.action_cell.bias,
            self.head_w1,
            self.head_b1,
            self.head_w2,
            self.head_b2,
        ]
    }
}

/// Recurrent summary of an agent's walk so far.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub query: Triple,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Tape nodes for one replayed argument.
#[derive(Debug, Clone, Copy)]
pub struct ArgumentGraph {
    /// `Σ ln π(a_t | H_t)` over the argument's steps.
    pub log_prob: Var,
    /// `Σ H(π(· | H_t))` over the argument's steps.
    pub entropy: Var,
}

/// A learned agent evaluated against a parameter snapshot.
#[derive(Debug, Clone, Copy)]
pub struct NeuralAgent<'a> {
    pub store: &'a ParameterStore,
    pub params: &'a AgentParams,
}

impl<'a> NeuralAgent<'a> {
    pub fn new(store: &'a ParameterStore, params: &'a AgentParams) -> Self {
        Self { store, params }
    }

    fn check_query(&self, q: &Triple) -> Result<()> {
        let ents = self.store.get(self.params.entities).rows();
        let rels = self.store.get(self.params.relations).rows();
        if q.s >= ents || q.o >= ents || q.p >= rels {
            return Err(Error::Contract(format!("query {q:?} has ids outside the embedding tables")));
        }
        Ok(())
    }

    /// Runs the query encoding through the LSTM from the zero state.
    pub fn initial_state(&self, tape: &mut Tape<'a>, query: &Triple) -> Result<(Var, Var)> {
        self.check_query(query)?;
        let p = self.params;
        let s = tape.row(p.entities, query.s)?;
        let r = tape.row(p.relations, query.p)?;
        let o = tape.row(p.entities, query.o)?;
        let x = tape.concat(&[s, r, o])?;
        let zero = vec![0.0; p.dims.hidden_dim];
        let h0 = tape.input(zero.clone())?;
        let c0 = tape.input(zero)?;
        p.query_cell.step(tape, x, h0, c0)
    }

    /// Dense head over `[h; R(p_q); E(o_q)]`, producing a vector in action
    /// embedding space.
    pub fn head(&self, tape: &mut Tape<'a>, h: Var, query: &Triple) -> Result<Var> {
        let p = self.params;
        let r = tape.row(p.relations, query.p)?;
        let o = tape.row(p.entities, query.o)?;
        let input = tape.concat(&[h, r, o])?;
        let hidden = tape.affine(p.head_w1, p.head_b1, input)?;
        let hidden = tape.relu(hidden)?;
        tape.affine(p.head_w2, p.head_b2, hidden)
    }

    /// Log-probabilities over `actions` at recurrent state `h`.
    pub fn log_probs(&self, tape: &mut Tape<'a>, h: Var, query: &Triple, actions: &[Action]) -> Result<Var> {
        if actions.is_empty() {
            return Err(Error::Contract("no admissible actions".into()));
        }
        let head = self.head(tape, h, query)?;
        let scores = tape.action_scores(head, self.params.relations, self.params.entities, actions)?;
        tape.log_softmax(scores)
    }

    pub fn advance_state(&self, tape: &mut Tape<'a>, h: Var, c: Var, action: &Action) -> Result<(Var, Var)> {
        let p = self.params;
        let r = tape.row(p.relations, action.relation)?;
        let e = tape.row(p.entities, action.target)?;
        let x = tape.concat(&[r, e])?;
        p.action_cell.step(tape, x, h, c)
    }

    /// Rebuilds the graph of a finished argument for gradient computation.
    pub fn replay_argument(
        &self,
        tape: &mut Tape<'a>,
        index: &GraphIndex,
        query: &Triple,
        steps: &[Action],
        mask_query_relation: bool,
    ) -> Result<ArgumentGraph> {
        let (mut h, mut c) = self.initial_state(tape, query)?;
        let mut current = query.s;
        let mut log_prob_terms = Vec::with_capacity(steps.len());
        let mut entropy_terms = Vec::with_capacity(steps.len());
        for action in steps {
            let state = State { current, query: *query };
            let actions = masked_actions(index, &state, mask_query_relation);
            let chosen = actions.binary_search(action).map_err(|_| {
                Error::Contract(format!("replayed action {action:?} not admissible at {current}"))
            })?;
            let log_probs = self.log_probs(tape, h, query, &actions)?;
            log_prob_terms.push(tape.pick(log_probs, chosen)?);
            let probs = tape.exp(log_probs)?;
            let neg_entropy = tape.dot(probs, log_probs)?;
            entropy_terms.push(tape.scale(neg_entropy, -1.0)?);
            (h, c) = self.advance_state(tape, h, c, action)?;
            current = action.target;
        }
        let log_prob = if log_prob_terms.is_empty() {
            tape.input(vec![0.0])?
        } else {
            tape.add_n(&log_prob_terms)?
        };
        let entropy = if entropy_terms.is_empty() {
            tape.input(vec![0.0])?
        } else {
            tape.add_n(&entropy_terms)?
        };
        Ok(ArgumentGraph { log_prob, entropy })
    }
}

impl Policy for NeuralAgent<'_> {
    type History = History;

    fn init_history(&self, query: &Triple) -> Result<History> {
        let mut tape = Tape::new(self.store);
        let (h, c) = self.initial_state(&mut tape, query)?;
        Ok(History {
            query: *query,
            h: tape.value(h).to_vec(),
            c: tape.value(c).to_vec(),
        })
    }

    fn action_distribution(&self, history: &History, actions: &[Action]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(self.store);
        let h = tape.input(history.h.clone())?;
        let lp = self.log_probs(&mut tape, h, &history.query, actions)?;
        Ok(tape.value(lp).iter().map(|x| x.exp()).collect())
    }

    fn advance(&self, history: History, chosen: &Action) -> Result<History> {
        let mut tape = Tape::new(self.store);
        let h = tape.input(history.h)?;
        let c = tape.input(history.c)?;
        let (h, c) = self.advance_state(&mut tape, h, c, chosen)?;
        Ok(History {
            query: history.query,
            h: tape.value(h).to_vec(),
            c: tape.value(c).to_vec(),
        })
    }
}
