//! The judge: a sum-pooling classifier over arguments.
//!
//! Each argument is flattened into `[R(r_1); E(e_1); ...; R(p_q); E(o_q)]`
//! and encoded by a two-layer relu network. Codes are summed and a linear
//! layer followed by a sigmoid gives the truth score. The judge never sees
//! which agent produced an argument.

use crate::autodiff::{sigmoid, Adam, Gradients, ParamId, ParameterStore, Tape, Tensor, Var};
use crate::env::DebateTranscript;
use crate::error::{Error, Result};
use crate::kg::{Action, Triple};
use crate::rng::DebateRng;

pub const JUDGE_PREFIX: &str = "judge";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JudgeDims {
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub hidden1: usize,
    /// Width of an argument code.
    pub hidden2: usize,
    /// Hops per argument (`T - 1`).
    pub hops: usize,
}

impl JudgeDims {
    pub fn input_dim(&self) -> usize {
        (self.hops + 1) * (self.relation_dim + self.entity_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeParams {
    pub entities: ParamId,
    pub relations: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub dims: JudgeDims,
}

impl JudgeParams {
    /// Registers judge parameters. The output layer starts at zero so an
    /// untrained judge scores every debate exactly 0.5.
    pub fn register(
        store: &mut ParameterStore,
        num_entities: usize,
        num_relations: usize,
        dims: JudgeDims,
        rng: &mut DebateRng,
    ) -> Result<Self> {
        let name = |s: &str| format!("{JUDGE_PREFIX}/{s}");
        let entities = store.insert(name("entity_embeddings"), Tensor::normal(vec![num_entities, dims.entity_dim], 0.1, rng))?;
        let relations = store.insert(name("relation_embeddings"), Tensor::normal(vec![num_relations, dims.relation_dim], 0.1, rng))?;
        let w1 = store.insert(name("ff/w1"), Tensor::xavier_uniform(dims.hidden1, dims.input_dim(), rng))?;
        let b1 = store.insert(name("ff/b1"), Tensor::zeros(vec![dims.hidden1]))?;
        let w2 = store.insert(name("ff/w2"), Tensor::xavier_uniform(dims.hidden2, dims.hidden1, rng))?;
        let b2 = store.insert(name("ff/b2"), Tensor::zeros(vec![dims.hidden2]))?;
        let out_w = store.insert(name("out/w"), Tensor::zeros(vec![1, dims.hidden2]))?;
        let out_b = store.insert(name("out/b"), Tensor::zeros(vec![1]))?;
        Ok(Self {
            entities,
            relations,
            w1,
            b1,
            w2,
            b2,
            out_w,
            out_b,
            dims,
        })
    }

    pub fn bind(store: &ParameterStore) -> Result<Self> {
        let id = |s: &str| store.id(&format!("{JUDGE_PREFIX}/{s}"));
        let entities = id("entity_embeddings")?;
        let relations = id("relation_embeddings")?;
        let w1 = id("ff/w1")?;
        let w2 = id("ff/w2")?;
        let entity_dim = store.get(entities).cols();
        let relation_dim = store.get(relations).cols();
        let width = entity_dim + relation_dim;
        let input = store.get(w1).cols();
        if width == 0 || !input.is_multiple_of(width) || input < 2 * width {
            return Err(Error::Format(format!(
                "judge input width {input} is not a multiple of hop width {width}"
            )));
        }
        Ok(Self {
            entities,
            relations,
            w1,
            b1: id("ff/b1")?,
            w2,
            b2: id("ff/b2")?,
            out_w: id("out/w")?,
            out_b: id("out/b")?,
            dims: JudgeDims {
                entity_dim,
                relation_dim,
                hidden1: store.get(w1).rows(),
                hidden2: store.get(w2).rows(),
                hops: input / width - 1,
            },
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.entities,
            self.relations,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.out_w,
            self.out_b,
        ]
    }
}

/// The judge evaluated against a parameter snapshot.
#[derive(Debug, Clone, Copy)]
pub struct Judge<'a> {
    pub store: &'a ParameterStore,
    pub params: &'a JudgeParams,
}

impl<'a> Judge<'a> {
    pub fn new(store: &'a ParameterStore, params: &'a JudgeParams) -> Self {
        Self { store, params }
    }

    pub fn encode_argument(&self, tape: &mut Tape<'a>, query: &Triple, steps: &[Action]) -> Result<Var> {
        let p = self.params;
        if steps.len() != p.dims.hops {
            return Err(Error::Contract(format!(
                "judge expects arguments of {} hops, got {}",
                p.dims.hops,
                steps.len()
            )));
        }
        let mut parts = Vec::with_capacity(2 * steps.len() + 2);
        for s in steps {
            parts.push(tape.row(p.relations, s.relation)?);
            parts.push(tape.row(p.entities, s.target)?);
        }
        parts.push(tape.row(p.relations, query.p)?);
        parts.push(tape.row(p.entities, query.o)?);
        let x = tape.concat(&parts)?;
        let h = tape.affine(p.w1, p.b1, x)?;
        let h = tape.relu(h)?;
        let code = tape.affine(p.w2, p.b2, h)?;
        tape.relu(code)
    }

    /// Pre-sigmoid score of an argument set.
    pub fn logit<S: AsRef<[Action]>>(&self, tape: &mut Tape<'a>, query: &Triple, arguments: &[S]) -> Result<Var> {
        if arguments.is_empty() {
            return Err(Error::Contract("the judge needs at least one argument".into()));
        }
        let codes = arguments
            .iter()
            .map(|a| self.encode_argument(tape, query, a.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let pooled = tape.add_n(&codes)?;
        tape.affine(self.params.out_w, self.params.out_b, pooled)
    }

    pub fn score_debate<S: AsRef<[Action]>>(&self, query: &Triple, arguments: &[S]) -> Result<f64> {
        let mut tape = Tape::new(self.store);
        let z = self.logit(&mut tape, query, arguments)?;
        Ok(sigmoid(tape.scalar(z)))
    }

    /// The per-round reward signal: the debate score of one argument alone.
    pub fn score_single_argument(&self, query: &Triple, steps: &[Action]) -> Result<f64> {
        self.score_debate(query, &[steps])
    }

    pub fn score_transcript(&self, transcript: &DebateTranscript) -> Result<f64> {
        let steps: Vec<&[Action]> = transcript.arguments.iter().map(|a| a.steps.as_slice()).collect();
        self.score_debate(&transcript.query, &steps)
    }

    /// Argument code as plain values.
    pub fn code(&self, query: &Triple, steps: &[Action]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(self.store);
        let v = self.encode_argument(&mut tape, query, steps)?;
        Ok(tape.value(v).to_vec())
    }
}

/// Mean binary cross-entropy of the judge over labelled transcripts and its
/// gradient with respect to the judge parameters.
pub fn judge_loss_and_gradients(
    store: &ParameterStore,
    params: &JudgeParams,
    batch: &[(&DebateTranscript, bool)],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty judge batch".into()));
    }
    let judge = Judge::new(store, params);
    let mut grads = Gradients::for_store(store);
    let mut total = 0.0;
    let weight = 1.0 / batch.len() as f64;
    for (transcript, label) in batch {
        let mut tape = Tape::new(store);
        let steps: Vec<&[Action]> = transcript.arguments.iter().map(|a| a.steps.as_slice()).collect();
        let z = judge.logit(&mut tape, &transcript.query, &steps)?;
        let loss = tape.bce_with_logits(z, if *label { 1.0 } else { 0.0 })?;
        total += tape.scalar(loss);
        tape.backward_scaled(loss, weight, &mut grads)?;
    }
    let mean = total * weight;
    if !mean.is_finite() || !grads.is_finite() {
        return Err(Error::Diverged(format!("judge loss {mean}")));
    }
    Ok((mean, grads))
}

/// One optimizer step on the judge only. Returns the pre-step mean loss.
pub fn judge_update(
    store: &mut ParameterStore,
    params: &JudgeParams,
    optimizer: &Adam,
    lr: f64,
    batch: &[(&DebateTranscript, bool)],
) -> Result<f64> {
    let (loss, grads) = judge_loss_and_gradients(store, params, batch)?;
    optimizer.step(store, &grads, lr)?;
    Ok(loss)
}
