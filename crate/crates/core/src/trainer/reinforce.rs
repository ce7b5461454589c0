//! Per-round rewards and the REINFORCE update for one agent.

use crate::autodiff::{Adam, Gradients, ParameterStore, Tape};
use crate::env::{AgentId, DebateTranscript};
use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::kg::{Action, GraphIndex, Triple};
use crate::policy::{AgentParams, NeuralAgent};

/// Reward of one argument: the judge's score of that argument alone, signed
/// by the side that produced it.
pub fn argument_reward(agent: AgentId, score: f64) -> f64 {
    match agent {
        AgentId::Pro => score,
        AgentId::Con => -score,
    }
}

/// Rewards for every argument of a transcript, in argument order.
pub fn round_rewards(judge: &Judge<'_>, transcript: &DebateTranscript) -> Result<Vec<f64>> {
    transcript
        .arguments
        .iter()
        .map(|a| {
            let score = judge.score_single_argument(&transcript.query, &a.steps)?;
            Ok(argument_reward(a.agent, score))
        })
        .collect()
}

/// One rewarded argument to learn from.
#[derive(Debug, Clone, Copy)]
pub struct RoundSample<'t> {
    pub query: Triple,
    pub steps: &'t [Action],
    pub reward: f64,
}

/// Collects `agent`'s arguments with their rewards.
pub fn samples_for<'t>(
    agent: AgentId,
    transcripts: &'t [DebateTranscript],
    rewards: &[Vec<f64>],
) -> Vec<RoundSample<'t>> {
    let mut out = Vec::new();
    for (t, r) in transcripts.iter().zip(rewards) {
        for (a, &reward) in t.arguments.iter().zip(r) {
            if a.agent == agent {
                out.push(RoundSample {
                    query: t.query,
                    steps: &a.steps,
                    reward,
                });
            }
        }
    }
    out
}

/// Exponential moving average of rewards, seeded with the first batch mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub decay: f64,
    pub value: Option<f64>,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: None }
    }

    /// The value to subtract for a batch with reward mean `batch_mean`.
    pub fn current(&self, batch_mean: f64) -> f64 {
        self.value.unwrap_or(batch_mean)
    }

    pub fn update(&mut self, batch_mean: f64) {
        self.value = Some(match self.value {
            None => batch_mean,
            Some(b) => self.decay * b + (1.0 - self.decay) * batch_mean,
        });
    }
}

/// Gradient of `-(1/B) Σ_n [(R_n - b) ln π(a_n) + β H_n]` over the samples,
/// and the value of that surrogate loss.
pub fn policy_gradient(
    store: &ParameterStore,
    params: &AgentParams,
    index: &GraphIndex,
    samples: &[RoundSample<'_>],
    baseline: f64,
    entropy_weight: f64,
    mask_query_relation: bool,
) -> Result<(f64, Gradients)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples for the policy update".into()));
    }
    let agent = NeuralAgent::new(store, params);
    let mut grads = Gradients::for_store(store);
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    for sample in samples {
        let mut tape = Tape::new(store);
        let graph = agent.replay_argument(&mut tape, index, &sample.query, sample.steps, mask_query_relation)?;
        let advantage = sample.reward - baseline;
        let pg = tape.scale(graph.log_prob, -advantage)?;
        let bonus = tape.scale(graph.entropy, -entropy_weight)?;
        let objective = tape.add(pg, bonus)?;
        loss += scale * tape.scalar(objective);
        tape.backward_scaled(objective, scale, &mut grads)?;
    }
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Diverged(format!("policy loss for {} is {loss}", params.prefix)));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinforceSettings {
    pub lr: f64,
    pub entropy_weight: f64,
    pub use_baseline: bool,
    pub mask_query_relation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinforceStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub baseline: f64,
}

/// Updates one agent from its rewarded arguments and advances its baseline.
pub fn reinforce_step(
    store: &mut ParameterStore,
    params: &AgentParams,
    index: &GraphIndex,
    samples: &[RoundSample<'_>],
    baseline: &mut Baseline,
    optimizer: &Adam,
    settings: &ReinforceSettings,
) -> Result<ReinforceStats> {
    let mean_reward = samples.iter().map(|s| s.reward).sum::<f64>() / samples.len().max(1) as f64;
    let b = if settings.use_baseline {
        baseline.current(mean_reward)
    } else {
        0.0
    };
    let (loss, grads) = policy_gradient(
        store,
        params,
        index,
        samples,
        b,
        settings.entropy_weight,
        settings.mask_query_relation,
    )?;
    optimizer.step(store, &grads, settings.lr)?;
    baseline.update(mean_reward);
    Ok(ReinforceStats {
        loss,
        mean_reward,
        baseline: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewards_are_signed_by_side() {
        assert_eq!(argument_reward(AgentId::Pro, 0.8), 0.8);
        assert_eq!(argument_reward(AgentId::Con, 0.8), -0.8);
    }

    #[test]
    fn baseline_starts_at_first_mean_then_decays() {
        let mut b = Baseline::new(0.9);
        assert_eq!(b.current(0.4), 0.4);
        b.update(0.4);
        b.update(1.4);
        assert!((b.value.unwrap() - 0.5).abs() < 1e-15);
    }
}
