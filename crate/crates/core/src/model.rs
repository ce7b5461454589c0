//! The three parties' parameters in one store: `agent1/*`, `agent2/*` and
//! `judge/*`, each with its own embedding tables.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::{load_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, ParameterStore};
use crate::env::AgentId;
use crate::error::Result;
use crate::judge::{Judge, JudgeDims, JudgeParams};
use crate::kg::Vocab;
use crate::policy::{AgentDims, AgentParams, NeuralAgent};
use crate::rng::DebateRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub hidden_dim: usize,
    pub judge_hidden1: usize,
    pub judge_hidden2: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            entity_dim: 64,
            relation_dim: 64,
            hidden_dim: 128,
            judge_hidden1: 128,
            judge_hidden2: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParameterStore,
    pub agents: [AgentParams; 2],
    pub judge: JudgeParams,
}

pub fn agent_prefix(agent: AgentId) -> &'static str {
    match agent {
        AgentId::Pro => "agent1",
        AgentId::Con => "agent2",
    }
}

impl Model {
    /// Fresh parameters for a vocabulary and argument length `hops`.
    pub fn new(vocab: &Vocab, dims: ModelDims, hops: usize, rng: &mut DebateRng) -> Result<Self> {
        let mut store = ParameterStore::new();
        let agent_dims = AgentDims {
            entity_dim: dims.entity_dim,
            relation_dim: dims.relation_dim,
            hidden_dim: dims.hidden_dim,
        };
        let (ne, nr) = (vocab.num_entities(), vocab.num_relations());
        let pro = AgentParams::register(&mut store, agent_prefix(AgentId::Pro), ne, nr, agent_dims, rng)?;
        let con = AgentParams::register(&mut store, agent_prefix(AgentId::Con), ne, nr, agent_dims, rng)?;
        let judge = JudgeParams::register(
            &mut store,
            ne,
            nr,
            JudgeDims {
                entity_dim: dims.entity_dim,
                relation_dim: dims.relation_dim,
                hidden1: dims.judge_hidden1,
                hidden2: dims.judge_hidden2,
                hops,
            },
            rng,
        )?;
        Ok(Self {
            store,
            agents: [pro, con],
            judge,
        })
    }

    pub fn from_store(store: ParameterStore) -> Result<Self> {
        let pro = AgentParams::bind(&store, agent_prefix(AgentId::Pro))?;
        let con = AgentParams::bind(&store, agent_prefix(AgentId::Con))?;
        let judge = JudgeParams::bind(&store)?;
        Ok(Self {
            store,
            agents: [pro, con],
            judge,
        })
    }

    pub fn agent(&self, agent: AgentId) -> NeuralAgent<'_> {
        NeuralAgent::new(&self.store, &self.agents[agent.index()])
    }

    pub fn judge(&self) -> Judge<'_> {
        Judge::new(&self.store, &self.judge)
    }

    pub fn hops(&self) -> usize {
        self.judge.dims.hops
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: &BTreeMap<String, String>) -> Result<()> {
        save_checkpoint(path, &self.store, metadata)
    }

    pub fn to_bytes(&self, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_checkpoint(&self.store, metadata, &mut buf)?;
        Ok(buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, BTreeMap<String, String>)> {
        let Checkpoint { store, metadata } = load_checkpoint(path)?;
        Ok((Self::from_store(store)?, metadata))
    }
}
