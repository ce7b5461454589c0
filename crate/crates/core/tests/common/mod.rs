//! Independent oracles shared by the integration tests: central finite
//! differences and plain-loop forward passes that never touch the tape.
#![allow(dead_code)]

use kgdebate::autodiff::{Gradients, ParamId, ParameterStore, Tape, Tensor, Var};
use kgdebate::judge::JudgeParams;
use kgdebate::kg::{Action, Triple};
use kgdebate::policy::AgentParams;
use kgdebate::Result;

pub mod gradcases;

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero-ish and the error is
/// measured absolutely; central differences carry ~1e-11 of roundoff.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn eval_scalar<F>(store: &ParameterStore, forward: &F) -> f64
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let root = forward(&mut tape).expect("forward pass");
    tape.scalar(root)
}

/// Largest relative error between backprop and central differences over
/// every coordinate of every parameter in `ids`.
pub fn max_grad_error<F>(store: &ParameterStore, ids: &[ParamId], forward: F) -> f64
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    let mut grads = Gradients::for_store(store);
    {
        let mut tape = Tape::new(store);
        let root = forward(&mut tape).expect("forward pass");
        tape.backward(root, &mut grads).expect("backward pass");
    }
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic: Vec<f64> = grads
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.get(id).len()]);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = probe.get(id).values()[k];
            probe.get_mut(id).values_mut()[k] = orig + FD_EPS;
            let up = eval_scalar(&probe, &forward);
            probe.get_mut(id).values_mut()[k] = orig - FD_EPS;
            let down = eval_scalar(&probe, &forward);
            probe.get_mut(id).values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

pub fn row(t: &Tensor, r: usize) -> &[f64] {
    let c = t.cols();
    &t.values()[r * c..(r + 1) * c]
}

pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    assert_eq!(w.cols(), x.len());
    (0..w.rows()).map(|r| row(w, r).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    matvec(w, x).iter().zip(b.values()).map(|(a, b)| a + b).collect()
}

pub fn relu(x: Vec<f64>) -> Vec<f64> {
    x.into_iter().map(|v| v.max(0.0)).collect()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The judge's score written out with loops.
pub fn judge_score_oracle(store: &ParameterStore, p: &JudgeParams, query: &Triple, arguments: &[Vec<Action>]) -> f64 {
    let g = |id| store.get(id);
    let mut pooled = vec![0.0; p.dims.hidden2];
    for arg in arguments {
        let mut x = Vec::new();
        for a in arg {
            x.extend_from_slice(row(g(p.relations), a.relation));
            x.extend_from_slice(row(g(p.entities), a.target));
        }
        x.extend_from_slice(row(g(p.relations), query.p));
        x.extend_from_slice(row(g(p.entities), query.o));
        let h = relu(affine(g(p.w1), g(p.b1), &x));
        let code = relu(affine(g(p.w2), g(p.b2), &h));
        for (acc, c) in pooled.iter_mut().zip(code) {
            *acc += c;
        }
    }
    logistic(affine(g(p.out_w), g(p.out_b), &pooled)[0])
}

fn lstm_oracle(store: &ParameterStore, w_in: ParamId, w_h: ParamId, bias: ParamId, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let pre: Vec<f64> = matvec(store.get(w_in), x)
        .iter()
        .zip(matvec(store.get(w_h), h))
        .zip(store.get(bias).values())
        .map(|((a, b), c)| a + b + c)
        .collect();
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for k in 0..n {
        let i = logistic(pre[k]);
        let f = logistic(pre[n + k]);
        let g = pre[2 * n + k].tanh();
        let o = logistic(pre[3 * n + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

/// The agent's action distribution after walking `prefix`, with loops.
pub fn agent_probs_oracle(
    store: &ParameterStore,
    p: &AgentParams,
    query: &Triple,
    prefix: &[Action],
    actions: &[Action],
) -> Vec<f64> {
    let g = |id| store.get(id);
    let n = p.dims.hidden_dim;
    let mut x = row(g(p.entities), query.s).to_vec();
    x.extend_from_slice(row(g(p.relations), query.p));
    x.extend_from_slice(row(g(p.entities), query.o));
    let cell = &p.query_cell;
    let (mut h, mut c) = lstm_oracle(store, cell.input, cell.hidden, cell.bias, &x, &vec![0.0; n], &vec![0.0; n]);
    for a in prefix {
        let mut x = row(g(p.relations), a.relation).to_vec();
        x.extend_from_slice(row(g(p.entities), a.target));
        let cell = &p.action_cell;
        (h, c) = lstm_oracle(store, cell.input, cell.hidden, cell.bias, &x, &h, &c);
    }
    let mut input = h.clone();
    input.extend_from_slice(row(g(p.relations), query.p));
    input.extend_from_slice(row(g(p.entities), query.o));
    let hidden = relu(affine(g(p.head_w1), g(p.head_b1), &input));
    let head = affine(g(p.head_w2), g(p.head_b2), &hidden);
    let scores: Vec<f64> = actions
        .iter()
        .map(|a| {
            let mut emb = row(g(p.relations), a.relation).to_vec();
            emb.extend_from_slice(row(g(p.entities), a.target));
            head.iter().zip(&emb).map(|(u, v)| u * v).sum()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    scores.iter().map(|s| (s - m).exp() / z).collect()
}

pub mod bandit {
    use kgdebate::autodiff::{Adam, ParameterStore, Tensor};
    use kgdebate::env::walk;
    use kgdebate::fixtures::{bandit, Fixture};
    use kgdebate::judge::{Judge, JudgeDims, JudgeParams};
    use kgdebate::kg::{Action, Triple};
    use kgdebate::policy::{AgentDims, AgentParams, NeuralAgent, Policy};
    use kgdebate::rng::seeded;
    use kgdebate::trainer::{reinforce_step, Baseline, ReinforceSettings, RoundSample};

    pub const MAX_UPDATES: usize = 500;
    pub const TARGET: f64 = 0.9;
    const BATCH: usize = 16;
    const LR: f64 = 0.01;

    /// A frozen one-hop judge whose score is ~0.99 for `arm_good` and
    /// ~0.01 for anything else: a single relu unit reading an indicator
    /// embedding of the first relation.
    fn frozen_judge(fx: &Fixture) -> (ParameterStore, JudgeParams) {
        let mut store = ParameterStore::new();
        let dims = JudgeDims {
            entity_dim: 1,
            relation_dim: 1,
            hidden1: 1,
            hidden2: 1,
            hops: 1,
        };
        let (ne, nr) = (fx.vocab.num_entities(), fx.vocab.num_relations());
        let params = JudgeParams::register(&mut store, ne, nr, dims, &mut seeded(0)).unwrap();
        let mut relations = vec![0.0; nr];
        relations[fx.relation("arm_good")] = 1.0;
        let set = |store: &mut ParameterStore, id, shape: Vec<usize>, v: Vec<f64>| {
            *store.get_mut(id) = Tensor::new(shape, v).unwrap();
        };
        set(&mut store, params.relations, vec![nr, 1], relations);
        set(&mut store, params.entities, vec![ne, 1], vec![0.0; ne]);
        set(&mut store, params.w1, vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]);
        set(&mut store, params.w2, vec![1, 1], vec![1.0]);
        set(&mut store, params.out_w, vec![1, 1], vec![10.0]);
        set(&mut store, params.out_b, vec![1], vec![-5.0]);
        (store, params)
    }

    /// Probability the agent picks `arm_good` from the start node.
    pub fn good_arm_probability(store: &ParameterStore, params: &AgentParams, fx: &Fixture, query: &Triple) -> f64 {
        let agent = NeuralAgent::new(store, params);
        let index = fx.index();
        let actions = index.actions(query.s);
        let probs = agent.action_distribution(&agent.init_history(query).unwrap(), actions).unwrap();
        let good = Action::new(fx.relation("arm_good"), fx.entity("good"));
        probs[actions.iter().position(|a| *a == good).unwrap()]
    }

    /// Number of REINFORCE updates until the rewarded arm reaches
    /// [`TARGET`] probability, or `None` within [`MAX_UPDATES`].
    pub fn updates_to_learn(seed: u64) -> Option<usize> {
        let fx = bandit();
        let index = fx.index();
        let (judge_store, judge_params) = frozen_judge(&fx);
        let judge = Judge::new(&judge_store, &judge_params);
        let query = Triple::new(fx.entity("start"), fx.relation("asks"), fx.entity("good"));
        let mut store = ParameterStore::new();
        let dims = AgentDims {
            entity_dim: 4,
            relation_dim: 4,
            hidden_dim: 8,
        };
        let mut rng = seeded(seed);
        let params = AgentParams::register(&mut store, "agent1", fx.vocab.num_entities(), fx.vocab.num_relations(), dims, &mut rng).unwrap();
        let adam = Adam::default();
        let settings = ReinforceSettings {
            lr: LR,
            entropy_weight: 0.0,
            use_baseline: true,
            mask_query_relation: false,
        };
        let mut baseline = Baseline::new(0.9);
        for update in 1..=MAX_UPDATES {
            let walks: Vec<Vec<Action>> = (0..BATCH)
                .map(|_| {
                    let agent = NeuralAgent::new(&store, &params);
                    walk(&index, query, 1, false, &agent, &mut rng).unwrap().0
                })
                .collect();
            let samples: Vec<RoundSample<'_>> = walks
                .iter()
                .map(|steps| RoundSample {
                    query,
                    steps,
                    reward: judge.score_single_argument(&query, steps).unwrap(),
                })
                .collect();
            reinforce_step(&mut store, &params, &index, &samples, &mut baseline, &adam, &settings).unwrap();
            if good_arm_probability(&store, &params, &fx, &query) >= TARGET {
                return Some(update);
            }
        }
        None
    }
}
