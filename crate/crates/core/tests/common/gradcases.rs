//! Random-shape gradient cases: every tape op plus the full agent and judge
//! graphs, each reduced to its worst relative error against finite
//! differences.

use super::max_grad_error;
use kgdebate::autodiff::{LstmCell, ParamId, ParameterStore, Tape, Tensor, Var};
use kgdebate::fixtures::figure_one;
use kgdebate::judge::{Judge, JudgeDims, JudgeParams};
use kgdebate::kg::{Action, Triple};
use kgdebate::policy::{AgentDims, AgentParams, NeuralAgent};
use kgdebate::rng::{seeded, DebateRng};
use kgdebate::Result;
use rand::Rng;

const SHAPES_PER_OP: u64 = 20;

struct Case {
    store: ParameterStore,
    ids: Vec<ParamId>,
    rng: DebateRng,
}

impl Case {
    fn new(seed: u64) -> Self {
        Self {
            store: ParameterStore::new(),
            ids: Vec::new(),
            rng: seeded(seed),
        }
    }

    fn dim(&mut self) -> usize {
        self.rng.random_range(1..=6)
    }

    fn tensor(&mut self, shape: Vec<usize>) -> ParamId {
        let t = Tensor::normal(shape, 1.0, &mut self.rng);
        self.push(t)
    }

    fn push(&mut self, t: Tensor) -> ParamId {
        let id = self.store.insert(format!("p{}", self.ids.len()), t).unwrap();
        self.ids.push(id);
        id
    }

    fn projection(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.random_range(-1.0..1.0)).collect()
    }
}

/// Reduces a vector output to a scalar with fixed random weights.
fn project(tape: &mut Tape<'_>, out: Var, weights: &[f64]) -> Result<Var> {
    let w = tape.input(weights.to_vec())?;
    tape.dot(out, w)
}

type Forward = Box<dyn for<'a> Fn(&mut Tape<'a>) -> Result<Var>>;

/// Worst relative error of `name` over [`SHAPES_PER_OP`] random shapes.
fn check_op(out: &mut Vec<(String, f64)>, name: &str, build: impl Fn(&mut Case) -> Forward) {
    let mut worst: f64 = 0.0;
    for seed in 0..SHAPES_PER_OP {
        let mut case = Case::new(seed * 7919 + name.len() as u64);
        let forward = build(&mut case);
        worst = worst.max(max_grad_error(&case.store, &case.ids, forward));
    }
    out.push((name.to_owned(), worst));
}

fn unary(out: &mut Vec<(String, f64)>, name: &str, op: fn(&mut Tape<'_>, Var) -> Result<Var>) {
    check_op(out, name, move |c| {
        let n = c.dim();
        let a = c.tensor(vec![n]);
        let w = c.projection(n);
        Box::new(move |t| {
            let x = t.param(a)?;
            let y = op(t, x)?;
            project(t, y, &w)
        })
    });
}

fn elementwise_unary_ops(out: &mut Vec<(String, f64)>) {
    unary(out, "tanh", |t, x| t.tanh(x));
    unary(out, "sigmoid", |t, x| t.sigmoid(x));
    unary(out, "exp", |t, x| t.exp(x));
    unary(out, "log_softmax", |t, x| t.log_softmax(x));
    unary(out, "scale", |t, x| t.scale(x, -1.7));
}

fn relu_away_from_the_kink(out: &mut Vec<(String, f64)>) {
    check_op(out, "relu", |c| {
        let n = c.dim();
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = c.rng.random_range(0.1..2.0);
                if c.rng.random_bool(0.5) { v } else { -v }
            })
            .collect();
        let a = c.push(Tensor::new(vec![n], values).unwrap());
        let w = c.projection(n);
        Box::new(move |t| {
            let x = t.param(a)?;
            let y = t.relu(x)?;
            project(t, y, &w)
        })
    });
}

fn binary_ops(out: &mut Vec<(String, f64)>) {
    for (name, op) in [
        ("add", (|t, a, b| t.add(a, b)) as fn(&mut Tape<'_>, Var, Var) -> Result<Var>),
        ("mul", |t, a, b| t.mul(a, b)),
        ("dot", |t, a, b| t.dot(a, b)),
    ] {
        check_op(out, name, move |c| {
            let n = c.dim();
            let (a, b) = (c.tensor(vec![n]), c.tensor(vec![n]));
            let w = c.projection(if name == "dot" { 1 } else { n });
            Box::new(move |t| {
                let (x, y) = (t.param(a)?, t.param(b)?);
                let z = op(t, x, y)?;
                project(t, z, &w)
            })
        });
    }
}

fn matvec_and_affine(out: &mut Vec<(String, f64)>) {
    check_op(out, "matvec", |c| {
        let (m, n) = (c.dim(), c.dim());
        let (w, x) = (c.tensor(vec![m, n]), c.tensor(vec![n]));
        let proj = c.projection(m);
        Box::new(move |t| {
            let xv = t.param(x)?;
            let y = t.matvec(w, xv)?;
            project(t, y, &proj)
        })
    });
    check_op(out, "affine", |c| {
        let (m, n) = (c.dim(), c.dim());
        let (w, b, x) = (c.tensor(vec![m, n]), c.tensor(vec![m]), c.tensor(vec![n]));
        let proj = c.projection(m);
        Box::new(move |t| {
            let xv = t.param(x)?;
            let y = t.affine(w, b, xv)?;
            project(t, y, &proj)
        })
    });
}

fn structural_ops(out: &mut Vec<(String, f64)>) {
    check_op(out, "concat", |c| {
        let k = c.rng.random_range(1..=4);
        let dims: Vec<usize> = (0..k).map(|_| c.dim()).collect();
        let ids: Vec<ParamId> = dims.iter().map(|&d| c.tensor(vec![d])).collect();
        let proj = c.projection(dims.iter().sum());
        Box::new(move |t| {
            let parts = ids.iter().map(|&id| t.param(id)).collect::<Result<Vec<_>>>()?;
            let y = t.concat(&parts)?;
            project(t, y, &proj)
        })
    });
    check_op(out, "slice", |c| {
        let n = c.dim();
        let a = c.tensor(vec![n]);
        let start = c.rng.random_range(0..n);
        let len = c.rng.random_range(1..=n - start);
        let proj = c.projection(len);
        Box::new(move |t| {
            let x = t.param(a)?;
            let y = t.slice(x, start, len)?;
            project(t, y, &proj)
        })
    });
    check_op(out, "sum", |c| {
        let n = c.dim();
        let a = c.tensor(vec![n]);
        Box::new(move |t| {
            let x = t.param(a)?;
            let s = t.sum(x)?;
            t.mul(s, s)
        })
    });
    check_op(out, "add_n", |c| {
        let n = c.dim();
        let k = c.rng.random_range(1..=4);
        let ids: Vec<ParamId> = (0..k).map(|_| c.tensor(vec![n])).collect();
        let proj = c.projection(n);
        Box::new(move |t| {
            let parts = ids.iter().map(|&id| t.param(id)).collect::<Result<Vec<_>>>()?;
            let y = t.add_n(&parts)?;
            let y = t.mul(y, y)?;
            project(t, y, &proj)
        })
    });
    check_op(out, "pick", |c| {
        let n = c.dim();
        let a = c.tensor(vec![n]);
        let index = c.rng.random_range(0..n);
        Box::new(move |t| {
            let x = t.param(a)?;
            let lp = t.log_softmax(x)?;
            t.pick(lp, index)
        })
    });
    check_op(out, "row", |c| {
        let (m, n) = (c.dim(), c.dim());
        let a = c.tensor(vec![m, n]);
        let r = c.rng.random_range(0..m);
        let proj = c.projection(n);
        Box::new(move |t| {
            let x = t.row(a, r)?;
            let y = t.tanh(x)?;
            project(t, y, &proj)
        })
    });
}

fn action_scores_and_bce(out: &mut Vec<(String, f64)>) {
    check_op(out, "action_scores", |c| {
        let (dr, de) = (c.dim(), c.dim());
        let (nr, ne) = (c.dim(), c.dim());
        let head = c.tensor(vec![dr + de]);
        let rel = c.tensor(vec![nr, dr]);
        let ent = c.tensor(vec![ne, de]);
        let k = c.rng.random_range(1..=5);
        let actions: Vec<Action> = (0..k)
            .map(|_| Action::new(c.rng.random_range(0..nr), c.rng.random_range(0..ne)))
            .collect();
        let proj = c.projection(k);
        Box::new(move |t| {
            let h = t.param(head)?;
            let s = t.action_scores(h, rel, ent, &actions)?;
            project(t, s, &proj)
        })
    });
    for label in [0.0, 1.0, 0.3] {
        check_op(out, "bce_with_logits", move |c| {
            let z = c.tensor(vec![1]);
            Box::new(move |t| {
                let x = t.param(z)?;
                t.bce_with_logits(x, label)
            })
        });
    }
}

fn lstm_step(out: &mut Vec<(String, f64)>) {
    check_op(out, "lstm", |c| {
        let (n, d) = (c.dim(), c.dim());
        let cell = LstmCell {
            input: c.tensor(vec![4 * n, d]),
            hidden: c.tensor(vec![4 * n, n]),
            bias: c.tensor(vec![4 * n]),
        };
        let (x, h, s) = (c.tensor(vec![d]), c.tensor(vec![n]), c.tensor(vec![n]));
        let proj = c.projection(2 * n);
        Box::new(move |t| {
            let (xv, hv, sv) = (t.param(x)?, t.param(h)?, t.param(s)?);
            let (h2, c2) = cell.step(t, xv, hv, sv)?;
            let both = t.concat(&[h2, c2])?;
            project(t, both, &proj)
        })
    });
}

fn full_agent_graph(out: &mut Vec<(String, f64)>) {
    let fx = figure_one();
    let index = fx.index();
    let query = fx.triple("Michael Jordan", "has_nationality", "USA");
    let argument = [
        Action::new(fx.relation("plays_role_in"), fx.entity("Space Jam")),
        Action::new(fx.relation("produced_in"), fx.entity("USA")),
    ];
    for seed in 0..3 {
        let mut store = ParameterStore::new();
        let dims = AgentDims {
            entity_dim: 3,
            relation_dim: 2,
            hidden_dim: 4,
        };
        let params = AgentParams::register(
            &mut store,
            "agent1",
            fx.vocab.num_entities(),
            fx.vocab.num_relations(),
            dims,
            &mut seeded(seed),
        )
        .unwrap();
        // Embeddings at the default scale give tiny gradients; widen them so
        // the check is not dominated by the absolute floor.
        for id in [params.entities, params.relations] {
            for v in store.get_mut(id).values_mut() {
                *v *= 10.0;
            }
        }
        let ids = params.ids();
        // Tapes over perturbed copies of the store outlive any local borrow.
        let params: &'static AgentParams = Box::leak(Box::new(params));
        let err = max_grad_error(&store, &ids, |t| {
            let agent = NeuralAgent::new(t.store(), params);
            let g = agent.replay_argument(t, &index, &query, &argument, false)?;
            let ent = t.scale(g.entropy, 0.3)?;
            t.add(g.log_prob, ent)
        });
        out.push((format!("agent graph (seed {seed})"), err));
    }
}

fn full_judge_graph(out: &mut Vec<(String, f64)>) {
    let query = Triple::new(0, 1, 2);
    let arguments = vec![
        vec![Action::new(1, 3), Action::new(3, 4)],
        vec![Action::new(2, 0), Action::new(0, 0)],
        vec![Action::new(5, 1), Action::new(6, 2)],
    ];
    for seed in 0..3 {
        let mut store = ParameterStore::new();
        let dims = JudgeDims {
            entity_dim: 3,
            relation_dim: 2,
            hidden1: 5,
            hidden2: 4,
            hops: 2,
        };
        let mut rng = seeded(100 + seed);
        let params = JudgeParams::register(&mut store, 5, 7, dims, &mut rng).unwrap();
        // Zero-initialised biases and output weights would sit exactly on
        // relu kinks or mask every upstream gradient; randomise everything.
        for id in params.ids() {
            let t = Tensor::normal(store.get(id).shape().to_vec(), 1.0, &mut rng);
            *store.get_mut(id) = t;
        }
        let ids = params.ids();
        let params: &'static JudgeParams = Box::leak(Box::new(params));
        let err = max_grad_error(&store, &ids, |t| {
            let judge = Judge::new(t.store(), params);
            let z = judge.logit(t, &query, &arguments)?;
            t.bce_with_logits(z, 1.0)
        });
        out.push((format!("judge graph (seed {seed})"), err));
    }
}

/// `(case, worst relative error)` for every op and both full graphs.
pub fn all_cases() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    elementwise_unary_ops(&mut out);
    relu_away_from_the_kink(&mut out);
    binary_ops(&mut out);
    matvec_and_affine(&mut out);
    structural_ops(&mut out);
    action_scores_and_bce(&mut out);
    lstm_step(&mut out);
    full_agent_graph(&mut out);
    full_judge_graph(&mut out);
    out
}
