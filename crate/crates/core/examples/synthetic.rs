//! Trains on the generated nationality graph and reports how often the
//! pro agent argues through the birth city.
//!
//! `cargo run --release --example synthetic -- [seed] [epochs]`

use kgdebate::env::AgentId;
use kgdebate::fixtures::{nationality_rule_graph, RuleGraphConfig};
use kgdebate::kg::{build_index, make_split_with, NegativeSampling};
use kgdebate::rng::seeded;
use kgdebate::trainer::{evaluate, train, Runner, TrainConfig, TrainSinks};

fn main() -> kgdebate::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let fx = nationality_rule_graph(&RuleGraphConfig::default())?;
    let nationality = fx.relation("nationality");
    let split = make_split_with(&fx.vocab, &fx.facts, &[nationality], 0.3, NegativeSampling::Range, &mut seeded(seed))?;

    let config = TrainConfig::parse(&format!(
        "seed = {seed}\nrounds = 2\nhorizon = 3\nmask_query_relation = true\nepochs = {epochs}\n\
         entity_dim = 16\nrelation_dim = 16\nhidden_dim = 32\njudge_hidden1 = 32\njudge_hidden2 = 16\n\
         batch_size = 32\nlr_agents = 0.003\nlr_judge = 0.003\nweight_decay = 0.1\neval_every = 50\n"
    ))?;
    let start = std::time::Instant::now();
    let mut log = std::io::stdout();
    let outcome = train(&fx.vocab, &split, &config, TrainSinks { metrics: Some(&mut log), checkpoint: None })?;

    let index = build_index(&fx.vocab, &split.graph_facts)?;
    let eval = evaluate(&outcome.model, &fx.vocab, &index, &split.test, &config.debate, config.eval_seed, &Runner::sequential())?;
    let (born, located) = (fx.relation("born_in"), fx.relation("located_in"));
    let (mut rule, mut total) = (0, 0);
    for o in eval.outcomes.iter().filter(|o| o.query.label) {
        for t in &o.debates {
            for a in t.arguments_of(AgentId::Pro) {
                total += 1;
                rule += usize::from(a.steps.windows(2).any(|w| w[0].relation == born && w[1].relation == located));
            }
        }
    }
    println!(
        "accuracy {:.3} rule-paths {:.3} ({rule}/{total}) in {:.1}s",
        eval.report.accuracy,
        rule as f64 / total.max(1) as f64,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
