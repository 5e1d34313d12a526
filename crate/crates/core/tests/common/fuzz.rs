//! Campaign fixtures: the `cross_small` corpus and the discovery setup.

use scenariofuzz::corpus::{build_corpus, CorpusParams, SeedCorpus};
use scenariofuzz::fixtures;
use scenariofuzz::fuzz::{Budget, FuzzConfig, StrategyMode};
use scenariofuzz::sim::MapContext;

pub fn world(map: &str) -> (SeedCorpus, MapContext) {
    let net = fixtures::network(map).unwrap();
    let ctx = MapContext::new(net.clone(), 5.0).unwrap();
    let corpus = build_corpus(&net, &ctx.graph, &CorpusParams::default()).unwrap();
    (corpus, ctx)
}

/// `weak` agent discovery setup: tr = 50, 30 s stuck timeout.
pub fn discovery(mode: StrategyMode, rng_seed: u64, executions: usize) -> FuzzConfig {
    FuzzConfig {
        mode,
        retrain_every: 50,
        rng_seed,
        budget: Budget {
            executions: Some(executions),
            seconds: None,
        },
        ..FuzzConfig::default()
    }
}
