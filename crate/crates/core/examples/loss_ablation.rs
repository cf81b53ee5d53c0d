//! The five loss and sampling configurations, each pretrained and evaluated on one benchmark graph.

use subcon::connectivity::{PprParams, ScoreCache, ScoreSource};
use subcon::experiment::{run_sweep_on, sweep_csv, SweepAxis};
use subcon::fewshot::EvalProtocol;
use subcon::graph::{generate_sbm, SyntheticSpec};
use subcon::train::TrainConfig;

fn main() -> subcon::Result<()> {
    let spec = SyntheticSpec {
        blocks: vec![500; 5],
        p_in: 0.012,
        p_out: 0.0008,
        feature_dim: 32,
        noise: 1.0,
        mean_scale: 1.5,
        signal_dim: Some(4),
        base_classes: Some(3),
        seed: 0,
    };
    let g = generate_sbm(&spec)?;
    let split = spec.split()?;
    let cache = ScoreCache::build(&g, &ScoreSource::ppr(PprParams::default(), 0.3)?, 19)?;
    let base = TrainConfig { batch: 150, max_steps: Some(200), ..TrainConfig::default() };
    let protocol = EvalProtocol { nway: 2, kshot: 5, episodes: 50, seeds: 3, ..EvalProtocol::default() };
    let rows = run_sweep_on(&g, &split, &cache, &base, &protocol, &SweepAxis::Loss)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
