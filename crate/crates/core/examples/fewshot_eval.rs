//! Few-shot evaluation of an untrained and a pretrained encoder on the novel classes.

use subcon::connectivity::{PprParams, ScoreCache, ScoreSource};
use subcon::encoder::EncoderParams;
use subcon::fewshot::{evaluate, EvalProtocol};
use subcon::graph::{generate_sbm, SyntheticSpec};
use subcon::train::{pretrain, TrainConfig};

fn main() -> subcon::Result<()> {
    let spec = SyntheticSpec {
        blocks: vec![200; 8],
        p_in: 0.03,
        p_out: 0.002,
        feature_dim: 16,
        noise: 1.0,
        mean_scale: 1.5,
        signal_dim: Some(8),
        base_classes: Some(3),
        seed: 3,
    };
    let g = generate_sbm(&spec)?;
    let split = spec.split()?;
    let cache = ScoreCache::build(&g, &ScoreSource::ppr(PprParams::default(), 0.3)?, 19)?;
    let protocol = EvalProtocol { episodes: 20, seeds: 3, ..EvalProtocol::default() };

    let untrained = EncoderParams::seeded(g.feature_dim(), 64, 0)?;
    let trained = pretrain(&g, &split, &cache, &TrainConfig { batch: 150, max_steps: Some(100), ..TrainConfig::default() })?.params;
    for (name, params) in [("untrained", &untrained), ("pretrained", &trained)] {
        let res = evaluate(&g, &split, params, &cache, &protocol)?;
        println!("{name:10} {}: {:.2}% +/- {:.2}", res.setting, 100.0 * res.mean, 100.0 * res.ci95);
    }
    Ok(())
}
