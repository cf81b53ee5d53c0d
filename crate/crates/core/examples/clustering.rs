//! k-means quality of novel-class embeddings before and after pretraining.

use subcon::connectivity::{PprParams, ScoreCache, ScoreSource};
use subcon::encoder::EncoderParams;
use subcon::fewshot::{adjusted_rand_index, cluster_novel, normalized_mutual_info};
use subcon::graph::{generate_sbm, SyntheticSpec};
use subcon::train::{pretrain, TrainConfig};

fn main() -> subcon::Result<()> {
    let a = [0, 0, 0, 1, 1, 1];
    let b = [0, 0, 1, 1, 2, 2];
    println!("fixture: nmi {:.6} ari {:.6}", normalized_mutual_info(&a, &b), adjusted_rand_index(&a, &b));

    let spec = SyntheticSpec {
        blocks: vec![250; 6],
        p_in: 0.03,
        p_out: 0.002,
        feature_dim: 16,
        noise: 1.0,
        mean_scale: 2.0,
        signal_dim: Some(6),
        base_classes: Some(3),
        seed: 5,
    };
    let g = generate_sbm(&spec)?;
    let split = spec.split()?;
    let cache = ScoreCache::build(&g, &ScoreSource::ppr(PprParams::default(), 0.3)?, 19)?;
    let untrained = EncoderParams::seeded(g.feature_dim(), 64, 0)?;
    let trained = pretrain(&g, &split, &cache, &TrainConfig { batch: 150, max_steps: Some(100), ..TrainConfig::default() })?.params;
    for (name, params) in [("untrained", &untrained), ("pretrained", &trained)] {
        let m = cluster_novel(&g, &split, params, &cache, 19, 0)?;
        println!("{name:10} nmi {:.3} ari {:.3}", m.nmi, m.ari);
    }
    Ok(())
}
