//! Rank a node's partners by algebraic distance and by personalized PageRank.

use subcon::connectivity::{NadParams, PprParams, ScoreCache, ScoreSource, ViewProvider};
use subcon::graph::{generate_sbm, SyntheticSpec};

fn main() -> subcon::Result<()> {
    let spec = SyntheticSpec {
        blocks: vec![60; 3],
        p_in: 0.1,
        p_out: 0.005,
        feature_dim: 4,
        noise: 1.0,
        mean_scale: 1.0,
        signal_dim: None,
        base_classes: None,
        seed: 1,
    };
    let g = generate_sbm(&spec)?;
    let node = 0;
    let sources = [
        ("nad", ScoreSource::nad(&g, &NadParams::default(), 0.3)?),
        ("ppr", ScoreSource::ppr(PprParams::default(), 0.3)?),
    ];
    for (name, src) in &sources {
        let (ids, scores) = src.ranked(&g, node, 8)?;
        let same = ids.iter().filter(|&&i| g.label(i) == g.label(node)).count();
        println!("{name}: top partners of node {node} (class {})", g.label(node));
        for (i, s) in ids.iter().zip(&scores) {
            println!("  node {i:4}  class {}  score {s:.4}", g.label(*i));
        }
        println!("  {same}/8 share the class");

        let cache = ScoreCache::build(&g, src, 8)?;
        let bytes = cache.encode();
        println!("  cache for {} nodes is {} bytes", cache.len(), bytes.len());
    }
    Ok(())
}
