//! Build the subgraph around one node and embed it as a node view and a subgraph view.

use subcon::connectivity::{PprParams, ScoreSource, ViewProvider};
use subcon::encoder::{embed_duo, EncoderParams};
use subcon::graph::{generate_sbm, SyntheticSpec};

fn main() -> subcon::Result<()> {
    let spec = SyntheticSpec {
        blocks: vec![50; 4],
        p_in: 0.1,
        p_out: 0.01,
        feature_dim: 8,
        noise: 1.0,
        mean_scale: 1.0,
        signal_dim: None,
        base_classes: None,
        seed: 2,
    };
    let g = generate_sbm(&spec)?;
    let src = ScoreSource::ppr(PprParams::default(), 0.3)?;
    let view = src.view(&g, 10, 5)?;
    println!("members {:?}", view.members);
    println!("pooling weights {:?}", view.weights.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
    for r in 0..view.len() {
        let row: Vec<String> = (0..view.len()).map(|c| format!("{:.2}", view.adjacency.get(r, c))).collect();
        println!("  {}", row.join(" "));
    }

    let params = EncoderParams::seeded(g.feature_dim(), 6, 0)?;
    let duo = embed_duo(&g, &params, &view)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ");
    println!("node view     {}", fmt(&duo.node));
    println!("subgraph view {}", fmt(&duo.subgraph));
    Ok(())
}
