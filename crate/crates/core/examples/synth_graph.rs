//! Generate a small block-model graph, write it as GFB1, and read it back.

use subcon::graph::{average_degree, generate_sbm, load_graph, save_graph, split_sidecar_path, ClassSplit, SyntheticSpec};

fn main() -> subcon::Result<()> {
    let spec = SyntheticSpec {
        blocks: vec![200; 5],
        p_in: 0.03,
        p_out: 0.002,
        feature_dim: 16,
        noise: 1.0,
        mean_scale: 2.0,
        signal_dim: Some(6),
        base_classes: Some(3),
        seed: 7,
    };
    let g = generate_sbm(&spec)?;
    let dir = std::env::temp_dir().join("subcon-synth-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("sbm.gfb");
    save_graph(&g, &path)?;
    spec.split()?.save(split_sidecar_path(&path))?;

    let back = load_graph(&path)?;
    let split = ClassSplit::load(split_sidecar_path(&path))?;
    split.validate(&back)?;
    assert_eq!(back, g);
    println!(
        "{} nodes, {} edges, avg degree {:.2}, base {:?}, novel {:?}",
        back.num_nodes(),
        back.num_edges(),
        average_degree(&back),
        split.base_classes,
        split.novel_classes
    );
    println!("written to {}", path.display());
    Ok(())
}
