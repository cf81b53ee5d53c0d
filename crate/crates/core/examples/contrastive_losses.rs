//! Supervised and instance contrastive losses on a hand-made duo batch.

use subcon::autodiff::Tensor;
use subcon::contrast::{gsupcon_loss, simclr_loss, DuoBatch};

fn main() -> subcon::Result<()> {
    let subgraphs = Tensor::new(4, 2, vec![0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8])?;
    let nodes = Tensor::new(4, 2, vec![1.0, 0.0, 0.96, 0.28, 0.0, 1.0, 0.28, 0.96])?;
    for tau in [1.0, 0.5, 0.1] {
        let batch = DuoBatch::from_views(&subgraphs, &nodes, &[0, 0, 1, 1], tau)?;
        let distinct = DuoBatch::from_views(&subgraphs, &nodes, &[0, 1, 2, 3], tau)?;
        println!(
            "tau {tau:4}: supervised {:8.4}  instance {:8.4}  supervised with distinct labels {:8.4}",
            gsupcon_loss(&batch)?,
            simclr_loss(&batch)?,
            gsupcon_loss(&distinct)?
        );
    }
    Ok(())
}
