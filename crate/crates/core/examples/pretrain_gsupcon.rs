//! Pretrain an encoder on the base classes and save a checkpoint.

use subcon::connectivity::{PprParams, ScoreCache, ScoreSource};
use subcon::graph::{generate_sbm, SyntheticSpec};
use subcon::train::{trace_csv, TrainConfig, Trainer};

fn main() -> subcon::Result<()> {
    env_logger::init();
    let spec = SyntheticSpec {
        blocks: vec![300; 5],
        p_in: 0.02,
        p_out: 0.0015,
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

    let config = TrainConfig { batch: 150, max_steps: Some(100), ..TrainConfig::default() };
    let mut trainer = Trainer::new(&g, &split, &cache, config)?;
    println!(
        "tau {:.4}, effective batch {}, {} steps per epoch",
        trainer.tau(),
        trainer.effective_batch(),
        trainer.steps_per_epoch()
    );
    let out = trainer.run()?;
    for r in out.trace.iter().step_by(20) {
        println!("step {:3}  loss {:9.3}  {:.1} ms", r.step, r.loss, r.wall_ms);
    }

    let dir = std::env::temp_dir().join("subcon-pretrain-example");
    std::fs::create_dir_all(&dir)?;
    trainer.checkpoint().save(dir.join("encoder.json"))?;
    std::fs::write(dir.join("trace.csv"), trace_csv(&out.trace))?;
    println!("checkpoint and trace in {}", dir.display());
    Ok(())
}
