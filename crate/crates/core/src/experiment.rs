//! Experiment configuration and hyperparameter sweeps.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::connectivity::{NadParams, PprParams, ScoreCache, ScoreMethod, ScoreSource, ViewProvider, DEFAULT_GAMMA};
use crate::contrast::LossKind;
use crate::error::{Error, Result};
use crate::fewshot::{evaluate, EvalProtocol};
use crate::graph::{load_graph, split_sidecar_path, ClassSplit, Graph};
use crate::train::{pretrain, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub method: ScoreMethod,
    pub gamma: f64,
    pub nad: NadParams,
    pub ppr: PprParams,
    /// Precomputed cache to use instead of scoring on the fly.
    pub cache: Option<PathBuf>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            method: ScoreMethod::Ppr,
            gamma: DEFAULT_GAMMA,
            nad: NadParams::default(),
            ppr: PprParams::default(),
            cache: None,
        }
    }
}

impl ScoreConfig {
    pub fn source(&self, g: &Graph) -> Result<ScoreSource> {
        match self.method {
            ScoreMethod::Nad => ScoreSource::nad(g, &self.nad, self.gamma),
            ScoreMethod::Ppr => ScoreSource::ppr(self.ppr.clone(), self.gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: PathBuf,
    /// Defaults to the graph's `.split.json` sidecar.
    #[serde(default)]
    pub split: Option<PathBuf>,
    #[serde(default)]
    pub scores: ScoreConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalProtocol,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn split_path(&self) -> PathBuf {
        self.split.clone().unwrap_or_else(|| split_sidecar_path(&self.graph))
    }

    /// Checks parameter ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.validate_ranges()?;
        for p in [Some(self.graph.clone()), Some(self.split_path()), self.scores.cache.clone()]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::invalid(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn validate_ranges(&self) -> Result<()> {
        let gamma = self.scores.gamma;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if self.eval.alpha == 0 {
            return Err(Error::invalid("eval alpha must be at least 1"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "axis", content = "values")]
pub enum SweepAxis {
    Beta(Vec<f64>),
    Batch(Vec<usize>),
    /// The five loss / balanced-sampling configurations of the ablation.
    Loss,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Beta(_) => "beta",
            SweepAxis::Batch(_) => "batch",
            SweepAxis::Loss => "loss",
        }
    }

    /// One `(label, config)` per grid point.
    pub fn points(&self, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
        let pts: Vec<(String, TrainConfig)> = match self {
            SweepAxis::Beta(grid) => grid
                .iter()
                .map(|&beta| (beta.to_string(), TrainConfig { beta, ..base.clone() }))
                .collect(),
            SweepAxis::Batch(grid) => grid
                .iter()
                .map(|&batch| (batch.to_string(), TrainConfig { batch, ..base.clone() }))
                .collect(),
            SweepAxis::Loss => LOSS_ABLATION
                .iter()
                .map(|&(loss, bs)| {
                    (
                        ablation_label(loss, bs),
                        TrainConfig {
                            loss,
                            balanced_sampling: bs,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
        };
        if pts.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        Ok(pts)
    }
}

/// Loss kind and balanced-sampling flag per ablation row.
pub const LOSS_ABLATION: [(LossKind, bool); 5] = [
    (LossKind::Ce, false),
    (LossKind::Ce, true),
    (LossKind::Simclr, false),
    (LossKind::Simclr, true),
    (LossKind::Gsupcon, true),
];

pub fn ablation_label(loss: LossKind, balanced: bool) -> String {
    format!("{}+{}", loss.name(), if balanced { "bs" } else { "nobs" })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub mean: Option<f64>,
    pub ci95: Option<f64>,
    pub error: Option<String>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,mean_acc,ci95,error\n");
    for r in rows {
        let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let err = if err.contains(',') { format!("\"{err}\"") } else { err };
        out.push_str(&format!("{},{},{},{}\n", r.value, num(r.mean), num(r.ci95), err));
    }
    out
}

/// One pretrain + evaluate per grid point on an already loaded graph. A
/// failing point is recorded and the sweep moves on.
pub fn run_sweep_on(
    g: &Graph,
    split: &ClassSplit,
    provider: &dyn ViewProvider,
    base: &TrainConfig,
    protocol: &EvalProtocol,
    axis: &SweepAxis,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (value, cfg) in axis.points(base)? {
        info!("sweep {}={value}", axis.name());
        let outcome = pretrain(g, split, provider, &cfg)
            .and_then(|o| evaluate(g, split, &o.params, provider, protocol));
        rows.push(match outcome {
            Ok(res) => SweepRow {
                axis: axis.name().into(),
                value,
                mean: Some(res.mean),
                ci95: Some(res.ci95),
                error: None,
            },
            Err(e) => {
                warn!("sweep point {}={value} failed: {e}", axis.name());
                SweepRow {
                    axis: axis.name().into(),
                    value,
                    mean: None,
                    ci95: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    Ok(rows)
}

/// Loads the graph, split and scores named by `config`, and runs the sweep.
/// Writes `sweep_<axis>.csv` into the output directory.
pub fn run_sweep(config: &ExperimentConfig, axis: &SweepAxis) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let g = load_graph(&config.graph)?;
    let split = ClassSplit::load(config.split_path())?;
    split.validate(&g)?;
    let rows = match &config.scores.cache {
        Some(path) => {
            let cache = ScoreCache::load(path)?;
            cache.check_graph(&g)?;
            run_sweep_on(&g, &split, &cache, &config.train, &config.eval, axis)?
        }
        None => {
            let source = config.scores.source(&g)?;
            let alpha = config.train.alpha.max(config.eval.alpha).min(g.num_nodes() - 1);
            let cache = ScoreCache::build(&g, &source, alpha)?;
            run_sweep_on(&g, &split, &cache, &config.train, &config.eval, axis)?
        }
    };
    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(
        config.output_dir.join(format!("sweep_{}.csv", axis.name())),
        sweep_csv(&rows),
    )?;
    Ok(rows)
}
