//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

mod common;

use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use subcon::autodiff::Tensor;
use subcon::connectivity::{
    ppr_column, NadParams, PprParams, ScoreCache, ScoreSource, SubgraphView, ViewProvider,
};
use subcon::contrast::{gsupcon_loss, simclr_loss, DuoBatch, LossKind};
use subcon::encoder::EncoderParams;
use subcon::fewshot::{
    adjusted_rand_index, cluster_metrics, cluster_novel, evaluate, normalized_mutual_info, EvalProtocol,
};
use subcon::graph::{generate_sbm, ClassSplit, Graph, SyntheticSpec};
use subcon::train::{pretrain, TrainConfig, Trainer};

use common::{connected_graph, dense_ppr, numeric_grad, pipeline_loss, pipeline_value, rel_err, rng};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn random_graphs() -> Vec<Graph> {
    let mut r = rng(2024);
    (0..30)
        .map(|_| {
            let m = r.gen_range(2..=50);
            let extra = r.gen_range(0..=m);
            connected_graph(&mut r, m, extra, 3, 3)
        })
        .collect()
}

#[test]
fn gradient_correctness() {
    let _g = serial();
    let started = Instant::now();
    let mut r = rng(7);
    let mut worst = 0.0f64;
    let trials = 100;
    for t in 0..trials {
        let m = r.gen_range(6..20);
        let d = r.gen_range(2..6);
        let classes = r.gen_range(2..4);
        let g = connected_graph(&mut r, m, m, d, classes);
        let source = if t % 2 == 0 {
            ScoreSource::ppr(PprParams::default(), 0.3).unwrap()
        } else {
            ScoreSource::nad(&g, &NadParams { seed: t as u64, ..NadParams::default() }, 0.3).unwrap()
        };
        let alpha = r.gen_range(1..6);
        let b = r.gen_range(2..6);
        let mut ids: Vec<usize> = (0..m).collect();
        ids.shuffle(&mut r);
        let views: Vec<SubgraphView> = ids[..b].iter().map(|&j| source.view(&g, j, alpha).unwrap()).collect();
        let labels: Vec<u32> = ids[..b].iter().map(|&j| g.label(j)).collect();
        let f = r.gen_range(2..6);
        let mut params = EncoderParams::init(d, f, &mut r).unwrap();
        params.prelu_slope = r.gen_range(0.05..0.5);
        let tau = r.gen_range(0.3..2.0);

        let (_, gw, gs) = pipeline_loss(&params, &views, &labels, tau);
        let h = 1e-6;
        let nw = numeric_grad(&params.weight, h, |w| {
            let p = EncoderParams { weight: w.clone(), prelu_slope: params.prelu_slope };
            pipeline_value(&p, &views, &labels, tau)
        });
        let up = pipeline_value(&EncoderParams { prelu_slope: params.prelu_slope + h, ..params.clone() }, &views, &labels, tau);
        let down = pipeline_value(&EncoderParams { prelu_slope: params.prelu_slope - h, ..params.clone() }, &views, &labels, tau);
        let mut analytic = gw.data().to_vec();
        analytic.push(gs);
        let mut numeric = nw;
        numeric.push((up - down) / (2.0 * h));
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        "gradient_correctness",
        worst < 1e-4 && secs < 60.0,
        format!("{trials} pipelines, max rel err {worst:.2e} (< 1e-4), {secs:.1}s (< 60s)"),
    );
}

#[test]
fn ppr_oracle_equivalence() {
    let _g = serial();
    let started = Instant::now();
    let params = PprParams { tolerance: 1e-12, ..PprParams::default() };
    let mut worst = 0.0f64;
    let graphs = random_graphs();
    for g in &graphs {
        for j in 0..g.num_nodes() {
            let a = ppr_column(g, j, &params).unwrap();
            let b = dense_ppr(g, j, params.teleport);
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        "ppr_oracle_equivalence",
        worst <= 1e-8 && secs < 10.0,
        format!("{} graphs, every column, max abs diff {worst:.2e} (<= 1e-8), {secs:.2}s (< 10s)", graphs.len()),
    );
}

#[test]
fn loss_invariants() {
    let _g = serial();
    let mut r = rng(8);
    let mut min_loss = f64::INFINITY;
    let mut worst_perm = 0.0f64;
    let mut reduction_exact = true;
    let mut single_zero = true;
    for _ in 0..300 {
        let b = r.gen_range(1..10);
        let f = r.gen_range(2..8);
        let classes = r.gen_range(1..5);
        let tau = r.gen_range(0.05..2.0);
        let subs = Tensor::new(b, f, (0..b * f).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        let mut nodes = Tensor::new(b, f, (0..b * f).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        for i in 0..b {
            let n: f64 = nodes.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            nodes.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        let labels: Vec<u32> = (0..b).map(|_| r.gen_range(0..classes)).collect();
        let batch = DuoBatch::from_views(&subs, &nodes, &labels, tau).unwrap();
        let loss = gsupcon_loss(&batch).unwrap();
        min_loss = min_loss.min(loss);
        if b == 1 {
            single_zero &= loss == 0.0 && simclr_loss(&batch).unwrap() == 0.0;
        }

        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut r);
        let pick = |t: &Tensor| Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pl: Vec<u32> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = DuoBatch::from_views(&pick(&subs), &pick(&nodes), &pl, tau).unwrap();
        worst_perm = worst_perm.max((gsupcon_loss(&permuted).unwrap() - loss).abs());

        let distinct: Vec<u32> = (0..b as u32).collect();
        let d = DuoBatch::from_views(&subs, &nodes, &distinct, tau).unwrap();
        reduction_exact &= gsupcon_loss(&d).unwrap() == simclr_loss(&d).unwrap();
    }
    let pass = min_loss >= 0.0 && single_zero && worst_perm <= 1e-10 && reduction_exact;
    report(
        "loss_invariants",
        pass,
        format!(
            "300 batches: min loss {min_loss:.3e} (>= 0), single-pair loss zero {single_zero}, \
             max permutation diff {worst_perm:.1e} (<= 1e-10), distinct labels equal instance loss {reduction_exact}"
        ),
    );
}

#[test]
fn finalized_score_columns() {
    let _g = serial();
    let gamma = 0.3;
    let mut graphs = random_graphs();
    graphs.push(benchmark_graph().0);
    let mut worst = 0.0f64;
    let mut diag_exact = true;
    let mut columns = 0;
    for g in &graphs {
        let sources = [
            ScoreSource::nad(g, &NadParams::default(), gamma).unwrap(),
            ScoreSource::ppr(PprParams::default(), gamma).unwrap(),
        ];
        let nodes: Vec<usize> = (0..g.num_nodes()).step_by(g.num_nodes().div_ceil(60)).collect();
        for src in &sources {
            for &j in &nodes {
                let col = src.column(g, j).unwrap();
                diag_exact &= col[j] == gamma;
                let off: f64 = col.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| v).sum();
                if g.num_nodes() > 1 {
                    worst = worst.max((off - (1.0 - gamma)).abs());
                }
                columns += 1;
            }
        }
    }
    report(
        "finalized_score_columns",
        diag_exact && worst <= 1e-9,
        format!("{columns} NAD and PPR columns on {} graphs: diagonal == 0.3 {diag_exact}, max |offdiag sum - 0.7| {worst:.1e} (<= 1e-9)", graphs.len()),
    );
}

#[test]
fn chance_level_sanity() {
    let _g = serial();
    let spec = SyntheticSpec {
        blocks: vec![60; 8],
        p_in: 0.05,
        p_out: 0.05,
        feature_dim: 16,
        noise: 1.0,
        mean_scale: 0.0,
        signal_dim: None,
        base_classes: Some(3),
        seed: 11,
    };
    let g = generate_sbm(&spec).unwrap();
    let split = spec.split().unwrap();
    let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
    let cache = ScoreCache::build(&g, &src, 19).unwrap();
    let params = EncoderParams::seeded(16, 64, 0).unwrap();
    let protocol = EvalProtocol { nway: 5, kshot: 5, qsize: 10, episodes: 50, seeds: 4, ..EvalProtocol::default() };
    let res = evaluate(&g, &split, &params, &cache, &protocol).unwrap();
    let n = res.episodes.len() as f64;
    let sigma = res.episode_std / n.sqrt();
    let dev = (res.mean - 0.2).abs();
    report(
        "chance_level_sanity",
        res.episodes.len() >= 200 && dev <= 3.0 * sigma,
        format!("{} episodes, 5-way accuracy {:.4}, |acc - 0.2| = {dev:.4} (<= 3 sigma = {:.4})", res.episodes.len(), res.mean, 3.0 * sigma),
    );
}

/// Fixed 5-block benchmark: 500 nodes per class, 3 base and 2 novel classes.
fn benchmark_spec() -> SyntheticSpec {
    SyntheticSpec {
        blocks: vec![500; 5],
        p_in: 0.012,
        p_out: 0.0008,
        feature_dim: 32,
        noise: 1.0,
        mean_scale: 1.5,
        signal_dim: Some(4),
        base_classes: Some(3),
        seed: 0,
    }
}

fn benchmark_graph() -> (Graph, ClassSplit) {
    let spec = benchmark_spec();
    (generate_sbm(&spec).unwrap(), spec.split().unwrap())
}

const ORDERING: [(LossKind, bool); 3] = [(LossKind::Gsupcon, true), (LossKind::Simclr, true), (LossKind::Ce, false)];

struct BenchmarkRuns {
    accuracy: [Vec<f64>; 3],
    nmi: [Vec<f64>; 3],
    secs: f64,
}

fn benchmark_runs() -> &'static BenchmarkRuns {
    static RUNS: OnceLock<BenchmarkRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let started = Instant::now();
        let (g, split) = benchmark_graph();
        let src = ScoreSource::ppr(PprParams { tolerance: 1e-6, ..PprParams::default() }, 0.3).unwrap();
        let cache = ScoreCache::build(&g, &src, 19).unwrap();
        let mut accuracy: [Vec<f64>; 3] = Default::default();
        let mut nmi: [Vec<f64>; 3] = Default::default();
        for seed in 0..10u64 {
            let protocol = EvalProtocol {
                nway: 2,
                kshot: 5,
                qsize: 10,
                episodes: 50,
                seeds: 1,
                base_seed: seed,
                ..EvalProtocol::default()
            };
            for (k, &(loss, balanced)) in ORDERING.iter().enumerate() {
                let cfg = TrainConfig {
                    loss,
                    balanced_sampling: balanced,
                    batch: 150,
                    max_steps: Some(200),
                    seed,
                    ..TrainConfig::default()
                };
                let out = pretrain(&g, &split, &cache, &cfg).unwrap();
                accuracy[k].push(evaluate(&g, &split, &out.params, &cache, &protocol).unwrap().mean);
                nmi[k].push(cluster_novel(&g, &split, &out.params, &cache, 19, seed).unwrap().nmi);
            }
        }
        BenchmarkRuns { accuracy, nmi, secs: started.elapsed().as_secs_f64() }
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn loss_ordering() {
    let _g = serial();
    let runs = benchmark_runs();
    let [gs, sc, ce] = [0, 1, 2].map(|k| 100.0 * mean(&runs.accuracy[k]));
    let pass = gs - sc > 2.0 && sc - ce > 2.0 && runs.secs < 900.0;
    report(
        "loss_ordering",
        pass,
        format!(
            "2-way 5-shot over 10 seeds: gsupcon+bs {gs:.2} > simclr+bs {sc:.2} > ce+nobs {ce:.2}, \
             gaps {:.2} and {:.2} (> 2pp), {:.0}s (< 900s)",
            gs - sc,
            sc - ce,
            runs.secs
        ),
    );
}

#[test]
fn clustering_metrics() {
    let _g = serial();
    let mut r = rng(9);
    let labels: Vec<u32> = (0..200).map(|i| i % 4).collect();
    let mut emb = Tensor::zeros(200, 6);
    for (i, &l) in labels.iter().enumerate() {
        for c in 0..6 {
            emb.set(i, c, if c == l as usize { 10.0 } else { 0.0 } + r.gen_range(-0.1..0.1));
        }
    }
    let perfect = cluster_metrics(&emb, &labels, 4, 0).unwrap();
    let a = [0, 0, 0, 1, 1, 1];
    let b = [0, 0, 1, 1, 2, 2];
    let nmi_err = (normalized_mutual_info(&a, &b) - (4.0 / 3.0) * 2f64.ln() / 6f64.ln()).abs();
    let ari_err = (adjusted_rand_index(&a, &b) - 8.0 / 33.0).abs();

    let runs = benchmark_runs();
    let gs = mean(&runs.nmi[0]);
    let ce = mean(&runs.nmi[2]);
    let pass = perfect.nmi == 1.0 && perfect.ari == 1.0 && nmi_err < 1e-12 && ari_err < 1e-12 && gs >= ce;
    report(
        "clustering_metrics",
        pass,
        format!(
            "perfect clusters nmi {} ari {}; fixture errors {nmi_err:.1e} / {ari_err:.1e} (< 1e-12); \
             benchmark nmi gsupcon {gs:.3} >= ce {ce:.3}",
            perfect.nmi, perfect.ari
        ),
    );
}

fn efficiency_graph(m: usize) -> (Graph, ClassSplit) {
    let blocks: Vec<usize> = vec![500; m / 500];
    let spec = SyntheticSpec {
        blocks,
        p_in: 0.02,
        p_out: 5.0 / m as f64,
        feature_dim: 32,
        noise: 1.0,
        mean_scale: 1.0,
        signal_dim: None,
        base_classes: Some(2),
        seed: 1,
    };
    (generate_sbm(&spec).unwrap(), spec.split().unwrap())
}

fn median_step_ms(m: usize) -> f64 {
    let (g, split) = efficiency_graph(m);
    let src = ScoreSource::nad(&g, &NadParams::default(), 0.3).unwrap();
    let mut cache = ScoreCache::new(&g, &src, 19).unwrap();
    let base: Vec<usize> = (0..g.num_nodes()).filter(|&i| split.is_base(g.label(i))).collect();
    cache.ensure(&g, &src, &base).unwrap();
    let cfg = TrainConfig { batch: 100, alpha: 19, max_steps: Some(25), seed: 0, ..TrainConfig::default() };
    let mut t = Trainer::new(&g, &split, &cache, cfg).unwrap();
    for _ in 0..3 {
        t.step().unwrap();
    }
    let mut times: Vec<f64> = (0..21).map(|_| t.step().unwrap().wall_ms).collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

#[test]
fn step_cost_is_subgraph_bounded() {
    let _g = serial();
    let started = Instant::now();
    let small = median_step_ms(10_000);
    let large = median_step_ms(100_000);
    let ratio = large / small;
    let secs = started.elapsed().as_secs_f64();
    report(
        "step_cost_is_subgraph_bounded",
        ratio <= 2.0 && secs < 300.0,
        format!("median step {small:.1}ms at M=10k, {large:.1}ms at M=100k, ratio {ratio:.2} (<= 2), {secs:.0}s (< 300s)"),
    );
}
