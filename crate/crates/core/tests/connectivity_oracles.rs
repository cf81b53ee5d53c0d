mod common;

use proptest::prelude::*;
use rand::Rng;
use subcon::connectivity::{
    finalize_column, nad_raw_column, ppr_column, ppr_uninverted_column, top_rank, NadParams, PprParams,
    ScoreCache, ScoreSource, ViewProvider,
};
use subcon::graph::Graph;

use common::{connected_graph, dense_ppr, rng};

fn tight() -> PprParams {
    PprParams {
        tolerance: 1e-12,
        ..PprParams::default()
    }
}

#[test]
fn ppr_matches_dense_solve() {
    let mut r = rng(11);
    for trial in 0..20 {
        let m = r.gen_range(2..40);
        let g = connected_graph(&mut r, m, m, 2, 2);
        let j = r.gen_range(0..m);
        let iter = ppr_column(&g, j, &tight()).unwrap();
        let exact = dense_ppr(&g, j, 0.15);
        let err = iter.iter().zip(&exact).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(err <= 1e-8, "trial {trial}: {err}");
    }
}

#[test]
fn ppr_mass_is_conserved() {
    let mut r = rng(12);
    let g = connected_graph(&mut r, 30, 20, 2, 2);
    let s = ppr_column(&g, 4, &tight()).unwrap();
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(s.iter().all(|&v| v > 0.0));
}

#[test]
fn isolated_seed_keeps_teleport_mass_only() {
    let g = Graph::from_edges(3, &[(1, 2)], vec![0.0; 3], 1, vec![0; 3], 1).unwrap();
    let s = ppr_column(&g, 0, &PprParams::default()).unwrap();
    assert_eq!(s, vec![0.15, 0.0, 0.0]);
    let mut f = s.clone();
    finalize_column(&mut f, 0, 0.3);
    assert_eq!(f, vec![0.3, 0.0, 0.0]);
}

#[test]
fn uninverted_column_cannot_rank_neighbors() {
    let mut r = rng(13);
    let g = connected_graph(&mut r, 12, 6, 2, 2);
    let s = ppr_uninverted_column(&g, 3, 0.15);
    for (i, v) in s.iter().enumerate() {
        if i != 3 {
            assert!(*v <= 0.0);
        }
    }
}

#[test]
fn nad_is_symmetric_and_peaks_on_self() {
    let mut r = rng(14);
    let g = connected_graph(&mut r, 25, 15, 2, 2);
    let params = NadParams::default();
    let values: Vec<Vec<f64>> = (0..params.vectors as u64)
        .map(|k| {
            subcon::connectivity::nad_iterate(&g, params.eta, params.iterations, k, params.isolated).unwrap()
        })
        .collect();
    let cols: Vec<Vec<f64>> = (0..25).map(|j| nad_raw_column(&values, j, params.epsilon)).collect();
    for i in 0..25 {
        assert_eq!(cols[i][i], 1.0 / params.epsilon);
        for j in 0..25 {
            assert_eq!(cols[i][j], cols[j][i]);
            assert!(cols[j][i] <= cols[j][j]);
        }
    }
}

fn check_finalized(col: &[f64], j: usize, gamma: f64) {
    assert_eq!(col[j], gamma);
    let off: f64 = col.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| v).sum();
    assert!((off - (1.0 - gamma)).abs() < 1e-12, "off-diagonal mass {off}");
    assert!(col.iter().all(|&v| v >= 0.0));
}

#[test]
fn finalized_columns_for_both_methods() {
    let mut r = rng(15);
    let g = connected_graph(&mut r, 30, 25, 2, 3);
    let sources = [
        ScoreSource::nad(&g, &NadParams::default(), 0.3).unwrap(),
        ScoreSource::ppr(PprParams::default(), 0.3).unwrap(),
    ];
    for src in &sources {
        for j in 0..30 {
            check_finalized(&src.column(&g, j).unwrap(), j, 0.3);
        }
    }
}

#[test]
fn cache_agrees_with_live_source() {
    let mut r = rng(16);
    let g = connected_graph(&mut r, 40, 30, 3, 2);
    let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
    let cache = ScoreCache::build(&g, &src, 8).unwrap();
    for j in [0, 7, 39] {
        let (ids_a, sc_a) = src.ranked(&g, j, 5).unwrap();
        let (ids_b, sc_b) = cache.ranked(&g, j, 5).unwrap();
        assert_eq!(ids_a, ids_b);
        for (a, b) in sc_a.iter().zip(&sc_b) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    let back = ScoreCache::decode(&cache.encode()).unwrap();
    assert_eq!(back, cache);
}

#[test]
fn view_structure() {
    let mut r = rng(17);
    let g = connected_graph(&mut r, 50, 40, 4, 3);
    let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
    for j in [0, 13, 49] {
        let v = src.view(&g, j, 10).unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v.members[0], j);
        let mut sorted = v.members.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 11);
        assert!((v.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in 0..11 {
            assert!(v.adjacency.get(a, a) > 0.0);
            for b in 0..11 {
                assert_eq!(v.adjacency.get(a, b), v.adjacency.get(b, a));
                let linked = a == b || g.has_edge(v.members[a], v.members[b]);
                assert_eq!(v.adjacency.get(a, b) != 0.0, linked);
            }
            assert_eq!(v.features.row(a), g.feature_row(v.members[a]).iter().map(|&x| x as f64).collect::<Vec<_>>().as_slice());
        }
    }
    // alpha beyond the graph size is clamped
    let small = connected_graph(&mut r, 4, 0, 1, 1);
    assert_eq!(src.view(&small, 0, 19).unwrap().len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn top_rank_matches_full_sort(scores in prop::collection::vec(0u8..20, 2..60), alpha_frac in 0.0f64..1.0, ex in 0usize..60) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let n = scores.len();
        let exclude = ex % n;
        let alpha = 1 + ((n - 2) as f64 * alpha_frac) as usize;
        let mut all: Vec<usize> = (0..n).filter(|&i| i != exclude).collect();
        all.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        all.truncate(alpha);
        prop_assert_eq!(top_rank(&scores, alpha, exclude).unwrap(), all);
    }

    #[test]
    fn finalize_invariants(raw in prop::collection::vec(0.0f64..5.0, 2..40), j in 0usize..40, gamma in 0.01f64..1.0) {
        let j = j % raw.len();
        let mut col = raw.clone();
        col[(j + 1) % raw.len()] += 0.5;
        finalize_column(&mut col, j, gamma);
        prop_assert_eq!(col[j], gamma);
        let off: f64 = col.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| v).sum();
        prop_assert!((off - (1.0 - gamma)).abs() < 1e-12);
    }

    #[test]
    fn ppr_on_random_connected_graphs(seed in any::<u64>(), m in 2usize..30) {
        let mut r = rng(seed);
        let g = connected_graph(&mut r, m, m / 2, 1, 1);
        let j = r.gen_range(0..m);
        let a = ppr_column(&g, j, &tight()).unwrap();
        let b = dense_ppr(&g, j, 0.15);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }
}
