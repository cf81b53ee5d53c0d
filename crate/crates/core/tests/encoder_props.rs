mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use subcon::autodiff::Tape;
use subcon::connectivity::{PprParams, ScoreSource, SubgraphView, ViewProvider};
use subcon::encoder::{embed_batch, encode, readout, EncoderParams, EncoderVars};

use common::{connected_graph, numeric_grad, pipeline_loss, pipeline_value, rel_err, rng};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centric_embedding_ignores_partner_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = connected_graph(&mut r, 20, 15, 5, 2);
        let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
        let (ids, scores) = src.ranked(&g, 3, 8).unwrap();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut r);
        let ids2: Vec<usize> = order.iter().map(|&k| ids[k]).collect();
        let sc2: Vec<f64> = order.iter().map(|&k| scores[k]).collect();
        let a = SubgraphView::assemble(&g, 3, &ids, &scores, 0.3).unwrap();
        let b = SubgraphView::assemble(&g, 3, &ids2, &sc2, 0.3).unwrap();
        let params = EncoderParams::seeded(5, 8, seed).unwrap();
        let za = encode(&params, &a).unwrap();
        let zb = encode(&params, &b).unwrap();
        prop_assert!(close(za.row(0), zb.row(0), 1e-12));
        prop_assert!(close(&readout(&za, &a.weights).unwrap(), &readout(&zb, &b.weights).unwrap(), 1e-12));
    }

    #[test]
    fn rows_are_unit_norm(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = connected_graph(&mut r, 15, 10, 4, 3);
        let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
        let params = EncoderParams::seeded(4, 6, seed).unwrap();
        let view = src.view(&g, 0, 6).unwrap();
        let z = encode(&params, &view).unwrap();
        for i in 0..z.rows() {
            let n: f64 = z.row(i).iter().map(|v| v * v).sum();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
        let s = readout(&z, &view.weights).unwrap();
        prop_assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn batch_matches_single_views() {
    let mut r = rng(3);
    let g = connected_graph(&mut r, 30, 20, 4, 3);
    let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
    let params = EncoderParams::seeded(4, 5, 9).unwrap();
    let views: Vec<SubgraphView> = [0, 5, 11, 29].iter().map(|&j| src.view(&g, j, 7).unwrap()).collect();
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, &params);
    let emb = embed_batch(&mut tape, vars, &views).unwrap();
    for (b, v) in views.iter().enumerate() {
        let z = encode(&params, v).unwrap();
        assert!(close(tape.value(emb.nodes).row(b), z.row(0), 1e-12));
        assert!(close(tape.value(emb.subgraphs).row(b), &readout(&z, &v.weights).unwrap(), 1e-12));
    }
}

#[test]
fn six_node_gradient_matches_differences() {
    let mut r = rng(5);
    let g = connected_graph(&mut r, 6, 3, 4, 2);
    let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
    let views: Vec<SubgraphView> = (0..6).map(|j| src.view(&g, j, 3).unwrap()).collect();
    let labels: Vec<u32> = (0..6).map(|j| g.label(j)).collect();
    let params = EncoderParams::seeded(4, 4, 1).unwrap();
    let (_, gw, gs) = pipeline_loss(&params, &views, &labels, 0.5);
    let nw = numeric_grad(&params.weight, 1e-6, |w| {
        let p = EncoderParams { weight: w.clone(), prelu_slope: params.prelu_slope };
        pipeline_value(&p, &views, &labels, 0.5)
    });
    assert!(rel_err(gw.data(), &nw) < 1e-4);
    let h = 1e-6;
    let up = pipeline_value(&EncoderParams { prelu_slope: params.prelu_slope + h, ..params.clone() }, &views, &labels, 0.5);
    let down = pipeline_value(&EncoderParams { prelu_slope: params.prelu_slope - h, ..params.clone() }, &views, &labels, 0.5);
    assert!(rel_err(&[gs], &[(up - down) / (2.0 * h)]) < 1e-4);
}

#[test]
fn checksum_tracks_every_bit() {
    let p = EncoderParams::seeded(3, 4, 0).unwrap();
    let mut q = p.clone();
    assert_eq!(p.checksum(), q.checksum());
    q.weight.data_mut()[5] = f64::from_bits(q.weight.data()[5].to_bits() ^ 1);
    assert_ne!(p.checksum(), q.checksum());
}
