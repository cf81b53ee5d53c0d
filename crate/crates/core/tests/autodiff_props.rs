mod common;

use std::sync::Arc;

use proptest::prelude::*;
use subcon::autodiff::{SparseMatrix, Tape, Tensor, Var};
use subcon::Result;

use common::{numeric_grad, rel_err};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

/// Contracts the op output with fixed coefficients and compares every input's
/// gradient against central differences.
fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> std::result::Result<(), TestCaseError> {
    let eval = |ins: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let shape = tape.value(out).shape();
        let coeffs = Tensor::new(
            shape.0,
            shape.1,
            (0..shape.0 * shape.1).map(|k| 0.3 + ((k * 7) % 5) as f64 * 0.25).collect(),
        )
        .unwrap();
        let loss = tape.weighted_sum(out, Arc::new(coeffs)).unwrap();
        (tape, vars, loss)
    };
    let (tape, vars, loss) = eval(&inputs);
    let grads = tape.backward(loss).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let numeric = numeric_grad(&inputs[i], H, |probe| {
            let mut ins = inputs.clone();
            ins[i] = probe.clone();
            let (t, _, l) = eval(&ins);
            t.value(l).item()
        });
        let err = rel_err(analytic.data(), &numeric);
        prop_assert!(err < TOL, "input {i}: rel err {err}");
    }
    Ok(())
}

fn away_from_zero(t: &Tensor) -> bool {
    t.data().iter().all(|v| v.abs() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matmul_grad(a in tensor(3, 4), b in tensor(4, 2)) {
        check(vec![a, b], |t, v| t.matmul(v[0], v[1]))?;
    }

    #[test]
    fn add_sub_bias_scale_grad(a in tensor(3, 2), b in tensor(3, 2), bias in tensor(1, 2), k in -3.0f64..3.0) {
        check(vec![a, b, bias], move |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let d = t.add(d, v[1])?;
            let r = t.add_row_bias(d, v[2])?;
            t.scale(r, k)
        })?;
    }

    #[test]
    fn prelu_grad(x in tensor(3, 3), slope in -1.0f64..1.0) {
        prop_assume!(away_from_zero(&x));
        check(vec![x, Tensor::scalar(slope)], |t, v| t.prelu(v[0], v[1]))?;
    }

    #[test]
    fn sigmoid_grad(x in tensor(2, 5)) {
        check(vec![x], |t, v| t.sigmoid(v[0]))?;
    }

    #[test]
    fn l2_normalize_grad(x in tensor(4, 3)) {
        prop_assume!(x.data().chunks(3).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-2));
        check(vec![x], |t, v| t.l2_normalize_rows(v[0]))?;
    }

    #[test]
    fn spmm_grad(x in tensor(4, 3), entries in prop::collection::vec((0usize..3, 0usize..4, -1.0f64..1.0), 1..10)) {
        let s = Arc::new(SparseMatrix::from_triplets(3, 4, entries).unwrap());
        check(vec![x], move |t, v| t.spmm(s.clone(), v[0]))?;
    }

    #[test]
    fn row_weighted_sum_grad(x in tensor(4, 3), w in prop::collection::vec(0.0f64..1.0, 4)) {
        let w = Arc::new(w);
        check(vec![x], move |t, v| t.row_weighted_sum(w.clone(), v[0]))?;
    }

    #[test]
    fn gather_concat_grad(a in tensor(3, 2), b in tensor(2, 2), rows in prop::collection::vec(0usize..5, 1..6)) {
        check(vec![a, b], move |t, v| {
            let c = t.concat_rows(&[v[0], v[1]])?;
            t.gather_rows(c, rows.clone())
        })?;
    }

    #[test]
    fn gram_grad(h in tensor(4, 3)) {
        check(vec![h], |t, v| t.dot_products_matrix(v[0]))?;
    }

    #[test]
    fn log_sum_exp_grad(x in tensor(3, 4), mask in prop::collection::vec(any::<bool>(), 12)) {
        let mut mask = mask;
        for r in 0..3 {
            mask[r * 4] = true;
        }
        let mask = Arc::new(mask);
        check(vec![x], move |t, v| t.log_sum_exp_rows(v[0], mask.clone()))?;
    }

    #[test]
    fn sum_grad(x in tensor(3, 3)) {
        check(vec![x], |t, v| t.sum(v[0]))?;
    }

    #[test]
    fn composed_chain_grad(x in tensor(4, 3), w in tensor(3, 2), slope in 0.05f64..0.9) {
        let h = x.matmul(&w).unwrap();
        prop_assume!(away_from_zero(&h));
        prop_assume!(h.data().chunks(2).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-2));
        check(vec![x, w, Tensor::scalar(slope)], |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let a = t.prelu(h, v[2])?;
            let n = t.l2_normalize_rows(a)?;
            let g = t.dot_products_matrix(n)?;
            let mask = Arc::new((0..16).map(|k| k % 5 != 0).collect::<Vec<_>>());
            t.log_sum_exp_rows(g, mask)
        })?;
    }
}

#[test]
fn shared_subexpression_accumulates() {
    // f(x) = sum(x * x) via matmul of x with itself transposed on the diagonal
    let x = Tensor::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let g = tape.dot_products_matrix(v).unwrap();
    let loss = tape.sum(g).unwrap();
    let grads = tape.backward(loss).unwrap();
    let expected: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(grads.wrt(v).data(), expected.as_slice());
}
