//! Record a small computation on the tape and compare its gradient with finite differences.

use std::sync::Arc;

use subcon::autodiff::{Tape, Tensor};

fn loss(x: &Tensor, w: &Tensor) -> subcon::Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let h = tape.matmul(xv, wv)?;
    let slope = tape.constant(Tensor::scalar(0.25));
    let a = tape.prelu(h, slope)?;
    let z = tape.l2_normalize_rows(a)?;
    let gram = tape.dot_products_matrix(z)?;
    let lse = tape.log_sum_exp_rows(gram, Arc::new(vec![true; 9]))?;
    let out = tape.sum(lse)?;
    let grads = tape.backward(out)?;
    Ok((tape.value(out).item(), grads.wrt(wv)))
}

fn main() -> subcon::Result<()> {
    let x = Tensor::new(3, 2, vec![1.0, 0.5, -0.3, 0.8, 0.2, -1.0])?;
    let w = Tensor::new(2, 3, vec![0.4, -0.2, 0.7, 0.1, 0.9, -0.5])?;
    let (value, grad) = loss(&x, &w)?;
    println!("loss {value:.6}");
    let h = 1e-6;
    for k in 0..w.len() {
        let mut up = w.clone();
        up.data_mut()[k] += h;
        let mut down = w.clone();
        down.data_mut()[k] -= h;
        let numeric = (loss(&x, &up)?.0 - loss(&x, &down)?.0) / (2.0 * h);
        println!("dW[{k}] tape {:+.8}  differences {numeric:+.8}", grad.data()[k]);
    }
    Ok(())
}
