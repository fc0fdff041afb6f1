//! Independent scalar-loop reference implementations used by unit tests.

use crate::linalg::Matrix;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop LSTM with separate gate matrices.
pub fn lstm_oracle(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let (n, d) = (x.rows(), x.cols());
    let h = w.rows() / 4;
    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    let mut out = Matrix::zeros(n, h);
    for t in 0..n {
        let gate = |block: usize, k: usize| {
            let row = block * h + k;
            let mut s = b[row];
            for j in 0..d {
                s += w.get(row, j) * x.get(t, j);
            }
            for j in 0..h {
                s += w.get(row, d + j) * hs[j];
            }
            s
        };
        let mut new_h = vec![0.0; h];
        let mut new_c = vec![0.0; h];
        for k in 0..h {
            let i = sig(gate(0, k));
            let f = sig(gate(1, k));
            let o = sig(gate(2, k));
            let g = gate(3, k).tanh();
            new_c[k] = f * cs[k] + i * g;
            new_h[k] = o * new_c[k].tanh();
        }
        hs = new_h;
        cs = new_c;
        for k in 0..h {
            out.set(t, k, hs[k]);
        }
    }
    out
}
