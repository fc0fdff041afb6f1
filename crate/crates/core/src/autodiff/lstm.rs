//! Fused LSTM sequence primitive with hand-written backpropagation through time.

use super::tape::sigmoid;
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, Matrix, Strided};

/// Activations saved by the forward pass.
pub struct LstmCache {
    hidden: usize,
    tbptt: Option<usize>,
    /// `N x 4H` post-activation gates, blocks ordered i, f, o, g.
    gates: Vec<f64>,
    /// `N x H` cell states.
    cells: Vec<f64>,
    /// `N x H` values of `tanh(c_t)`.
    tanh_cells: Vec<f64>,
}

pub(crate) struct LstmGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

/// Runs the LSTM recurrence from `h_0 = c_0 = 0` and returns every hidden
/// state (`N x H`) together with the cache needed for the backward pass.
pub fn lstm_sequence(
    x: &Matrix,
    w: &Matrix,
    b: &Matrix,
    tbptt: Option<usize>,
) -> Result<(Matrix, LstmCache)> {
    let (n, d) = (x.rows(), x.cols());
    if w.rows() % 4 != 0 || w.rows() == 0 {
        return Err(Error::dim("lstm", format!("weight rows {} not a positive multiple of 4", w.rows())));
    }
    let h = w.rows() / 4;
    let g4 = 4 * h;
    let width = d + h;
    if w.cols() != width {
        return Err(Error::dim(
            "lstm",
            format!("weight is {}x{}, expected {}x{}", w.rows(), w.cols(), g4, width),
        ));
    }
    if b.shape() != [1, g4] {
        return Err(Error::dim("lstm", format!("bias {:?}, expected [1, {g4}]", b.shape())));
    }
    if n == 0 {
        return Err(Error::dim("lstm", "empty sequence"));
    }
    if tbptt == Some(0) {
        return Err(Error::dim("lstm", "truncation window must be positive"));
    }
    let wd = w.data();

    // Input contributions for every step at once: X W_x^T.
    let mut gates = vec![0.0; n * g4];
    gemm(
        n,
        d,
        g4,
        1.0,
        Strided::row_major(x.data(), d),
        Strided {
            data: wd,
            row_stride: 1,
            col_stride: width as isize,
        },
        0.0,
        &mut gates,
        g4,
    );

    let mut hidden = vec![0.0; n * h];
    let mut cells = vec![0.0; n * h];
    let mut tanh_cells = vec![0.0; n * h];
    for t in 0..n {
        let (prev_h, rest_h) = hidden.split_at_mut(t * h);
        let pre = &mut gates[t * g4..(t + 1) * g4];
        for (p, bias) in pre.iter_mut().zip(b.data()) {
            *p += bias;
        }
        if t > 0 {
            let h_prev = &prev_h[(t - 1) * h..];
            for (gi, p) in pre.iter_mut().enumerate() {
                *p += dot(&wd[gi * width + d..(gi + 1) * width], h_prev);
            }
        }
        for k in 0..3 * h {
            pre[k] = sigmoid(pre[k]);
        }
        for k in 3 * h..g4 {
            pre[k] = pre[k].tanh();
        }
        let h_t = &mut rest_h[..h];
        for k in 0..h {
            let c_prev = if t > 0 { cells[(t - 1) * h + k] } else { 0.0 };
            let c = pre[h + k] * c_prev + pre[k] * pre[3 * h + k];
            let tc = c.tanh();
            cells[t * h + k] = c;
            tanh_cells[t * h + k] = tc;
            h_t[k] = pre[2 * h + k] * tc;
        }
    }
    let cache = LstmCache {
        hidden: h,
        tbptt,
        gates,
        cells,
        tanh_cells,
    };
    Ok((Matrix::new(n, h, hidden)?, cache))
}

pub(crate) fn lstm_backward(
    cache: &LstmCache,
    x: &Matrix,
    w: &Matrix,
    hidden_out: &Matrix,
    d_hidden: &[f64],
    want_dx: bool,
) -> LstmGrads {
    let (n, d) = (x.rows(), x.cols());
    let h = cache.hidden;
    let g4 = 4 * h;
    let width = d + h;
    let wd = w.data();
    let gates = &cache.gates;

    let mut dpre = vec![0.0; n * g4];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..n).rev() {
        let ga = &gates[t * g4..(t + 1) * g4];
        let dp = &mut dpre[t * g4..(t + 1) * g4];
        for k in 0..h {
            let (ig, fg, og, gg) = (ga[k], ga[h + k], ga[2 * h + k], ga[3 * h + k]);
            let tc = cache.tanh_cells[t * h + k];
            let c_prev = if t > 0 { cache.cells[(t - 1) * h + k] } else { 0.0 };
            let dh = d_hidden[t * h + k] + dh_next[k];
            let dc = dh * og * (1.0 - tc * tc) + dc_next[k];
            dp[k] = dc * gg * ig * (1.0 - ig);
            dp[h + k] = dc * c_prev * fg * (1.0 - fg);
            dp[2 * h + k] = dh * tc * og * (1.0 - og);
            dp[3 * h + k] = dc * ig * (1.0 - gg * gg);
            dc_next[k] = dc * fg;
        }
        let cut = t == 0 || cache.tbptt.is_some_and(|k| t % k == 0);
        if cut {
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            dc_next.iter_mut().for_each(|v| *v = 0.0);
        } else {
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (gi, &g) in dp.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wrow = &wd[gi * width + d..(gi + 1) * width];
                for (acc, wv) in dh_next.iter_mut().zip(wrow) {
                    *acc += g * wv;
                }
            }
        }
    }

    let mut dw = vec![0.0; g4 * width];
    // dW_x = dPre^T X
    gemm(
        g4,
        n,
        d,
        1.0,
        Strided::transposed(&dpre, g4),
        Strided::row_major(x.data(), d),
        0.0,
        &mut dw,
        width,
    );
    // dW_h = sum_t dPre_t^T h_{t-1}
    if n > 1 {
        gemm(
            g4,
            n - 1,
            h,
            1.0,
            Strided::transposed(&dpre[g4..], g4),
            Strided::row_major(&hidden_out.data()[..(n - 1) * h], h),
            0.0,
            &mut dw[d..],
            width,
        );
    }
    let mut db = vec![0.0; g4];
    for row in dpre.chunks(g4) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; n * d];
        gemm(
            n,
            g4,
            d,
            1.0,
            Strided::row_major(&dpre, g4),
            Strided {
                data: wd,
                row_stride: width as isize,
                col_stride: 1,
            },
            0.0,
            &mut dx,
            d,
        );
        dx
    });
    LstmGrads { dx, dw, db }
}
