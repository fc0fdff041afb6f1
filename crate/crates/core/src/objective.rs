//! Pairwise collaborative objective: cosine similarities between two
//! patients' embeddings should match the outer product of their ±1 labels.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix, Strided};

/// Lower bound on row norms before normalisation.
pub const COSINE_EPS: f64 = 1e-12;

/// `S[a][b] = ẑ_a · ẑ_b` between the rows of two embedding matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(pub Matrix);

/// `T[a][b] = y_a · y_b` with entries in {−1, +1}.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMatrix(pub Matrix);

/// Scales every row to unit norm (rows with norm below `eps` are divided by
/// `eps`).
pub fn normalize_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(COSINE_EPS);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

pub fn cosine_similarity_matrix(zi: &Matrix, zj: &Matrix) -> Result<SimilarityMatrix> {
    if zi.cols() != zj.cols() {
        return Err(Error::dim(
            "cosine_similarity_matrix",
            format!("embedding widths differ: {} vs {}", zi.cols(), zj.cols()),
        ));
    }
    let (a, b) = (normalize_rows(zi), normalize_rows(zj));
    let mut s = Matrix::zeros(a.rows(), b.rows());
    gemm(
        a.rows(),
        a.cols(),
        b.rows(),
        1.0,
        Strided::row_major(a.data(), a.cols()),
        Strided::transposed(b.data(), b.cols()),
        0.0,
        s.data_mut(),
        b.rows(),
    );
    Ok(SimilarityMatrix(s))
}

fn check_labels(name: &str, y: &[i8]) -> Result<()> {
    match y.iter().position(|&v| v != 1 && v != -1) {
        Some(k) => Err(Error::Data(format!(
            "{name}[{k}] = {} is not a ±1 label",
            y[k]
        ))),
        None => Ok(()),
    }
}

pub fn target_matrix(yi: &[i8], yj: &[i8]) -> Result<TargetMatrix> {
    check_labels("yi", yi)?;
    check_labels("yj", yj)?;
    Ok(TargetMatrix(Matrix::from_fn(yi.len(), yj.len(), |a, b| {
        f64::from(yi[a] * yj[b])
    })))
}

/// `‖T − S‖²_F`, divided by `Ni·Nj` when `normalize` is set.
pub fn pair_loss(t: &TargetMatrix, s: &SimilarityMatrix, normalize: bool) -> Result<f64> {
    if t.0.shape() != s.0.shape() {
        return Err(Error::dim(
            "pair_loss",
            format!("target {:?} vs similarity {:?}", t.0.shape(), s.0.shape()),
        ));
    }
    let raw: f64 = t.0.data().iter().zip(s.0.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(if normalize { raw / t.0.data().len() as f64 } else { raw })
}

fn labels_row(tape: &mut Tape, y: &[f64]) -> Result<Var> {
    Ok(tape.constant(Matrix::new(1, y.len(), y.to_vec())?))
}

fn check_pair(tape: &Tape, zi: Var, zj: Var, yi: &[f64], yj: &[f64]) -> Result<()> {
    let (a, b) = (tape.value(zi), tape.value(zj));
    if a.cols() != b.cols() || a.rows() != yi.len() || b.rows() != yj.len() {
        return Err(Error::dim(
            "pair_loss",
            format!(
                "embeddings {:?}/{:?} with {}/{} labels",
                a.shape(),
                b.shape(),
                yi.len(),
                yj.len()
            ),
        ));
    }
    Ok(())
}

/// Pair loss on the tape, materialising the `Ni x Nj` similarity matrix.
pub fn pair_loss_explicit_on_tape(
    tape: &mut Tape,
    zi: Var,
    zj: Var,
    yi: &[f64],
    yj: &[f64],
    normalize: bool,
) -> Result<Var> {
    check_pair(tape, zi, zj, yi, yj)?;
    let a = tape.row_l2_normalize(zi, COSINE_EPS);
    let b = tape.row_l2_normalize(zj, COSINE_EPS);
    let bt = tape.transpose(b);
    let s = tape.matmul(a, bt)?;
    let t = tape.constant(Matrix::from_fn(yi.len(), yj.len(), |p, q| yi[p] * yj[q]));
    let diff = tape.sub(t, s)?;
    let raw = tape.frobenius_sq(diff);
    Ok(if normalize {
        tape.scale(raw, 1.0 / (yi.len() * yj.len()) as f64)
    } else {
        raw
    })
}

/// Pair loss on the tape without forming `S`, using
/// `‖T − S‖² = Ni·Nj − 2 (yiᵀẐi)·(yjᵀẐj) + ⟨ẐiᵀẐi, ẐjᵀẐj⟩`
/// (labels are ±1 so `‖T‖² = Ni·Nj`). Costs `O((Ni + Nj) L²)`.
pub fn pair_loss_on_tape(
    tape: &mut Tape,
    zi: Var,
    zj: Var,
    yi: &[f64],
    yj: &[f64],
    normalize: bool,
) -> Result<Var> {
    check_pair(tape, zi, zj, yi, yj)?;
    let a = tape.row_l2_normalize(zi, COSINE_EPS);
    let b = tape.row_l2_normalize(zj, COSINE_EPS);
    let yi_row = labels_row(tape, yi)?;
    let yj_row = labels_row(tape, yj)?;
    let ua = tape.matmul(yi_row, a)?;
    let ub = tape.matmul(yj_row, b)?;
    let at = tape.transpose(a);
    let bt = tape.transpose(b);
    let ga = tape.matmul(at, a)?;
    let gb = tape.matmul(bt, b)?;
    let cross = tape.mul(ua, ub)?;
    let cross = tape.sum(cross);
    let gram = tape.mul(ga, gb)?;
    let gram = tape.sum(gram);
    let cross = tape.scale(cross, -2.0);
    let raw = tape.add(cross, gram)?;
    let n = (yi.len() * yj.len()) as f64;
    let raw = tape.offset(raw, n);
    Ok(if normalize { tape.scale(raw, 1.0 / n) } else { raw })
}
