//! Collaborative inference: a test patient's state scores are the
//! least-squares solution of `S ≈ y_t y_rᵀ` against each annotated reference,
//! averaged over references.
//!
//! Since `S y_r = Ẑ_t (Ẑ_rᵀ y_r)`, every reference collapses to a single
//! `L`-vector and scoring a test patient costs `O(N_t L)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objective::normalize_rows;
use crate::preprocess::PatientRecord;

/// Continuous per-timestamp scores; positive means IH.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A reference patient reduced to `Ẑ_rᵀ y_r / N_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub patient_id: String,
    pub direction: Vec<f64>,
}

impl Reference {
    pub fn from_embedding(patient_id: &str, zr: &Matrix, yr: &[i8]) -> Result<Self> {
        let yr = labels_to_f64(yr)?;
        if zr.rows() != yr.len() {
            return Err(Error::dim(
                "reference",
                format!("{} embeddings for {} labels", zr.rows(), yr.len()),
            ));
        }
        let zn = normalize_rows(zr);
        let n = yr.len() as f64;
        let mut direction = vec![0.0; zn.cols()];
        for (row, y) in (0..zn.rows()).map(|r| zn.row(r)).zip(&yr) {
            for (d, v) in direction.iter_mut().zip(row) {
                *d += y * v;
            }
        }
        direction.iter_mut().for_each(|d| *d /= n);
        Ok(Self {
            patient_id: patient_id.to_string(),
            direction,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    pub references: Vec<Reference>,
}

impl ReferenceSet {
    /// Encodes every reference patient once with `params`.
    pub fn encode(records: &[PatientRecord], params: &ModelParams) -> Result<Self> {
        let references = records
            .iter()
            .map(|rec| {
                let z = encode(&rec.patient_id, rec.x(), params)?;
                Reference::from_embedding(&rec.patient_id, &z.z, rec.y())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(references)
    }

    pub fn new(references: Vec<Reference>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::InsufficientData("reference set is empty".into()));
        }
        Ok(Self { references })
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    /// Mean of the per-reference least-squares solutions for embeddings `zt`.
    pub fn score(&self, zt: &Matrix) -> Result<ScoreVector> {
        let width = self.references[0].direction.len();
        if zt.cols() != width {
            return Err(Error::dim(
                "collaborative_infer",
                format!("test embeddings have width {}, references {width}", zt.cols()),
            ));
        }
        let m = self.references.len() as f64;
        let mut mean = vec![0.0; width];
        for r in &self.references {
            for (a, b) in mean.iter_mut().zip(&r.direction) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let zn = normalize_rows(zt);
        Ok(ScoreVector(
            (0..zn.rows())
                .map(|t| zn.row(t).iter().zip(&mean).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }
}

fn labels_to_f64(y: &[i8]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::InsufficientData("reference has no labelled samples".into()));
    }
    y.iter()
        .map(|&v| match v {
            1 | -1 => Ok(f64::from(v)),
            other => Err(Error::Data(format!("reference label {other} is not ±1"))),
        })
        .collect()
}

/// `S y_r (y_rᵀ y_r)⁻¹` for an explicit similarity matrix `S` (`N_t x N_r`).
pub fn solve_from_similarity(s: &Matrix, yr: &[f64]) -> Result<Vec<f64>> {
    if s.cols() != yr.len() {
        return Err(Error::dim(
            "infer_single",
            format!("similarity has {} columns, {} reference labels", s.cols(), yr.len()),
        ));
    }
    let norm: f64 = yr.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(Error::InsufficientData("reference labels are empty".into()));
    }
    Ok((0..s.rows())
        .map(|t| s.row(t).iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / norm)
        .collect())
}

/// Least-squares scores of test embeddings `zt` against one reference.
pub fn infer_single(zt: &Matrix, zr: &Matrix, yr: &[i8]) -> Result<Vec<f64>> {
    let reference = Reference::from_embedding("", zr, yr)?;
    Ok(ReferenceSet::new(vec![reference])?.score(zt)?.0)
}

/// Encodes `xt` and scores it against every reference.
pub fn collaborative_infer(refs: &ReferenceSet, xt: &Matrix, params: &ModelParams) -> Result<ScoreVector> {
    let z = encode("test", xt, params)?;
    refs.score(&z.z)
}

/// `+1` where the score is strictly above `threshold`, else `−1`.
pub fn binarize(scores: &ScoreVector, threshold: f64) -> Vec<i8> {
    scores.0.iter().map(|&s| if s > threshold { 1 } else { -1 }).collect()
}

/// One test patient's predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub patient_id: String,
    pub scores: ScoreVector,
    pub labels: Vec<i8>,
}

/// Writes `patient_id,t,score,label_true` rows.
pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Runtime(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::Runtime(e.to_string());
    w.write_record(["patient_id", "t", "score", "label_true"]).map_err(csv_err)?;
    for p in predictions {
        if p.scores.len() != p.labels.len() {
            return Err(Error::dim(
                "predictions",
                format!("{} scores for {} labels", p.scores.len(), p.labels.len()),
            ));
        }
        for (t, (s, y)) in p.scores.0.iter().zip(&p.labels).enumerate() {
            w.write_record([p.patient_id.clone(), t.to_string(), s.to_string(), y.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
