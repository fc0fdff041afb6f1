//! Ranking metrics over continuous scores and ±1 labels.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[i8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "metric",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(k) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Data(format!("score {k} is NaN")));
    }
    let mut pos = 0;
    let mut neg = 0;
    for &y in labels {
        match y {
            1 => pos += 1,
            -1 => neg += 1,
            other => return Err(Error::Data(format!("label {other} is not ±1"))),
        }
    }
    Ok((pos, neg))
}

/// Twice the Mann–Whitney U statistic of positives over negatives (ties
/// count one half, hence the doubling), with the class counts.
pub fn mann_whitney_u2(scores: &[f64], labels: &[i8]) -> Result<(u64, u64, u64)> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut u2 = 0u64;
    let mut neg_below = 0u64;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        let (mut p, mut n) = (0u64, 0u64);
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            if labels[order[end]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            end += 1;
        }
        u2 += 2 * p * neg_below + p * n;
        neg_below += n;
        k = end;
    }
    Ok((u2, pos, neg))
}

/// Probability that a random positive outranks a random negative.
pub fn auc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    let (u2, pos, neg) = mann_whitney_u2(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Mean precision at the rank of each positive, ranking by descending score
/// with ties broken by original index.
pub fn average_precision(scores: &[f64], labels: &[i8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AP needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let mut hits = 0u64;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}
