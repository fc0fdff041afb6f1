//! Correlation between training-set membership and iteration performance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per experiment iteration: its mean AP and which patients were in
/// the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTable {
    pub patient_ids: Vec<String>,
    pub rows: Vec<IterationRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub mean_ap: f64,
    pub membership: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresenceCorrelation {
    pub patient_id: String,
    /// `None` when the correlation is undefined (constant membership or too
    /// few iterations).
    pub r: Option<f64>,
}

impl IterationTable {
    pub fn new(patient_ids: Vec<String>) -> Self {
        Self {
            patient_ids,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, iteration: usize, mean_ap: f64, train_ids: &[String]) -> Result<()> {
        for id in train_ids {
            if !self.patient_ids.contains(id) {
                return Err(Error::Data(format!("unknown patient {id} in training set")));
            }
        }
        let membership = self
            .patient_ids
            .iter()
            .map(|p| u8::from(train_ids.contains(p)))
            .collect();
        self.rows.push(IterationRow {
            iteration,
            mean_ap,
            membership,
        });
        Ok(())
    }

    /// `iteration,mean_ap,patient_<id>,...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_ap");
        for id in &self.patient_ids {
            out.push_str(&format!(",patient_{id}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{}", row.iteration, row.mean_ap));
            for m in &row.membership {
                out.push_str(&format!(",{m}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson correlation; `None` if either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-patient correlation between the membership column and mean AP.
pub fn presence_correlation(table: &IterationTable) -> Vec<PresenceCorrelation> {
    let ap: Vec<f64> = table.rows.iter().map(|r| r.mean_ap).collect();
    table
        .patient_ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let r = if table.rows.len() < 3 {
                None
            } else {
                let col: Vec<f64> = table.rows.iter().map(|r| f64::from(r.membership[k])).collect();
                pearson(&col, &ap)
            };
            PresenceCorrelation {
                patient_id: id.clone(),
                r,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cov_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn two_point_examples() {
        assert_eq!(pearson(&[0.0, 1.0], &[0.2, 0.8]), Some(1.0));
        assert_eq!(pearson(&[1.0, 0.0], &[0.2, 0.8]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 1.0], &[0.2, 0.8]), None);
    }

    #[test]
    fn random_table_matches_formula_and_flags_constant_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids: Vec<String> = (0..10).map(|k| k.to_string()).collect();
        let mut table = IterationTable::new(ids.clone());
        for it in 0..20 {
            let mut train: Vec<String> = ids.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
            train.push("0".into()); // patient 0 is always in
            table.push(it, rng.random_range(0.0..1.0), &train).unwrap();
        }
        let ap: Vec<f64> = table.rows.iter().map(|r| r.mean_ap).collect();
        let corr = presence_correlation(&table);
        assert_eq!(corr[0].r, None);
        for (k, c) in corr.iter().enumerate().skip(1) {
            let col: Vec<f64> = table.rows.iter().map(|r| f64::from(r.membership[k])).collect();
            assert!((c.r.unwrap() - cov_oracle(&col, &ap)).abs() < 1e-12);
        }
        let csv = table.to_csv();
        assert!(csv.starts_with("iteration,mean_ap,patient_0,patient_1,"));
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn too_few_iterations_are_undefined() {
        let mut table = IterationTable::new(vec!["a".into(), "b".into()]);
        table.push(0, 0.2, &["a".into()]).unwrap();
        table.push(1, 0.8, &["b".into()]).unwrap();
        assert!(presence_correlation(&table).iter().all(|c| c.r.is_none()));
        assert!(table.push(2, 0.1, &["zzz".into()]).is_err());
    }

    proptest! {
        #[test]
        fn correlations_are_bounded(seed in 0u64..500, rows in 3usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ids: Vec<String> = (0..6).map(|k| k.to_string()).collect();
            let mut table = IterationTable::new(ids.clone());
            for it in 0..rows {
                let train: Vec<String> = ids.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
                table.push(it, rng.random_range(0.0..1.0), &train).unwrap();
            }
            for c in presence_correlation(&table) {
                if let Some(r) = c.r {
                    prop_assert!((-1.0..=1.0).contains(&r));
                }
            }
        }
    }
}
