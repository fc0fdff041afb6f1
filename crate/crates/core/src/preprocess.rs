//! From raw recordings to model-ready patient records: coverage selection,
//! artifact removal, pressure-time-dose labelling, robust standardisation and
//! patient-level train/test splitting.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{RawRecording, Vital, IH_MIN_DURATION, IH_THRESHOLD_MMHG};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Scale applied to the (constant) age channel.
pub const AGE_SCALE_YEARS: f64 = 18.0;
const IQR_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Vital channels fed to the model, in column order. Age is appended.
    pub input_channels: Vec<Vital>,
    pub ih_threshold: f64,
    pub ih_min_duration: usize,
    /// Label on the artifact-filtered series (removed samples treated as
    /// contiguous). When false, labels are computed on the full series and
    /// then filtered alongside the data.
    pub label_after_artifact_removal: bool,
    pub min_coverage: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            input_channels: Vital::ALL.to_vec(),
            ih_threshold: IH_THRESHOLD_MMHG,
            ih_min_duration: IH_MIN_DURATION,
            label_after_artifact_removal: true,
            min_coverage: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.input_channels.is_empty() {
            errs.push("preprocess.input_channels: at least one channel required".into());
        }
        let unique: HashSet<_> = self.input_channels.iter().collect();
        if unique.len() != self.input_channels.len() {
            errs.push("preprocess.input_channels: duplicate channel".into());
        }
        if !(self.ih_threshold > 0.0) {
            errs.push(format!("preprocess.ih_threshold: {} must be positive", self.ih_threshold));
        }
        if self.ih_min_duration == 0 {
            errs.push("preprocess.ih_min_duration: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            errs.push(format!("preprocess.min_coverage: {} outside [0, 1]", self.min_coverage));
        }
        errs
    }

    /// Model input width: the vitals plus the age channel.
    pub fn input_dim(&self) -> usize {
        self.input_channels.len() + 1
    }
}

/// A model-ready patient: `x` is `N x D` without gaps or artifacts and
/// `y` holds one ±1 state label per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    x: Matrix,
    y: Vec<i8>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>, x: Matrix, y: Vec<i8>) -> Result<Self> {
        let patient_id = patient_id.into();
        if x.rows() != y.len() || y.is_empty() {
            return Err(Error::Data(format!(
                "patient {patient_id}: {} rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if y.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::Data(format!("patient {patient_id}: labels must be ±1")));
        }
        if !x.is_finite() {
            return Err(Error::Data(format!("patient {patient_id}: non-finite input")));
        }
        Ok(Self { patient_id, x, y })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[i8] {
        &self.y
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v > 0).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }
}

/// Deletes artifact-flagged rows, keeping the remaining order.
pub fn filter_artifacts(rec: &RawRecording) -> Result<RawRecording> {
    let keep: Vec<usize> = (0..rec.len()).filter(|&t| !rec.artifact_mask()[t]).collect();
    if keep.is_empty() {
        return Err(Error::EmptyRecording(rec.patient_id().to_string()));
    }
    let channels = std::array::from_fn(|c| keep.iter().map(|&t| rec.channels()[c][t]).collect());
    RawRecording::new(rec.patient_id(), rec.age(), channels, vec![false; keep.len()])
}

/// +1 for samples inside a maximal run of `icpm > threshold` lasting at
/// least `min_duration` samples, −1 elsewhere.
pub fn label_ih(icpm: &[f64], threshold: f64, min_duration: usize) -> Vec<i8> {
    let mut y = vec![-1i8; icpm.len()];
    let mut t = 0;
    while t < icpm.len() {
        if icpm[t] > threshold {
            let start = t;
            while t < icpm.len() && icpm[t] > threshold {
                t += 1;
            }
            if t - start >= min_duration {
                y[start..t].iter_mut().for_each(|v| *v = 1);
            }
        } else {
            t += 1;
        }
    }
    y
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(x - mean) / IQR`, dividing by 1 instead when the IQR is below 1e-9.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "standardize needs at least 4 samples, got {}",
            x.len()
        )));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let scale = if iqr < IQR_FLOOR { 1.0 } else { iqr };
    Ok(x.iter().map(|v| (v - mean) / scale).collect())
}

fn dense_channel(rec: &RawRecording, v: Vital) -> Result<Vec<f64>> {
    rec.channel(v)
        .iter()
        .map(|s| {
            s.ok_or_else(|| {
                Error::Data(format!(
                    "patient {}: channel {} has missing values",
                    rec.patient_id(),
                    v.name()
                ))
            })
        })
        .collect()
}

/// Builds the model input from an artifact-free, gap-free recording. Labels
/// come from the raw (mmHg) ICPm series.
pub fn build_patient_record(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<PatientRecord> {
    if rec.artifact_mask().iter().any(|&a| a) {
        return Err(Error::Data(format!(
            "patient {}: artifacts must be filtered first",
            rec.patient_id()
        )));
    }
    let icp = dense_channel(rec, Vital::Icpm)?;
    let y = label_ih(&icp, cfg.ih_threshold, cfg.ih_min_duration);
    build_with_labels(rec, cfg, y)
}

fn build_with_labels(rec: &RawRecording, cfg: &PreprocessConfig, y: Vec<i8>) -> Result<PatientRecord> {
    let n = rec.len();
    let d = cfg.input_dim();
    let mut x = Matrix::zeros(n, d);
    for (c, &v) in cfg.input_channels.iter().enumerate() {
        let col = standardize(&dense_channel(rec, v)?)?;
        for (t, val) in col.into_iter().enumerate() {
            x.set(t, c, val);
        }
    }
    let age = rec.age() / AGE_SCALE_YEARS;
    for t in 0..n {
        x.set(t, d - 1, age);
    }
    PatientRecord::new(rec.patient_id(), x, y)
}

/// Keeps patients whose non-missing fraction is at least `min_fraction` in
/// every channel of `required`, then fills remaining gaps by linear
/// interpolation (edges take the nearest observed value).
pub fn select_by_coverage(
    cohort: &[RawRecording],
    required: &[Vital],
    min_fraction: f64,
) -> Result<Vec<RawRecording>> {
    let mut kept = Vec::new();
    for rec in cohort {
        let covered = required.iter().all(|&v| {
            let present = rec.channel(v).iter().filter(|s| s.is_some()).count();
            present as f64 / rec.len() as f64 >= min_fraction
        });
        if !covered {
            log::info!("dropping patient {}: coverage below {min_fraction}", rec.patient_id());
            continue;
        }
        let channels = std::array::from_fn(|c| interpolate_gaps(&rec.channels()[c]));
        kept.push(RawRecording::new(
            rec.patient_id(),
            rec.age(),
            channels,
            rec.artifact_mask().to_vec(),
        )?);
    }
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "no patient reaches {min_fraction} coverage; lower the min_coverage threshold"
        )));
    }
    Ok(kept)
}

/// Linear interpolation over `None` runs. A series with no observations is
/// returned unchanged.
pub fn interpolate_gaps(series: &[Option<f64>]) -> Vec<Option<f64>> {
    let known: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| (t, v)))
        .collect();
    if known.is_empty() {
        return series.to_vec();
    }
    let mut out = Vec::with_capacity(series.len());
    let mut k = 0;
    for t in 0..series.len() {
        while k + 1 < known.len() && known[k + 1].0 <= t {
            k += 1;
        }
        let (t0, v0) = known[k];
        let v = if t <= t0 {
            v0
        } else if k + 1 < known.len() {
            let (t1, v1) = known[k + 1];
            v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64
        } else {
            v0
        };
        out.push(Some(v));
    }
    out
}

/// Artifact removal, labelling and standardisation for one gap-free
/// recording, honouring `label_after_artifact_removal`.
pub fn prepare_record(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<PatientRecord> {
    let filtered = filter_artifacts(rec)?;
    if cfg.label_after_artifact_removal {
        build_patient_record(&filtered, cfg)
    } else {
        let icp = dense_channel(rec, Vital::Icpm)?;
        let all = label_ih(&icp, cfg.ih_threshold, cfg.ih_min_duration);
        let y = all
            .into_iter()
            .zip(rec.artifact_mask())
            .filter(|(_, &a)| !a)
            .map(|(y, _)| y)
            .collect();
        build_with_labels(&filtered, cfg, y)
    }
}

/// Coverage selection followed by [`prepare_record`] for every survivor.
pub fn prepare_cohort(cohort: &[RawRecording], cfg: &PreprocessConfig) -> Result<Vec<PatientRecord>> {
    let mut required = cfg.input_channels.clone();
    if !required.contains(&Vital::Icpm) {
        required.push(Vital::Icpm);
    }
    let selected = select_by_coverage(cohort, &required, cfg.min_coverage)?;
    selected.iter().map(|r| prepare_record(r, cfg)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
    pub train_fraction: f64,
}

/// Number of training patients: `floor(f * P + 0.5)`, kept within
/// `[1, P - 1]` so neither side is empty.
pub fn train_count(cohort_size: usize, train_fraction: f64) -> usize {
    let k = (train_fraction * cohort_size as f64 + 0.5).floor() as usize;
    k.clamp(1, cohort_size - 1)
}

/// Uniformly random patient-level partition, deterministic per seed. Both
/// id lists keep the cohort order.
pub fn split_cohort(ids: &[String], seed: u64, train_fraction: f64) -> Result<SplitPlan> {
    if ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "cannot split a cohort of {} patients",
            ids.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train_fraction: {train_fraction} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = train_count(ids.len(), train_fraction);
    let mut train: Vec<usize> = order[..k].to_vec();
    let mut test: Vec<usize> = order[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        seed,
        train_ids: train.into_iter().map(|i| ids[i].clone()).collect(),
        test_ids: test.into_iter().map(|i| ids[i].clone()).collect(),
        train_fraction,
    })
}

/// Records file inside a prepared-cohort directory.
pub const RECORDS_FILE: &str = "records.json";
/// Split plan file inside a prepared-cohort directory.
pub const SPLIT_FILE: &str = "split.json";

/// Writes prepared records and their split plan to `dir`.
pub fn write_archive(dir: &Path, records: &[PatientRecord], split: &SplitPlan) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RECORDS_FILE), serde_json::to_string(records)? + "\n")?;
    fs::write(dir.join(SPLIT_FILE), serde_json::to_string_pretty(split)? + "\n")?;
    Ok(())
}

/// Reads an archive written by [`write_archive`], re-validating every record
/// and checking that the split only names archived patients.
pub fn read_archive(dir: &Path) -> Result<(Vec<PatientRecord>, SplitPlan)> {
    let parse = |name: &str| -> Result<String> {
        fs::read_to_string(dir.join(name)).map_err(|e| Error::Data(format!("{}: {e}", dir.join(name).display())))
    };
    let json_err = |name: &str, e: serde_json::Error| Error::Parse {
        file: dir.join(name),
        line: e.line() as u64,
        message: e.to_string(),
    };
    let raw: Vec<PatientRecord> =
        serde_json::from_str(&parse(RECORDS_FILE)?).map_err(|e| json_err(RECORDS_FILE, e))?;
    let records = raw
        .into_iter()
        .map(|r| {
            let x = Matrix::new(r.x.rows(), r.x.cols(), r.x.data().to_vec())
                .map_err(|e| Error::Data(format!("patient {}: {e}", r.patient_id)))?;
            PatientRecord::new(r.patient_id, x, r.y)
        })
        .collect::<Result<Vec<_>>>()?;
    let split: SplitPlan = serde_json::from_str(&parse(SPLIT_FILE)?).map_err(|e| json_err(SPLIT_FILE, e))?;
    let known: HashSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    if let Some(id) = split.train_ids.iter().chain(&split.test_ids).find(|id| !known.contains(id.as_str())) {
        return Err(Error::Data(format!("split names unknown patient {id}")));
    }
    Ok((records, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_cohort, GeneratorSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn flat_recording(n: usize, icp: impl Fn(usize) -> f64, mask: Vec<bool>) -> RawRecording {
        let mut channels: [Vec<Option<f64>>; 5] = Default::default();
        for t in 0..n {
            channels[0].push(Some(icp(t)));
            channels[1].push(Some(70.0 + (t % 7) as f64));
            channels[2].push(Some(95.0 + (t % 5) as f64));
            channels[3].push(Some(55.0 + (t % 3) as f64));
            channels[4].push(Some(110.0 + (t % 11) as f64));
        }
        RawRecording::new("T", 9.0, channels, mask).unwrap()
    }

    #[test]
    fn filter_identity_and_removal() {
        let rec = flat_recording(10, |t| t as f64, vec![false; 10]);
        assert_eq!(filter_artifacts(&rec).unwrap(), rec);

        let mut mask = vec![false; 10];
        for t in [1, 4, 8] {
            mask[t] = true;
        }
        let rec = flat_recording(10, |t| t as f64, mask);
        let out = filter_artifacts(&rec).unwrap();
        assert_eq!(out.len(), 7);
        let icp: Vec<f64> = out.channel(Vital::Icpm).iter().map(|v| v.unwrap()).collect();
        assert_eq!(icp, vec![0., 2., 3., 5., 6., 7., 9.]);
        assert!(out.artifact_mask().iter().all(|&a| !a));

        let all = flat_recording(3, |_| 1.0, vec![true; 3]);
        assert!(matches!(filter_artifacts(&all), Err(Error::EmptyRecording(_))));
    }

    #[test]
    fn filtered_lengths_match_counting_oracle() {
        let spec = GeneratorSpec {
            n_patients: 5,
            length_range: [200, 400],
            artifact_fraction: 0.1,
            ..GeneratorSpec::default()
        };
        for rec in generate_cohort(&spec).unwrap() {
            let mut clean = 0;
            for &a in rec.artifact_mask() {
                if !a {
                    clean += 1;
                }
            }
            assert_eq!(filter_artifacts(&rec).unwrap().len(), clean);
        }
    }

    #[test]
    fn dose_rule_examples() {
        let mut s = vec![10.0; 20];
        s.extend(vec![16.0; 48]);
        s.extend(vec![10.0; 20]);
        let y = label_ih(&s, 15.0, 48);
        assert!(y[20..68].iter().all(|&v| v == 1));
        assert!(y[..20].iter().chain(&y[68..]).all(|&v| v == -1));

        let mut s = vec![10.0; 5];
        s.extend(vec![16.0; 47]);
        s.extend(vec![10.0; 5]);
        assert!(label_ih(&s, 15.0, 48).iter().all(|&v| v == -1));

        assert!(label_ih(&[15.0; 100], 15.0, 48).iter().all(|&v| v == -1));
        // run touching the end of the series
        assert!(label_ih(&[16.0; 48], 15.0, 48).iter().all(|&v| v == 1));
    }

    #[test]
    fn standardize_examples() {
        let out = standardize(&[1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(out, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(standardize(&[5.; 4]).unwrap(), vec![0.0; 4]);
        assert!(matches!(standardize(&[1., 2., 3.]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn standardize_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..257).map(|_| rng.random_range(-50.0..50.0)).collect();
        // oracle: explicit two-pass mean and order-statistic interpolation
        let mut m = 0.0;
        for v in &x {
            m += v;
        }
        m /= x.len() as f64;
        let mut s = x.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let pos = p * (s.len() as f64 - 1.0);
            let i = pos as usize;
            let frac = pos - i as f64;
            if i + 1 < s.len() {
                s[i] * (1.0 - frac) + s[i + 1] * frac
            } else {
                s[i]
            }
        };
        let iqr = q(0.75) - q(0.25);
        let out = standardize(&x).unwrap();
        for (o, v) in out.iter().zip(&x) {
            assert!((o - (v - m) / iqr).abs() < 1e-12);
        }
    }

    #[test]
    fn patient_record_layout() {
        let rec = flat_recording(100, |_| 10.0, vec![false; 100]);
        let pr = build_patient_record(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(pr.x().cols(), 6);
        assert!(pr.y().iter().all(|&v| v == -1));
        assert!((pr.x().get(0, 5) - 0.5).abs() < 1e-15);

        let rec = flat_recording(100, |t| if (20..80).contains(&t) { 17.0 } else { 10.0 }, vec![false; 100]);
        let pr = build_patient_record(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(pr.positives(), 60);
        // the standardised ICP column never exceeds 15, so labelling it
        // would give no positives
        let std_icp = pr.x().column(0);
        assert!(std_icp.iter().all(|&v| v < 15.0));
        assert!(label_ih(&std_icp, 15.0, 48).iter().all(|&v| v == -1));
    }

    #[test]
    fn build_requires_clean_input() {
        let mut mask = vec![false; 10];
        mask[3] = true;
        let rec = flat_recording(10, |_| 10.0, mask);
        assert!(build_patient_record(&rec, &PreprocessConfig::default()).is_err());
    }

    fn with_missing(frac_missing: f64) -> RawRecording {
        let n = 100;
        let rec = flat_recording(n, |_| 10.0, vec![false; n]);
        let (id, age, mut ch, mask) = rec.into_parts();
        let missing = (frac_missing * n as f64) as usize;
        for t in 0..missing {
            ch[Vital::Bpm.index()][t * n / missing.max(1) % n] = None;
        }
        RawRecording::new(id, age, ch, mask).unwrap()
    }

    #[test]
    fn coverage_threshold() {
        let kept = select_by_coverage(&[with_missing(0.4)], &Vital::ALL, 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert!(kept[0].channel(Vital::Bpm).iter().all(Option::is_some));
        assert!(select_by_coverage(&[with_missing(0.6)], &Vital::ALL, 0.5).is_err());
    }

    #[test]
    fn coverage_matches_counting_oracle() {
        let fractions = [0.0, 0.1, 0.3, 0.45, 0.5, 0.55, 0.7, 0.9];
        let cohort: Vec<RawRecording> = fractions
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let (_, age, ch, mask) = with_missing(f).into_parts();
                RawRecording::new(format!("P{i}"), age, ch, mask).unwrap()
            })
            .collect();
        let expected: Vec<String> = cohort
            .iter()
            .filter(|r| {
                let missing = r.channel(Vital::Bpm).iter().filter(|v| v.is_none()).count();
                1.0 - missing as f64 / r.len() as f64 >= 0.5
            })
            .map(|r| r.patient_id().to_string())
            .collect();
        let kept: Vec<String> = select_by_coverage(&cohort, &Vital::ALL, 0.5)
            .unwrap()
            .iter()
            .map(|r| r.patient_id().to_string())
            .collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn interpolation() {
        let s = [None, Some(1.0), None, None, Some(4.0), None];
        let out: Vec<f64> = interpolate_gaps(&s).into_iter().map(Option::unwrap).collect();
        assert_eq!(out, vec![1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn label_before_filter_differs_only_when_artifacts_split_runs() {
        // 30 high, 1 artifact (low), 30 high: filtered series has a 60 run.
        let n = 100;
        let icp = |t: usize| if (10..40).contains(&t) || (41..71).contains(&t) { 20.0 } else { 10.0 };
        let mut mask = vec![false; n];
        mask[40] = true;
        let rec = flat_recording(n, icp, mask);
        let after = prepare_record(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(after.positives(), 60);
        let before = prepare_record(
            &rec,
            &PreprocessConfig {
                label_after_artifact_removal: false,
                ..PreprocessConfig::default()
            },
        )
        .unwrap();
        assert_eq!(before.positives(), 0);
    }

    #[test]
    fn split_examples() {
        let ids: Vec<String> = (0..10).map(|i| format!("P{i}")).collect();
        let plan = split_cohort(&ids, 3, 0.8).unwrap();
        assert_eq!((plan.train_ids.len(), plan.test_ids.len()), (8, 2));
        assert_eq!(plan, split_cohort(&ids, 3, 0.8).unwrap());

        let ids: Vec<String> = (0..84).map(|i| format!("P{i}")).collect();
        let plan = split_cohort(&ids, 0, 0.8).unwrap();
        assert_eq!((plan.train_ids.len(), plan.test_ids.len()), (67, 17));

        assert!(split_cohort(&ids[..1], 0, 0.8).is_err());

        let json = serde_json::to_value(&plan).unwrap();
        assert!(json.get("train").is_some() && json.get("test").is_some());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..60, seed in any::<u64>(), f in 0.05f64..0.95) {
            let ids: Vec<String> = (0..n).map(|i| format!("P{i}")).collect();
            let plan = split_cohort(&ids, seed, f).unwrap();
            let mut all: Vec<String> = plan.train_ids.iter().chain(&plan.test_ids).cloned().collect();
            all.sort();
            let mut expect = ids.clone();
            expect.sort();
            prop_assert_eq!(all, expect);
            prop_assert_eq!(plan.train_ids.len(), train_count(n, f));
        }

        #[test]
        fn standardized_mean_is_zero(xs in prop::collection::vec(-1e3f64..1e3, 4..200)) {
            let out = standardize(&xs).unwrap();
            let mut s = xs.clone();
            s.sort_by(f64::total_cmp);
            if quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25) >= 1e-9 {
                let m = out.iter().sum::<f64>() / out.len() as f64;
                prop_assert!(m.abs() < 1e-9);
            }
        }

        #[test]
        fn labels_invariant_to_same_side_changes(
            xs in prop::collection::vec(5.0f64..25.0, 1..300),
            bumps in prop::collection::vec(0.0f64..5.0, 300),
        ) {
            let base = label_ih(&xs, 15.0, 48);
            let moved: Vec<f64> = xs
                .iter()
                .zip(&bumps)
                .map(|(&x, &b)| if x > 15.0 { x + b } else { x - b })
                .collect();
            prop_assert_eq!(base, label_ih(&moved, 15.0, 48));
        }

        #[test]
        fn circular_shift_keeps_labelled_runs(xs in prop::collection::vec(5.0f64..25.0, 2..300), k in 1usize..300) {
            // shifts whose wrap point sits on a sub-threshold sample split no run
            let n = xs.len();
            let k = k % n;
            prop_assume!(k > 0 && xs[n - 1] <= 15.0 && xs[k - 1] <= 15.0);
            let positive_runs = |y: &[i8]| {
                let mut lens = Vec::new();
                let mut run = 0;
                for &v in y {
                    if v == 1 {
                        run += 1;
                    } else if run > 0 {
                        lens.push(run);
                        run = 0;
                    }
                }
                if run > 0 {
                    lens.push(run);
                }
                lens.sort_unstable();
                lens
            };
            let mut shifted = xs[k..].to_vec();
            shifted.extend_from_slice(&xs[..k]);
            prop_assert_eq!(
                positive_runs(&label_ih(&xs, 15.0, 3)),
                positive_runs(&label_ih(&shifted, 15.0, 3))
            );
        }
    }

    #[test]
    fn archive_round_trips_and_rejects_bad_splits() {
        let x = Matrix::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let records = vec![
            PatientRecord::new("a", x.clone(), vec![1, -1, 1]).unwrap(),
            PatientRecord::new("b", x, vec![-1, -1, 1]).unwrap(),
        ];
        let split = split_cohort(&["a".to_string(), "b".to_string()], 3, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_archive(dir.path(), &records, &split).unwrap();
        let (back, back_split) = read_archive(dir.path()).unwrap();
        assert_eq!(back, records);
        assert_eq!(back_split, split);

        let mut bad = split.clone();
        bad.test_ids.push("zz".into());
        write_archive(dir.path(), &records, &bad).unwrap();
        assert!(matches!(read_archive(dir.path()), Err(Error::Data(_))));
        std::fs::write(dir.path().join(RECORDS_FILE), r#"[{"patient_id":"a","x":{"rows":2,"cols":2,"data":[1.0]},"y":[1,1]}]"#).unwrap();
        assert!(matches!(read_archive(dir.path()), Err(Error::Data(_))));
    }
}
