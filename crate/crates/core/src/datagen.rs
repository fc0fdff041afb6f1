//! Seeded synthetic ICU cohorts and the per-patient CSV format.
//!
//! Each synthetic patient carries five minute-resolution vitals built from
//! order-1 autoregressive processes around patient-specific set-points.
//! Intracranial-hypertension episodes lift ICPm above 15 mmHg for at least
//! 48 consecutive samples (with 10-sample linear ramps on either side) and
//! drive a Cushing-like response in the other channels: blood pressures rise
//! and heart rate falls in proportion to `coupling_strength`. Short
//! sub-threshold-duration ICP excursions and artifact runs (spikes and
//! dropouts) are mixed in so that a single-sample detector is not enough.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `GeneratorSpec::seed` and using the patient index as the stream id, so a
//! cohort is a pure function of its `GeneratorSpec` on every platform.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds between consecutive samples.
pub const SAMPLE_PERIOD_SECS: u32 = 60;

/// ICP threshold (mmHg) of the intracranial-hypertension dose rule.
pub const IH_THRESHOLD_MMHG: f64 = 15.0;
/// Minimum duration (samples = minutes) of the dose rule.
pub const IH_MIN_DURATION: usize = 48;

const RAMP_LEN: usize = 10;
const EVENT_GAP: usize = 12;

/// Monitored vital-sign channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vital {
    #[serde(rename = "ICPm")]
    Icpm,
    #[serde(rename = "BPm")]
    Bpm,
    #[serde(rename = "BPs")]
    Bps,
    #[serde(rename = "BPd")]
    Bpd,
    #[serde(rename = "HRT")]
    Hrt,
}

impl Vital {
    pub const ALL: [Vital; 5] = [Vital::Icpm, Vital::Bpm, Vital::Bps, Vital::Bpd, Vital::Hrt];

    pub fn name(self) -> &'static str {
        match self {
            Vital::Icpm => "ICPm",
            Vital::Bpm => "BPm",
            Vital::Bps => "BPs",
            Vital::Bpd => "BPd",
            Vital::Hrt => "HRT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Vital> {
        Vital::ALL.into_iter().find(|v| v.name() == name)
    }
}

/// One patient's minute-resolution recording before preprocessing.
/// Missing values are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    patient_id: String,
    age: f64,
    channels: [Vec<Option<f64>>; 5],
    artifact_mask: Vec<bool>,
}

impl RawRecording {
    pub fn new(
        patient_id: impl Into<String>,
        age: f64,
        channels: [Vec<Option<f64>>; 5],
        artifact_mask: Vec<bool>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        let n = artifact_mask.len();
        if n == 0 {
            return Err(Error::Data(format!("recording {patient_id} is empty")));
        }
        for (v, ch) in Vital::ALL.iter().zip(&channels) {
            if ch.len() != n {
                return Err(Error::Data(format!(
                    "recording {patient_id}: channel {} has {} samples, mask has {n}",
                    v.name(),
                    ch.len()
                )));
            }
        }
        if !(age >= 0.0 && age.is_finite()) {
            return Err(Error::Data(format!("recording {patient_id}: invalid age {age}")));
        }
        Ok(Self {
            patient_id,
            age,
            channels,
            artifact_mask,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn age(&self) -> f64 {
        self.age
    }

    pub fn len(&self) -> usize {
        self.artifact_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifact_mask.is_empty()
    }

    pub fn sample_period_secs(&self) -> u32 {
        SAMPLE_PERIOD_SECS
    }

    pub fn channel(&self, v: Vital) -> &[Option<f64>] {
        &self.channels[v.index()]
    }

    pub fn channels(&self) -> &[Vec<Option<f64>>; 5] {
        &self.channels
    }

    pub fn artifact_mask(&self) -> &[bool] {
        &self.artifact_mask
    }

    pub fn into_parts(self) -> (String, f64, [Vec<Option<f64>>; 5], Vec<bool>) {
        (self.patient_id, self.age, self.channels, self.artifact_mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_patients: usize,
    /// Inclusive `[min, max]` recording length in samples.
    pub length_range: [usize; 2],
    /// Expected number of IH episodes per recording (Poisson mean).
    pub episode_rate: f64,
    /// Plateau elevation above the 15 mmHg threshold, `[min, max]` mmHg.
    pub episode_magnitude_range: [f64; 2],
    /// Plateau length in samples, `[min, max]`; `min >= 48`.
    pub episode_length_range: [usize; 2],
    /// Expected number of short (< 48 sample) supra-threshold ICP excursions
    /// per recording.
    pub excursion_rate: f64,
    pub artifact_fraction: f64,
    pub coupling_strength: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_patients: 30,
            length_range: [1000, 2000],
            episode_rate: 2.0,
            episode_magnitude_range: [4.0, 12.0],
            episode_length_range: [60, 240],
            excursion_rate: 1.0,
            artifact_fraction: 0.02,
            coupling_strength: 0.6,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_patients == 0 {
            errs.push("n_patients: must be at least 1".to_string());
        }
        let [lo, hi] = self.length_range;
        if lo < 2 * IH_MIN_DURATION {
            errs.push(format!("length_range: minimum {lo} is below {}", 2 * IH_MIN_DURATION));
        }
        if hi < lo {
            errs.push(format!("length_range: max {hi} < min {lo}"));
        }
        if !(self.episode_rate >= 0.0 && self.episode_rate.is_finite()) {
            errs.push(format!("episode_rate: {} is not a non-negative number", self.episode_rate));
        }
        let [mlo, mhi] = self.episode_magnitude_range;
        if !(mlo > 0.0 && mhi >= mlo && mhi.is_finite()) {
            errs.push(format!("episode_magnitude_range: [{mlo}, {mhi}] must satisfy 0 < min <= max"));
        }
        let [elo, ehi] = self.episode_length_range;
        if elo < IH_MIN_DURATION || ehi < elo {
            errs.push(format!(
                "episode_length_range: [{elo}, {ehi}] must satisfy {IH_MIN_DURATION} <= min <= max"
            ));
        }
        if !(self.excursion_rate >= 0.0 && self.excursion_rate.is_finite()) {
            errs.push(format!("excursion_rate: {} is not a non-negative number", self.excursion_rate));
        }
        if !(0.0..=1.0).contains(&self.artifact_fraction) {
            errs.push(format!("artifact_fraction: {} outside [0, 1]", self.artifact_fraction));
        }
        if !(0.0..=1.0).contains(&self.coupling_strength) {
            errs.push(format!("coupling_strength: {} outside [0, 1]", self.coupling_strength));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Ground truth for one injected episode: the plateau `start..end`, where
/// ICPm is held strictly above threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
}

pub fn generate_cohort(spec: &GeneratorSpec) -> Result<Vec<RawRecording>> {
    Ok(generate_cohort_annotated(spec)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

/// Like [`generate_cohort`] but also returns the injected episodes.
pub fn generate_cohort_annotated(spec: &GeneratorSpec) -> Result<Vec<(RawRecording, Vec<Episode>)>> {
    spec.validate()?;
    (0..spec.n_patients)
        .map(|p| generate_patient(spec, p))
        .collect()
}

#[derive(Clone, Copy)]
enum EventKind {
    Episode { magnitude: f64 },
    Excursion { magnitude: f64 },
}

struct Event {
    kind: EventKind,
    plateau: usize,
}

impl Event {
    fn ramp(&self) -> usize {
        match self.kind {
            EventKind::Episode { .. } => RAMP_LEN,
            EventKind::Excursion { .. } => 3,
        }
    }

    fn span(&self) -> usize {
        self.plateau + 2 * self.ramp()
    }
}

struct Ar1 {
    phi: f64,
    noise: Normal<f64>,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, stationary_std: f64, rng: &mut ChaCha8Rng) -> Self {
        let noise = Normal::new(0.0, stationary_std * (1.0 - phi * phi).sqrt()).expect("finite std");
        let state = Normal::new(0.0, stationary_std).expect("finite std").sample(rng);
        Self { phi, noise, state }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.phi * self.state + self.noise.sample(rng);
        self.state
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn generate_patient(spec: &GeneratorSpec, index: usize) -> Result<(RawRecording, Vec<Episode>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let n = rng.random_range(spec.length_range[0]..=spec.length_range[1]);
    let age = (rng.random_range(0.0..18.0_f64) * 10.0).round() / 10.0;
    let hrt_sp = rng.random_range(90.0..130.0);
    let bpm_sp = rng.random_range(60.0..80.0);
    let icp_sp = rng.random_range(8.0..12.0);
    let pulse = rng.random_range(30.0..45.0);

    // Event layout: episodes and excursions in random order, separated by
    // at least EVENT_GAP baseline samples.
    let mut events = Vec::new();
    for _ in 0..poisson(&mut rng, spec.episode_rate) {
        let magnitude = rng.random_range(spec.episode_magnitude_range[0]..=spec.episode_magnitude_range[1]);
        let plateau = rng.random_range(spec.episode_length_range[0]..=spec.episode_length_range[1]);
        events.push(Event {
            kind: EventKind::Episode { magnitude },
            plateau,
        });
    }
    for _ in 0..poisson(&mut rng, spec.excursion_rate) {
        let magnitude = rng.random_range(0.5..3.0);
        let plateau = rng.random_range(8..=IH_MIN_DURATION - 10);
        events.push(Event {
            kind: EventKind::Excursion { magnitude },
            plateau,
        });
    }
    events.shuffle(&mut rng);
    let fits = |evs: &[Event]| {
        evs.iter().map(Event::span).sum::<usize>() + EVENT_GAP * (evs.len() + 1) <= n
    };
    while !fits(&events) {
        events.pop();
    }
    let used: usize = events.iter().map(Event::span).sum::<usize>() + EVENT_GAP * (events.len() + 1);
    let free = n - used;
    let mut cuts: Vec<usize> = (0..events.len()).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();

    // Per-sample episode weight (0..1), excursion lift, and magnitude.
    let mut episode_weight = vec![0.0; n];
    let mut episode_level = vec![0.0; n];
    let mut excursion_weight = vec![0.0; n];
    let mut excursion_level = vec![0.0; n];
    let mut episodes = Vec::new();
    let mut pos = 0;
    let mut prev_cut = 0;
    for (ev, &cut) in events.iter().zip(&cuts) {
        pos += EVENT_GAP + (cut - prev_cut);
        prev_cut = cut;
        let ramp = ev.ramp();
        let plateau_start = pos + ramp;
        let plateau_end = plateau_start + ev.plateau;
        for (k, t) in (pos..pos + ev.span()).enumerate() {
            let w = if t < plateau_start {
                (k + 1) as f64 / (ramp + 1) as f64
            } else if t < plateau_end {
                1.0
            } else {
                (pos + ev.span() - t) as f64 / (ramp + 1) as f64
            };
            match ev.kind {
                EventKind::Episode { magnitude } => {
                    episode_weight[t] = w;
                    episode_level[t] = magnitude;
                }
                EventKind::Excursion { magnitude } => {
                    excursion_weight[t] = w;
                    excursion_level[t] = magnitude;
                }
            }
        }
        if let EventKind::Episode { .. } = ev.kind {
            episodes.push(Episode {
                start: plateau_start,
                end: plateau_end,
            });
        }
        pos += ev.span();
    }

    let mut icp_noise = Ar1::new(0.97, 1.0, &mut rng);
    let mut bpm_noise = Ar1::new(0.98, 3.0, &mut rng);
    let mut bps_noise = Ar1::new(0.95, 2.0, &mut rng);
    let mut bpd_noise = Ar1::new(0.95, 1.5, &mut rng);
    let mut hrt_noise = Ar1::new(0.98, 4.0, &mut rng);
    let coupling = spec.coupling_strength;

    let mut channels: [Vec<Option<f64>>; 5] = Default::default();
    for t in 0..n {
        let w = episode_weight[t];
        let baseline_icp = (icp_sp + icp_noise.next(&mut rng)).clamp(2.0, IH_THRESHOLD_MMHG - 0.5);
        let xw = excursion_weight[t];
        let mut icp = (1.0 - xw) * baseline_icp + xw * (IH_THRESHOLD_MMHG + excursion_level[t]);
        if w > 0.0 {
            let plateau = IH_THRESHOLD_MMHG + episode_level[t] + 0.5 * icp_noise.state;
            icp = (1.0 - w) * baseline_icp + w * plateau;
            if w >= 1.0 {
                icp = icp.max(IH_THRESHOLD_MMHG + 0.5);
            }
        }
        let bpm = bpm_sp + bpm_noise.next(&mut rng) + coupling * w * 15.0;
        let bps = bpm + 2.0 * pulse / 3.0 + bps_noise.next(&mut rng) + coupling * w * 8.0;
        let bpd = bpm - pulse / 3.0 + bpd_noise.next(&mut rng) + coupling * w * 4.0;
        let hrt = hrt_sp + hrt_noise.next(&mut rng) - coupling * w * 20.0;
        for (v, val) in Vital::ALL.iter().zip([icp, bpm, bps, bpd, hrt]) {
            channels[v.index()].push(Some(val));
        }
    }

    let artifact_mask = inject_artifacts(&mut channels, spec.artifact_fraction, &mut rng);
    let rec = RawRecording::new(format!("P{index:03}"), age, channels, artifact_mask)?;
    Ok((rec, episodes))
}

/// Marks `round(fraction * n)` samples as artifacts in short runs and
/// overwrites them with spikes or dropouts.
fn inject_artifacts(channels: &mut [Vec<Option<f64>>; 5], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = channels[0].len();
    let target = (fraction * n as f64).round() as usize;
    let mut mask = vec![false; n];
    let mut marked = 0;
    while marked < target {
        let len = rng.random_range(1..=5usize);
        let start = rng.random_range(0..n);
        let spike = rng.random_bool(0.5);
        for t in start..(start + len).min(n) {
            if marked == target {
                break;
            }
            if mask[t] {
                continue;
            }
            mask[t] = true;
            marked += 1;
            let values = if spike {
                [
                    rng.random_range(40.0..80.0),
                    rng.random_range(150.0..220.0),
                    rng.random_range(200.0..260.0),
                    rng.random_range(120.0..180.0),
                    rng.random_range(200.0..260.0),
                ]
            } else {
                [0.0; 5]
            };
            for (ch, v) in channels.iter_mut().zip(values) {
                ch[t] = Some(v);
            }
        }
    }
    mask
}

/// Name of the per-cohort JSON sidecar holding patient ages.
pub const SIDECAR_FILE: &str = "cohort.json";
pub const CSV_HEADER: [&str; 7] = ["t", "ICPm", "BPm", "BPs", "BPd", "HRT", "artifact"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub age: f64,
}

/// Writes one `<patient_id>.csv` per recording plus the age sidecar.
pub fn write_csv_cohort(cohort: &[RawRecording], dir: &Path) -> Result<()> {
    if cohort.is_empty() {
        return Err(Error::Data("cannot write an empty cohort".into()));
    }
    fs::create_dir_all(dir)?;
    let mut meta = BTreeMap::new();
    for rec in cohort {
        let path = dir.join(format!("{}.csv", rec.patient_id()));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(e, &path))?;
        w.write_record(CSV_HEADER).map_err(|e| csv_io(e, &path))?;
        for t in 0..rec.len() {
            let mut row = Vec::with_capacity(7);
            row.push(t.to_string());
            for v in Vital::ALL {
                row.push(rec.channel(v)[t].map_or_else(String::new, |x| x.to_string()));
            }
            row.push(if rec.artifact_mask()[t] { "1" } else { "0" }.to_string());
            w.write_record(&row).map_err(|e| csv_io(e, &path))?;
        }
        w.flush()?;
        meta.insert(rec.patient_id().to_string(), PatientMeta { age: rec.age() });
    }
    fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn csv_io(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            file: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Reads every `*.csv` in `dir` (sorted by file name) using the sidecar for
/// ages. Gaps in the minute index are filled with missing rows.
pub fn read_csv_cohort(dir: &Path) -> Result<Vec<RawRecording>> {
    let sidecar = dir.join(SIDECAR_FILE);
    let meta: BTreeMap<String, PatientMeta> = serde_json::from_str(
        &fs::read_to_string(&sidecar).map_err(|e| Error::Data(format!("{}: {e}", sidecar.display())))?,
    )
        .map_err(|e| Error::Parse {
            file: sidecar.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no CSV files in {}", dir.display())));
    }
    files
        .iter()
        .map(|path| {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Data(format!("bad file name {}", path.display())))?;
            let age = meta
                .get(id)
                .ok_or_else(|| Error::Data(format!("{SIDECAR_FILE} has no entry for patient {id}")))?
                .age;
            read_csv_recording(path, id, age)
        })
        .collect()
}

pub fn read_csv_recording(path: &Path, patient_id: &str, age: f64) -> Result<RawRecording> {
    let parse_err = |line: u64, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(e, path))?;
    let header = rdr.headers().map_err(|e| csv_io(e, path))?.clone();
    let mut col = [0usize; 7];
    for (slot, name) in col.iter_mut().zip(CSV_HEADER) {
        *slot = header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(1, format!("missing required column {name}")))?;
    }

    let mut channels: [Vec<Option<f64>>; 5] = Default::default();
    let mut mask = Vec::new();
    let mut last_t: Option<u64> = None;
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(col[i]).unwrap_or("").trim();
        let t: u64 = field(0)
            .parse()
            .map_err(|_| parse_err(line, format!("invalid minute index {:?}", field(0))))?;
        if let Some(prev) = last_t {
            if t <= prev {
                return Err(parse_err(line, format!("non-monotone timestamp {t} after {prev}")));
            }
            for _ in prev + 1..t {
                for ch in channels.iter_mut() {
                    ch.push(None);
                }
                mask.push(false);
            }
        }
        last_t = Some(t);
        for (k, ch) in channels.iter_mut().enumerate() {
            let raw = field(k + 1);
            let v = if raw.is_empty() {
                None
            } else {
                let x: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(line, format!("invalid {} value {raw:?}", CSV_HEADER[k + 1])))?;
                Some(x)
            };
            ch.push(v);
        }
        let artifact = match field(6) {
            "0" | "" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("artifact flag must be 0 or 1, got {other:?}"))),
        };
        mask.push(artifact);
    }
    RawRecording::new(patient_id, age, channels, mask)
}
