//! Byte-for-byte comparison of rendered SVGs against recorded files.
//! Set `UPDATE_GOLDEN=1` to re-record after an intentional rendering change.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use costate::eval::plots::{histogram_svg, render_plots, scatter_svg, Projection};
use costate::eval::{tsne_project, PresenceCorrelation, TsneConfig};
use costate::linalg::Matrix;

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the recorded file");
}

fn seeded_correlations() -> Vec<PresenceCorrelation> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    (0..30)
        .map(|k| PresenceCorrelation {
            patient_id: format!("p{k}"),
            r: (k % 7 != 0).then(|| rng.random_range(-1.0..1.0)),
        })
        .collect()
}

#[test]
fn correlation_histogram_matches_golden() {
    let values: Vec<f64> = seeded_correlations().iter().filter_map(|c| c.r).collect();
    golden("histogram.svg", &histogram_svg(&values, 20, -1.0, 1.0, "Correlation <seeded>"));
}

#[test]
fn tsne_scatter_matches_golden() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Matrix::from_fn(24, 4, |r, _| rng.random_range(-1.0..1.0) + if r < 12 { 2.0 } else { -2.0 });
    let labels: Vec<i8> = (0..24).map(|r| if r < 12 { 1 } else { -1 }).collect();
    let cfg = TsneConfig {
        perplexity: 5.0,
        iterations: 300,
        ..TsneConfig::default()
    };
    let y = tsne_project(&x, &cfg, 5).unwrap().y;
    golden("scatter.svg", &scatter_svg(&y, &labels, "t-SNE: seeded").unwrap());
}

#[test]
fn render_plots_is_deterministic_and_matches_golden() {
    let corr = seeded_correlations();
    let pts = Matrix::new(3, 2, vec![0.0, 0.0, 1.0, 2.0, -1.5, 0.5]).unwrap();
    let labels = [1, -1, 1];
    let dir = tempfile::tempdir().unwrap();
    let projections = [Projection {
        name: "tiny",
        points: &pts,
        labels: &labels,
    }];
    let written = render_plots(&corr, &projections, dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let hist = std::fs::read_to_string(dir.path().join("correlation_hist.svg")).unwrap();
    let scatter = std::fs::read_to_string(dir.path().join("tsne_tiny.svg")).unwrap();
    golden("render_hist.svg", &hist);
    golden("render_tiny.svg", &scatter);
    render_plots(&corr, &projections, dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("correlation_hist.svg")).unwrap(), hist);
}
