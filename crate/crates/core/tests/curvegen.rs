use std::path::PathBuf;

use proptest::prelude::*;

use steerlab::curvegen::{
    self, assemble_trialset, grid_search, realize, solve_amplitude, GridSearchConfig, LengthBand, ParamGrid,
    SelectionPolicy, SinusoidSpec, TrialDocument, TrialSpec,
};
use steerlab::fixtures::{trial_label, LENGTH_LEVELS};
use steerlab::geometry::{self, DEFAULT_SAMPLES};
use steerlab::Error;

fn trialset() -> Vec<TrialDocument> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/trialset.json");
    curvegen::read_trial_set(&std::fs::read_to_string(path).unwrap()).unwrap()
}

// Midpoint rule on a million cells using closed-form derivatives of
// y = a·sin(k·x).
fn fine_single_sine(a: f64, k: f64, x_max: f64) -> (f64, f64) {
    let n = 1_000_000;
    let h = x_max / f64::from(n);
    let (mut len, mut curv) = (0.0, 0.0);
    for i in 0..n {
        let x = (f64::from(i) + 0.5) * h;
        let dy = a * k * (k * x).cos();
        let ddy = -a * k * k * (k * x).sin();
        let speed = (1.0 + dy * dy).sqrt();
        len += speed * h;
        curv += ddy.abs() / (speed * speed * speed) * speed * h;
    }
    (len, curv)
}

#[test]
fn single_sine_matches_fine_grid() {
    let spec = SinusoidSpec::new(vec![1], 2.0).with_amplitude(100.0);
    let c = realize(&spec, DEFAULT_SAMPLES).unwrap();
    let (len, k) = fine_single_sine(100.0, 2.0 * std::f64::consts::TAU / 1300.0, 1300.0);
    assert!((geometry::arc_length(&c) - len).abs() <= 1e-4 * len);
    assert!((geometry::total_curvature(&c) - k).abs() <= 1e-4 * k);
}

#[test]
fn zero_amplitude_is_straight() {
    let c = realize(&SinusoidSpec::new(vec![1, 2, 4], 3.0), 2048).unwrap();
    assert!((geometry::arc_length(&c) - 1300.0).abs() < 1e-9);
    assert_eq!(geometry::total_curvature(&c), 0.0);
}

#[test]
fn solved_amplitude_round_trips() {
    let base = SinusoidSpec::new(vec![1], 2.0);
    let a = solve_amplitude(&base, 10.0, DEFAULT_SAMPLES).unwrap();
    let k = geometry::total_curvature(&realize(&base.clone().with_amplitude(a), DEFAULT_SAMPLES).unwrap());
    assert!((k - 10.0).abs() < 1e-3, "{k}");
    let tiny = solve_amplitude(&base, 1e-5, 2048).unwrap();
    assert!(tiny < 1e-3 && tiny > 0.0);
}

#[test]
fn unreachable_and_invalid_targets() {
    // A two-period sine turns by at most about π per half period.
    let base = SinusoidSpec::new(vec![1], 2.0);
    assert!(matches!(solve_amplitude(&base, 30.0, 1024), Err(Error::Unreachable { .. })));
    assert!(solve_amplitude(&base, 0.0, 1024).is_err());
    assert!(solve_amplitude(&base, f64::NAN, 1024).is_err());
}

#[test]
fn empty_grid_finds_nothing() {
    let cfg = GridSearchConfig {
        grid: ParamGrid::empty(),
        ..GridSearchConfig::default()
    };
    let report = grid_search(&cfg);
    assert!(report.candidates.is_empty());
    assert_eq!(report.empty_cells.len(), 9);
}

#[test]
fn narrow_band_search_hits_target() {
    let cfg = GridSearchConfig {
        k_targets: vec![10.0],
        length_bands: vec![LengthBand::new(1495.0, 1505.0).unwrap()],
        grid: ParamGrid {
            periods: vec![1.2, 1.25, 1.3],
            ..ParamGrid::default()
        },
        ..GridSearchConfig::default()
    };
    let report = grid_search(&cfg);
    assert!(!report.candidates.is_empty());
    for t in &report.candidates {
        assert!((t.total_curvature - 10.0).abs() <= 0.01);
        assert!((1495.0..=1505.0).contains(&t.length));
        assert!(t.min_radius >= 0.3 * t.width);
        assert_eq!(t.trial_id, "L0-K0");
    }
}

fn synthetic(level_l: usize, level_k: usize, length: f64) -> TrialSpec {
    TrialSpec {
        trial_id: trial_label(level_l, level_k),
        level_l,
        level_k,
        sinusoid: SinusoidSpec::new(vec![1], 1.0),
        width: 50.0,
        length,
        total_curvature: 10.0,
        min_radius: 100.0,
    }
}

fn spread(set: &[&TrialSpec]) -> f64 {
    let max = set.iter().map(|t| t.length).fold(f64::NEG_INFINITY, f64::max);
    let min = set.iter().map(|t| t.length).fold(f64::INFINITY, f64::min);
    max - min
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assembly_minimizes_spread_like_exhaustive_search(
        cells in prop::collection::vec(prop::collection::vec(1490.0f64..1510.0, 1..6), 3)
    ) {
        let band = LengthBand::new(1490.0, 1510.0).unwrap();
        let candidates: Vec<TrialSpec> = cells
            .iter()
            .enumerate()
            .flat_map(|(k, lens)| lens.iter().map(move |&l| synthetic(0, k, l)))
            .collect();
        let picked = assemble_trialset(&candidates, &[band], 3, SelectionPolicy::MinLengthSpread { per_cell: 100 }).unwrap();
        prop_assert_eq!(picked.len(), 3);
        let by_cell = |k: usize| candidates.iter().filter(move |t| t.level_k == k).collect::<Vec<_>>();
        let mut best = f64::INFINITY;
        for a in by_cell(0) {
            for b in by_cell(1) {
                for c in by_cell(2) {
                    best = best.min(spread(&[a, b, c]));
                }
            }
        }
        let refs: Vec<&TrialSpec> = picked.iter().collect();
        prop_assert_eq!(spread(&refs), best);
        for (k, t) in picked.iter().enumerate() {
            prop_assert_eq!(t.level_k, k);
        }
    }
}

#[test]
fn single_candidates_are_chosen_and_gaps_reported() {
    let cands: Vec<TrialSpec> = (0..3).map(|k| synthetic(0, k, 1500.0 + k as f64)).collect();
    let band = LengthBand::new(1490.0, 1510.0).unwrap();
    for policy in [SelectionPolicy::First, SelectionPolicy::default()] {
        assert_eq!(assemble_trialset(&cands, &[band], 3, policy).unwrap(), cands);
    }
    let err = assemble_trialset(&cands[..2], &[band], 3, SelectionPolicy::default()).unwrap_err();
    assert!(matches!(err, Error::Assembly(ref cell) if cell == "L0-K2"), "{err}");
}

#[test]
fn shipped_trial_set_meets_targets() {
    let docs = trialset();
    assert_eq!(docs.len(), 9);
    let bands = LengthBand::defaults();
    for d in &docs {
        assert_eq!(d.trial_id, trial_label(d.level_l, d.level_k));
        assert!((d.total_curvature - [10.0, 16.0, 22.0][d.level_k]).abs() <= 0.01, "{}", d.trial_id);
        assert!(bands[d.level_l].contains(d.length_px), "{}", d.trial_id);
        assert!(d.polyline.len() >= TrialDocument::MIN_POLYLINE);
        assert_eq!(d.width_px, 50.0);

        let again = TrialSpec::measure(d.level_l, d.level_k, d.sinusoid(), d.width_px, DEFAULT_SAMPLES).unwrap();
        assert!((again.length - d.length_px).abs() <= 1e-3 * d.length_px);
        assert!((again.total_curvature - d.total_curvature).abs() <= 1e-3 * d.total_curvature);
        let flipped = again.flipped();
        let f = TrialSpec::measure(d.level_l, d.level_k, flipped.sinusoid, d.width_px, DEFAULT_SAMPLES).unwrap();
        assert_eq!(f.length, again.length);
        assert_eq!(f.total_curvature, again.total_curvature);
    }
    for (level, &(_, table_std)) in LENGTH_LEVELS.iter().enumerate() {
        let lengths: Vec<f64> = docs.iter().filter(|d| d.level_l == level).map(|d| d.length_px).collect();
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let sd = (lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (lengths.len() as f64 - 1.0)).sqrt();
        assert!(sd <= 3.0 * table_std, "level {level}: {sd}");
    }
}

#[test]
fn trial_set_serialization_round_trips() {
    let docs = trialset();
    let text = curvegen::write_trial_set(&docs).unwrap();
    assert_eq!(curvegen::read_trial_set(&text).unwrap(), docs);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&str> = v[0].as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected = vec![
        "trial_id", "level_L", "level_K", "width_px", "x_max_px", "flipped", "components", "angle_multipliers",
        "periods", "amplitude_px", "length_px", "total_curvature", "polyline",
    ];
    expected.sort_unstable();
    let mut keys = keys;
    keys.sort_unstable();
    assert_eq!(keys, expected);
    let mut short = docs[0].clone();
    short.polyline.truncate(100);
    assert!(short.validate().is_err());
}
