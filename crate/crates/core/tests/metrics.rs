use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use steerlab::geometry::{CurveSamples, Point, Tunnel};
use steerlab::metrics::{
    self, effective_width, heatmap, measure_resampled, movement_time, resample, summarize, EventKind, Sample,
    Trajectory, EFFECTIVE_WIDTH_FACTOR,
};
use steerlab::simulator::{self, AgentConfig, CorpusConfig, TrialMeta};
use steerlab::Error;

mod common;

use common::{brute_measures, event, random_trajectory, sine_tunnel, trajectory, trialset as trials};

#[test]
fn measures_equal_brute_force_on_random_trajectories() {
    let tunnel = sine_tunnel();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let traj = random_trajectory(&mut rng, &tunnel);
        let m = measure_resampled(&traj, &tunnel).unwrap();
        let b = brute_measures(&traj, &tunnel);
        assert_eq!(m.opm, b.opm);
        assert_eq!(m.exits, b.exits);
        assert!((m.path_px - b.path).abs() <= 1e-9 * b.path.max(1.0));
        assert!((m.v_avg - b.path / b.mt).abs() <= 1e-12 * m.v_avg.max(1.0));
        assert_eq!(m.mt_ms, b.mt);
        assert!((m.v_avg * m.mt_ms - m.path_px).abs() <= 1e-9 * m.path_px.max(1.0));
        assert!((0.0..=1.0).contains(&m.opm));
    }
}

#[test]
fn movement_time_equals_event_scan() {
    for doc in trials().iter().take(3) {
        let tunnel = doc.tunnel(false).unwrap();
        let meta = TrialMeta {
            session_id: "s".into(),
            participant_id: "P01".into(),
            trial_id: doc.trial_id.clone(),
            repetition: 0,
            flipped: false,
        };
        let traj = simulator::simulate_trial(&tunnel, &AgentConfig::default(), &meta).unwrap();
        let parsed = Trajectory::parse_trajlog(&traj.to_trajlog()).unwrap();
        let mut start = None;
        let mut end = None;
        for line in traj.to_trajlog().lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            match f.get(3).copied() {
                Some("start_click") => start = Some(f[0].parse::<f64>().unwrap()),
                Some("end_click") => end = Some(f[0].parse::<f64>().unwrap()),
                _ => {}
            }
        }
        assert_eq!(movement_time(&parsed).unwrap(), end.unwrap() - start.unwrap());
    }
    let t = trajectory(vec![], vec![event(0.0, EventKind::StartClick), event(12000.0, EventKind::EndClick)]);
    assert_eq!(movement_time(&t).unwrap(), 12000.0);
    let t = trajectory(vec![], vec![event(0.0, EventKind::StartClick)]);
    assert!(matches!(movement_time(&t), Err(Error::IncompleteTrial(_))));
}

#[test]
fn effective_width_closed_form() {
    for n in [2usize, 10, 101, 1000] {
        let offsets: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 5.0 } else { -5.0 }).collect();
        let mean = offsets.iter().sum::<f64>() / n as f64;
        let sd = (offsets.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let got = effective_width(&offsets).unwrap();
        assert!((got - EFFECTIVE_WIDTH_FACTOR * sd).abs() <= 1e-12 * got);
        if n % 2 == 0 {
            let closed = 4.133 * 5.0 * (n as f64 / (n as f64 - 1.0)).sqrt();
            assert!((got - closed).abs() <= 1e-12 * closed, "{got} vs {closed}");
        }
    }
    assert_eq!(effective_width(&[3.0; 7]).unwrap(), 0.0);
    assert!(effective_width(&[1.0]).is_err());
}

#[test]
fn effective_width_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let normal = Normal::new(0.0, 10.0).unwrap();
    let offsets: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
    let w = effective_width(&offsets).unwrap();
    assert!((w - 41.33).abs() < 0.3, "{w}");
}

#[test]
fn coarse_sine_resamples_accurately() {
    let samples: Vec<Sample> = (0..=600)
        .map(|i| {
            let t = 1000.0 * f64::from(i) / 60.0;
            Sample {
                t,
                x: (t / 1000.0).sin(),
                y: (t / 1000.0).cos(),
            }
        })
        .collect();
    let traj = trajectory(samples, vec![]);
    let out = resample(&traj, 200.0).unwrap();
    assert_eq!(out.samples[0].t, 0.0);
    assert!((out.samples[1].t - 5.0).abs() < 1e-12);
    for s in out.samples.iter().filter(|s| s.t > 500.0 && s.t < 9500.0) {
        assert!((s.x - (s.t / 1000.0).sin()).abs() < 1e-3);
        assert!((s.y - (s.t / 1000.0).cos()).abs() < 1e-3);
    }
}

#[test]
fn linear_motion_on_grid_is_unchanged() {
    let samples: Vec<Sample> = (0..50)
        .map(|i| {
            let t = 5.0 * f64::from(i);
            Sample { t, x: 0.26 * t, y: 3.0 }
        })
        .collect();
    let out = resample(&trajectory(samples.clone(), vec![]), 200.0).unwrap();
    assert_eq!(out.samples.len(), samples.len());
    for (a, b) in out.samples.iter().zip(&samples) {
        assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-12);
    }
    assert!(resample(&trajectory(samples[..3].to_vec(), vec![]), 200.0).is_err());
}

#[test]
fn uniform_straight_motion_speed() {
    let samples: Vec<Sample> = (0..=1000)
        .map(|i| {
            let t = 5.0 * f64::from(i);
            Sample { t, x: 0.26 * t, y: 0.0 }
        })
        .collect();
    let traj = trajectory(samples, vec![event(0.0, EventKind::StartClick), event(5000.0, EventKind::EndClick)]);
    assert!((metrics::average_speed(&traj).unwrap() - 0.26).abs() < 1e-12);
}

#[test]
fn heatmap_conserves_samples() {
    let tunnel = sine_tunnel();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trajs: Vec<Trajectory> = (0..50).map(|_| random_trajectory(&mut rng, &tunnel)).collect();
    let total: usize = trajs.iter().map(|t| t.samples.len()).sum();
    let h = heatmap(&trajs, &tunnel, 10.0).unwrap();
    assert_eq!(h.total as usize, total);
    assert_eq!(h.counts.iter().flatten().sum::<u64>() as usize, total);
    assert_eq!(h.counts.len(), h.rows);
    assert!(h.counts.iter().all(|r| r.len() == h.cols));
    assert!(heatmap(&trajs, &tunnel, 0.0).is_err());
}

#[test]
fn heatmap_of_stationary_point() {
    let tunnel = sine_tunnel();
    let samples: Vec<Sample> = (0..40).map(|i| Sample { t: f64::from(i), x: 300.0, y: 20.0 }).collect();
    let h = heatmap(&[trajectory(samples, vec![])], &tunnel, 10.0).unwrap();
    let nonzero: Vec<u64> = h.counts.iter().flatten().copied().filter(|&c| c > 0).collect();
    assert_eq!(nonzero, [40]);
}

#[test]
fn heatmap_of_straight_sweep_is_uniform() {
    let pts: Vec<Point> = (0..=100).map(|i| [13.0 * f64::from(i), 0.0]).collect();
    let tunnel = Tunnel::new(CurveSamples::from_polyline(pts).unwrap(), 50.0).unwrap();
    let samples: Vec<Sample> = (0..=1300).map(|i| Sample { t: f64::from(i), x: f64::from(i), y: 0.0 }).collect();
    let h = heatmap(&[trajectory(samples, vec![])], &tunnel, 10.0).unwrap();
    let row = h.counts.iter().find(|r| r.iter().any(|&c| c > 0)).unwrap();
    let first = row.iter().position(|&c| c > 0).unwrap();
    let last = row.iter().rposition(|&c| c > 0).unwrap();
    let interior = &row[first + 1..last];
    let (lo, hi) = (interior.iter().min().unwrap(), interior.iter().max().unwrap());
    assert!(hi - lo <= 1, "{lo}..{hi}");
}

fn mirror(t: &Trajectory) -> Trajectory {
    Trajectory {
        samples: t.samples.iter().map(|s| Sample { y: -s.y, ..*s }).collect(),
        flipped: !t.flipped,
        ..t.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flip_preserves_opm_and_exits(seed in any::<u64>()) {
        let tunnel = sine_tunnel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_trajectory(&mut rng, &tunnel);
        let a = measure_resampled(&traj, &tunnel).unwrap();
        let b = measure_resampled(&mirror(&traj), &tunnel.flipped()).unwrap();
        prop_assert_eq!(a.opm, b.opm);
        prop_assert_eq!(a.exits, b.exits);
        prop_assert!((a.path_px - b.path_px).abs() < 1e-9 * a.path_px.max(1.0));
    }

    #[test]
    fn trajlog_round_trips(seed in any::<u64>()) {
        let tunnel = sine_tunnel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_trajectory(&mut rng, &tunnel);
        let back = Trajectory::parse_trajlog(&traj.to_trajlog()).unwrap();
        prop_assert_eq!(back.events, traj.events);
        for s in &traj.samples {
            prop_assert!(back.samples.contains(s));
        }
    }
}

#[test]
fn constructed_opm_and_exits() {
    let pts: Vec<Point> = (0..=100).map(|i| [13.0 * f64::from(i), 0.0]).collect();
    let tunnel = Tunnel::new(CurveSamples::from_polyline(pts).unwrap(), 50.0).unwrap();
    let samples: Vec<Sample> = (0..100)
        .map(|i| {
            let y = if (40..45).contains(&i) || (60..65).contains(&i) { 50.0 } else { 0.0 };
            Sample { t: 5.0 * f64::from(i), x: 200.0 + 8.0 * f64::from(i), y }
        })
        .collect();
    let traj = trajectory(samples, vec![event(0.0, EventKind::StartClick), event(495.0, EventKind::EndClick)]);
    let m = measure_resampled(&traj, &tunnel).unwrap();
    assert_eq!(m.opm, 0.10);
    assert_eq!(m.exits, 2);
}

#[test]
fn decimation_keeps_opm_stable() {
    let docs = trials();
    let cfg = CorpusConfig {
        participants: 2,
        reps: 2,
        seed: 42,
        ..CorpusConfig::default()
    };
    let corpus = simulator::simulate_corpus(&docs, &cfg).unwrap();
    for traj in &corpus {
        let doc = docs.iter().find(|d| d.trial_id == traj.trial_id).unwrap();
        let tunnel = doc.tunnel(traj.flipped).unwrap();
        let fine = resample(traj, 400.0).unwrap();
        let decimated = Trajectory {
            samples: fine.samples.iter().step_by(2).copied().collect(),
            ..fine.clone()
        };
        let a = measure_resampled(&fine, &tunnel).unwrap().opm;
        let b = measure_resampled(&decimated, &tunnel).unwrap().opm;
        assert!((a - b).abs() < 0.002, "{}: {a} vs {b}", traj.trial_id);
    }
}

#[test]
fn summary_equals_recomputation() {
    let docs = trials();
    let cfg = CorpusConfig {
        participants: 3,
        reps: 3,
        seed: 8,
        ..CorpusConfig::default()
    };
    let corpus = simulator::simulate_corpus(&docs, &cfg).unwrap();
    let measures = metrics::analyze_corpus(&corpus, &docs).unwrap();
    let ids: Vec<String> = docs.iter().map(|d| d.trial_id.clone()).collect();
    let rows = summarize(&measures, &ids).unwrap();
    assert_eq!(rows.len(), 9);
    for row in &rows {
        let mut per: Vec<f64> = Vec::new();
        for p in ["P01", "P02", "P03"] {
            let v: Vec<f64> = measures
                .iter()
                .filter(|m| m.trial_id == row.trial_id && m.participant_id == p)
                .map(|m| m.mt_ms)
                .collect();
            per.push(v.iter().sum::<f64>() / v.len() as f64);
        }
        let mean = per.iter().sum::<f64>() / 3.0;
        let sd = (per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((row.mt_mean - mean).abs() < 1e-9 * mean);
        assert!((row.mt_std - sd).abs() < 1e-9 * mean);
        assert_eq!(row.n_participants, 3);
    }
    let one = summarize(&measures[..1], &ids).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].mt_mean, measures[0].mt_ms);
    assert_eq!(one[0].opm_mean, measures[0].opm);
    assert!(summarize(&measures, &ids[..3]).is_err());
    assert_eq!(
        metrics::write_summary_csv(&rows).lines().next().unwrap(),
        "trial_id,n_participants,mt_mean,mt_std,opm_mean,opm_std,v_avg_mean,v_avg_std"
    );
}
