#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use steerlab::curvegen::{self, TrialDocument};
use steerlab::geometry::{CurveSamples, Point, Tunnel};
use steerlab::metrics::{Event, EventKind, Sample, Trajectory};

pub fn trialset() -> Vec<TrialDocument> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/trialset.json");
    curvegen::read_trial_set(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn sine_tunnel() -> Tunnel {
    let pts: Vec<Point> = (0..=400)
        .map(|i| {
            let x = 1300.0 * f64::from(i) / 400.0;
            [x, 100.0 * (std::f64::consts::TAU * x / 1300.0).sin()]
        })
        .collect();
    Tunnel::new(CurveSamples::from_polyline(pts).unwrap(), 50.0).unwrap()
}

pub fn trajectory(samples: Vec<Sample>, events: Vec<Event>) -> Trajectory {
    Trajectory {
        session_id: "s".into(),
        participant_id: "P01".into(),
        trial_id: "X".into(),
        repetition: 0,
        flipped: false,
        samples,
        events,
    }
}

pub fn event(t: f64, kind: EventKind) -> Event {
    Event { t, kind }
}

// Point-to-polyline distance by exhaustive segment scan.
pub fn brute_distance(pts: &[Point], p: Point) -> f64 {
    let mut best = f64::INFINITY;
    for w in pts.windows(2) {
        let (ax, ay, bx, by) = (w[0][0], w[0][1], w[1][0], w[1][1]);
        let (dx, dy) = (bx - ax, by - ay);
        let u = (((p[0] - ax) * dx + (p[1] - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        let d = (p[0] - ax - u * dx).hypot(p[1] - ay - u * dy);
        best = best.min(d);
    }
    best
}

pub fn brute_inside(t: &Tunnel, p: Point) -> bool {
    let pts = t.centerline().points();
    let near = |q: Point| (p[0] - q[0]).hypot(p[1] - q[1]) <= t.width();
    near(pts[0]) || near(pts[pts.len() - 1]) || brute_distance(pts, p) <= 0.5 * t.width()
}

/// A damped random walk around a drifting point of the centerline, sampled
/// every 5 ms, with start and end clicks placed off the sample grid.
pub fn random_trajectory(rng: &mut ChaCha8Rng, t: &Tunnel) -> Trajectory {
    let n = rng.random_range(20..200);
    let pts = t.centerline().points();
    let step = Normal::new(0.0, 8.0).unwrap();
    let mut idx = rng.random_range(0..pts.len()) as f64;
    let mut off = [0.0, 0.0];
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        idx = (idx + rng.random_range(-1.0..4.0)).clamp(0.0, (pts.len() - 1) as f64);
        off[0] += step.sample(rng);
        off[1] += step.sample(rng);
        off[0] *= 0.97;
        off[1] *= 0.97;
        let c = pts[idx as usize];
        samples.push(Sample {
            t: 5.0 * i as f64,
            x: c[0] + off[0],
            y: c[1] + off[1],
        });
    }
    let a = rng.random_range(0..n / 3);
    let b = rng.random_range(2 * n / 3..n);
    let start = samples[a].t + rng.random_range(0.0..5.0);
    let end = samples[b].t - rng.random_range(0.0..5.0);
    trajectory(samples, vec![event(start, EventKind::StartClick), event(end, EventKind::EndClick)])
}

pub struct BruteMeasures {
    pub opm: f64,
    pub exits: usize,
    pub path: f64,
    pub mt: f64,
}

/// OPM, exits, path and movement time straight from the definitions.
pub fn brute_measures(traj: &Trajectory, tunnel: &Tunnel) -> BruteMeasures {
    let start = traj.events.iter().find(|e| e.kind == EventKind::StartClick).unwrap().t;
    let end = traj.events.iter().find(|e| e.kind == EventKind::EndClick).unwrap().t;
    let window: Vec<&Sample> = traj.samples.iter().filter(|s| s.t >= start && s.t <= end).collect();
    let inside: Vec<bool> = window.iter().map(|s| brute_inside(tunnel, [s.x, s.y])).collect();
    let opm = inside.iter().filter(|i| !**i).count() as f64 / inside.len() as f64;
    let mut exits = 0;
    for i in 1..inside.len() {
        if inside[i - 1] && !inside[i] {
            exits += 1;
        }
    }
    let mut path = 0.0;
    for i in 1..window.len() {
        path += (window[i].x - window[i - 1].x).hypot(window[i].y - window[i - 1].y);
    }
    BruteMeasures {
        opm,
        exits,
        path,
        mt: end - start,
    }
}

/// Length, total curvature and ∫κ^(1/3)ds of a sum-of-sines centerline by
/// the midpoint rule on a million cells with closed-form derivatives.
pub fn fine_sinusoid(multipliers: &[u32], periods: f64, amplitude: f64, x_max: f64) -> (f64, f64, f64) {
    let n = 1_000_000;
    let h = x_max / f64::from(n);
    let phi = periods * std::f64::consts::TAU / x_max;
    let scale = amplitude / multipliers.len() as f64;
    let (mut len, mut k, mut nl) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = (f64::from(i) + 0.5) * h;
        let (mut dy, mut ddy) = (0.0, 0.0);
        for &m in multipliers {
            let w = f64::from(m) * phi;
            dy += scale * w * (w * x).cos();
            ddy -= scale * w * w * (w * x).sin();
        }
        let speed = (1.0 + dy * dy).sqrt();
        let kappa = ddy.abs() / (speed * speed * speed);
        len += speed * h;
        k += kappa * speed * h;
        nl += kappa.cbrt() * speed * h;
    }
    (len, k, nl)
}
