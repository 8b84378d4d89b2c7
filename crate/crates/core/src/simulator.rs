//! Seeded synthetic steering agent for pipeline tests and planted-model checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvegen::TrialDocument;
use crate::fitting::RepetitionCell;
use crate::geometry::{Point, Tunnel};
use crate::metrics::{Event, EventKind, Sample, Trajectory, RESAMPLE_HZ};
use crate::models::{self, Coefficients, ModelForm, TrialFeatures};
use crate::{Error, Result};

/// Lag-one correlation of the lateral wobble between 5 ms steps.
pub const NOISE_CORRELATION: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Speed on a straight path, px/ms.
    pub base_speed: f64,
    /// Gain `r` in `v = base_speed·(1 + r·|κ|)^(−β)`, px.
    pub curvature_gain: f64,
    /// Exponent `β`.
    pub slowdown: f64,
    pub lateral_noise_sd: f64,
    /// Arc length ahead of the cursor over which |κ| is averaged, px.
    pub lookahead: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            base_speed: 0.30,
            curvature_gain: 30.0,
            slowdown: 1.0,
            lateral_noise_sd: 6.0,
            lookahead: 100.0,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_speed > 0.0) || !self.base_speed.is_finite() {
            return Err(Error::Parameter(format!("base_speed must be > 0, got {}", self.base_speed)));
        }
        if !(self.lookahead > 0.0) {
            return Err(Error::Parameter(format!("lookahead must be > 0, got {}", self.lookahead)));
        }
        if !(self.lateral_noise_sd >= 0.0) {
            return Err(Error::Parameter(format!(
                "lateral_noise_sd must be >= 0, got {}",
                self.lateral_noise_sd
            )));
        }
        if !(self.curvature_gain >= 0.0) || !(self.slowdown >= 0.0) {
            return Err(Error::Parameter("curvature gain and slowdown must be >= 0".into()));
        }
        Ok(())
    }
}

/// Labels attached to a simulated log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub session_id: String,
    pub participant_id: String,
    pub trial_id: String,
    pub repetition: usize,
    pub flipped: bool,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of the random stream for one (participant, trial, repetition).
pub fn stream_seed(seed: u64, participant: &str, trial: &str, repetition: usize) -> u64 {
    let mut h = mix(seed);
    h = mix(h ^ fnv1a(participant));
    h = mix(h ^ fnv1a(trial));
    mix(h ^ repetition as u64)
}

// Cumulative ∫|κ|ds at each centerline vertex.
struct CurvatureTable {
    s: Vec<f64>,
    cum: Vec<f64>,
}

impl CurvatureTable {
    fn new(t: &Tunnel) -> Self {
        let c = t.centerline();
        let (s, k) = (c.s(), c.kappa());
        let mut cum = Vec::with_capacity(s.len());
        cum.push(0.0);
        for i in 1..s.len() {
            cum.push(cum[i - 1] + 0.5 * (k[i - 1] + k[i]) * (s[i] - s[i - 1]));
        }
        Self { s: s.to_vec(), cum }
    }

    fn at(&self, s: f64) -> f64 {
        let last = self.s.len() - 1;
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.s[last] {
            return self.cum[last];
        }
        let i = self.s.partition_point(|&v| v <= s) - 1;
        let u = (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
        self.cum[i] + u * (self.cum[i + 1] - self.cum[i])
    }

    fn mean_between(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = (a.min(b).max(0.0), a.max(b).min(*self.s.last().unwrap()));
        if hi - lo < 1e-9 {
            return 0.0;
        }
        (self.at(hi) - self.at(lo)) / (hi - lo)
    }
}

fn unit_normal(t: &Tunnel, s: f64) -> Point {
    let c = t.centerline();
    let h = 0.5;
    let total = c.arc_length();
    let a = c.point_at((s - h).max(0.0));
    let b = c.point_at((s + h).min(total));
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let n = (dx * dx + dy * dy).sqrt();
    if n == 0.0 {
        [0.0, 1.0]
    } else {
        [-dy / n, dx / n]
    }
}

/// One round trip: start at the beginning of the centerline, travel to the
/// far end (flag click), return (end click). Progress along the centerline
/// runs at `base_speed·(1 + r·mean|κ|)^(−β)`, with the mean taken over the
/// lookahead window in the direction of travel. A lateral AR(1) wobble of
/// stationary sd `lateral_noise_sd` displaces the cursor along the normal.
/// Samples are at 200 Hz from t = 0.
pub fn simulate_trial(tunnel: &Tunnel, cfg: &AgentConfig, meta: &TrialMeta) -> Result<Trajectory> {
    cfg.validate()?;
    let length = tunnel.centerline().arc_length();
    if cfg.lookahead > length {
        return Err(Error::Parameter(format!(
            "lookahead {} exceeds tunnel length {length}",
            cfg.lookahead
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        cfg.seed,
        &meta.participant_id,
        &meta.trial_id,
        meta.repetition,
    ));
    let table = CurvatureTable::new(tunnel);
    let dt = 1000.0 / RESAMPLE_HZ;
    let innovation = cfg.lateral_noise_sd * (1.0 - NOISE_CORRELATION * NOISE_CORRELATION).sqrt();

    let speed = |progress: f64| {
        let (s, dir) = if progress < length {
            (progress, 1.0)
        } else {
            (2.0 * length - progress, -1.0)
        };
        let k = table.mean_between(s, s + dir * cfg.lookahead);
        cfg.base_speed * (1.0 + cfg.curvature_gain * k).powf(-cfg.slowdown)
    };
    let position = |progress: f64, lateral: f64| {
        let s = if progress < length { progress } else { 2.0 * length - progress }.clamp(0.0, length);
        let p = tunnel.centerline().point_at(s);
        if lateral == 0.0 {
            return p;
        }
        let n = unit_normal(tunnel, s);
        [p[0] + lateral * n[0], p[1] + lateral * n[1]]
    };

    let mut samples = Vec::new();
    let mut events = vec![Event {
        t: 0.0,
        kind: EventKind::StartClick,
    }];
    let mut progress = 0.0;
    let mut lateral = 0.0;
    let mut flagged = false;
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        let done = progress >= 2.0 * length;
        // Clicks are made on the centerline.
        let at_click = done || (!flagged && progress >= length);
        let p = position(progress.min(2.0 * length), if at_click { 0.0 } else { lateral });
        samples.push(Sample { t, x: p[0], y: p[1] });
        if !flagged && progress >= length {
            flagged = true;
            events.push(Event {
                t,
                kind: EventKind::FlagClick,
            });
        }
        if done {
            events.push(Event {
                t,
                kind: EventKind::EndClick,
            });
            break;
        }
        let step = speed(progress) * dt;
        // Excess beyond the far end carries into the return leg, except that
        // the flag sample itself lands on the end point.
        progress = if !flagged && progress + step > length {
            length
        } else {
            progress + step
        };
        if innovation > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            lateral = NOISE_CORRELATION * lateral + innovation * z;
        }
        k += 1;
    }
    Ok(Trajectory {
        session_id: meta.session_id.clone(),
        participant_id: meta.participant_id.clone(),
        trial_id: meta.trial_id.clone(),
        repetition: meta.repetition,
        flipped: meta.flipped,
        samples,
        events,
    })
}

/// Between-participant spread of agent parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Log-scale sd of each participant's base speed.
    pub speed_log_sd: f64,
    /// Log-scale sd of each participant's lateral noise.
    pub noise_log_sd: f64,
    /// Log-scale sd of a per-trial speed factor.
    pub trial_speed_log_sd: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            speed_log_sd: 0.15,
            noise_log_sd: 0.2,
            trial_speed_log_sd: 0.1,
        }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Self {
            speed_log_sd: 0.0,
            noise_log_sd: 0.0,
            trial_speed_log_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub participants: usize,
    pub reps: usize,
    pub agent: AgentConfig,
    pub jitter: Jitter,
    /// Draw each trial's orientation at random; otherwise never flip.
    pub random_flips: bool,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            participants: 20,
            reps: 15,
            agent: AgentConfig::default(),
            jitter: Jitter::default(),
            random_flips: true,
            seed: 0,
        }
    }
}

pub fn participant_id(index: usize) -> String {
    format!("P{:02}", index + 1)
}

fn lognormal_factor(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 1.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    (sd * z).exp()
}

/// Logs ordered by participant, then trial, then repetition.
pub fn simulate_corpus(trials: &[TrialDocument], cfg: &CorpusConfig) -> Result<Vec<Trajectory>> {
    cfg.agent.validate()?;
    if cfg.participants == 0 || cfg.reps == 0 || trials.is_empty() {
        return Err(Error::Parameter("participants, reps and trials must be non-empty".into()));
    }
    let tunnels: Vec<(Tunnel, Tunnel)> = trials
        .iter()
        .map(|d| Ok((d.tunnel(false)?, d.tunnel(true)?)))
        .collect::<Result<_>>()?;
    let agents: Vec<AgentConfig> = (0..cfg.participants)
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &participant_id(p), "", 0));
            AgentConfig {
                base_speed: cfg.agent.base_speed * lognormal_factor(&mut rng, cfg.jitter.speed_log_sd),
                lateral_noise_sd: cfg.agent.lateral_noise_sd
                    * lognormal_factor(&mut rng, cfg.jitter.noise_log_sd),
                seed: cfg.seed,
                ..cfg.agent.clone()
            }
        })
        .collect();
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.participants)
        .flat_map(|p| (0..trials.len()).flat_map(move |t| (0..cfg.reps).map(move |r| (p, t, r))))
        .collect();
    jobs.par_iter()
        .map(|&(p, t, r)| {
            let pid = participant_id(p);
            let doc = &trials[t];
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed ^ 0x5eed, &pid, &doc.trial_id, r));
            let flipped = cfg.random_flips && rng.random::<bool>();
            let agent = AgentConfig {
                base_speed: agents[p].base_speed * lognormal_factor(&mut rng, cfg.jitter.trial_speed_log_sd),
                ..agents[p].clone()
            };
            let meta = TrialMeta {
                session_id: format!("sim-{}", cfg.seed),
                participant_id: pid,
                trial_id: doc.trial_id.clone(),
                repetition: r,
                flipped,
            };
            let tunnel = if flipped { &tunnels[t].1 } else { &tunnels[t].0 };
            simulate_trial(tunnel, &agent, &meta)
        })
        .collect()
}

/// Per-repetition movement times drawn from `form` with Gaussian noise.
pub fn planted_repetitions(
    form: &ModelForm,
    coef: &Coefficients,
    features: &[TrialFeatures],
    reps: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<RepetitionCell>> {
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    features
        .iter()
        .map(|f| {
            let mean = models::predict(form, coef, f)?;
            let mt = (0..reps)
                .map(|_| if noise_sd > 0.0 { mean + noise.sample(&mut rng) } else { mean })
                .collect();
            Ok(RepetitionCell {
                features: TrialFeatures {
                    mt_mean: None,
                    ..f.clone()
                },
                mt,
            })
        })
        .collect()
}

/// Cell means drawn from `form` with Gaussian noise of sd `noise_sd`.
pub fn planted_means(
    form: &ModelForm,
    coef: &Coefficients,
    features: &[TrialFeatures],
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<TrialFeatures>> {
    Ok(planted_repetitions(form, coef, features, 1, noise_sd, seed)?
        .into_iter()
        .map(|c| c.features.with_mt(c.mt[0]))
        .collect())
}
