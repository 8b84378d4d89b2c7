//! Sum-of-sines tunnel family, amplitude solving for a target total
//! curvature, grid search over the family and assembly of the 3×3 trial set.
//!
//! A centerline is `x(s) = s`, `y(s) = (a/c)·Σ sin(AM[i]·φ·s)` on
//! `[0, x_max]` with `φ = 2π·np/x_max`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fixtures::{self, K_TARGETS, LENGTH_LEVELS, TRIAL_WIDTH_PX, X_MAX_PX};
use crate::geometry::{self, CurveSamples, Derivatives, Tunnel, DEFAULT_SAMPLES};
use crate::models::TrialFeatures;
use crate::{Error, Result};

/// Amplitude search gives up beyond this amplitude.
pub const AMPLITUDE_LIMIT_PX: f64 = 1e4;

/// Bisection stops once |K − target| is below this.
pub const K_TOLERANCE: f64 = 1e-6;

/// Points in the polyline of an exported trial document.
pub const POLYLINE_POINTS: usize = 2048;

/// Generative parameters of one centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidSpec {
    pub angle_multipliers: Vec<u32>,
    /// Number of periods `np` of the base frequency over `x_max`.
    pub periods: f64,
    pub amplitude: f64,
    pub x_max: f64,
    pub flipped: bool,
}

impl SinusoidSpec {
    pub fn new(angle_multipliers: Vec<u32>, periods: f64) -> Self {
        Self {
            angle_multipliers,
            periods,
            amplitude: 0.0,
            x_max: X_MAX_PX,
            flipped: false,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn components(&self) -> usize {
        self.angle_multipliers.len()
    }

    /// Base angular frequency φ = 2π·np/x_max.
    pub fn phi(&self) -> f64 {
        self.periods * 2.0 * PI / self.x_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.angle_multipliers.is_empty() || self.angle_multipliers.len() > 3 {
            return Err(Error::Parameter(format!(
                "1 to 3 sine components required, got {}",
                self.angle_multipliers.len()
            )));
        }
        if self.angle_multipliers.contains(&0) {
            return Err(Error::Parameter("angle multipliers must be positive".into()));
        }
        if !(self.periods > 0.0) || !self.periods.is_finite() {
            return Err(Error::Parameter(format!("periods must be > 0, got {}", self.periods)));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Parameter(format!(
                "amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if !(self.x_max > 0.0) || !self.x_max.is_finite() {
            return Err(Error::Parameter(format!("x_max must be > 0, got {}", self.x_max)));
        }
        Ok(())
    }

    fn eval(&self, s: f64) -> Derivatives {
        let phi = self.phi();
        let scale = self.amplitude / self.components() as f64;
        let sign = if self.flipped { -1.0 } else { 1.0 };
        let (mut y, mut dy, mut ddy) = (0.0, 0.0, 0.0);
        for &m in &self.angle_multipliers {
            let w = f64::from(m) * phi;
            let (sin, cos) = (w * s).sin_cos();
            y += sin;
            dy += w * cos;
            ddy -= w * w * sin;
        }
        Derivatives {
            x: s,
            y: sign * scale * y,
            dx: 1.0,
            dy: sign * scale * dy,
            ddx: 0.0,
            ddy: sign * scale * ddy,
        }
    }
}

/// Samples the centerline on `[0, x_max]` using closed-form derivatives.
pub fn realize(spec: &SinusoidSpec, n_samples: usize) -> Result<CurveSamples> {
    spec.validate()?;
    geometry::sample_analytic(|s| spec.eval(s), 0.0, spec.x_max, n_samples)
}

fn curvature_of(spec: &SinusoidSpec, amplitude: f64, n_samples: usize) -> Result<f64> {
    let probe = SinusoidSpec {
        amplitude,
        ..spec.clone()
    };
    Ok(geometry::total_curvature(&realize(&probe, n_samples)?))
}

/// Finds the amplitude whose realized curve has total curvature `target_k`.
///
/// Brackets by doubling the upper amplitude from 1 px, then bisects. A
/// decrease of K inside the bracket is reported as [`Error::NonMonotonic`].
pub fn solve_amplitude(base: &SinusoidSpec, target_k: f64, n_samples: usize) -> Result<f64> {
    if !(target_k > 0.0) || !target_k.is_finite() {
        return Err(Error::Parameter(format!("target K must be > 0, got {target_k}")));
    }
    base.validate()?;
    let slack = 1e-9 * target_k;
    let (mut lo, mut k_lo) = (0.0, 0.0);
    let mut hi = 1.0;
    let mut k_hi = curvature_of(base, hi, n_samples)?;
    while k_hi < target_k {
        if k_hi + slack < k_lo {
            return Err(Error::NonMonotonic { lo, hi });
        }
        lo = hi;
        k_lo = k_hi;
        hi *= 2.0;
        if hi > AMPLITUDE_LIMIT_PX {
            return Err(Error::Unreachable {
                target: target_k,
                limit: AMPLITUDE_LIMIT_PX,
            });
        }
        k_hi = curvature_of(base, hi, n_samples)?;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let k_mid = curvature_of(base, mid, n_samples)?;
        if k_mid + slack < k_lo || k_mid > k_hi + slack {
            return Err(Error::NonMonotonic { lo, hi });
        }
        if (k_mid - target_k).abs() <= K_TOLERANCE {
            return Ok(mid);
        }
        if k_mid < target_k {
            lo = mid;
            k_lo = k_mid;
        } else {
            hi = mid;
            k_hi = k_mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Admissible centerline lengths for one L level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBand {
    pub lo: f64,
    pub hi: f64,
}

impl LengthBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Parameter(format!("empty length band [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// `mean ± k·std`.
    pub fn around(mean: f64, std: f64, k: f64) -> Self {
        Self {
            lo: mean - k * std,
            hi: mean + k * std,
        }
    }

    pub fn contains(&self, length: f64) -> bool {
        length >= self.lo && length <= self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// The three reference length levels, each mean ± 3 std.
    pub fn defaults() -> Vec<LengthBand> {
        LENGTH_LEVELS
            .iter()
            .map(|&(m, s)| LengthBand::around(m, s, 3.0))
            .collect()
    }
}

/// The searched region of the sinusoid family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    /// Allowed component counts `c`.
    pub components: Vec<usize>,
    /// Multipliers are drawn from `1..=max_multiplier` as strictly increasing lists.
    pub max_multiplier: u32,
    pub periods: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            components: vec![1, 2, 3],
            max_multiplier: 5,
            periods: (0..=70).map(|i| 0.5 + 0.05 * f64::from(i)).collect(),
        }
    }
}

impl ParamGrid {
    pub fn empty() -> Self {
        Self {
            components: Vec::new(),
            max_multiplier: 0,
            periods: Vec::new(),
        }
    }

    /// Every (multipliers, periods) pair, in a fixed order.
    pub fn points(&self) -> Vec<(Vec<u32>, f64)> {
        let mut lists = Vec::new();
        for &c in &self.components {
            combinations(self.max_multiplier, c, &mut Vec::new(), 1, &mut lists);
        }
        let mut out = Vec::with_capacity(lists.len() * self.periods.len());
        for am in &lists {
            for &np in &self.periods {
                out.push((am.clone(), np));
            }
        }
        out
    }
}

fn combinations(max: u32, c: usize, cur: &mut Vec<u32>, from: u32, out: &mut Vec<Vec<u32>>) {
    if cur.len() == c {
        out.push(cur.clone());
        return;
    }
    for m in from..=max {
        cur.push(m);
        combinations(max, c, cur, m + 1, out);
        cur.pop();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchConfig {
    pub k_targets: Vec<f64>,
    pub length_bands: Vec<LengthBand>,
    pub grid: ParamGrid,
    pub n_samples: usize,
    pub width: f64,
    /// Reject curves whose smallest radius of curvature is below
    /// `min_radius_factor · width`.
    pub min_radius_factor: f64,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            k_targets: K_TARGETS.to_vec(),
            length_bands: LengthBand::defaults(),
            grid: ParamGrid::default(),
            n_samples: DEFAULT_SAMPLES,
            width: TRIAL_WIDTH_PX,
            min_radius_factor: 0.3,
        }
    }
}

/// A fully specified trial: generative parameters plus measured geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: String,
    pub level_l: usize,
    pub level_k: usize,
    pub sinusoid: SinusoidSpec,
    pub width: f64,
    pub length: f64,
    pub total_curvature: f64,
    /// Smallest radius of curvature along the centerline, px.
    pub min_radius: f64,
}

impl TrialSpec {
    /// Realizes `sinusoid` and records its measured length and K.
    pub fn measure(
        level_l: usize,
        level_k: usize,
        sinusoid: SinusoidSpec,
        width: f64,
        n_samples: usize,
    ) -> Result<Self> {
        let curve = realize(&sinusoid, n_samples)?;
        let max_kappa = curve.kappa().iter().copied().fold(0.0, f64::max);
        Ok(Self {
            trial_id: fixtures::trial_label(level_l, level_k),
            level_l,
            level_k,
            width,
            length: geometry::arc_length(&curve),
            total_curvature: geometry::total_curvature(&curve),
            min_radius: if max_kappa > 0.0 { 1.0 / max_kappa } else { f64::INFINITY },
            sinusoid,
        })
    }

    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        out.sinusoid.flipped = !out.sinusoid.flipped;
        out
    }

    pub fn tunnel(&self, n_samples: usize) -> Result<Tunnel> {
        Tunnel::new(realize(&self.sinusoid, n_samples)?, self.width)
    }

    pub fn to_document(&self, polyline_points: usize) -> Result<TrialDocument> {
        let curve = realize(&self.sinusoid, polyline_points.max(geometry::MIN_SAMPLES))?;
        Ok(TrialDocument {
            trial_id: self.trial_id.clone(),
            level_l: self.level_l,
            level_k: self.level_k,
            width_px: self.width,
            x_max_px: self.sinusoid.x_max,
            flipped: self.sinusoid.flipped,
            components: self.sinusoid.components(),
            angle_multipliers: self.sinusoid.angle_multipliers.clone(),
            periods: self.sinusoid.periods,
            amplitude_px: self.sinusoid.amplitude,
            length_px: self.length,
            total_curvature: self.total_curvature,
            polyline: curve.points().to_vec(),
        })
    }
}

/// Serialized trial (`trialspec v1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDocument {
    pub trial_id: String,
    #[serde(rename = "level_L")]
    pub level_l: usize,
    #[serde(rename = "level_K")]
    pub level_k: usize,
    pub width_px: f64,
    pub x_max_px: f64,
    pub flipped: bool,
    pub components: usize,
    pub angle_multipliers: Vec<u32>,
    pub periods: f64,
    pub amplitude_px: f64,
    pub length_px: f64,
    pub total_curvature: f64,
    pub polyline: Vec<[f64; 2]>,
}

impl TrialDocument {
    pub const MIN_POLYLINE: usize = 1024;

    pub fn validate(&self) -> Result<()> {
        if self.polyline.len() < Self::MIN_POLYLINE {
            return Err(Error::InvalidInput(format!(
                "{}: polyline needs >= {} points, got {}",
                self.trial_id,
                Self::MIN_POLYLINE,
                self.polyline.len()
            )));
        }
        if self.components != self.angle_multipliers.len() {
            return Err(Error::InvalidInput(format!(
                "{}: components = {} but {} angle multipliers",
                self.trial_id,
                self.components,
                self.angle_multipliers.len()
            )));
        }
        if !(self.width_px > 0.0) {
            return Err(Error::InvalidInput(format!("{}: width must be > 0", self.trial_id)));
        }
        self.sinusoid().validate()
    }

    pub fn sinusoid(&self) -> SinusoidSpec {
        SinusoidSpec {
            angle_multipliers: self.angle_multipliers.clone(),
            periods: self.periods,
            amplitude: self.amplitude_px,
            x_max: self.x_max_px,
            flipped: self.flipped,
        }
    }

    pub fn to_spec(&self) -> Result<TrialSpec> {
        self.validate()?;
        let curve = CurveSamples::from_polyline(self.polyline.clone())?;
        let max_kappa = curve.kappa().iter().copied().fold(0.0, f64::max);
        Ok(TrialSpec {
            trial_id: self.trial_id.clone(),
            level_l: self.level_l,
            level_k: self.level_k,
            sinusoid: self.sinusoid(),
            width: self.width_px,
            length: self.length_px,
            total_curvature: self.total_curvature,
            min_radius: if max_kappa > 0.0 { 1.0 / max_kappa } else { f64::INFINITY },
        })
    }

    /// L, K and the curvature-cube-root integral of the generating sinusoid.
    pub fn features(&self) -> Result<TrialFeatures> {
        let curve = realize(&self.sinusoid(), DEFAULT_SAMPLES)?;
        Ok(TrialFeatures::new(
            self.trial_id.clone(),
            geometry::arc_length(&curve),
            geometry::total_curvature(&curve),
        )
        .with_nl(geometry::nl_integral(&curve)))
    }

    /// Tunnel built from the stored polyline, mirrored when `flipped` is set
    /// relative to the stored orientation.
    pub fn tunnel(&self, flipped: bool) -> Result<Tunnel> {
        let curve = CurveSamples::from_polyline(self.polyline.clone())?;
        let t = Tunnel::new(curve, self.width_px)?;
        Ok(if flipped { t.flipped() } else { t })
    }
}

pub fn write_trial_set(docs: &[TrialDocument]) -> Result<String> {
    Ok(serde_json::to_string_pretty(docs)?)
}

pub fn read_trial_set(text: &str) -> Result<Vec<TrialDocument>> {
    let docs: Vec<TrialDocument> = serde_json::from_str(text)?;
    for d in &docs {
        d.validate()?;
    }
    Ok(docs)
}

/// Outcome of [`grid_search`].
#[derive(Debug, Clone, Default)]
pub struct GridSearchReport {
    pub candidates: Vec<TrialSpec>,
    /// Cells (`L{l}-K{k}`) for which no candidate was found.
    pub empty_cells: Vec<String>,
    /// Grid points where the amplitude solver failed, with the reason.
    pub solver_failures: Vec<(SinusoidSpec, f64, String)>,
    /// Candidates in a band but rejected by the minimum-radius screen.
    pub rejected_sharp: usize,
}

/// Solves every grid point for every K target and keeps curves whose length
/// falls in one of the bands. Results are ordered by grid point, then target,
/// then band, independent of thread scheduling.
pub fn grid_search(cfg: &GridSearchConfig) -> GridSearchReport {
    let points = cfg.grid.points();
    let jobs: Vec<(usize, Vec<u32>, f64)> = points
        .into_iter()
        .flat_map(|(am, np)| {
            (0..cfg.k_targets.len())
                .map(|k| (k, am.clone(), np))
                .collect::<Vec<_>>()
        })
        .collect();

    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|(level_k, am, np)| {
            let base = SinusoidSpec::new(am.clone(), *np);
            let target = cfg.k_targets[*level_k];
            match solve_amplitude(&base, target, cfg.n_samples) {
                Ok(a) => {
                    let spec = base.with_amplitude(a);
                    let found: Vec<_> = cfg
                        .length_bands
                        .iter()
                        .enumerate()
                        .filter_map(|(level_l, band)| {
                            TrialSpec::measure(level_l, *level_k, spec.clone(), cfg.width, cfg.n_samples)
                                .ok()
                                .filter(|t| band.contains(t.length))
                        })
                        .collect();
                    Ok(found)
                }
                Err(e) => Err((base, target, e.to_string())),
            }
        })
        .collect();

    let mut report = GridSearchReport::default();
    let min_radius = cfg.min_radius_factor * cfg.width;
    for outcome in outcomes {
        match outcome {
            Ok(found) => {
                for t in found {
                    if t.min_radius < min_radius {
                        report.rejected_sharp += 1;
                    } else {
                        report.candidates.push(t);
                    }
                }
            }
            Err(f) => report.solver_failures.push(f),
        }
    }
    for l in 0..cfg.length_bands.len() {
        for k in 0..cfg.k_targets.len() {
            if !report
                .candidates
                .iter()
                .any(|t| t.level_l == l && t.level_k == k)
            {
                report.empty_cells.push(fixtures::trial_label(l, k));
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionPolicy {
    /// The first candidate of each cell, in candidate order.
    First,
    /// Per L level, the combination (one per K cell) with the smallest length
    /// range, ties broken by closeness of the mean length to the band center
    /// and then by candidate order. Only the `per_cell` candidates closest to
    /// the band center are considered in each cell.
    MinLengthSpread { per_cell: usize },
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::MinLengthSpread { per_cell: 48 }
    }
}

/// Picks one candidate per (L, K) cell; output is ordered by (L, K).
pub fn assemble_trialset(
    candidates: &[TrialSpec],
    bands: &[LengthBand],
    n_k_levels: usize,
    policy: SelectionPolicy,
) -> Result<Vec<TrialSpec>> {
    let mut out = Vec::with_capacity(bands.len() * n_k_levels);
    for (level_l, band) in bands.iter().enumerate() {
        let mut cells: Vec<Vec<&TrialSpec>> = Vec::with_capacity(n_k_levels);
        for level_k in 0..n_k_levels {
            let cell: Vec<&TrialSpec> = candidates
                .iter()
                .filter(|t| t.level_l == level_l && t.level_k == level_k)
                .collect();
            if cell.is_empty() {
                return Err(Error::Assembly(fixtures::trial_label(level_l, level_k)));
            }
            cells.push(cell);
        }
        match policy {
            SelectionPolicy::First => out.extend(cells.iter().map(|c| c[0].clone())),
            SelectionPolicy::MinLengthSpread { per_cell } => {
                let center = band.center();
                let trimmed: Vec<Vec<&TrialSpec>> = cells
                    .into_iter()
                    .map(|mut c| {
                        c.sort_by(|a, b| {
                            (a.length - center).abs().total_cmp(&(b.length - center).abs())
                        });
                        c.truncate(per_cell.max(1));
                        c
                    })
                    .collect();
                let pick = best_combination(&trimmed, center);
                out.extend(pick.into_iter().map(|t| t.clone()));
            }
        }
    }
    Ok(out)
}

fn best_combination<'a>(cells: &[Vec<&'a TrialSpec>], center: f64) -> Vec<&'a TrialSpec> {
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    let mut idx = vec![0usize; cells.len()];
    loop {
        let lengths: Vec<f64> = idx.iter().zip(cells).map(|(&i, c)| c[i].length).collect();
        let max = lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = lengths.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let key = (max - min, (mean - center).abs());
        let better = match &best {
            None => true,
            Some((r, d, _)) => key.0 < *r || (key.0 == *r && key.1 < *d),
        };
        if better {
            best = Some((key.0, key.1, idx.clone()));
        }
        // Odometer increment, last cell fastest.
        let mut pos = cells.len();
        loop {
            if pos == 0 {
                let (_, _, chosen) = best.unwrap();
                return chosen.iter().zip(cells).map(|(&i, c)| c[i]).collect();
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < cells[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}
