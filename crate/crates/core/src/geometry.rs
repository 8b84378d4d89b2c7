//! Plane-curve sampling, arc length, curvature integrals and tunnel membership.
//!
//! All integrals use the composite trapezoid rule over the sample grid, so
//! every quantity converges as the grid is refined.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default number of samples for a 1300 px wide curve.
pub const DEFAULT_SAMPLES: usize = 8192;

/// Smallest grid accepted by [`sample_curve`] and [`sample_analytic`].
pub const MIN_SAMPLES: usize = 64;

pub type Point = [f64; 2];

/// Position and first/second derivatives of a parametric curve at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
    pub ddx: f64,
    pub ddy: f64,
}

/// A sampled plane curve.
///
/// `s` is cumulative arc length starting at zero; `kappa` is the unsigned
/// instantaneous curvature at each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSamples {
    points: Vec<Point>,
    s: Vec<f64>,
    kappa: Vec<f64>,
}

impl CurveSamples {
    /// Builds samples from precomputed parts, checking the invariants.
    pub fn from_parts(points: Vec<Point>, s: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput("a curve needs at least 2 points".into()));
        }
        if s.len() != points.len() || kappa.len() != points.len() {
            return Err(Error::InvalidInput(
                "points, arc length and curvature must have equal length".into(),
            ));
        }
        if s[0] != 0.0 {
            return Err(Error::InvalidInput("arc length must start at 0".into()));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("arc length is not strictly increasing".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite point".into()));
        }
        if kappa.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::Domain("curvature must be finite and non-negative".into()));
        }
        Ok(Self { points, s, kappa })
    }

    /// Builds samples from a polyline. Arc length is the running sum of chord
    /// lengths; curvature is the discrete turning angle at each vertex divided
    /// by the mean length of its two adjacent segments.
    pub fn from_polyline(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput("a curve needs at least 2 points".into()));
        }
        let mut s = Vec::with_capacity(points.len());
        s.push(0.0);
        for w in points.windows(2) {
            let last = *s.last().unwrap();
            s.push(last + dist(w[0], w[1]));
        }
        let n = points.len();
        let mut kappa = vec![0.0; n];
        for i in 1..n.saturating_sub(1) {
            let a = sub(points[i], points[i - 1]);
            let b = sub(points[i + 1], points[i]);
            let turn = cross(a, b).atan2(dot(a, b)).abs();
            let half = 0.5 * (norm(a) + norm(b));
            kappa[i] = if half > 0.0 { turn / half } else { 0.0 };
        }
        if n > 2 {
            kappa[0] = kappa[1];
            kappa[n - 1] = kappa[n - 2];
        }
        Self::from_parts(points, s, kappa)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point {
        self.points[0]
    }

    pub fn last(&self) -> Point {
        *self.points.last().unwrap()
    }

    /// Mirror across the horizontal axis (y → −y). Arc length and |κ| are unchanged.
    pub fn flipped(&self) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0], -p[1]]).collect(),
            s: self.s.clone(),
            kappa: self.kappa.clone(),
        }
    }

    /// Point on the polyline at arc length `s` (clamped to the curve).
    pub fn point_at(&self, s: f64) -> Point {
        let (i, t) = self.locate(s);
        if t == 0.0 {
            return self.points[i];
        }
        lerp(self.points[i], self.points[i + 1], t)
    }

    /// Linearly interpolated |κ| at arc length `s` (clamped).
    pub fn kappa_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        if t == 0.0 {
            return self.kappa[i];
        }
        self.kappa[i] + t * (self.kappa[i + 1] - self.kappa[i])
    }

    /// Trapezoid integral of |κ| over [s0, s1] (clamped to the curve).
    pub fn curvature_between(&self, s0: f64, s1: f64) -> f64 {
        let (lo, hi) = if s0 <= s1 { (s0, s1) } else { (s1, s0) };
        let total = self.arc_length();
        let lo = lo.clamp(0.0, total);
        let hi = hi.clamp(0.0, total);
        if hi <= lo {
            return 0.0;
        }
        let (i0, _) = self.locate(lo);
        let (i1, _) = self.locate(hi);
        let mut acc = 0.0;
        let mut prev_s = lo;
        let mut prev_k = self.kappa_at(lo);
        for j in (i0 + 1)..=i1 {
            let sj = self.s[j];
            if sj <= prev_s || sj >= hi {
                continue;
            }
            acc += 0.5 * (prev_k + self.kappa[j]) * (sj - prev_s);
            prev_s = sj;
            prev_k = self.kappa[j];
        }
        acc + 0.5 * (prev_k + self.kappa_at(hi)) * (hi - prev_s)
    }

    pub fn arc_length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    // Segment index and fraction for arc length `s`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let last = self.s.len() - 1;
        if s <= 0.0 {
            return (0, 0.0);
        }
        if s >= self.s[last] {
            return (last, 0.0);
        }
        let i = self.s.partition_point(|&v| v <= s) - 1;
        let t = (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
        (i, t)
    }
}

/// Instantaneous curvature |x′y″ − y′x″| / (x′² + y′²)^{3/2}.
pub fn instantaneous_curvature(d: &Derivatives) -> f64 {
    let speed_sq = d.dx * d.dx + d.dy * d.dy;
    (d.dx * d.ddy - d.dy * d.ddx).abs() / (speed_sq * speed_sq.sqrt())
}

/// Samples a curve whose derivatives are known in closed form.
pub fn sample_analytic<F>(eval: F, t0: f64, t1: f64, n_samples: usize) -> Result<CurveSamples>
where
    F: Fn(f64) -> Derivatives,
{
    check_grid(t0, t1, n_samples)?;
    let h = (t1 - t0) / (n_samples - 1) as f64;
    let derivs: Vec<Derivatives> = (0..n_samples)
        .map(|i| eval(grid_point(t0, t1, h, i, n_samples)))
        .collect();
    assemble(&derivs, h)
}

/// Samples a curve given only its coordinate functions. Derivatives come from
/// second-order central differences with step `h = (t1 − t0)/(n − 1)`, using
/// one-sided second-order stencils at the two ends.
pub fn sample_curve<X, Y>(x_fn: X, y_fn: Y, t0: f64, t1: f64, n_samples: usize) -> Result<CurveSamples>
where
    X: Fn(f64) -> f64,
    Y: Fn(f64) -> f64,
{
    check_grid(t0, t1, n_samples)?;
    let n = n_samples;
    let h = (t1 - t0) / (n - 1) as f64;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid_point(t0, t1, h, i, n);
        let (x, y) = (x_fn(t), y_fn(t));
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Domain(format!("curve is not finite at t = {t}")));
        }
        xs.push(x);
        ys.push(y);
    }
    let (dx, ddx) = differentiate(&xs, h);
    let (dy, ddy) = differentiate(&ys, h);
    let derivs: Vec<Derivatives> = (0..n)
        .map(|i| Derivatives {
            x: xs[i],
            y: ys[i],
            dx: dx[i],
            dy: dy[i],
            ddx: ddx[i],
            ddy: ddy[i],
        })
        .collect();
    assemble(&derivs, h)
}

/// K: trapezoid integral of |κ| with respect to arc length.
pub fn total_curvature(c: &CurveSamples) -> f64 {
    trapezoid(c, |k| k)
}

pub fn arc_length(c: &CurveSamples) -> f64 {
    c.arc_length()
}

/// Trapezoid integral of |κ|^{1/3} with respect to arc length.
pub fn nl_integral(c: &CurveSamples) -> f64 {
    trapezoid(c, f64::cbrt)
}

fn trapezoid(c: &CurveSamples, f: impl Fn(f64) -> f64) -> f64 {
    let vals: Vec<f64> = c.kappa.iter().map(|&k| f(k.abs())).collect();
    c.s.windows(2)
        .zip(vals.windows(2))
        .map(|(s, v)| 0.5 * (v[0] + v[1]) * (s[1] - s[0]))
        .sum()
}

fn check_grid(t0: f64, t1: f64, n_samples: usize) -> Result<()> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::Parameter(format!(
            "n_samples must be >= {MIN_SAMPLES}, got {n_samples}"
        )));
    }
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Parameter(format!("empty parameter domain [{t0}, {t1}]")));
    }
    Ok(())
}

fn grid_point(t0: f64, t1: f64, h: f64, i: usize, n: usize) -> f64 {
    if i == n - 1 {
        t1
    } else {
        t0 + h * i as f64
    }
}

fn differentiate(v: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        d1[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        d2[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
    }
    d1[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d2[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h);
    let m = n - 1;
    d1[m] = (3.0 * v[m] - 4.0 * v[m - 1] + v[m - 2]) / (2.0 * h);
    d2[m] = (2.0 * v[m] - 5.0 * v[m - 1] + 4.0 * v[m - 2] - v[m - 3]) / (h * h);
    (d1, d2)
}

fn assemble(derivs: &[Derivatives], h: f64) -> Result<CurveSamples> {
    let mut points = Vec::with_capacity(derivs.len());
    let mut kappa = Vec::with_capacity(derivs.len());
    let mut speed = Vec::with_capacity(derivs.len());
    for d in derivs {
        let v = (d.dx * d.dx + d.dy * d.dy).sqrt();
        let k = instantaneous_curvature(d);
        if !d.x.is_finite() || !d.y.is_finite() || !v.is_finite() {
            return Err(Error::Domain("curve or derivative is not finite".into()));
        }
        if !k.is_finite() {
            return Err(Error::Domain(
                "curvature undefined where the parametrization is stationary".into(),
            ));
        }
        points.push([d.x, d.y]);
        kappa.push(k);
        speed.push(v);
    }
    let mut s = Vec::with_capacity(derivs.len());
    s.push(0.0);
    for w in speed.windows(2) {
        let last = *s.last().unwrap();
        s.push(last + 0.5 * (w[0] + w[1]) * h);
    }
    CurveSamples::from_parts(points, s, kappa)
}

/// A constant-width tunnel around a sampled centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tunnel {
    centerline: CurveSamples,
    width: f64,
}

/// Result of projecting a point onto a tunnel centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offset {
    /// Perpendicular distance to the nearest centerline segment; positive on
    /// the left of the direction of increasing arc length.
    pub offset: f64,
    pub s_at_nearest: f64,
    pub inside: bool,
}

impl Tunnel {
    pub fn new(centerline: CurveSamples, width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::Parameter(format!("tunnel width must be > 0, got {width}")));
        }
        Ok(Self { centerline, width })
    }

    pub fn centerline(&self) -> &CurveSamples {
        &self.centerline
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn start(&self) -> Point {
        self.centerline.first()
    }

    pub fn end(&self) -> Point {
        self.centerline.last()
    }

    pub fn flipped(&self) -> Self {
        Self {
            centerline: self.centerline.flipped(),
            width: self.width,
        }
    }

    /// Axis-aligned bounding box of the centerline as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        bounds_of(self.centerline.points())
    }
}

/// Nearest-segment projection by linear scan over all centerline segments.
/// Ties resolve to the lowest segment index.
pub fn signed_offset(t: &Tunnel, p: Point) -> Offset {
    let pts = t.centerline.points();
    let mut best = (f64::INFINITY, 0usize, 0.0f64);
    for i in 0..pts.len() - 1 {
        let (d2, u) = project(pts[i], pts[i + 1], p);
        if d2 < best.0 {
            best = (d2, i, u);
        }
    }
    finish_offset(t, p, best.1, best.2)
}

/// Uniform-grid bucket index over centerline segments. Gives exactly the same
/// answers as [`signed_offset`] with far fewer segment tests per query.
#[derive(Debug, Clone)]
pub struct OffsetIndex<'a> {
    tunnel: &'a Tunnel,
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> OffsetIndex<'a> {
    pub fn new(tunnel: &'a Tunnel) -> Self {
        let (lo, hi) = tunnel.bounds();
        let cell = tunnel.width().max(1.0);
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let pts = tunnel.centerline.points();
        let clamp_ix = |v: f64, n: usize| ((v / cell).floor().max(0.0) as usize).min(n - 1);
        for i in 0..pts.len() - 1 {
            let (a, b) = (pts[i], pts[i + 1]);
            let x0 = clamp_ix(a[0].min(b[0]) - lo[0], nx);
            let x1 = clamp_ix(a[0].max(b[0]) - lo[0], nx);
            let y0 = clamp_ix(a[1].min(b[1]) - lo[1], ny);
            let y1 = clamp_ix(a[1].max(b[1]) - lo[1], ny);
            for gy in y0..=y1 {
                for gx in x0..=x1 {
                    buckets[gy * nx + gx].push(i as u32);
                }
            }
        }
        Self {
            tunnel,
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    pub fn tunnel(&self) -> &Tunnel {
        self.tunnel
    }

    pub fn query(&self, p: Point) -> Offset {
        let pts = self.tunnel.centerline.points();
        // Cell of the query point, which may lie outside the grid.
        let fx = ((p[0] - self.origin[0]) / self.cell).floor();
        let fy = ((p[1] - self.origin[1]) / self.cell).floor();
        let (cx, cy) = (fx as i64, fy as i64);
        let max_ring = (self.nx.max(self.ny) as i64) + cx.abs().max(cy.abs()) + 1;
        // Distance from p to the nearest grid-cell boundary of its own cell.
        let inner = {
            let rx = p[0] - (self.origin[0] + fx * self.cell);
            let ry = p[1] - (self.origin[1] + fy * self.cell);
            rx.min(self.cell - rx).min(ry).min(self.cell - ry).max(0.0)
        };
        let mut best = (f64::INFINITY, usize::MAX, 0.0f64);
        let mut seen = Vec::new();
        for ring in 0..=max_ring {
            let mut visit = |gx: i64, gy: i64| {
                if gx < 0 || gy < 0 || gx >= self.nx as i64 || gy >= self.ny as i64 {
                    return;
                }
                seen.extend_from_slice(&self.buckets[gy as usize * self.nx + gx as usize]);
            };
            if ring == 0 {
                visit(cx, cy);
            } else {
                for gx in (cx - ring)..=(cx + ring) {
                    visit(gx, cy - ring);
                    visit(gx, cy + ring);
                }
                for gy in (cy - ring + 1)..=(cy + ring - 1) {
                    visit(cx - ring, gy);
                    visit(cx + ring, gy);
                }
            }
            for &i in &seen {
                let i = i as usize;
                let (d2, u) = project(pts[i], pts[i + 1], p);
                if d2 < best.0 || (d2 == best.0 && i < best.1) {
                    best = (d2, i, u);
                }
            }
            seen.clear();
            // Every segment not yet tested lies entirely outside the visited
            // rings, so it is at least this far from p.
            let guaranteed = inner + ring as f64 * self.cell;
            if best.1 != usize::MAX && best.0.sqrt() < guaranteed {
                break;
            }
        }
        finish_offset(self.tunnel, p, best.1, best.2)
    }
}

fn finish_offset(t: &Tunnel, p: Point, seg: usize, u: f64) -> Offset {
    let pts = t.centerline.points();
    let s = t.centerline.s();
    let (a, b) = (pts[seg], pts[seg + 1]);
    let foot = lerp(a, b, u);
    let d = dist(p, foot);
    let side = cross(sub(b, a), sub(p, a));
    let offset = if side < 0.0 { -d } else { d };
    Offset {
        offset,
        s_at_nearest: s[seg] + u * (s[seg + 1] - s[seg]),
        inside: d <= 0.5 * t.width,
    }
}

// Squared distance from p to segment ab and the clamped projection parameter.
fn project(a: Point, b: Point, p: Point) -> (f64, f64) {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let u = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = lerp(a, b, u);
    let d = sub(p, q);
    (dot(d, d), u)
}

pub(crate) fn bounds_of(pts: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}
