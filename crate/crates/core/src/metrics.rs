//! Trajectory logs and the dependent measures computed from them.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvegen::TrialDocument;
use crate::geometry::{self, OffsetIndex, Point, Tunnel};
use crate::{Error, Result};

pub const RESAMPLE_HZ: f64 = 200.0;
pub const EFFECTIVE_WIDTH_FACTOR: f64 = 4.133;
pub const TRAJLOG_FORMAT: &str = "trajlog v1";
pub const MEASURES_HEADER: &str = "trial_id,participant_id,mt_ms,opm,v_avg,exits,w_e,path_px";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StartClick,
    FlagClick,
    EndClick,
    TunnelExit,
    TunnelReenter,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::StartClick => "start_click",
            EventKind::FlagClick => "flag_click",
            EventKind::EndClick => "end_click",
            EventKind::TunnelExit => "tunnel_exit",
            EventKind::TunnelReenter => "tunnel_reenter",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "start_click" => EventKind::StartClick,
            "flag_click" => EventKind::FlagClick,
            "end_click" => EventKind::EndClick,
            "tunnel_exit" => EventKind::TunnelExit,
            "tunnel_reenter" => EventKind::TunnelReenter,
            other => return Err(Error::InvalidInput(format!("unknown event `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Sample {
    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

/// One recorded trial. Times are in ms, positions in task px.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub session_id: String,
    pub participant_id: String,
    pub trial_id: String,
    pub repetition: usize,
    pub flipped: bool,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
}

impl Trajectory {
    /// Checks timestamps and event order. Incomplete trials (no end click
    /// yet) are valid here; measures reject them.
    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidInput(format!(
                    "timestamps must strictly increase: {} then {}",
                    w[0].t, w[1].t
                )));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite sample at t = {}", s.t)));
        }
        for w in self.events.windows(2) {
            if w[1].t < w[0].t {
                return Err(Error::InvalidInput("events out of time order".into()));
            }
        }
        // start, [flag], end with exits and re-entries alternating in between.
        let mut stage = 0u8;
        let mut outside = false;
        for e in &self.events {
            match e.kind {
                EventKind::StartClick if stage == 0 => stage = 1,
                EventKind::FlagClick if stage == 1 => stage = 2,
                EventKind::EndClick if stage == 1 || stage == 2 => stage = 3,
                EventKind::TunnelExit if (stage == 1 || stage == 2) && !outside => outside = true,
                EventKind::TunnelReenter if (stage == 1 || stage == 2) && outside => outside = false,
                kind => {
                    return Err(Error::InvalidInput(format!("event {kind} at t = {} is out of order", e.t)))
                }
            }
        }
        Ok(())
    }

    pub fn event_time(&self, kind: EventKind) -> Option<f64> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.t)
    }

    /// `(start_click, end_click)` times.
    pub fn window(&self) -> Result<(f64, f64)> {
        let start = self
            .event_time(EventKind::StartClick)
            .ok_or_else(|| Error::IncompleteTrial(format!("{}: no start_click", self.trial_id)))?;
        let end = self
            .event_time(EventKind::EndClick)
            .ok_or_else(|| Error::IncompleteTrial(format!("{}: no end_click", self.trial_id)))?;
        Ok((start, end))
    }

    fn samples_between(&self, t0: f64, t1: f64) -> &[Sample] {
        let lo = self.samples.partition_point(|s| s.t < t0);
        let hi = self.samples.partition_point(|s| s.t <= t1);
        &self.samples[lo..hi.max(lo)]
    }

    /// Serializes as `trajlog v1`. Events are attached to the sample with the
    /// same timestamp; an event without one gets its own record at the
    /// position interpolated from the neighboring samples.
    pub fn to_trajlog(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{TRAJLOG_FORMAT},session_id={},participant_id={},trial_id={},repetition={},flipped={}",
            self.session_id, self.participant_id, self.trial_id, self.repetition, self.flipped
        );
        let mut ev = self.events.iter().peekable();
        let emit_event_only = |out: &mut String, e: &Event| {
            let p = interpolate(&self.samples, e.t);
            let _ = writeln!(out, "{},{},{},{}", e.t, p[0], p[1], e.kind);
        };
        for s in &self.samples {
            while let Some(e) = ev.peek() {
                if e.t < s.t {
                    emit_event_only(&mut out, e);
                    ev.next();
                } else {
                    break;
                }
            }
            let _ = write!(out, "{},{},{}", s.t, s.x, s.y);
            if let Some(e) = ev.peek() {
                if e.t == s.t {
                    let _ = write!(out, ",{}", e.kind);
                    ev.next();
                }
            }
            out.push('\n');
            while let Some(e) = ev.peek() {
                if e.t == s.t {
                    emit_event_only(&mut out, e);
                    ev.next();
                } else {
                    break;
                }
            }
        }
        for e in ev {
            emit_event_only(&mut out, e);
        }
        out
    }

    /// Parses a `trajlog v1` document. Repeated timestamps are only allowed
    /// for event-only records at the same position, which carry extra events.
    pub fn parse_trajlog(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty log".into(),
        })?;
        let mut fields = header.trim().split(',');
        if fields.next().map(str::trim) != Some(TRAJLOG_FORMAT) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `{TRAJLOG_FORMAT}` header"),
            });
        }
        let mut kv = std::collections::BTreeMap::new();
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("malformed header field `{f}`"),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| {
            kv.remove(k).ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("header is missing `{k}`"),
            })
        };
        let session_id = take("session_id")?;
        let participant_id = take("participant_id")?;
        let trial_id = take("trial_id")?;
        let repetition = take("repetition")?.parse().map_err(|_| Error::Parse {
            line: 1,
            msg: "repetition must be a non-negative integer".into(),
        })?;
        let flipped = take("flipped")?.parse().map_err(|_| Error::Parse {
            line: 1,
            msg: "flipped must be true or false".into(),
        })?;
        if let Some(k) = kv.keys().next() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unknown header field `{k}`"),
            });
        }

        let mut samples: Vec<Sample> = Vec::new();
        let mut events = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || (samples.is_empty() && events.is_empty() && line.starts_with("t_ms")) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 && cols.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 3 or 4 fields, got {}", cols.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("`{s}` is not a finite number"),
                    })
            };
            let sample = Sample {
                t: num(cols[0])?,
                x: num(cols[1])?,
                y: num(cols[2])?,
            };
            let event = match cols.get(3) {
                Some(e) if !e.is_empty() => Some(e.parse::<EventKind>().map_err(|err| Error::Parse {
                    line: line_no,
                    msg: err.to_string(),
                })?),
                _ => None,
            };
            match samples.last() {
                Some(prev) if sample.t == prev.t && event.is_some() && sample.point() == prev.point() => {}
                Some(prev) if sample.t <= prev.t => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("timestamp {} does not increase (previous {})", sample.t, prev.t),
                    })
                }
                _ => samples.push(sample),
            }
            if let Some(kind) = event {
                events.push(Event { t: sample.t, kind });
            }
        }
        let traj = Trajectory {
            session_id,
            participant_id,
            trial_id,
            repetition,
            flipped,
            samples,
            events,
        };
        traj.validate()?;
        Ok(traj)
    }
}

fn interpolate(samples: &[Sample], t: f64) -> Point {
    match samples.len() {
        0 => [0.0, 0.0],
        _ => {
            let i = samples.partition_point(|s| s.t < t);
            if i < samples.len() && samples[i].t == t {
                samples[i].point()
            } else if i == 0 {
                samples[0].point()
            } else if i == samples.len() {
                samples[i - 1].point()
            } else {
                let (a, b) = (samples[i - 1], samples[i]);
                let u = (t - a.t) / (b.t - a.t);
                [a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)]
            }
        }
    }
}

/// Natural cubic spline through `(t_i, v_i)`.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    t: Vec<f64>,
    v: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(t: &[f64], v: &[f64]) -> Result<Self> {
        let n = t.len();
        if n != v.len() || n < 2 {
            return Err(Error::InvalidInput("spline needs >= 2 matching knots".into()));
        }
        for w in t.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!("knots must strictly increase: {} then {}", w[0], w[1])));
            }
        }
        // Second derivatives from the tridiagonal system, m_0 = m_{n-1} = 0.
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                diag[j] = 2.0 * (h0 + h1);
                upper[j] = h1;
                rhs[j] = 6.0 * ((v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0);
            }
            for j in 1..k {
                let lower = t[j + 1] - t[j];
                let w = lower / diag[j - 1];
                diag[j] -= w * upper[j - 1];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - upper[j] * m[j + 2]) / diag[j];
            }
        }
        Ok(Self {
            t: t.to_vec(),
            v: v.to_vec(),
            m,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        let i = self.t.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        if a == 0.0 {
            return self.v[i + 1];
        }
        if b == 0.0 {
            return self.v[i];
        }
        a * self.v[i]
            + b * self.v[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Resamples positions onto a uniform `1000/rate_hz` ms grid starting at the
/// first sample, using natural cubic splines in x(t) and y(t). Events are
/// kept as recorded.
pub fn resample(traj: &Trajectory, rate_hz: f64) -> Result<Trajectory> {
    if !(rate_hz > 0.0) {
        return Err(Error::Parameter(format!("rate must be > 0, got {rate_hz}")));
    }
    if traj.samples.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "resampling needs >= 4 samples, got {}",
            traj.samples.len()
        )));
    }
    let t: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let sx = NaturalSpline::new(&t, &traj.samples.iter().map(|s| s.x).collect::<Vec<_>>())?;
    let sy = NaturalSpline::new(&t, &traj.samples.iter().map(|s| s.y).collect::<Vec<_>>())?;
    let dt = 1000.0 / rate_hz;
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let steps = ((t1 - t0) / dt + 1e-9).floor() as usize;
    let samples = (0..=steps)
        .map(|i| {
            let ti = t0 + i as f64 * dt;
            Sample {
                t: ti,
                x: sx.eval(ti),
                y: sy.eval(ti),
            }
        })
        .collect();
    Ok(Trajectory {
        samples,
        ..traj.clone()
    })
}

/// End click minus start click, in ms.
pub fn movement_time(traj: &Trajectory) -> Result<f64> {
    let (start, end) = traj.window()?;
    Ok(end - start)
}

/// Cursor path length over the samples inside the trial window.
pub fn path_distance(traj: &Trajectory) -> Result<f64> {
    let (start, end) = traj.window()?;
    Ok(polyline_length(traj.samples_between(start, end)))
}

fn polyline_length(samples: &[Sample]) -> f64 {
    samples
        .windows(2)
        .map(|w| geometry::dist(w[0].point(), w[1].point()))
        .sum()
}

/// Path distance divided by movement time, in px/ms.
pub fn average_speed(traj: &Trajectory) -> Result<f64> {
    let mt = movement_time(traj)?;
    if !(mt > 0.0) {
        return Err(Error::IncompleteTrial(format!("{}: movement time must be > 0", traj.trial_id)));
    }
    Ok(path_distance(traj)? / mt)
}

/// `4.133 ×` the sample standard deviation of the offsets.
pub fn effective_width(offsets: &[f64]) -> Result<f64> {
    if offsets.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "effective width needs >= 2 offsets, got {}",
            offsets.len()
        )));
    }
    let n = offsets.len() as f64;
    let mean = offsets.iter().sum::<f64>() / n;
    let var = offsets.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>() / (n - 1.0);
    Ok(EFFECTIVE_WIDTH_FACTOR * var.sqrt())
}

/// Inside/outside classification. Points within one width of the start or
/// end of the centerline always count as inside.
pub struct Membership<'a> {
    index: OffsetIndex<'a>,
}

impl<'a> Membership<'a> {
    pub fn new(tunnel: &'a Tunnel) -> Self {
        Self {
            index: OffsetIndex::new(tunnel),
        }
    }

    pub fn in_button_disc(tunnel: &Tunnel, p: Point) -> bool {
        let r = tunnel.width();
        geometry::dist(p, tunnel.start()) <= r || geometry::dist(p, tunnel.end()) <= r
    }

    pub fn offset(&self, p: Point) -> geometry::Offset {
        self.index.query(p)
    }

    pub fn inside(&self, p: Point) -> bool {
        Self::in_button_disc(self.index.tunnel(), p) || self.index.query(p).inside
    }
}

fn window_samples(traj: &Trajectory) -> Result<&[Sample]> {
    let (start, end) = traj.window()?;
    let w = traj.samples_between(start, end);
    if w.is_empty() {
        return Err(Error::IncompleteTrial(format!("{}: no samples in the trial window", traj.trial_id)));
    }
    Ok(w)
}

/// Fraction of in-window samples outside the tunnel.
pub fn out_of_path_movement(traj: &Trajectory, tunnel: &Tunnel) -> Result<f64> {
    let m = Membership::new(tunnel);
    let inside: Vec<bool> = window_samples(traj)?.iter().map(|s| m.inside(s.point())).collect();
    Ok(opm_of(&inside))
}

fn opm_of(inside: &[bool]) -> f64 {
    inside.iter().filter(|&&i| !i).count() as f64 / inside.len() as f64
}

/// Inside-to-outside transitions among in-window samples.
pub fn count_exits(traj: &Trajectory, tunnel: &Tunnel) -> Result<usize> {
    let m = Membership::new(tunnel);
    let inside: Vec<bool> = window_samples(traj)?.iter().map(|s| m.inside(s.point())).collect();
    Ok(exits_of(&inside))
}

fn exits_of(inside: &[bool]) -> usize {
    inside.windows(2).filter(|w| w[0] && !w[1]).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMeasures {
    pub mt_ms: f64,
    pub opm: f64,
    pub v_avg: f64,
    pub exits: usize,
    pub path_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeasures {
    pub trial_id: String,
    pub participant_id: String,
    pub repetition: usize,
    pub mt_ms: f64,
    pub opm: f64,
    pub v_avg: f64,
    pub exits: usize,
    pub w_e: f64,
    pub path_px: f64,
    pub outbound: Option<PhaseMeasures>,
    pub inbound: Option<PhaseMeasures>,
}

fn phase(samples: &[Sample], inside: &[bool], t0: f64, t1: f64) -> Option<PhaseMeasures> {
    let lo = samples.partition_point(|s| s.t < t0);
    let hi = samples.partition_point(|s| s.t <= t1).max(lo);
    let mt = t1 - t0;
    if hi == lo || !(mt > 0.0) {
        return None;
    }
    let path = polyline_length(&samples[lo..hi]);
    Some(PhaseMeasures {
        mt_ms: mt,
        opm: opm_of(&inside[lo..hi]),
        v_avg: path / mt,
        exits: exits_of(&inside[lo..hi]),
        path_px: path,
    })
}

/// All measures of one trajectory, which must already be resampled.
pub fn measure_resampled(traj: &Trajectory, tunnel: &Tunnel) -> Result<TrialMeasures> {
    let m = Membership::new(tunnel);
    let samples = window_samples(traj)?;
    let (start, end) = traj.window()?;
    let mt = end - start;
    if !(mt > 0.0) {
        return Err(Error::IncompleteTrial(format!("{}: movement time must be > 0", traj.trial_id)));
    }
    let path = polyline_length(samples);
    let mut offsets = Vec::with_capacity(samples.len());
    let mut inside = Vec::with_capacity(samples.len());
    for s in samples {
        let o = m.offset(s.point());
        offsets.push(o.offset);
        inside.push(o.inside || Membership::in_button_disc(tunnel, s.point()));
    }
    let (outbound, inbound) = match traj.event_time(EventKind::FlagClick) {
        Some(flag) => (
            phase(samples, &inside, start, flag),
            phase(samples, &inside, flag, end),
        ),
        None => (None, None),
    };
    Ok(TrialMeasures {
        trial_id: traj.trial_id.clone(),
        participant_id: traj.participant_id.clone(),
        repetition: traj.repetition,
        mt_ms: mt,
        opm: opm_of(&inside),
        v_avg: path / mt,
        exits: exits_of(&inside),
        w_e: if offsets.len() >= 2 { effective_width(&offsets)? } else { 0.0 },
        path_px: path,
        outbound,
        inbound,
    })
}

/// Resamples at 200 Hz and measures against `tunnel`.
pub fn analyze_trajectory(raw: &Trajectory, tunnel: &Tunnel) -> Result<TrialMeasures> {
    raw.validate()?;
    measure_resampled(&resample(raw, RESAMPLE_HZ)?, tunnel)
}

/// Parses a log, looks up its trial and measures it in the logged orientation.
pub fn analyze_log(text: &str, trials: &[TrialDocument]) -> Result<TrialMeasures> {
    let traj = Trajectory::parse_trajlog(text)?;
    let doc = trials
        .iter()
        .find(|d| d.trial_id == traj.trial_id)
        .ok_or_else(|| Error::UnknownTrial(traj.trial_id.clone()))?;
    let tunnel = doc.tunnel(traj.flipped)?;
    analyze_trajectory(&traj, &tunnel)
}

/// Measures every trajectory against its trial in the logged orientation.
/// Runs in parallel; output order follows `trajs`.
pub fn analyze_corpus(trajs: &[Trajectory], trials: &[TrialDocument]) -> Result<Vec<TrialMeasures>> {
    let tunnels: Vec<(Tunnel, Tunnel)> = trials
        .iter()
        .map(|d| Ok((d.tunnel(false)?, d.tunnel(true)?)))
        .collect::<Result<_>>()?;
    trajs
        .par_iter()
        .map(|t| {
            let i = trials
                .iter()
                .position(|d| d.trial_id == t.trial_id)
                .ok_or_else(|| Error::UnknownTrial(t.trial_id.clone()))?;
            let tunnel = if t.flipped { &tunnels[i].1 } else { &tunnels[i].0 };
            analyze_trajectory(t, tunnel)
        })
        .collect()
}

pub fn write_measures_csv(rows: &[TrialMeasures]) -> String {
    let mut out = String::from(MEASURES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.trial_id, r.participant_id, r.mt_ms, r.opm, r.v_avg, r.exits, r.w_e, r.path_px
        );
    }
    out
}

#[derive(Debug, Deserialize)]
struct MeasureRecord {
    trial_id: String,
    participant_id: String,
    mt_ms: f64,
    opm: f64,
    v_avg: f64,
    exits: usize,
    w_e: f64,
    path_px: f64,
}

/// Reads a measures table. Repetition indices are not stored and come back
/// numbered by order of appearance per (trial, participant).
pub fn read_measures_csv<R: std::io::Read>(reader: R) -> Result<Vec<TrialMeasures>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: Vec<TrialMeasures> = Vec::new();
    for rec in rdr.deserialize() {
        let r: MeasureRecord = rec?;
        let repetition = out
            .iter()
            .filter(|m| m.trial_id == r.trial_id && m.participant_id == r.participant_id)
            .count();
        out.push(TrialMeasures {
            trial_id: r.trial_id,
            participant_id: r.participant_id,
            repetition,
            mt_ms: r.mt_ms,
            opm: r.opm,
            v_avg: r.v_avg,
            exits: r.exits,
            w_e: r.w_e,
            path_px: r.path_px,
            outbound: None,
            inbound: None,
        });
    }
    Ok(out)
}

/// Visit counts on an axis-aligned grid. `counts[row][col]`, row 0 at
/// `origin[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub origin: Point,
    pub cell_px: f64,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl Heatmap {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.counts {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Origin, cell size, dimensions and total as JSON.
    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Counts every sample of every trajectory. The grid covers the tunnel's
/// bounding box padded by its width and grows by whole cells to take in any
/// sample beyond it.
pub fn heatmap(trajs: &[Trajectory], tunnel: &Tunnel, cell_px: f64) -> Result<Heatmap> {
    if !(cell_px > 0.0) || !cell_px.is_finite() {
        return Err(Error::Parameter(format!("cell size must be > 0, got {cell_px}")));
    }
    if trajs.is_empty() {
        return Err(Error::InvalidInput("heatmap needs at least one trajectory".into()));
    }
    let pad = tunnel.width();
    let (lo, hi) = tunnel.bounds();
    let (mut lo, mut hi) = ([lo[0] - pad, lo[1] - pad], [hi[0] + pad, hi[1] + pad]);
    let all = || trajs.iter().flat_map(|t| t.samples.iter());
    for s in all() {
        for (d, v) in [s.x, s.y].into_iter().enumerate() {
            if v < lo[d] {
                lo[d] -= ((lo[d] - v) / cell_px).ceil() * cell_px;
            }
            hi[d] = hi[d].max(v);
        }
    }
    let cols = ((hi[0] - lo[0]) / cell_px).floor() as usize + 1;
    let rows = ((hi[1] - lo[1]) / cell_px).floor() as usize + 1;
    let mut counts = vec![vec![0u64; cols]; rows];
    let mut total = 0;
    for s in all() {
        let c = (((s.x - lo[0]) / cell_px).floor().max(0.0) as usize).min(cols - 1);
        let r = (((s.y - lo[1]) / cell_px).floor().max(0.0) as usize).min(rows - 1);
        counts[r][c] += 1;
        total += 1;
    }
    Ok(Heatmap {
        origin: lo,
        cell_px,
        rows,
        cols,
        counts,
        total,
    })
}

/// One row of the per-trial-type summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub trial_id: String,
    pub n_participants: usize,
    pub mt_mean: f64,
    pub mt_std: f64,
    pub opm_mean: f64,
    pub opm_std: f64,
    pub v_avg_mean: f64,
    pub v_avg_std: f64,
}

pub const SUMMARY_HEADER: &str = "trial_id,n_participants,mt_mean,mt_std,opm_mean,opm_std,v_avg_mean,v_avg_std";

/// Per participant means over repetitions, then mean and sample standard
/// deviation across participants, for each of `trial_ids` in order.
pub fn summarize(measures: &[TrialMeasures], trial_ids: &[String]) -> Result<Vec<SummaryRow>> {
    if let Some(m) = measures.iter().find(|m| !trial_ids.contains(&m.trial_id)) {
        return Err(Error::UnknownTrial(m.trial_id.clone()));
    }
    let mut out = Vec::new();
    for id in trial_ids {
        let mut participants: Vec<&str> = Vec::new();
        for m in measures.iter().filter(|m| &m.trial_id == id) {
            if !participants.contains(&m.participant_id.as_str()) {
                participants.push(&m.participant_id);
            }
        }
        if participants.is_empty() {
            continue;
        }
        let per_participant: Vec<[f64; 3]> = participants
            .iter()
            .map(|p| {
                let rows: Vec<&TrialMeasures> = measures
                    .iter()
                    .filter(|m| &m.trial_id == id && m.participant_id == *p)
                    .collect();
                let n = rows.len() as f64;
                [
                    rows.iter().map(|m| m.mt_ms).sum::<f64>() / n,
                    rows.iter().map(|m| m.opm).sum::<f64>() / n,
                    rows.iter().map(|m| m.v_avg).sum::<f64>() / n,
                ]
            })
            .collect();
        let stat = |j: usize| {
            let v: Vec<f64> = per_participant.iter().map(|r| r[j]).collect();
            mean_std(&v)
        };
        let (mt_mean, mt_std) = stat(0);
        let (opm_mean, opm_std) = stat(1);
        let (v_avg_mean, v_avg_std) = stat(2);
        out.push(SummaryRow {
            trial_id: id.clone(),
            n_participants: participants.len(),
            mt_mean,
            mt_std,
            opm_mean,
            opm_std,
            v_avg_mean,
            v_avg_std,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.trial_id, r.n_participants, r.mt_mean, r.mt_std, r.opm_mean, r.opm_std, r.v_avg_mean, r.v_avg_std
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CurveSamples;

    fn straight(len: f64) -> Tunnel {
        let pts: Vec<Point> = (0..=100).map(|i| [len * i as f64 / 100.0, 0.0]).collect();
        Tunnel::new(CurveSamples::from_polyline(pts).unwrap(), 50.0).unwrap()
    }

    fn traj(samples: Vec<Sample>, events: Vec<Event>) -> Trajectory {
        Trajectory {
            session_id: "s".into(),
            participant_id: "p".into(),
            trial_id: "L0-K0".into(),
            repetition: 0,
            flipped: false,
            samples,
            events,
        }
    }

    fn sweep(n: usize, dt: f64, f: impl Fn(f64) -> Point) -> Trajectory {
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                let p = f(t);
                Sample { t, x: p[0], y: p[1] }
            })
            .collect();
        let end = samples.last().unwrap().t;
        traj(
            samples,
            vec![
                Event { t: 0.0, kind: EventKind::StartClick },
                Event { t: end, kind: EventKind::EndClick },
            ],
        )
    }

    #[test]
    fn straight_sweep_speed() {
        let t = sweep(101, 50.0, |t| [1300.0 * t / 5000.0, 0.0]);
        assert_eq!(movement_time(&t).unwrap(), 5000.0);
        assert!((average_speed(&t).unwrap() - 0.26).abs() < 1e-12);
        assert_eq!(out_of_path_movement(&t, &straight(1300.0)).unwrap(), 0.0);
    }

    #[test]
    fn missing_events() {
        let mut t = sweep(10, 5.0, |t| [t, 0.0]);
        t.events.pop();
        assert!(matches!(movement_time(&t), Err(Error::IncompleteTrial(_))));
    }

    #[test]
    fn event_order() {
        let mut t = sweep(10, 5.0, |t| [t, 0.0]);
        t.events.insert(0, Event { t: 0.0, kind: EventKind::FlagClick });
        assert!(t.validate().is_err());
        let mut t = sweep(10, 5.0, |t| [t, 0.0]);
        t.events.insert(1, Event { t: 5.0, kind: EventKind::TunnelReenter });
        assert!(t.validate().is_err());
    }

    #[test]
    fn ten_percent_outside() {
        let t = sweep(100, 5.0, |t| {
            let i = (t / 5.0).round() as usize;
            [200.0 + 8.0 * i as f64, if (40..50).contains(&i) { 50.0 } else { 0.0 }]
        });
        let tunnel = straight(1300.0);
        assert!((out_of_path_movement(&t, &tunnel).unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(count_exits(&t, &tunnel).unwrap(), 1);
    }

    #[test]
    fn button_discs_count_as_inside() {
        let tunnel = straight(1300.0);
        let m = Membership::new(&tunnel);
        assert!(m.inside([-30.0, 30.0]));
        assert!(m.inside([1320.0, -40.0]));
        assert!(!m.inside([650.0, 30.0]));
    }

    #[test]
    fn effective_width_cases() {
        assert_eq!(effective_width(&[3.0; 10]).unwrap(), 0.0);
        let alt: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 5.0 } else { -5.0 }).collect();
        let expected = 4.133 * 5.0 * (20.0f64 / 19.0).sqrt();
        assert!((effective_width(&alt).unwrap() - expected).abs() < 1e-12);
        assert!(effective_width(&[1.0]).is_err());
    }

    #[test]
    fn spline_hits_knots_and_lines() {
        let t = [0.0, 1.0, 2.5, 4.0, 4.5];
        let v = [1.0, -2.0, 0.5, 3.0, 2.0];
        let s = NaturalSpline::new(&t, &v).unwrap();
        for (ti, vi) in t.iter().zip(v) {
            assert!((s.eval(*ti) - vi).abs() < 1e-12);
        }
        let line = NaturalSpline::new(&t, &t.map(|x| 2.0 * x + 1.0)).unwrap();
        assert!((line.eval(3.3) - 7.6).abs() < 1e-12);
    }

    #[test]
    fn resample_linear_on_grid() {
        let t = sweep(50, 5.0, |t| [0.3 * t, -0.1 * t]);
        let r = resample(&t, 200.0).unwrap();
        assert_eq!(r.samples.len(), 50);
        for (a, b) in r.samples.iter().zip(&t.samples) {
            assert_eq!(a.t, b.t);
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
        assert_eq!(r.events, t.events);
    }

    #[test]
    fn resample_needs_four() {
        let t = sweep(3, 5.0, |t| [t, 0.0]);
        assert!(resample(&t, 200.0).is_err());
    }

    #[test]
    fn trajlog_round_trip() {
        let mut t = sweep(30, 16.7, |t| [t * 0.31, (t * 0.01).sin() * 20.0]);
        t.events.insert(1, Event { t: 16.7 * 10.0, kind: EventKind::FlagClick });
        t.events.insert(1, Event { t: 5.0 * 16.7, kind: EventKind::TunnelExit });
        let text = t.to_trajlog();
        let back = Trajectory::parse_trajlog(&text).unwrap();
        assert_eq!(back.samples, t.samples);
        assert_eq!(back.events.len(), t.events.len());
        assert_eq!(back.to_trajlog(), text);
    }

    #[test]
    fn trajlog_rejects_bad_input() {
        let head = "trajlog v1,session_id=s,participant_id=p,trial_id=L0-K0,repetition=0,flipped=false\n";
        let dup = format!("{head}0,0,0,start_click\n5,1,0\n5,2,0\n10,3,0,end_click\n");
        assert!(matches!(Trajectory::parse_trajlog(&dup), Err(Error::Parse { line: 4, .. })));
        let bad_event = format!("{head}0,0,0,teleport\n");
        assert!(Trajectory::parse_trajlog(&bad_event).is_err());
        assert!(Trajectory::parse_trajlog("trajlog v2,session_id=s\n").is_err());
        let missing = "trajlog v1,session_id=s,participant_id=p,trial_id=L0-K0,flipped=false\n";
        assert!(Trajectory::parse_trajlog(missing).is_err());
    }

    #[test]
    fn heatmap_single_point() {
        let mut t = sweep(25, 5.0, |_| [100.0, 0.0]);
        t.samples.iter_mut().for_each(|s| s.x = 100.0);
        let h = heatmap(&[t], &straight(1300.0), 10.0).unwrap();
        let nonzero: Vec<u64> = h.counts.iter().flatten().copied().filter(|&c| c > 0).collect();
        assert_eq!(nonzero, vec![25]);
        assert!(heatmap(&[], &straight(10.0), 1.0).is_err());
    }

    #[test]
    fn heatmap_grows_for_strays() {
        let t = sweep(10, 5.0, |t| [-500.0 + t, 900.0]);
        let h = heatmap(&[t], &straight(1300.0), 7.0).unwrap();
        assert_eq!(h.total, 10);
        assert_eq!(h.counts.iter().flatten().sum::<u64>(), 10);
        assert!(h.origin[0] <= -500.0);
    }

    #[test]
    fn summary_layout() {
        let m = |p: &str, mt: f64| TrialMeasures {
            trial_id: "L0-K0".into(),
            participant_id: p.into(),
            repetition: 0,
            mt_ms: mt,
            opm: 0.0,
            v_avg: 0.2,
            exits: 0,
            w_e: 1.0,
            path_px: mt * 0.2,
            outbound: None,
            inbound: None,
        };
        let rows = summarize(&[m("a", 10.0), m("a", 20.0), m("b", 30.0)], &["L0-K0".into()]).unwrap();
        assert_eq!(rows[0].mt_mean, 22.5);
        assert!((rows[0].mt_std - (2.0f64 * 7.5 * 7.5).sqrt()).abs() < 1e-12);
        assert!(matches!(summarize(&[m("a", 1.0)], &["X".into()]), Err(Error::UnknownTrial(_))));
        assert!(write_summary_csv(&rows).starts_with(SUMMARY_HEADER));
    }
}
