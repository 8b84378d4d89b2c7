//! Repeated-measures ANOVA and the power law of practice.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::fitting;
use crate::{Error, Result};

/// Balanced within-subjects data: one value per participant per cell.
///
/// Cells are laid out row-major over `levels`, so for two factors with
/// `levels = [3, 3]` cell `3·l + k` holds level `l` of the first factor and
/// level `k` of the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmDataset {
    pub factors: Vec<String>,
    pub levels: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl RmDataset {
    pub fn new(factors: Vec<String>, levels: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self {
            factors,
            levels,
            values,
        };
        d.validate()?;
        Ok(d)
    }

    /// The usual L × K layout.
    pub fn two_way(values: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec!["L".into(), "K".into()], vec![3, 3], values)
    }

    pub fn one_way(name: &str, levels: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![name.to_string()], vec![levels], values)
    }

    pub fn n_cells(&self) -> usize {
        self.levels.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() || self.factors.len() != self.levels.len() {
            return Err(Error::Shape("one level count per factor is required".into()));
        }
        if self.levels.iter().any(|&l| l < 2) {
            return Err(Error::Shape("every factor needs at least 2 levels".into()));
        }
        if self.values.len() < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 participants, got {}",
                self.values.len()
            )));
        }
        let cells = self.n_cells();
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != cells {
                return Err(Error::Shape(format!(
                    "participant {i} has {} cells, expected {cells}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("participant {i} has a non-finite value")));
            }
        }
        Ok(())
    }

    /// Averages raw observations into per-participant cell means.
    /// `cell` indexes the row-major layout. Every participant must have at
    /// least one observation in every cell.
    pub fn from_observations(
        factors: Vec<String>,
        levels: Vec<usize>,
        observations: &[Observation],
    ) -> Result<Self> {
        let cells: usize = levels.iter().product();
        let mut ids: Vec<&str> = Vec::new();
        for o in observations {
            if !ids.contains(&o.participant.as_str()) {
                ids.push(&o.participant);
            }
        }
        let mut sums = vec![vec![(0.0, 0usize); cells]; ids.len()];
        for o in observations {
            if o.cell >= cells {
                return Err(Error::Shape(format!("cell {} out of range 0..{cells}", o.cell)));
            }
            let p = ids.iter().position(|&id| id == o.participant).unwrap();
            let s = &mut sums[p][o.cell];
            s.0 += o.value;
            s.1 += 1;
        }
        let mut values = Vec::with_capacity(ids.len());
        for (p, row) in sums.iter().enumerate() {
            let mut out = Vec::with_capacity(cells);
            for (c, &(sum, count)) in row.iter().enumerate() {
                if count == 0 {
                    return Err(Error::Shape(format!("participant {} has no data in cell {c}", ids[p])));
                }
                out.push(sum / count as f64);
            }
            values.push(out);
        }
        Self::new(factors, levels, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub participant: String,
    pub cell: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaEffect {
    pub effect: String,
    pub df_effect: f64,
    pub df_error: f64,
    pub ss_effect: f64,
    pub ss_error: f64,
    #[serde(rename = "F", with = "nonfinite")]
    pub f: f64,
    /// Greenhouse–Geisser corrected.
    pub p: f64,
    pub p_uncorrected: f64,
    pub gg_epsilon: f64,
    pub partial_eta_sq: f64,
}

// JSON has no infinity; the degenerate-data sentinel is written as a string.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else {
            v.to_string().serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    pub measure: String,
    pub n_participants: usize,
    pub effects: Vec<AnovaEffect>,
}

/// Orthonormal Helmert contrasts: `k − 1` rows orthogonal to the constant.
pub fn helmert(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k - 1, k, |i, j| {
        let m = (i + 1) as f64;
        let norm = (m * (m + 1.0)).sqrt();
        if j <= i {
            1.0 / norm
        } else if j == i + 1 {
            -m / norm
        } else {
            0.0
        }
    })
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Within-subjects ANOVA for every main effect and interaction.
///
/// Each effect is tested on the participants' scores under its orthonormal
/// contrast matrix; the sphericity correction uses the covariance of those
/// scores. Effects are ordered main effects first, then interactions, in
/// factor order; names join factor names with `x`.
pub fn rm_anova(data: &RmDataset) -> Result<Vec<AnovaEffect>> {
    data.validate()?;
    let n = data.values.len();
    let nf = data.factors.len();
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << nf))
        .map(|mask| (0..nf).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by_key(|s| (s.len(), s.clone()));

    let magnitude: f64 = data.values.iter().flatten().map(|v| v * v).sum();
    let mut out = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let mut c = DMatrix::from_element(1, 1, 1.0);
        for (f, &levels) in data.levels.iter().enumerate() {
            let part = if subset.contains(&f) {
                helmert(levels)
            } else {
                DMatrix::from_element(1, levels, 1.0 / (levels as f64).sqrt())
            };
            c = kron(&c, &part);
        }
        let df = c.nrows();
        let scores: Vec<DVector<f64>> = data
            .values
            .iter()
            .map(|row| &c * DVector::from_column_slice(row))
            .collect();
        let mean = scores.iter().fold(DVector::zeros(df), |acc, z| acc + z) / n as f64;
        let mut s = DMatrix::zeros(df, df);
        for z in &scores {
            let d = z - &mean;
            s += &d * d.transpose();
        }
        let ss_effect = n as f64 * mean.norm_squared();
        let ss_error = s.trace();
        let name = subset
            .iter()
            .map(|&i| data.factors[i].as_str())
            .collect::<Vec<_>>()
            .join("x");
        out.push(effect_from_sums(name, df, n, ss_effect, ss_error, &s, magnitude));
    }
    Ok(out)
}

fn effect_from_sums(
    effect: String,
    df: usize,
    n: usize,
    ss_effect: f64,
    ss_error: f64,
    s: &DMatrix<f64>,
    magnitude: f64,
) -> AnovaEffect {
    let df_effect = df as f64;
    let df_error = (df * (n - 1)) as f64;
    // Sums of squares at rounding level relative to the raw data count as zero.
    let floor = 1e-24 * magnitude;
    let effect_zero = ss_effect <= floor;
    let error_zero = ss_error <= floor;
    let f = if effect_zero {
        0.0
    } else if error_zero {
        log::warn!("{effect}: zero error variance, F is +inf");
        f64::INFINITY
    } else {
        (ss_effect / df_effect) / (ss_error / df_error)
    };
    let gg_epsilon = if df == 1 || error_zero {
        1.0
    } else {
        let tr = s.trace();
        let tr2 = (s * s).trace();
        (tr * tr / (df_effect * tr2)).clamp(1.0 / df_effect, 1.0)
    };
    let p_of = |d1: f64, d2: f64| {
        if f == 0.0 {
            1.0
        } else if f.is_infinite() {
            0.0
        } else {
            FisherSnedecor::new(d1, d2).map(|dist| dist.sf(f)).unwrap_or(f64::NAN)
        }
    };
    let partial_eta_sq = if effect_zero {
        0.0
    } else {
        ss_effect / (ss_effect + ss_error)
    };
    AnovaEffect {
        p: p_of(gg_epsilon * df_effect, gg_epsilon * df_error),
        p_uncorrected: p_of(df_effect, df_error),
        effect,
        df_effect,
        df_error,
        ss_effect,
        ss_error,
        f,
        gg_epsilon,
        partial_eta_sq,
    }
}

pub fn anova_report(measure: &str, data: &RmDataset) -> Result<AnovaReport> {
    Ok(AnovaReport {
        measure: measure.to_string(),
        n_participants: data.values.len(),
        effects: rm_anova(data)?,
    })
}

/// Fitted `MT(n) = a·(n + 1)^(−b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PracticeFit {
    pub a: f64,
    pub b: f64,
    /// Standard error of ln a.
    pub se_ln_a: f64,
    pub se_b: f64,
}

/// Log-log least squares of `ln MT` on `ln(n + 1)`, with `n` the 0-based
/// index of the completed trial.
pub fn fit_power_law_of_practice(series: &[f64]) -> Result<PracticeFit> {
    if series.len() < 3 {
        return Err(Error::InsufficientData {
            n: series.len(),
            p: 2,
        });
    }
    if let Some(bad) = series.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("movement times must be > 0, got {bad}")));
    }
    let rows: Vec<Vec<f64>> = (0..series.len())
        .map(|n| vec![1.0, ((n + 1) as f64).ln()])
        .collect();
    let y: Vec<f64> = series.iter().map(|v| v.ln()).collect();
    let fit = fitting::fit_linear(&rows, &y)?;
    Ok(PracticeFit {
        a: fit.coefficients[0].exp(),
        b: -fit.coefficients[1],
        se_ln_a: fit.standard_errors[0],
        se_b: fit.standard_errors[1],
    })
}

/// One-way repeated-measures ANOVA over learning rates: `rates[p][t]` is
/// participant `p`'s fitted exponent `b` on trial type `t`.
pub fn compare_learning_rates(rates: Vec<Vec<f64>>) -> Result<AnovaEffect> {
    let types = rates.first().map_or(0, Vec::len);
    let data = RmDataset::one_way("trial", types, rates)?;
    Ok(rm_anova(&data)?.remove(0))
}
