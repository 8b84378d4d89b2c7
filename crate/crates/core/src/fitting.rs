//! Least-squares estimation, coefficient inference, information criteria,
//! cross-validation and model ranking.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::inference::AnovaReport;
use crate::models::{self, Coefficients, DesignRow, FormId, ModelForm, TrialFeatures};
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;
const RSS_RTOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-9;

/// Estimates with Wald inference for one least-squares problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub ci95_low: Vec<f64>,
    pub ci95_high: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r2_adjusted: f64,
    pub aic: f64,
    pub rss: f64,
    pub n_points: usize,
    #[serde(skip)]
    pub fitted: Vec<f64>,
}

impl Regression {
    pub fn residuals(&self, targets: &[f64]) -> Vec<f64> {
        targets.iter().zip(&self.fitted).map(|(y, f)| y - f).collect()
    }

    fn from_parts(
        coefficients: Vec<f64>,
        covariance: &DMatrix<f64>,
        fitted: Vec<f64>,
        targets: &[f64],
    ) -> Result<Self> {
        let n = targets.len();
        let k = coefficients.len();
        let rss: f64 = targets
            .iter()
            .zip(&fitted)
            .map(|(y, f)| (y - f) * (y - f))
            .sum();
        let df = (n - k) as f64;
        let t = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::InvalidInput(format!("t distribution: {e}")))?;
        let crit = t.inverse_cdf(0.975);
        let mut standard_errors = Vec::with_capacity(k);
        let mut p_values = Vec::with_capacity(k);
        for (i, &b) in coefficients.iter().enumerate() {
            let se = covariance[(i, i)].max(0.0).sqrt();
            standard_errors.push(se);
            p_values.push(if se > 0.0 {
                (2.0 * t.sf((b / se).abs())).min(1.0)
            } else if b == 0.0 {
                1.0
            } else {
                0.0
            });
        }
        let ci95_low = coefficients
            .iter()
            .zip(&standard_errors)
            .map(|(b, se)| b - crit * se)
            .collect();
        let ci95_high = coefficients
            .iter()
            .zip(&standard_errors)
            .map(|(b, se)| b + crit * se)
            .collect();
        let mean = targets.iter().sum::<f64>() / n as f64;
        let tss: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
        Ok(Self {
            r2_adjusted: adjusted_r2(rss, tss, n, k - 1)?,
            aic: aic(rss, n, k),
            coefficients,
            standard_errors,
            ci95_low,
            ci95_high,
            p_values,
            rss,
            n_points: n,
            fitted,
        })
    }
}

/// Akaike information criterion under Gaussian errors with the full
/// log-likelihood: `n·ln(RSS/n) + n·ln(2π) + n + 2k`, with `k` the number of
/// regression coefficients. A perfect fit gives −∞.
pub fn aic(rss: f64, n: usize, k: usize) -> f64 {
    let n_f = n as f64;
    if rss <= 0.0 {
        log::warn!("AIC of a perfect fit is -inf");
        return f64::NEG_INFINITY;
    }
    n_f * (rss / n_f).ln() + n_f * (2.0 * std::f64::consts::PI).ln() + n_f + 2.0 * k as f64
}

/// `1 − (1 − r²)(n − 1)/(n − p − 1)` with `r² = 1 − RSS/TSS`.
///
/// `p` counts coefficients beyond the first; `tss` is the centered total sum
/// of squares for every model, with or without an intercept.
pub fn adjusted_r2(rss: f64, tss: f64, n: usize, p: usize) -> Result<f64> {
    if n <= p + 1 {
        return Err(Error::UndefinedDf { n, p });
    }
    if !(tss > 0.0) {
        return Err(Error::InvalidInput("total sum of squares must be > 0".into()));
    }
    let r2 = 1.0 - rss / tss;
    Ok(1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n - p - 1) as f64)
}

/// Significance marks: `*` p < 0.05, `**` p < 0.001, `***` p < 0.0001.
pub fn stars(p: f64) -> &'static str {
    if p < 1e-4 {
        "***"
    } else if p < 1e-3 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Ordinary least squares via a column-scaled QR decomposition.
pub fn fit_linear(rows: &[Vec<f64>], targets: &[f64]) -> Result<Regression> {
    let n = rows.len();
    if n != targets.len() {
        return Err(Error::Shape(format!("{n} rows but {} targets", targets.len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Shape("design rows must be non-empty and equal length".into()));
    }
    if n <= p {
        return Err(Error::InsufficientData { n, p });
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(targets);
    let (beta, unscaled_cov) = least_squares(&x, &y)?;
    let fitted: Vec<f64> = (&x * &beta).iter().copied().collect();
    let rss: f64 = targets.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let sigma2 = rss / (n - p) as f64;
    Regression::from_parts(beta.iter().copied().collect(), &(unscaled_cov * sigma2), fitted, targets)
}

// Solves min |Xb − y| and returns (b, (XᵀX)⁻¹).
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let norm = x.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let mut xs = x.clone();
    for (j, s) in scale.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let qr = xs.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * max_diag) || max_diag == 0.0 {
        return Err(Error::SingularDesign);
    }
    let qty = qr.q().transpose() * y;
    let beta_s = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign)?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::SingularDesign)?;
    let cov_s = &r_inv * r_inv.transpose();
    let beta = DVector::from_fn(p, |i, _| beta_s[i] / scale[i]);
    let cov = DMatrix::from_fn(p, p, |i, j| cov_s[(i, j)] / (scale[i] * scale[j]));
    Ok((beta, cov))
}

/// Result of [`gauss_newton`].
#[derive(Debug, Clone)]
pub struct NlsOutcome {
    pub params: Vec<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
    /// (JᵀJ)⁻¹ at the optimum, with J the Jacobian of the residuals.
    pub unscaled_covariance: DMatrix<f64>,
}

/// Damped Gauss–Newton (Marquardt scaling) on `r(θ) = y − f(θ)`.
///
/// `residuals` returns `None` where the model is undefined; such steps are
/// rejected and the damping increased. Stops when an accepted step lowers the
/// RSS by less than 1e-12 relative, or when the scaled gradient falls below 1e-9.
pub fn gauss_newton<R, J>(residuals: R, jacobian: J, init: &[f64]) -> Result<NlsOutcome>
where
    R: Fn(&[f64]) -> Option<Vec<f64>>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let p = init.len();
    let mut theta = init.to_vec();
    let mut r = residuals(&theta)
        .ok_or_else(|| Error::Evaluation("model undefined at the initial point".into()))?;
    let n = r.len();
    if n <= p {
        return Err(Error::InsufficientData { n, p });
    }
    let mut rss = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut trace = vec![rss];
    for iter in 0..MAX_ITERATIONS {
        let jac = jacobian(&theta);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        let diag: Vec<f64> = (0..p).map(|j| jtj[(j, j)].max(1e-300)).collect();
        let scaled_grad = (0..p)
            .map(|j| grad[j].abs() / (diag[j] * rss).sqrt())
            .fold(0.0, f64::max);
        if rss == 0.0 || scaled_grad < GRADIENT_TOL {
            return finish_nls(theta, rss, iter, trace, &jac);
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for j in 0..p {
                a[(j, j)] += lambda * diag[j];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            // r = y − f, so J here is ∂r/∂θ and the descent step is −(JᵀJ)⁻¹Jᵀr.
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t - s).collect();
            match residuals(&cand) {
                Some(r_new) if sum_sq(&r_new) < rss => {
                    let rss_new = sum_sq(&r_new);
                    let rel = (rss - rss_new) / rss;
                    theta = cand;
                    r = r_new;
                    rss = rss_new;
                    trace.push(rss);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < RSS_RTOL {
                        let jac = jacobian(&theta);
                        return finish_nls(theta, rss, iter + 1, trace, &jac);
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No descent direction left at machine precision.
            return finish_nls(theta, rss, iter, trace, &jac);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        last_rss: rss,
        trace,
    })
}

fn finish_nls(
    params: Vec<f64>,
    rss: f64,
    iterations: usize,
    trace: Vec<f64>,
    jac: &DMatrix<f64>,
) -> Result<NlsOutcome> {
    let p = params.len();
    let (_, cov) = least_squares(jac, &DVector::zeros(jac.nrows()))?;
    debug_assert_eq!(cov.ncols(), p);
    Ok(NlsOutcome {
        params,
        rss,
        iterations,
        trace,
        unscaled_covariance: cov,
    })
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub form: ModelForm,
    #[serde(flatten)]
    pub regression: Regression,
    /// For LIU: the linear fit of log10(MT), used as the warm start.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_scale: Option<Regression>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterations: Option<usize>,
}

impl FitResult {
    pub fn coefficients(&self) -> Coefficients {
        Coefficients(self.regression.coefficients.clone())
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients().get(&self.form, name)
    }

    pub fn aic(&self) -> f64 {
        self.regression.aic
    }

    pub fn predict(&self, f: &TrialFeatures) -> Result<f64> {
        models::predict(&self.form, &self.coefficients(), f)
    }
}

fn targets_of(features: &[TrialFeatures]) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            f.validate()?;
            f.mt_mean.ok_or(Error::MissingFeature("mt_mean"))
        })
        .collect()
}

/// Fits `form` to the observed `mt_mean` of each trial.
pub fn fit_model(form: &ModelForm, features: &[TrialFeatures]) -> Result<FitResult> {
    let targets = targets_of(features)?;
    match form.form_id {
        FormId::Ym => fit_nonlinear_ym(features, &targets, None),
        FormId::Liu => fit_liu(features, &targets, form.intercept),
        _ => {
            let rows = features
                .iter()
                .map(|f| match models::design_row(form, f)? {
                    DesignRow::Mt(r) => Ok(r),
                    other => Err(Error::InvalidInput(format!("unexpected design row {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FitResult {
                form: *form,
                regression: fit_linear(&rows, &targets)?,
                log_scale: None,
                iterations: None,
            })
        }
    }
}

/// YM model `a + b·L²/(L + c·K)` by damped Gauss–Newton. Without `init`
/// the warm start is the straight-path fit (`c = 0`, where the model reduces
/// to `a + b·L`).
pub fn fit_nonlinear_ym(
    features: &[TrialFeatures],
    targets: &[f64],
    init: Option<&Coefficients>,
) -> Result<FitResult> {
    let n = features.len();
    if n != targets.len() {
        return Err(Error::Shape(format!("{n} trials but {} targets", targets.len())));
    }
    if n <= 3 {
        return Err(Error::InsufficientData { n, p: 3 });
    }
    let lk: Vec<(f64, f64)> = features.iter().map(|f| (f.length, f.total_curvature)).collect();
    let start = match init {
        Some(c) if c.values().len() == 3 => c.values().to_vec(),
        Some(c) => {
            return Err(Error::InvalidInput(format!(
                "YM takes 3 coefficients, got {}",
                c.values().len()
            )))
        }
        None => {
            let rows: Vec<Vec<f64>> = lk.iter().map(|&(l, _)| vec![1.0, l]).collect();
            let base = fit_linear(&rows, targets)?;
            vec![base.coefficients[0], base.coefficients[1], 0.0]
        }
    };
    let residuals = |t: &[f64]| -> Option<Vec<f64>> {
        lk.iter()
            .zip(targets)
            .map(|(&(l, k), y)| {
                let den = l + t[2] * k;
                (den > 0.0).then(|| y - t[0] - t[1] * l * l / den)
            })
            .collect()
    };
    let jacobian = |t: &[f64]| {
        DMatrix::from_fn(n, 3, |i, j| {
            let (l, k) = lk[i];
            let den = l + t[2] * k;
            match j {
                0 => -1.0,
                1 => -l * l / den,
                _ => t[1] * l * l * k / (den * den),
            }
        })
    };
    let out = gauss_newton(residuals, jacobian, &start)?;
    let fitted: Vec<f64> = lk
        .iter()
        .map(|&(l, k)| out.params[0] + out.params[1] * l * l / (l + out.params[2] * k))
        .collect();
    let sigma2 = out.rss / (n - 3) as f64;
    let regression = Regression::from_parts(
        out.params.clone(),
        &(out.unscaled_covariance * sigma2),
        fitted,
        targets,
    )?;
    Ok(FitResult {
        form: ModelForm::new(FormId::Ym),
        regression,
        log_scale: None,
        iterations: Some(out.iterations),
    })
}

/// LIU model `MT = 10^(a + b·log10 L + c·K/L)`.
///
/// The linear fit of log10(MT) is kept as `log_scale` and used as the warm
/// start for a least-squares refinement on the MT scale, so RSS, AIC and
/// adjusted r² are directly comparable with the other models.
pub fn fit_liu(features: &[TrialFeatures], targets_mt: &[f64], intercept: bool) -> Result<FitResult> {
    let form = if intercept {
        ModelForm::new(FormId::Liu)
    } else {
        ModelForm::without_intercept(FormId::Liu)?
    };
    if features.len() != targets_mt.len() {
        return Err(Error::Shape(format!(
            "{} trials but {} targets",
            features.len(),
            targets_mt.len()
        )));
    }
    if let Some(bad) = targets_mt.iter().find(|&&y| !(y > 0.0)) {
        return Err(Error::Domain(format!("LIU needs MT > 0, got {bad}")));
    }
    let rows = features
        .iter()
        .map(|f| match models::design_row(&form, f)? {
            DesignRow::Log10Mt(r) => Ok(r),
            other => Err(Error::InvalidInput(format!("unexpected design row {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let log_y: Vec<f64> = targets_mt.iter().map(|y| y.log10()).collect();
    let log_fit = fit_linear(&rows, &log_y)?;

    let n = rows.len();
    let p = form.arity();
    let predict = |t: &[f64], row: &[f64]| 10f64.powf(row.iter().zip(t).map(|(x, b)| x * b).sum());
    let residuals = |t: &[f64]| -> Option<Vec<f64>> {
        rows.iter()
            .zip(targets_mt)
            .map(|(row, y)| {
                let f = predict(t, row);
                f.is_finite().then(|| y - f)
            })
            .collect()
    };
    let jacobian = |t: &[f64]| {
        DMatrix::from_fn(n, p, |i, j| -std::f64::consts::LN_10 * predict(t, &rows[i]) * rows[i][j])
    };
    let out = gauss_newton(residuals, jacobian, &log_fit.coefficients)?;
    let fitted: Vec<f64> = rows.iter().map(|r| predict(&out.params, r)).collect();
    let sigma2 = out.rss / (n - p) as f64;
    let regression = Regression::from_parts(
        out.params.clone(),
        &(out.unscaled_covariance * sigma2),
        fitted,
        targets_mt,
    )?;
    Ok(FitResult {
        form,
        regression,
        log_scale: Some(log_fit),
        iterations: Some(out.iterations),
    })
}

/// One row of a ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub rank: usize,
    pub form: ModelForm,
    pub aic: f64,
    pub delta_aic: f64,
    /// Within 2 AIC units of the best model.
    pub comparable: bool,
    /// Within 10 AIC units of the best model.
    pub valid: bool,
}

/// Orders fits by ascending AIC. Equal AIC puts fewer coefficients first,
/// then the lexicographically smaller label.
pub fn rank_models(fits: &[FitResult]) -> Result<Vec<RankedModel>> {
    let first = fits
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to rank".into()))?;
    if let Some(odd) = fits
        .iter()
        .find(|f| f.regression.n_points != first.regression.n_points)
    {
        return Err(Error::Incomparable(format!(
            "{} has {} points, {} has {}",
            first.form,
            first.regression.n_points,
            odd.form,
            odd.regression.n_points
        )));
    }
    let mut order: Vec<&FitResult> = fits.iter().collect();
    order.sort_by(|a, b| {
        a.aic()
            .total_cmp(&b.aic())
            .then(a.form.arity().cmp(&b.form.arity()))
            .then(a.form.label().cmp(&b.form.label()))
    });
    let best = order[0].aic();
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let delta = f.aic() - best;
            RankedModel {
                rank: i + 1,
                form: f.form,
                aic: f.aic(),
                delta_aic: delta,
                comparable: delta <= 2.0,
                valid: delta <= 10.0,
            }
        })
        .collect())
}

/// Per-repetition movement times for each trial cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionCell {
    pub features: TrialFeatures,
    pub mt: Vec<f64>,
}

pub const CV_FOLDS: usize = 5;
pub const CV_REPETITIONS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldScheme {
    /// Fold f holds out repetitions 3f, 3f+1, 3f+2.
    Contiguous,
    /// Seeded random partition into triples.
    Random { seed: u64 },
}

impl FoldScheme {
    /// The held-out repetition indices (0-based) of each fold.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut reps: Vec<usize> = (0..CV_REPETITIONS).collect();
        if let FoldScheme::Random { seed } = self {
            reps.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
        }
        reps.chunks(CV_REPETITIONS / CV_FOLDS)
            .map(|c| {
                let mut v = c.to_vec();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub form: ModelForm,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub folds: Vec<Vec<usize>>,
}

/// Five-fold cross-validation over repetitions: each fold fits on the cell
/// means of 12 repetitions and scores RMSE against the means of the 3 held out.
pub fn cross_validate(cells: &[RepetitionCell], form: &ModelForm, scheme: FoldScheme) -> Result<CvReport> {
    if cells.is_empty() {
        return Err(Error::Shape("no cells".into()));
    }
    if let Some(c) = cells.iter().find(|c| c.mt.len() != CV_REPETITIONS) {
        return Err(Error::Shape(format!(
            "{} has {} repetitions, expected {CV_REPETITIONS}",
            c.features.trial_id,
            c.mt.len()
        )));
    }
    let folds = scheme.folds();
    let mut fold_rmse = Vec::with_capacity(folds.len());
    for held in &folds {
        let mean_of = |c: &RepetitionCell, test: bool| {
            let vals: Vec<f64> = (0..CV_REPETITIONS)
                .filter(|r| held.contains(r) == test)
                .map(|r| c.mt[r])
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let train: Vec<TrialFeatures> = cells
            .iter()
            .map(|c| c.features.clone().with_mt(mean_of(c, false)))
            .collect();
        let fit = fit_model(form, &train)?;
        let mut sq = 0.0;
        for c in cells {
            let err = fit.predict(&c.features)? - mean_of(c, true);
            sq += err * err;
        }
        fold_rmse.push((sq / cells.len() as f64).sqrt());
    }
    Ok(CvReport {
        form: *form,
        mean_rmse: fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64,
        fold_rmse,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedCoefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub p_value: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogScaleSummary {
    pub coefficients: Vec<f64>,
    pub r2_adjusted: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedModel {
    pub form_id: FormId,
    pub intercept: bool,
    pub formula: String,
    pub coefficients: Vec<ReportedCoefficient>,
    pub r2_adjusted: f64,
    pub aic: f64,
    pub rss: f64,
    pub n_points: usize,
    pub rank: usize,
    pub delta_aic: f64,
    pub comparable: bool,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_scale: Option<LogScaleSummary>,
}

/// `fitreport v1` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format: String,
    pub models: Vec<ReportedModel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anova: Option<AnovaReport>,
}

pub const FIT_REPORT_FORMAT: &str = "fitreport v1";

impl FitReport {
    /// Builds a report with models listed in rank order.
    pub fn from_fits(fits: &[FitResult]) -> Result<Self> {
        let ranking = if fits.is_empty() { Vec::new() } else { rank_models(fits)? };
        let models = ranking
            .iter()
            .map(|r| {
                let fit = fits.iter().find(|f| f.form == r.form).unwrap();
                let reg = &fit.regression;
                ReportedModel {
                    form_id: fit.form.form_id,
                    intercept: fit.form.intercept,
                    formula: fit.form.form_id.formula().to_string(),
                    coefficients: fit
                        .form
                        .coefficient_names()
                        .iter()
                        .enumerate()
                        .map(|(i, name)| ReportedCoefficient {
                            name: name.to_string(),
                            estimate: reg.coefficients[i],
                            std_error: reg.standard_errors[i],
                            ci95_low: reg.ci95_low[i],
                            ci95_high: reg.ci95_high[i],
                            p_value: reg.p_values[i],
                            stars: stars(reg.p_values[i]).to_string(),
                        })
                        .collect(),
                    r2_adjusted: reg.r2_adjusted,
                    aic: reg.aic,
                    rss: reg.rss,
                    n_points: reg.n_points,
                    rank: r.rank,
                    delta_aic: r.delta_aic,
                    comparable: r.comparable,
                    valid: r.valid,
                    log_scale: fit.log_scale.as_ref().map(|l| LogScaleSummary {
                        coefficients: l.coefficients.clone(),
                        r2_adjusted: l.r2_adjusted,
                        rss: l.rss,
                    }),
                }
            })
            .collect();
        Ok(Self {
            format: FIT_REPORT_FORMAT.to_string(),
            models,
            anova: None,
        })
    }

    pub fn with_anova(mut self, anova: AnovaReport) -> Self {
        self.anova = Some(anova);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fits every form in `forms` whose required features are present.
/// Forms that cannot be fitted are returned with the reason.
pub fn fit_all(
    forms: &[ModelForm],
    features: &[TrialFeatures],
) -> (Vec<FitResult>, Vec<(ModelForm, Error)>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for form in forms {
        match fit_model(form, features) {
            Ok(f) => ok.push(f),
            Err(e) => skipped.push((*form, e)),
        }
    }
    (ok, skipped)
}

#[derive(Debug, Deserialize)]
struct FeatureRecord {
    trial_id: String,
    #[serde(rename = "L")]
    length: f64,
    #[serde(rename = "K")]
    total_curvature: f64,
    #[serde(default)]
    nl: Option<f64>,
    mt_mean: f64,
}

/// Reads a `trial_id,L,K[,nl],mt_mean` table with a header row.
pub fn read_features_csv<R: Read>(reader: R) -> Result<Vec<TrialFeatures>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let r: FeatureRecord = rec?;
        let f = TrialFeatures {
            trial_id: r.trial_id,
            length: r.length,
            total_curvature: r.total_curvature,
            nl: r.nl,
            mt_mean: Some(r.mt_mean),
        };
        f.validate()?;
        out.push(f);
    }
    Ok(out)
}

pub fn write_features_csv(features: &[TrialFeatures]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial_id", "L", "K", "nl", "mt_mean"])?;
    for f in features {
        w.write_record([
            f.trial_id.clone(),
            f.length.to_string(),
            f.total_curvature.to_string(),
            f.nl.map(|v| v.to_string()).unwrap_or_default(),
            f.mt_mean.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Deserialize)]
struct RepetitionRecord {
    trial_id: String,
    #[serde(rename = "L")]
    length: f64,
    #[serde(rename = "K")]
    total_curvature: f64,
    #[serde(default)]
    nl: Option<f64>,
    repetition: usize,
    mt_ms: f64,
}

/// Reads a long-format `trial_id,L,K[,nl],repetition,mt_ms` table (0-based
/// repetitions) into cells, in order of first appearance.
pub fn read_repetitions_csv<R: Read>(reader: R) -> Result<Vec<RepetitionCell>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut cells: Vec<(RepetitionCell, Vec<Option<f64>>)> = Vec::new();
    for rec in rdr.deserialize() {
        let r: RepetitionRecord = rec?;
        if r.repetition >= CV_REPETITIONS {
            return Err(Error::Shape(format!(
                "{}: repetition {} out of range 0..{CV_REPETITIONS}",
                r.trial_id, r.repetition
            )));
        }
        let idx = match cells.iter().position(|(c, _)| c.features.trial_id == r.trial_id) {
            Some(i) => i,
            None => {
                let mut f = TrialFeatures::new(r.trial_id.clone(), r.length, r.total_curvature);
                f.nl = r.nl;
                f.validate()?;
                cells.push((
                    RepetitionCell {
                        features: f,
                        mt: Vec::new(),
                    },
                    vec![None; CV_REPETITIONS],
                ));
                cells.len() - 1
            }
        };
        cells[idx].1[r.repetition] = Some(r.mt_ms);
    }
    cells
        .into_iter()
        .map(|(mut c, reps)| {
            c.mt = reps
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| {
                        Error::Shape(format!("{}: missing repetition {i}", c.features.trial_id))
                    })
                })
                .collect::<Result<_>>()?;
            Ok(c)
        })
        .collect()
}
