//! Movement-time model catalog: model shapes, predictions and design rows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-trial predictors and (optionally) the observed mean movement time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFeatures {
    pub trial_id: String,
    /// Centerline length L, px.
    #[serde(rename = "L")]
    pub length: f64,
    /// Total curvature K (dimensionless).
    #[serde(rename = "K")]
    pub total_curvature: f64,
    /// ∫|κ|^{1/3} ds when the curve geometry is known.
    #[serde(default)]
    pub nl: Option<f64>,
    /// Observed mean movement time, ms.
    #[serde(default)]
    pub mt_mean: Option<f64>,
}

impl TrialFeatures {
    pub fn new(trial_id: impl Into<String>, length: f64, total_curvature: f64) -> Self {
        Self {
            trial_id: trial_id.into(),
            length,
            total_curvature,
            nl: None,
            mt_mean: None,
        }
    }

    pub fn with_nl(mut self, nl: f64) -> Self {
        self.nl = Some(nl);
        self
    }

    pub fn with_mt(mut self, mt: f64) -> Self {
        self.mt_mean = Some(mt);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{}: L must be > 0, got {}",
                self.trial_id, self.length
            )));
        }
        if !(self.total_curvature >= 0.0) || !self.total_curvature.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{}: K must be >= 0, got {}",
                self.trial_id, self.total_curvature
            )));
        }
        if let Some(mt) = self.mt_mean {
            if !(mt > 0.0) || !mt.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{}: mt_mean must be > 0, got {mt}",
                    self.trial_id
                )));
            }
        }
        if let Some(nl) = self.nl {
            if !(nl >= 0.0) || !nl.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{}: nl must be >= 0, got {nl}",
                    self.trial_id
                )));
            }
        }
        Ok(())
    }

    fn nl_value(&self) -> Result<f64> {
        self.nl.ok_or(Error::MissingFeature("nl"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormId {
    /// a + b·L
    #[serde(rename = "SL_BASE")]
    SlBase,
    /// a + b·L + c·K
    #[serde(rename = "ADD_K")]
    AddK,
    /// a + b·L + c·log2(K + 1)
    #[serde(rename = "ADD_LOGK")]
    AddLogK,
    /// a + b·L·∫|κ|^{1/3} ds
    #[serde(rename = "NL")]
    Nl,
    /// a + b·L² / (L + c·K)
    #[serde(rename = "YM")]
    Ym,
    /// 10^(a + b·log10 L + c·K/L)
    #[serde(rename = "LIU")]
    Liu,
    /// a + b·L + c·K + d·L·K
    #[serde(rename = "COMP_K")]
    CompK,
    /// a + b·L + c·log2(K + 1) + d·L·K
    #[serde(rename = "COMP_LOGK")]
    CompLogK,
}

impl FormId {
    pub const ALL: [FormId; 8] = [
        FormId::SlBase,
        FormId::AddK,
        FormId::AddLogK,
        FormId::Nl,
        FormId::Ym,
        FormId::Liu,
        FormId::CompK,
        FormId::CompLogK,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FormId::SlBase => "SL_BASE",
            FormId::AddK => "ADD_K",
            FormId::AddLogK => "ADD_LOGK",
            FormId::Nl => "NL",
            FormId::Ym => "YM",
            FormId::Liu => "LIU",
            FormId::CompK => "COMP_K",
            FormId::CompLogK => "COMP_LOGK",
        }
    }

    /// Coefficient count including the intercept.
    fn full_arity(self) -> usize {
        match self {
            FormId::SlBase | FormId::Nl => 2,
            FormId::AddK | FormId::AddLogK | FormId::Ym | FormId::Liu => 3,
            FormId::CompK | FormId::CompLogK => 4,
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            FormId::SlBase => "MT = a + b*L",
            FormId::AddK => "MT = a + b*L + c*K",
            FormId::AddLogK => "MT = a + b*L + c*log2(K+1)",
            FormId::Nl => "MT = a + b*L*integral(|kappa|^(1/3) ds)",
            FormId::Ym => "MT = a + b*L^2/(L + c*K)",
            FormId::Liu => "MT = 10^(a + b*log10(L) + c*K/L)",
            FormId::CompK => "MT = a + b*L + c*K + d*L*K",
            FormId::CompLogK => "MT = a + b*L + c*log2(K+1) + d*L*K",
        }
    }

    pub fn required_features(self) -> &'static [&'static str] {
        match self {
            FormId::SlBase => &["L"],
            FormId::Nl => &["L", "nl"],
            _ => &["L", "K"],
        }
    }
}

impl fmt::Display for FormId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FormId::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model form `{s}`")))
    }
}

/// A model shape plus whether its intercept `a` is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelForm {
    pub form_id: FormId,
    pub intercept: bool,
}

impl ModelForm {
    pub fn new(form_id: FormId) -> Self {
        Self {
            form_id,
            intercept: true,
        }
    }

    /// Refit without the intercept. Not available for YM, whose intercept
    /// carries the absorbed width term.
    pub fn without_intercept(form_id: FormId) -> Result<Self> {
        if form_id == FormId::Ym {
            return Err(Error::Parameter("YM is only defined with an intercept".into()));
        }
        Ok(Self {
            form_id,
            intercept: false,
        })
    }

    /// The eight intercept forms.
    pub fn standard_set() -> Vec<ModelForm> {
        FormId::ALL.into_iter().map(ModelForm::new).collect()
    }

    /// Stable label, e.g. `LIU` or `LIU/no-intercept`.
    pub fn label(&self) -> String {
        if self.intercept {
            self.form_id.as_str().to_string()
        } else {
            format!("{}/no-intercept", self.form_id)
        }
    }

    pub fn arity(&self) -> usize {
        self.form_id.full_arity() - usize::from(!self.intercept)
    }

    pub fn coefficient_names(&self) -> &'static [&'static str] {
        const NAMES: [&str; 4] = ["a", "b", "c", "d"];
        let n = self.form_id.full_arity();
        if self.intercept {
            &NAMES[..n]
        } else {
            &NAMES[1..n]
        }
    }

    /// Whether the fitted model is linear in its coefficients on the MT scale.
    pub fn is_linear(&self) -> bool {
        !matches!(self.form_id, FormId::Ym | FormId::Liu)
    }
}

impl fmt::Display for ModelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Coefficient values in `a, b, c, d` order (the intercept omitted when not fitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients(pub Vec<f64>);

impl Coefficients {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, form: &ModelForm, name: &str) -> Option<f64> {
        let i = form.coefficient_names().iter().position(|n| *n == name)?;
        self.0.get(i).copied()
    }

    // Full (a, b, c, d) with a = 0 when the intercept is not fitted.
    fn expand(&self, form: &ModelForm) -> Result<[f64; 4]> {
        if self.0.len() != form.arity() {
            return Err(Error::InvalidInput(format!(
                "{} takes {} coefficients, got {}",
                form,
                form.arity(),
                self.0.len()
            )));
        }
        let mut full = [0.0; 4];
        let offset = usize::from(!form.intercept);
        for (i, v) in self.0.iter().enumerate() {
            full[i + offset] = *v;
        }
        Ok(full)
    }
}

/// Predicted movement time (ms).
pub fn predict(form: &ModelForm, coef: &Coefficients, f: &TrialFeatures) -> Result<f64> {
    let [a, b, c, d] = coef.expand(form)?;
    let l = f.length;
    let k = f.total_curvature;
    let mt = match form.form_id {
        FormId::SlBase => a + b * l,
        FormId::AddK => a + b * l + c * k,
        FormId::AddLogK => a + b * l + c * (k + 1.0).log2(),
        FormId::CompK => a + b * l + c * k + d * l * k,
        FormId::CompLogK => a + b * l + c * (k + 1.0).log2() + d * l * k,
        FormId::Nl => a + b * l * f.nl_value()?,
        FormId::Ym => {
            let den = l + c * k;
            if !(den > 0.0) {
                return Err(Error::Evaluation(format!(
                    "YM denominator L + c*K = {den} is not positive"
                )));
            }
            a + b * l * l / den
        }
        FormId::Liu => 10f64.powf(a + b * l.log10() + c * k / l),
    };
    Ok(mt)
}

/// How a model enters the least-squares machinery for one trial.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignRow {
    /// Predictor row for a model linear in MT.
    Mt(Vec<f64>),
    /// Predictor row for a model linear in log10(MT).
    Log10Mt(Vec<f64>),
    /// Nonlinear YM residual inputs.
    Ym { length: f64, total_curvature: f64 },
}

impl DesignRow {
    pub fn predictors(&self) -> Option<&[f64]> {
        match self {
            DesignRow::Mt(r) | DesignRow::Log10Mt(r) => Some(r),
            DesignRow::Ym { .. } => None,
        }
    }
}

pub fn design_row(form: &ModelForm, f: &TrialFeatures) -> Result<DesignRow> {
    let l = f.length;
    let k = f.total_curvature;
    let log_k = (k + 1.0).log2();
    let full: Vec<f64> = match form.form_id {
        FormId::SlBase => vec![1.0, l],
        FormId::AddK => vec![1.0, l, k],
        FormId::AddLogK => vec![1.0, l, log_k],
        FormId::CompK => vec![1.0, l, k, l * k],
        FormId::CompLogK => vec![1.0, l, log_k, l * k],
        FormId::Nl => vec![1.0, l * f.nl_value()?],
        FormId::Liu => vec![1.0, l.log10(), k / l],
        FormId::Ym => {
            return Ok(DesignRow::Ym {
                length: l,
                total_curvature: k,
            })
        }
    };
    let row = if form.intercept {
        full
    } else {
        full[1..].to_vec()
    };
    Ok(match form.form_id {
        FormId::Liu => DesignRow::Log10Mt(row),
        _ => DesignRow::Mt(row),
    })
}

/// One line of the `models list` catalog.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub form_id: FormId,
    pub formula: &'static str,
    pub required_features: &'static [&'static str],
}

pub fn catalog() -> Vec<CatalogEntry> {
    FormId::ALL
        .into_iter()
        .map(|form_id| CatalogEntry {
            form_id,
            formula: form_id.formula(),
            required_features: form_id.required_features(),
        })
        .collect()
}
