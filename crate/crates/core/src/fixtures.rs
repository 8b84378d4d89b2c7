//! Reference measurements from the original curved-tunnel steering study.

use crate::models::TrialFeatures;

/// Tunnel width used for every trial, in px.
pub const TRIAL_WIDTH_PX: f64 = 50.0;

/// Horizontal span of every generated centerline, in px.
pub const X_MAX_PX: f64 = 1300.0;

/// Total-curvature targets for levels K0, K1, K2.
pub const K_TARGETS: [f64; 3] = [10.0, 16.0, 22.0];

/// Per-level centerline length mean and standard deviation (px) for L0, L1, L2.
pub const LENGTH_LEVELS: [(f64, f64); 3] = [(1500.10, 2.25), (1882.33, 2.23), (2319.75, 16.18)];

/// One row of the reference per-trial summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialReference {
    pub trial_id: &'static str,
    pub length_px: f64,
    pub total_curvature: f64,
    pub mt_mean_ms: f64,
    pub mt_std_ms: f64,
    pub opm_mean: f64,
    pub opm_std: f64,
    pub v_avg_mean: f64,
    pub v_avg_std: f64,
}

pub const TRIALS: [TrialReference; 9] = [
    row("L0-K0", 1502.0, 10.0, 11932.85, 2724.46, 0.0021, 0.0024, 0.261, 0.058),
    row("L0-K1", 1498.0, 16.0, 13084.73, 2439.85, 0.0013, 0.0020, 0.232, 0.041),
    row("L0-K2", 1500.0, 22.0, 14809.09, 3480.69, 0.0005, 0.0007, 0.205, 0.049),
    row("L1-K0", 1885.0, 10.0, 15867.06, 3521.73, 0.0028, 0.0031, 0.250, 0.052),
    row("L1-K1", 1880.0, 16.0, 17152.55, 4598.70, 0.0027, 0.0020, 0.235, 0.063),
    row("L1-K2", 1882.0, 22.0, 18038.69, 3587.48, 0.0019, 0.0021, 0.215, 0.041),
    row("L2-K0", 2303.0, 10.0, 20092.95, 4214.74, 0.0052, 0.0042, 0.242, 0.043),
    row("L2-K1", 2322.0, 16.0, 21704.08, 5663.71, 0.0034, 0.0029, 0.229, 0.057),
    row("L2-K2", 2335.0, 22.0, 21432.13, 4601.69, 0.0018, 0.0017, 0.224, 0.046),
];

#[allow(clippy::too_many_arguments)]
const fn row(
    trial_id: &'static str,
    length_px: f64,
    total_curvature: f64,
    mt_mean_ms: f64,
    mt_std_ms: f64,
    opm_mean: f64,
    opm_std: f64,
    v_avg_mean: f64,
    v_avg_std: f64,
) -> TrialReference {
    TrialReference {
        trial_id,
        length_px,
        total_curvature,
        mt_mean_ms,
        mt_std_ms,
        opm_mean,
        opm_std,
        v_avg_mean,
        v_avg_std,
    }
}

/// The nine reference (L, K, mean MT) points.
/// The curvature-cube-root integral is not available for these curves.
pub fn reference_features() -> Vec<TrialFeatures> {
    TRIALS
        .iter()
        .map(|t| TrialFeatures {
            trial_id: t.trial_id.to_string(),
            length: t.length_px,
            total_curvature: t.total_curvature,
            nl: None,
            mt_mean: Some(t.mt_mean_ms),
        })
        .collect()
}

/// `L{l}-K{k}` label for a design cell.
pub fn trial_label(level_l: usize, level_k: usize) -> String {
    format!("L{level_l}-K{level_k}")
}

/// Parses an `L{l}-K{k}` label back into its levels.
pub fn parse_trial_label(id: &str) -> Option<(usize, usize)> {
    let rest = id.strip_prefix('L')?;
    let (l, k) = rest.split_once("-K")?;
    Some((l.parse().ok()?, k.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for l in 0..3 {
            for k in 0..3 {
                assert_eq!(parse_trial_label(&trial_label(l, k)), Some((l, k)));
            }
        }
        assert_eq!(parse_trial_label("L0K1"), None);
        assert_eq!(parse_trial_label("X0-K1"), None);
    }

    #[test]
    fn table_is_in_design_order() {
        for (i, t) in TRIALS.iter().enumerate() {
            assert_eq!(t.trial_id, trial_label(i / 3, i % 3));
            assert_eq!(t.total_curvature, K_TARGETS[i % 3]);
        }
    }
}
