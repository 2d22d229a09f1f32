//! Paired significance testing for per-split score sequences.
//!
//! The paired two-sided t-test uses n−1 degrees of freedom. When every
//! paired difference is identical the t statistic is undefined; the result
//! is then flagged `degenerate` instead of crashing: a zero mean difference
//! reports (t = 0, p = 1), a nonzero one reports (t = ±∞, p = 0).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Outcome of a paired two-sided t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p: f64,
    pub degrees_of_freedom: usize,
    pub mean_diff: f64,
    /// True when the differences had zero variance and `t`/`p` are the
    /// documented limiting values rather than a computed statistic.
    pub degenerate: bool,
}

/// Paired two-sided t-test of `a` against `b` (difference = a − b).
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired test over {} vs {} scores",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput(
            "paired t-test needs at least two score pairs".into(),
        ));
    }
    for &v in a.iter().chain(b) {
        if !v.is_finite() {
            return Err(Error::InvalidInput("non-finite score in paired t-test".into()));
        }
    }

    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(PairedTTest {
            t,
            p,
            degrees_of_freedom: n - 1,
            mean_diff: mean,
            degenerate: true,
        });
    }

    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Internal(format!("t-distribution setup: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTest {
        t,
        p: p.clamp(0.0, 1.0),
        degrees_of_freedom: n - 1,
        mean_diff: mean,
        degenerate: false,
    })
}

/// Bonferroni adjustment for `m` simultaneous tests: min(1, m·p).
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Worked by hand: diffs = [0.05, −0.02, 0.12], mean 0.05, sd 0.07,
    // t = 0.05·√3/0.07. With 2 degrees of freedom the t CDF has the closed
    // form 1/2 + t/(2√(t²+2)), so the two-sided p is 1 − t/√(t²+2) — an
    // oracle independent of the distribution library.
    #[test]
    fn matches_closed_form_two_degree_oracle() {
        let a = [0.5, 0.6, 0.7];
        let b = [0.45, 0.62, 0.58];
        let result = paired_ttest(&a, &b).unwrap();
        let t_expected = 0.05 * 3f64.sqrt() / 0.07;
        let p_expected = 1.0 - t_expected / (t_expected * t_expected + 2.0).sqrt();
        assert!(!result.degenerate);
        assert_eq!(result.degrees_of_freedom, 2);
        assert!((result.t - t_expected).abs() < 1e-9, "t = {}", result.t);
        assert!((result.p - p_expected).abs() < 1e-6, "p = {}", result.p);
        assert!((result.t - 1.237_179_148_263_483_7).abs() < 1e-9);
    }

    #[test]
    fn identical_sequences_are_degenerate_with_p_one() {
        let a = [0.5, 0.6, 0.7, 0.8];
        let result = paired_ttest(&a, &a).unwrap();
        assert!(result.degenerate);
        assert_eq!(result.t, 0.0);
        assert_eq!(result.p, 1.0);
    }

    #[test]
    fn constant_nonzero_shift_is_degenerate_with_p_zero() {
        let a = [0.5, 0.6, 0.7];
        let b = [0.4, 0.5, 0.6];
        let result = paired_ttest(&a, &b).unwrap();
        assert!(result.degenerate);
        assert!(result.t.is_infinite() && result.t > 0.0);
        assert_eq!(result.p, 0.0);
        assert!((result.mean_diff - 0.1).abs() < 1e-12);
    }

    #[test]
    fn clear_separation_yields_small_p() {
        let a: Vec<f64> = (0..20).map(|i| 0.8 + 0.001 * (i % 3) as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| 0.5 + 0.001 * (i % 5) as f64).collect();
        let result = paired_ttest(&a, &b).unwrap();
        assert!(result.p < 1e-6);
        assert!(result.t > 0.0);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(paired_ttest(&[1.0], &[1.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_ttest(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bonferroni_scales_and_caps() {
        assert!((bonferroni(0.01, 3) - 0.03).abs() < 1e-15);
        assert_eq!(bonferroni(0.5, 4), 1.0);
        assert_eq!(bonferroni(0.0, 10), 0.0);
        assert_eq!(bonferroni(0.2, 1), 0.2);
    }

    proptest! {
        #[test]
        fn swapping_the_sides_flips_t_and_keeps_p(
            pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..30)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let ab = paired_ttest(&a, &b).unwrap();
            let ba = paired_ttest(&b, &a).unwrap();
            if !ab.degenerate {
                prop_assert!((ab.t + ba.t).abs() < 1e-9);
                prop_assert!((ab.p - ba.p).abs() < 1e-9);
            }
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn adding_a_constant_to_both_sides_changes_nothing(
            pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..20),
            shift in -1.0f64..1.0,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
            let base = paired_ttest(&a, &b).unwrap();
            let moved = paired_ttest(&a2, &b2).unwrap();
            if !base.degenerate && !moved.degenerate {
                prop_assert!((base.t - moved.t).abs() < 1e-6);
            }
        }
    }
}
