//! Small statistical helpers shared by the estimators and experiment runners.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal, StudentsT};

/// Inverse of the standard normal CDF. `None` outside `(0, 1)`.
pub fn inverse_normal_cdf(p: f64) -> Option<f64> {
    if !(p > 0.0 && p < 1.0) {
        return None;
    }
    Some(standard_normal().inverse_cdf(p))
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Two-sided critical value `z_{alpha/2}`.
pub fn two_sided_z(alpha: f64) -> Option<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return None;
    }
    inverse_normal_cdf(1.0 - alpha / 2.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator). `None` for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Standard error of the mean.
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    sample_sd(xs).map(|sd| sd / (xs.len() as f64).sqrt())
}

/// Standard error of a binomial proportion estimated from `n` trials.
pub fn proportion_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Ordinary least-squares fit `y = intercept + slope * x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Slope of `ln y` against `ln x`. Points with non-positive coordinates are rejected.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.iter().chain(ys).any(|v| *v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly).map(|(_, s)| s)
}

/// Outcome of a paired sign test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Two-sided exact binomial p-value over the non-tied pairs.
    pub p_value: f64,
}

/// Exact two-sided sign test; `wins` counts pairs where `a < b`.
pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
        } else if x > y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = (wins + losses) as u64;
    let p_value = if n == 0 {
        1.0
    } else {
        let k = wins.min(losses) as u64;
        let dist = Binomial::new(0.5, n).expect("valid binomial");
        (2.0 * dist.cdf(k)).min(1.0)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

/// Paired t statistics over per-unit differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// `None` when the differences have zero variance.
    pub t: Option<f64>,
    pub p_value: Option<f64>,
    /// Standardized mean difference `mean / sd`.
    pub cohens_d: Option<f64>,
}

pub fn paired_t(diffs: &[f64]) -> Option<PairedT> {
    let sd = sample_sd(diffs)?;
    let n = diffs.len();
    let m = mean(diffs);
    if sd <= 1e-12 * m.abs().max(1.0) || !sd.is_finite() {
        return Some(PairedT {
            n,
            mean: m,
            sd,
            t: None,
            p_value: None,
            cohens_d: None,
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid t distribution");
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Some(PairedT {
        n,
        mean: m,
        sd,
        t: Some(t),
        p_value: Some(p_value),
        cohens_d: Some(m / sd),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_at_five_percent() {
        let z = two_sided_z(0.05).unwrap();
        assert!((z - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((z - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn inverse_round_trips() {
        for &p in &[
            1e-12, 1e-6, 0.001, 0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.975, 0.999,
        ] {
            let z = inverse_normal_cdf(p).unwrap();
            assert!((normal_cdf(z) - p).abs() < 1e-10 * p, "p={p}");
        }
        assert!((inverse_normal_cdf(0.995).unwrap() - 2.575_829_303_548_901).abs() < 1e-12);
    }

    #[test]
    fn inverse_rejects_boundaries() {
        assert!(inverse_normal_cdf(0.0).is_none());
        assert!(inverse_normal_cdf(1.0).is_none());
        assert!(inverse_normal_cdf(f64::NAN).is_none());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [10.0, 40.0, 160.0, 640.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((log_log_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sign_test_all_wins() {
        let a = vec![0.0; 10];
        let b = vec![1.0; 10];
        let s = sign_test(&a, &b);
        assert_eq!(s.wins, 10);
        assert!((s.p_value - 2.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn paired_t_degenerate_variance() {
        let r = paired_t(&[0.2, 0.2, 0.2]).unwrap();
        assert!(r.t.is_none() && r.cohens_d.is_none());
        assert!(paired_t(&[1.0]).is_none());
    }
}
