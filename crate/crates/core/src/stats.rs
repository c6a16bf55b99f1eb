//! Small statistics toolkit for the Monte Carlo estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Online mean/variance accumulator (Welford).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Running {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    /// Chan et al. parallel merge.
    pub fn merge(&mut self, other: &Running) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }
}

impl FromIterator<f64> for Running {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut r = Running::default();
        for x in iter {
            r.push(x);
        }
        r
    }
}

/// Proportion with a Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub n: u64,
}

impl Proportion {
    pub fn new(successes: u64, n: u64) -> Self {
        Self { successes, n }
    }

    pub fn estimate(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.successes as f64 / self.n as f64
        }
    }

    /// Binomial standard error at the point estimate.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        let p = self.estimate();
        (p * (1.0 - p) / self.n as f64).sqrt()
    }

    pub fn wilson(&self, z: f64) -> (f64, f64) {
        wilson(self.successes, self.n, z)
    }
}

pub fn wilson(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic (Stephens' small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Result of a chi-squared goodness-of-fit test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-squared test of observed counts against a Poisson(mean) law. Adjacent
/// count values are pooled until every bin expects at least five observations.
pub fn poisson_chi_squared(counts: &[u64], mean: f64) -> ChiSquaredTest {
    let n = counts.len() as f64;
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut observed = vec![0u64; max + 1];
    for &c in counts {
        observed[c as usize] += 1;
    }
    // Poisson pmf in log space to survive large means.
    let ln_mean = mean.ln();
    let mut pmf = Vec::with_capacity(max + 1);
    let mut ln_fact = 0.0;
    for k in 0..=max {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        let lp = if mean > 0.0 { k as f64 * ln_mean - mean - ln_fact } else if k == 0 { 0.0 } else { f64::NEG_INFINITY };
        pmf.push(lp.exp());
    }
    // Pool into bins of expected >= 5; the last bin absorbs the upper tail.
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    let mut cum = 0.0;
    for k in 0..=max {
        o_acc += observed[k] as f64;
        e_acc += n * pmf[k];
        cum += pmf[k];
        if e_acc >= 5.0 && n * (1.0 - cum) >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    e_acc += n * (1.0 - cum).max(0.0);
    match bins.last_mut() {
        Some(last) if e_acc < 5.0 => {
            last.0 += o_acc;
            last.1 += e_acc;
        }
        _ => bins.push((o_acc, e_acc)),
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquaredTest {
        statistic,
        dof,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_merge_matches_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let all: Running = xs.iter().copied().collect();
        let mut a: Running = xs[..37].iter().copied().collect();
        let b: Running = xs[37..].iter().copied().collect();
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson(30, 100, Z95);
        assert!(lo < 0.3 && 0.3 < hi);
        assert!((lo - 0.2189).abs() < 1e-3 && (hi - 0.3958).abs() < 1e-3);
        assert_eq!(wilson(0, 0, Z95), (0.0, 1.0));
        let (lo, _) = wilson(0, 50, Z95);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn ks_pvalue_reference_points() {
        // lambda = 1.3581 is the 5% critical value of the Kolmogorov law.
        let n = 10_000;
        let sn = (n as f64).sqrt();
        let d = 1.3581 / (sn + 0.12 + 0.11 / sn);
        assert!((ks_pvalue(d, n) - 0.05).abs() < 1e-3);
        assert!(ks_pvalue(0.0, n) > 0.999);
    }

    #[test]
    fn poisson_chi_squared_accepts_exact_frequencies() {
        // Counts laid out in proportion to the pmf give a tiny statistic.
        let mean = 3.0f64;
        let mut counts = Vec::new();
        let mut p = (-mean).exp();
        for k in 0..15u64 {
            if k > 0 {
                p *= mean / k as f64;
            }
            for _ in 0..(p * 10_000.0).round() as usize {
                counts.push(k);
            }
        }
        let t = poisson_chi_squared(&counts, mean);
        assert!(t.p_value > 0.99, "{t:?}");
        let shifted: Vec<u64> = counts.iter().map(|c| c + 1).collect();
        assert!(poisson_chi_squared(&shifted, mean).p_value < 1e-6);
    }
}
