//! Log-space p-value machinery: Student-t and even-dof chi-square tails,
//! Spearman rank p-values, Fisher aggregation and uniformity diagnostics.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Smallest positive normal f64 rounded the way reports quote it.
pub const DISPLAY_FLOOR: f64 = 2.2e-308;

/// ln of the smallest positive subnormal f64.
const LN_MIN_SUBNORMAL: f64 = -744.440_071_921_381_3;

/// A p-value stored as its natural logarithm, so values far below f64
/// underflow keep their magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPValue {
    ln_p: f64,
    /// Set when the value stands in for an exact zero (perfect rank agreement).
    #[serde(default)]
    exact_max: bool,
}

impl LogPValue {
    pub const ONE: Self = Self {
        ln_p: 0.0,
        exact_max: false,
    };

    /// Clamps positive inputs (rounding noise above p = 1) to zero.
    pub fn from_ln(ln_p: f64) -> Self {
        debug_assert!(!ln_p.is_nan(), "ln p is NaN");
        Self {
            ln_p: ln_p.min(0.0),
            exact_max: false,
        }
    }

    pub fn from_p(p: f64) -> Self {
        Self::from_ln(p.ln())
    }

    fn flagged(ln_p: f64) -> Self {
        Self {
            ln_p: ln_p.min(0.0),
            exact_max: true,
        }
    }

    pub fn ln_p(self) -> f64 {
        self.ln_p
    }

    pub fn log10_p(self) -> f64 {
        self.ln_p / std::f64::consts::LN_10
    }

    /// Raw probability; underflows to 0 below ~1e-308.
    pub fn p(self) -> f64 {
        self.ln_p.exp()
    }

    /// Probability clamped below at [`DISPLAY_FLOOR`].
    pub fn display_p(self) -> f64 {
        self.p().max(DISPLAY_FLOOR)
    }

    pub fn is_exact_max(self) -> bool {
        self.exact_max
    }

    /// `p <= threshold`, compared in log space.
    pub fn at_most(self, threshold: f64) -> bool {
        self.ln_p <= threshold.ln()
    }
}

/// `ln(1 - e^x)` for `x <= 0`, accurate near both ends.
pub fn ln_1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln Σ e^{x_i}` without overflow; empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `ln I_x(a, b)` given `ln x` and `ln(1 - x)` separately, so that both tails
/// keep full relative precision.
pub fn ln_beta_inc(a: f64, b: f64, ln_x: f64, ln_1mx: f64) -> f64 {
    if ln_x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if ln_1mx == f64::NEG_INFINITY {
        return 0.0;
    }
    let x = ln_x.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        a * ln_x + b * ln_1mx - a.ln() - ln_beta(a, b) + beta_cf(a, b, x).ln()
    } else {
        let y = ln_1mx.exp();
        let ln_other = b * ln_1mx + a * ln_x - b.ln() - ln_beta(a, b) + beta_cf(b, a, y).ln();
        ln_1m_exp(ln_other)
    }
}

/// `ln P(T_dof > t)` for Student's t distribution.
pub fn student_t_log_sf(t: f64, dof: f64) -> f64 {
    if t.is_nan() || !(dof > 0.0) {
        return f64::NAN;
    }
    if t == 0.0 {
        return -std::f64::consts::LN_2;
    }
    if t == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    // x = dof / (dof + t²), 1 - x = t² / (dof + t²), both via logs so huge |t| is safe.
    let at = t.abs();
    let ln_t2 = 2.0 * at.ln();
    let ln_den = if ln_t2 > dof.ln() {
        ln_t2 + (dof / (at * at)).ln_1p()
    } else {
        dof.ln() + (at * at / dof).ln_1p()
    };
    let ln_x = dof.ln() - ln_den;
    let ln_1mx = ln_t2 - ln_den;
    let ln_half_tail = -std::f64::consts::LN_2 + ln_beta_inc(dof / 2.0, 0.5, ln_x, ln_1mx);
    if t > 0.0 {
        ln_half_tail
    } else {
        ln_1m_exp(ln_half_tail)
    }
}

/// `ln P(χ²_dof > x)` for even `dof`, from the closed-form Poisson series.
pub fn chi2_even_log_sf(x: f64, dof: u64) -> Result<f64> {
    if dof == 0 || dof % 2 != 0 {
        return Err(Error::Domain(format!("chi-square dof must be even and positive, got {dof}")));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("chi-square argument must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let half = x / 2.0;
    let ln_half = half.ln();
    let m = dof / 2;
    if half < m as f64 {
        // Lower tail e^{-x/2} Σ_{k≥m} (x/2)^k / k!, so that survival values
        // close to 1 keep their relative precision in log space.
        let ln_m_fact: f64 = (2..=m).map(|k| (k as f64).ln()).sum();
        let first = m as f64 * ln_half - ln_m_fact;
        let mut terms = vec![first];
        let (mut term, mut k) = (first, m);
        while term > first - 40.0 {
            k += 1;
            term += ln_half - (k as f64).ln();
            terms.push(term);
        }
        return Ok(ln_1m_exp(log_sum_exp(&terms) - half));
    }
    let mut terms = Vec::with_capacity(m as usize);
    let mut term = 0.0;
    for k in 0..m {
        if k > 0 {
            term += ln_half - (k as f64).ln();
        }
        terms.push(term);
    }
    Ok(log_sum_exp(&terms) - half)
}

/// Survival of a chi-square with any positive dof (regularized upper gamma).
/// Used for goodness-of-fit diagnostics, not for the test statistics.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(dof / 2.0, x / 2.0)
    }
}

/// Fisher's method: combines independent p-values into one.
pub fn fisher_aggregate(ps: &[LogPValue]) -> Result<LogPValue> {
    if ps.is_empty() {
        return Err(Error::Domain("cannot aggregate an empty list of p-values".into()));
    }
    let xi: f64 = ps.iter().map(|p| p.ln_p).sum();
    let ln_p = chi2_even_log_sf(-2.0 * xi, 2 * ps.len() as u64)?;
    Ok(if ps.iter().any(|p| p.exact_max) {
        LogPValue::flagged(ln_p)
    } else {
        LogPValue::from_ln(ln_p)
    })
}

fn check_permutation(p: &[usize]) -> Result<()> {
    let mut seen = vec![false; p.len()];
    for &v in p {
        if v >= p.len() || std::mem::replace(&mut seen[v], true) {
            return Err(Error::Validation(format!(
                "not a permutation of 0..{}: contains {v} out of range or twice",
                p.len()
            )));
        }
    }
    Ok(())
}

/// One-sided p-value for Spearman correlation from the sum of squared rank
/// differences of two length-`h` rankings.
fn spearman_ln_p(sum_d2: f64, h: usize) -> f64 {
    let hf = h as f64;
    let one_minus_r = 6.0 * sum_d2 / (hf * (hf * hf - 1.0));
    let r = 1.0 - one_minus_r;
    if r <= -1.0 {
        return 0.0;
    }
    let t = r * ((hf - 2.0) / (one_minus_r * (1.0 + r))).sqrt();
    student_t_log_sf(t, hf - 2.0)
}

/// Spearman rank test of `pi1` against `pi2` (both permutations of `0..h`).
///
/// Perfect agreement has p = 0 in the limit; it is reported with the
/// `exact_max` flag and an ln p below every attainable value for this `h`.
pub fn spearman_pvalue(pi1: &[usize], pi2: &[usize]) -> Result<LogPValue> {
    if pi1.len() != pi2.len() {
        return Err(Error::Dimension(format!(
            "rankings differ in length: {} vs {}",
            pi1.len(),
            pi2.len()
        )));
    }
    let h = pi1.len();
    if h < 3 {
        return Err(Error::Domain(format!("Spearman test needs h >= 3, got {h}")));
    }
    check_permutation(pi1)?;
    check_permutation(pi2)?;
    let sum_d2: f64 = pi1
        .iter()
        .zip(pi2)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    if sum_d2 == 0.0 {
        let next = spearman_ln_p(2.0, h);
        return Ok(LogPValue::flagged(LN_MIN_SUBNORMAL.min(next - std::f64::consts::LN_2)));
    }
    Ok(LogPValue::from_ln(spearman_ln_p(sum_d2, h)))
}

/// Spearman rank correlation coefficient (no tie handling).
pub fn spearman_rho(pi1: &[usize], pi2: &[usize]) -> f64 {
    let h = pi1.len() as f64;
    let sum_d2: f64 = pi1
        .iter()
        .zip(pi2)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    1.0 - 6.0 * sum_d2 / (h * (h * h - 1.0))
}

/// Replaces values by their ranks `0..n` (values must be distinct).
pub fn ranks(values: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by_key(|&i| values[i]);
    let mut out = vec![0; values.len()];
    for (rank, i) in idx.into_iter().enumerate() {
        out[i] = rank;
    }
    out
}

/// Kolmogorov-Smirnov statistic of `samples` against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d: f64, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

pub fn ks_uniform(samples: &[f64]) -> f64 {
    ks_statistic(samples, |x| x.clamp(0.0, 1.0))
}

/// Asymptotic KS critical value `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Pearson chi-square goodness of fit against equal cell probabilities.
/// Returns `(statistic, p-value)`.
pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    let expected = n as f64 / k;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    (stat, chi2_sf(stat, k - 1.0))
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn t_tail_closed_forms() {
        for dof in [1.0, 2.0, 7.0, 100.0] {
            assert_relative_eq!(student_t_log_sf(0.0, dof), 0.5f64.ln(), max_relative = 1e-15);
        }
        assert_relative_eq!(student_t_log_sf(1.0, 1.0), 0.25f64.ln(), max_relative = 1e-13);
        // dof = 2 has sf(t) = 1/2 - t / (2 sqrt(2 + t²)).
        for t in [-3.0, -0.5, 0.3, 2.0, 10.0] {
            let exact = 0.5 - t / (2.0 * (2.0f64 + t * t).sqrt());
            assert_relative_eq!(student_t_log_sf(t, 2.0), exact.ln(), max_relative = 1e-12);
        }
        assert_relative_eq!(student_t_log_sf(3.0, 8.0).exp(), 0.008_535_840_616_891_317, max_relative = 1e-9);
    }

    #[test]
    fn t_tail_survives_extreme_arguments() {
        let ln_p = student_t_log_sf(1e200, 5.0);
        assert!(ln_p.is_finite() && ln_p < -2000.0);
        assert_eq!(student_t_log_sf(f64::INFINITY, 3.0), f64::NEG_INFINITY);
        assert!(student_t_log_sf(-1e6, 3.0).abs() < 1e-15);
    }

    #[test]
    fn chi2_closed_forms() {
        assert_eq!(chi2_even_log_sf(0.0, 6).unwrap(), 0.0);
        for x in [0.1, 3.0, 250.0, 1e6] {
            assert_relative_eq!(chi2_even_log_sf(x, 2).unwrap(), -x / 2.0, max_relative = 1e-15);
        }
        let p = chi2_even_log_sf(7.824, 4).unwrap().exp();
        assert_relative_eq!(p, (-3.912f64).exp() * (1.0 + 3.912), max_relative = 1e-13);
        assert!(matches!(chi2_even_log_sf(1.0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn fisher_examples() {
        for p in [0.5, 1e-3, 0.99] {
            let out = fisher_aggregate(&[LogPValue::from_p(p)]).unwrap();
            assert_relative_eq!(out.ln_p(), p.ln(), max_relative = 1e-12);
        }
        let ones = fisher_aggregate(&[LogPValue::ONE; 5]).unwrap();
        assert_eq!(ones.ln_p(), 0.0);
        let two = fisher_aggregate(&[LogPValue::from_p(0.1), LogPValue::from_p(0.2)]).unwrap();
        assert_relative_eq!(two.p(), 0.098_240_460_108_562_94, max_relative = 1e-10);
        assert!(fisher_aggregate(&[]).is_err());
    }

    #[test]
    fn fisher_handles_values_below_underflow() {
        let ps = [LogPValue::from_ln(-1200.0), LogPValue::from_ln(-900.0)];
        let out = fisher_aggregate(&ps).unwrap();
        assert!(out.ln_p().is_finite() && out.ln_p() < -2000.0);
        assert_eq!(out.display_p(), DISPLAY_FLOOR);
    }

    #[test]
    fn spearman_examples() {
        let id: Vec<usize> = (0..10).collect();
        let rev: Vec<usize> = (0..10).rev().collect();
        let same = spearman_pvalue(&id, &id).unwrap();
        assert!(same.is_exact_max());
        assert!(same.display_p() <= DISPLAY_FLOOR);
        assert_eq!(spearman_pvalue(&id, &rev).unwrap().ln_p(), 0.0);

        let p = spearman_pvalue(&[0, 1, 2, 3, 4], &[0, 1, 2, 4, 3]).unwrap();
        assert_relative_eq!(p.p(), 0.018_693_036_734_249_314, max_relative = 1e-9);
    }

    #[test]
    fn spearman_rejects_bad_input() {
        assert!(matches!(spearman_pvalue(&[0, 1], &[1, 0]), Err(Error::Domain(_))));
        assert!(matches!(spearman_pvalue(&[0, 1, 1], &[0, 1, 2]), Err(Error::Validation(_))));
        assert!(matches!(spearman_pvalue(&[0, 1, 3], &[0, 1, 2]), Err(Error::Validation(_))));
    }

    #[test]
    fn exact_max_sits_below_every_attainable_value() {
        for h in [3usize, 10, 200, 5000] {
            let id: Vec<usize> = (0..h).collect();
            let mut near = id.clone();
            near.swap(0, 1);
            let top = spearman_pvalue(&id, &id).unwrap();
            let next = spearman_pvalue(&id, &near).unwrap();
            assert!(top.ln_p() < next.ln_p(), "h = {h}");
        }
    }

    #[test]
    fn helpers() {
        assert_eq!(ranks(&[10, 3, 7]), vec![2, 0, 1]);
        assert_relative_eq!(ks_critical_value(200, 0.01), 0.1151, epsilon = 1e-4);
        assert_relative_eq!(ln_1m_exp(-1e-20), (1e-20f64).ln(), max_relative = 1e-12);
        assert_relative_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln());
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
