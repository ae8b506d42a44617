//! Correlation statistics with p-values.
//!
//! Pearson and Spearman (tie-averaged ranks) coefficients; two-sided
//! p-values via the standard t-approximation `t = r·√((n−2)/(1−r²))` with
//! `n−2` degrees of freedom, evaluated through the regularized incomplete
//! beta function. For small samples a permutation test is available: exact
//! enumeration when `n! ≤ 5040`, seeded Monte-Carlo otherwise.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream;

/// A correlation coefficient with its sample size and two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub coefficient: f64,
    pub p_value: f64,
}

fn validate_pairs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Config(format!(
            "correlation needs paired samples: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Config(format!("correlation needs ≥ 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Config("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Pearson r without the p-value; errors on constant input.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    validate_pairs(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "correlation undefined: one variable is constant".into(),
        ));
    }
    // Roundoff can push |r| a hair past 1 on exactly collinear data.
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation with a two-sided t-approximation p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    let r = pearson_r(x, y)?;
    Ok(Correlation { n: x.len(), coefficient: r, p_value: correlation_p_value(r, x.len()) })
}

/// Tie-averaged ranks, 1-based: equal values share the mean of the ranks
/// they occupy.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share the average rank (1-based).
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with a large-sample t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    validate_pairs(x, y)?;
    let rho = pearson_r(&ranks(x), &ranks(y))?;
    Ok(Correlation { n: x.len(), coefficient: rho, p_value: correlation_p_value(rho, x.len()) })
}

/// Two-sided p-value for a correlation coefficient from `n` pairs under the
/// null of no association: `t = r·√((n−2)/(1−r²))` referred to a Student-t
/// distribution with `n−2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    assert!(n >= 3, "p-value needs n ≥ 3");
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0; // |r| = 1: the statistic is unbounded
    }
    let t = r.abs() * (df / denom).sqrt();
    student_t_two_sided_p(t, df)
}

/// Two-sided tail probability of Student's t:
/// `P(|T| ≥ t) = I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    assert!(df > 0.0 && t.is_finite() && t >= 0.0);
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Natural log of the gamma function (Lanczos, g=7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma needs a positive argument");
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π/sin(πx).
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEFFS[0];
    let t = x + 7.5;
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta function `I_x(a, b)` via the Lentz continued
/// fraction, using the symmetry `I_x(a,b) = 1 − I_{1−x}(b,a)` to stay in the
/// rapidly-converging region.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "incomplete beta needs positive shape parameters");
    assert!((0.0..=1.0).contains(&x), "incomplete beta argument outside [0,1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b)
        - ln_gamma(a)
        - ln_gamma(b))
    .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - (front * beta_cont_frac(b, a, 1.0 - x) / b)
    }
}

fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITERS: usize = 400;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITERS {
        let m = m as f64;
        // Even step.
        let num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
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

/// Threshold below which the permutation test enumerates every ordering.
const EXACT_PERMUTATION_MAX_N: usize = 7;

/// Two-sided permutation p-value for the Pearson coefficient: the fraction
/// of permutations of `y` whose |r| reaches the observed |r|.
///
/// For `n ≤ 7` every ordering is enumerated (exact test). Otherwise
/// `iterations` seeded shuffles are drawn and the observed labeling is
/// counted with them (the standard +1 correction), so the estimate is never
/// exactly zero.
pub fn permutation_p_value(x: &[f64], y: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    let observed = pearson_r(x, y)?.abs();
    let n = x.len();
    // Tolerate roundoff when a permuted r ties the observed one.
    let reaches = |r: f64| r.abs() >= observed - 1e-12;

    if n <= EXACT_PERMUTATION_MAX_N {
        let mut perm: Vec<f64> = y.to_vec();
        let mut count = 0usize;
        let mut total = 0usize;
        // Heap's algorithm, iterative.
        let mut stack = vec![0usize; n];
        let mut tally = |p: &[f64]| {
            total += 1;
            if let Ok(r) = pearson_r(x, p) {
                if reaches(r) {
                    count += 1;
                }
            }
        };
        tally(&perm);
        let mut i = 0;
        while i < n {
            if stack[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(stack[i], i);
                }
                tally(&perm);
                stack[i] += 1;
                i = 0;
            } else {
                stack[i] = 0;
                i += 1;
            }
        }
        return Ok(count as f64 / total as f64);
    }

    if iterations == 0 {
        return Err(Error::Config("permutation test needs iterations ≥ 1 for n > 7".into()));
    }
    let mut count = 1usize; // the observed labeling itself
    for it in 0..iterations {
        let mut rng = stream(seed, "stats/permutation", it as u64);
        let mut perm: Vec<f64> = y.to_vec();
        perm.shuffle(&mut rng);
        if let Ok(r) = pearson_r(x, &perm) {
            if reaches(r) {
                count += 1;
            }
        }
    }
    Ok(count as f64 / (iterations + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson_r(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap(), 1.0);
        assert_eq!(pearson_r(&x, &[-1.0, -2.0, -3.0, -4.0]).unwrap(), -1.0);
        // dx = [−1.5,−0.5,0.5,1.5], dy = [−1.5,0.5,−0.5,1.5] → r = 4/5.
        let r = pearson_r(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        assert!(matches!(
            pearson_r(&x, &[5.0; 4]),
            Err(Error::Degenerate(_))
        ));
        assert!(pearson_r(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(ranks(&[7.0, 7.0, 7.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_sees_monotone_structure() {
        let x = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let s = spearman(&x, &y).unwrap();
        assert_eq!(s.coefficient, 1.0);
        let p = pearson(&x, &y).unwrap();
        assert!(p.coefficient < 1.0);
        // Shared tie pattern still gives perfect rank agreement.
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [10.0, 20.0, 20.0, 30.0];
        assert_eq!(spearman(&a, &b).unwrap().coefficient, 1.0);
    }

    /// Simpson integration of the beta density; independent oracle for the
    /// continued-fraction evaluation.
    fn simpson_inc_beta(a: f64, b: f64, x: f64) -> f64 {
        let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
        let f = |t: f64| {
            if t <= 0.0 || t >= 1.0 {
                0.0
            } else {
                (ln_norm + (a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln()).exp()
            }
        };
        // Only valid when the integrand is finite on [0, x]: a ≥ 1, and
        // b ≥ 1 unless x stays clear of 1. Singular shapes get closed forms.
        assert!(a >= 1.0 && (b >= 1.0 || x < 0.95));
        let (lo, hi) = (0.0, x);
        let n = 200_001; // odd count → even interval count for Simpson
        let h = (hi - lo) / (n - 1) as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n - 1 {
            let t = lo + i as f64 * h;
            acc += f(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn incomplete_beta_matches_simpson_integration() {
        for &(a, b, x) in
            &[(2.0, 3.0, 0.7), (5.0, 0.5, 0.9), (6.0, 0.5, 0.75), (1.0, 1.0, 0.42), (3.0, 3.0, 0.5)]
        {
            let cf = reg_inc_beta(a, b, x);
            let simpson = simpson_inc_beta(a, b, x);
            assert!(
                (cf - simpson).abs() < 1e-6,
                "I_{x}({a},{b}): continued fraction {cf} vs Simpson {simpson}"
            );
        }
        // Endpoint-singular shape (a = b = ½, the t-distribution tail with
        // df = 1) against its arcsine closed form, where Simpson diverges.
        for &x in &[0.1, 0.3, 0.5, 0.77] {
            let cf = reg_inc_beta(0.5, 0.5, x);
            let exact = 2.0 / std::f64::consts::PI * x.sqrt().asin();
            assert!((cf - exact).abs() < 1e-10, "I_{x}(.5,.5): {cf} vs arcsine {exact}");
        }
        assert_eq!(reg_inc_beta(2.0, 2.0, 0.0), 0.0);
        assert_eq!(reg_inc_beta(2.0, 2.0, 1.0), 1.0);
        // I_x(1,1) is the identity.
        assert!((reg_inc_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(2.0)).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24.0_f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn p_values_behave() {
        // |r| = 1 → unbounded statistic.
        assert_eq!(correlation_p_value(1.0, 10), 0.0);
        // r = 0 → p = 1 (I_1 = 1).
        assert!((correlation_p_value(0.0, 10) - 1.0).abs() < 1e-12);
        // Stronger correlation at fixed n → smaller p; larger n at fixed r → smaller p.
        let p_weak = correlation_p_value(0.3, 12);
        let p_strong = correlation_p_value(0.8, 12);
        assert!(p_strong < p_weak);
        assert!(correlation_p_value(0.5, 40) < correlation_p_value(0.5, 10));
        // Symmetric in the sign of r.
        assert_eq!(correlation_p_value(-0.6, 9), correlation_p_value(0.6, 9));
    }

    #[test]
    fn exact_permutation_p_is_a_hand_count() {
        // n=3: of the 6 orderings of y, exactly 2 reach |r| = 1.
        let x = [1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0];
        let p = permutation_p_value(&x, &y, 0, 0).unwrap();
        assert!((p - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_permutation_is_seeded_and_sane() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + ((v * 7.3).sin())).collect();
        let a = permutation_p_value(&x, &y, 500, 3).unwrap();
        let b = permutation_p_value(&x, &y, 500, 3).unwrap();
        assert_eq!(a, b, "same seed must reproduce");
        // Strong monotone signal: tiny p, but never exactly 0 by construction.
        assert!(a > 0.0 && a < 0.05, "p = {a}");
        assert!(permutation_p_value(&x, &y, 0, 0).is_err());
    }
}
