use statrs::function::beta::beta_reg;

use super::EvalError;

/// Clopper–Pearson exact two-sided interval for a binomial proportion.
///
/// The bounds are quantiles of beta distributions:
/// `low = B⁻¹(α/2; s, n − s + 1)` and `high = B⁻¹(1 − α/2; s + 1, n − s)`,
/// with `low = 0` when `s = 0` and `high = 1` when `s = n`.
pub fn exact_binomial_ci(successes: u64, trials: u64, level: f64) -> Result<(f64, f64), EvalError> {
    if trials == 0 || successes > trials || !(level > 0.0 && level < 1.0) {
        return Err(EvalError::InvalidArgs(format!(
            "successes={successes}, trials={trials}, level={level}"
        )));
    }
    let alpha = 1.0 - level;
    let (s, n) = (successes as f64, trials as f64);
    let low = if successes == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, s, n - s + 1.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, s + 1.0, n - s)
    };
    Ok((low, high))
}

/// Inverts the regularized incomplete beta function by bisection. The CDF is
/// monotone on [0, 1], so 200 halvings pin the root to machine precision.
fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: bisection on exact binomial tail sums, using the
    /// defining equations P(X ≥ s | p_low) = α/2 and P(X ≤ s | p_high) = α/2.
    fn tail_oracle(s: u64, n: u64, level: f64) -> (f64, f64) {
        let alpha = 1.0 - level;
        let pmf = |k: u64, p: f64| -> f64 {
            let mut ln_c = 0.0;
            for i in 0..k {
                ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
            }
            (ln_c + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
        };
        let upper_tail = |p: f64| (s..=n).map(|k| pmf(k, p)).sum::<f64>();
        let lower_tail = |p: f64| (0..=s).map(|k| pmf(k, p)).sum::<f64>();
        let bisect = |f: &dyn Fn(f64) -> f64, increasing: bool| {
            let (mut lo, mut hi) = (1e-15, 1.0 - 1e-15);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let below = f(mid) < alpha / 2.0;
                if below == increasing {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let low = if s == 0 { 0.0 } else { bisect(&upper_tail, true) };
        let high = if s == n { 1.0 } else { bisect(&lower_tail, false) };
        (low, high)
    }

    #[test]
    fn agrees_with_tail_sum_oracle() {
        for n in [1u64, 2, 5, 20, 29, 45, 50, 202] {
            for s in 0..=n {
                let (lo, hi) = exact_binomial_ci(s, n, 0.95).unwrap();
                let (olo, ohi) = tail_oracle(s, n, 0.95);
                assert!((lo - olo).abs() < 1e-9, "s={s} n={n}: {lo} vs {olo}");
                assert!((hi - ohi).abs() < 1e-9, "s={s} n={n}: {hi} vs {ohi}");
            }
        }
    }

    #[test]
    fn known_intervals() {
        let (lo, hi) = exact_binomial_ci(43, 45, 0.95).unwrap();
        assert_eq!((round3(lo), round3(hi)), (0.849, 0.995));
        let (lo, hi) = exact_binomial_ci(23, 29, 0.95).unwrap();
        assert_eq!((round3(lo), round3(hi)), (0.603, 0.920));
        let (_, hi) = exact_binomial_ci(45, 45, 0.95).unwrap();
        assert_eq!(hi, 1.0);
        let (lo, _) = exact_binomial_ci(0, 10, 0.95).unwrap();
        assert_eq!(lo, 0.0);
    }

    fn round3(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    #[test]
    fn invalid_args() {
        assert!(exact_binomial_ci(1, 0, 0.95).is_err());
        assert!(exact_binomial_ci(3, 2, 0.95).is_err());
        assert!(exact_binomial_ci(1, 2, 1.0).is_err());
        assert!(exact_binomial_ci(1, 2, 0.0).is_err());
    }

    #[test]
    fn contains_point_estimate() {
        for n in 1..=50u64 {
            for s in 0..=n {
                let (lo, hi) = exact_binomial_ci(s, n, 0.95).unwrap();
                let p = s as f64 / n as f64;
                assert!(lo <= p && p <= hi, "s={s} n={n}");
            }
        }
    }
}
