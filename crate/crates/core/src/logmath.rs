//! Log-domain helpers shared by the dynamic programs.

pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))` stabilized on the larger operand.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp with running-max stabilization.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct() {
        let v = log_add(0.3f64.ln(), 0.2f64.ln());
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(log_add(NEG_INF, 1.5), 1.5);
        assert_eq!(log_add(NEG_INF, NEG_INF), NEG_INF);
    }

    #[test]
    fn lse_handles_large_values() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), NEG_INF);
    }
}
