//! Order-fixed reductions and max-shifted exponential averages.
//!
//! Every reduction splits its input into chunks of [`CHUNK`] elements,
//! sums each chunk left to right, then sums the partials left to right.
//! The chunk layout depends only on the input length, so results are
//! bit-identical for any rayon thread count.

use rayon::prelude::*;

pub const CHUNK: usize = 4096;

fn chunked_sum_by<F>(xs: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    let partials: Vec<f64> = xs
        .par_chunks(CHUNK)
        .map(|c| c.iter().fold(0.0, |acc, &v| acc + f(v)))
        .collect();
    partials.iter().sum()
}

pub fn sum(xs: &[f64]) -> f64 {
    chunked_sum_by(xs, |v| v)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Population variance (divides by `n`), two-pass.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    chunked_sum_by(xs, |v| (v - m) * (v - m)) / xs.len() as f64
}

pub fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `mean(exp(c_i))` represented as `exp(shift) · scaled_mean`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpMoment {
    pub shift: f64,
    pub scaled_mean: f64,
    /// Sample standard deviation of `exp(c_i − shift)`.
    pub scaled_sd: f64,
    pub n: usize,
}

impl ExpMoment {
    pub fn value(&self) -> f64 {
        self.shift.exp() * self.scaled_mean
    }

    pub fn log_value(&self) -> f64 {
        self.shift + self.scaled_mean.ln()
    }

    /// Standard error of [`ExpMoment::value`].
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.shift.exp() * self.scaled_sd / (self.n as f64).sqrt()
    }

    /// Standard error of [`ExpMoment::log_value`] by the delta method.
    pub fn log_std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.scaled_sd / self.scaled_mean / (self.n as f64).sqrt()
    }
}

/// Max-shifted estimate of `mean(exp(c_i))`; `exp(c_i)` itself is never
/// formed.
pub fn exp_moment(exponents: &[f64]) -> ExpMoment {
    let n = exponents.len();
    let shift = max(exponents);
    let shifted: Vec<f64> = exponents.par_iter().map(|&c| (c - shift).exp()).collect();
    let scaled_mean = mean(&shifted);
    let scaled_sd = if n > 1 {
        (variance(&shifted) * n as f64 / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    ExpMoment { shift, scaled_mean, scaled_sd, n }
}

/// Unshifted `mean(exp(c_i))`. Overflows for large exponents; kept for
/// the overflow fault-injection path of the positivity check.
pub fn naive_exp_mean(exponents: &[f64]) -> f64 {
    chunked_sum_by(exponents, f64::exp) / exponents.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exp_moment_of_constants() {
        let m = exp_moment(&[2.0; 10]);
        assert_eq!(m.scaled_mean, 1.0);
        assert_eq!(m.log_value(), 2.0);
        assert_eq!(m.std_error(), 0.0);
    }

    #[test]
    fn exp_moment_survives_huge_exponents() {
        let m = exp_moment(&[1000.0, 1000.0 + 2f64.ln()]);
        assert!((m.log_value() - (1000.0 + 1.5f64.ln())).abs() < 1e-12);
        assert!(naive_exp_mean(&[1000.0]).is_infinite());
    }

    #[test]
    fn reductions_do_not_depend_on_thread_count() {
        let xs: Vec<f64> = (0..50_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 + 0.1).collect();
        let a = sum(&xs);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| sum(&xs));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    proptest! {
        #[test]
        fn shifted_matches_naive(cs in proptest::collection::vec(-20.0f64..20.0, 1..200)) {
            let naive = naive_exp_mean(&cs);
            let shifted = exp_moment(&cs).value();
            prop_assert!((naive - shifted).abs() <= 1e-12 * naive);
        }
    }
}
