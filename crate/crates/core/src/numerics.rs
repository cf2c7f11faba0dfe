//! Log-semiring arithmetic.
//!
//! Every probability in the crate is a natural-log weight in double
//! precision. `NEG_INF` is the semiring zero and propagates through every
//! routine without special flags, which is what lets a bypass penalty of
//! `-inf` switch an arc off exactly.

/// A natural-log weight. `NEG_INF` is the zero element; NaN never appears.
pub type LogWeight = f64;

/// The log-semiring zero.
pub const NEG_INF: LogWeight = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))` with a max shift.
#[inline]
pub fn log_add(a: LogWeight, b: LogWeight) -> LogWeight {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == NEG_INF {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over a sequence with a single max shift.
///
/// The terms are accumulated in iteration order, so a fixed input order gives
/// bit-reproducible output.
pub fn log_sum(values: &[LogWeight]) -> LogWeight {
    let max = values.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    let mut acc = 0.0;
    for &v in values {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

/// `ln(1 - exp(x))` for `x <= 0`, accurate at both ends of the range.
#[inline]
pub fn log1m_exp(x: LogWeight) -> LogWeight {
    if x >= 0.0 {
        NEG_INF
    } else if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
