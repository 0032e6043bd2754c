//! Distribution tails used by the paired tests.

use num::{BigRational, BigUint, One, ToPrimitive, Zero};

/// Above this many trials the binomial tail is summed in log space instead
/// of with exact integers.
const EXACT_BINOMIAL_MAX: u64 = 20_000;

/// Survival function of the chi-square distribution with one degree of
/// freedom: `Q(x) = erfc(sqrt(x / 2))`.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt())
}

/// Two-sided standard-normal tail `P(|Z| >= |z|)`.
pub fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// `P(X >= at_least)` for `X ~ Binomial(trials, 1/2)`.
///
/// Exact integer counting up to 20 000 trials, log-space summation beyond.
pub fn binomial_half_upper_tail(trials: u64, at_least: u64) -> f64 {
    if at_least == 0 {
        return 1.0;
    }
    if at_least > trials {
        return 0.0;
    }
    if trials <= 127 {
        return tail_u128(trials, at_least);
    }
    if trials <= EXACT_BINOMIAL_MAX {
        return tail_big(trials, at_least);
    }
    tail_log(trials, at_least)
}

fn tail_u128(trials: u64, at_least: u64) -> f64 {
    let mut coeff: u128 = 1;
    let mut tail: u128 = 0;
    for i in 0..=trials {
        if i >= at_least {
            tail += coeff;
        }
        // C(t, i+1) = C(t, i) * (t - i) / (i + 1); reduce by the gcd first so
        // the product stays within u128.
        if i < trials {
            let (t, j) = ((trials - i) as u128, (i + 1) as u128);
            let g = gcd(coeff, j);
            coeff = (coeff / g) * (t / (j / g));
        }
    }
    tail as f64 / 2f64.powi(trials as i32)
}

fn tail_big(trials: u64, at_least: u64) -> f64 {
    let mut coeff = BigUint::one();
    let mut tail = BigUint::zero();
    for i in 0..=trials {
        if i >= at_least {
            tail += &coeff;
        }
        if i < trials {
            coeff = coeff * (trials - i) / (i + 1);
        }
    }
    let denom = BigUint::one() << trials;
    BigRational::new(tail.into(), denom.into())
        .to_f64()
        .expect("ratio in [0, 1]")
}

fn tail_log(trials: u64, at_least: u64) -> f64 {
    let t = trials as f64;
    let ln_total = libm::lgamma(t + 1.0);
    let ln_term = |i: u64| {
        let i = i as f64;
        ln_total - libm::lgamma(i + 1.0) - libm::lgamma(t - i + 1.0) - t * std::f64::consts::LN_2
    };
    // Sum the smaller tail, largest terms first, relative to its leading term.
    let upper = at_least * 2 > trials;
    let (start, end) = if upper { (at_least, trials) } else { (0, at_least - 1) };
    let lead = if upper { start } else { end };
    let ln_lead = ln_term(lead);
    let mut sum = 0.0;
    let mut i = lead;
    loop {
        let r = (ln_term(i) - ln_lead).exp();
        sum += r;
        if r < 1e-18 * sum || (upper && i == end) || (!upper && i == start) {
            break;
        }
        i = if upper { i + 1 } else { i - 1 };
    }
    let tail = (ln_lead.exp() * sum).min(1.0);
    if upper {
        tail
    } else {
        1.0 - tail
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
