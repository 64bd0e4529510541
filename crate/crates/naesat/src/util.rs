//! Small numeric helpers shared across modules: signed log-space scalars,
//! double-double (compensated) arithmetic for high-precision accumulation,
//! online log-sum-exp, factorial tables, and seed derivation for
//! reproducible parallel sampling.

use std::sync::{Mutex, OnceLock};

/// SplitMix64 step; used to decorrelate derived seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th substream of a base seed. Every sampling loop in
/// this crate draws sample `i` from `derive_seed(seed, i)` so that results
/// are independent of thread scheduling and sample order.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

/// A real number stored as sign and natural log of absolute value.
/// `sign == 0` encodes exact zero (with `ln_abs` ignored).
#[derive(Clone, Copy, Debug)]
pub struct LogNum {
    pub sign: i8,
    pub ln_abs: f64,
}

impl LogNum {
    pub const ONE: LogNum = LogNum {
        sign: 1,
        ln_abs: 0.0,
    };
    pub const ZERO: LogNum = LogNum {
        sign: 0,
        ln_abs: f64::NEG_INFINITY,
    };

    pub fn from_f64(x: f64) -> LogNum {
        if x == 0.0 {
            LogNum::ZERO
        } else {
            LogNum {
                sign: if x > 0.0 { 1 } else { -1 },
                ln_abs: x.abs().ln(),
            }
        }
    }

    pub fn from_ln(ln_abs: f64) -> LogNum {
        LogNum { sign: 1, ln_abs }
    }

    pub fn mul(self, other: LogNum) -> LogNum {
        if self.sign == 0 || other.sign == 0 {
            return LogNum::ZERO;
        }
        LogNum {
            sign: self.sign * other.sign,
            ln_abs: self.ln_abs + other.ln_abs,
        }
    }

    pub fn powi(self, n: i32) -> LogNum {
        if self.sign == 0 {
            return if n == 0 { LogNum::ONE } else { LogNum::ZERO };
        }
        let sign = if self.sign < 0 && n % 2 != 0 { -1 } else { 1 };
        LogNum {
            sign,
            ln_abs: self.ln_abs * f64::from(n),
        }
    }

    pub fn powf(self, lambda: f64) -> LogNum {
        assert!(self.sign >= 0, "fractional power of negative number");
        if self.sign == 0 {
            return if lambda == 0.0 {
                LogNum::ONE
            } else {
                LogNum::ZERO
            };
        }
        LogNum {
            sign: 1,
            ln_abs: self.ln_abs * lambda,
        }
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.sign) * self.ln_abs.exp()
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }
}

/// Online log-sum-exp accumulator for sums of nonnegative terms given in
/// log space.
#[derive(Clone, Copy, Debug)]
pub struct LogSum {
    max: f64,
    sum: f64, // sum of exp(term - max)
}

impl LogSum {
    pub fn new() -> LogSum {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn add_ln(&mut self, ln_term: f64) {
        if ln_term == f64::NEG_INFINITY {
            return;
        }
        if ln_term <= self.max {
            self.sum += (ln_term - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - ln_term).exp() + 1.0;
            self.max = ln_term;
        }
    }

    /// Natural log of the accumulated sum.
    pub fn ln(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

/// Double-double value: unevaluated sum `hi + lo` with |lo| <= ulp(hi)/2.
/// Gives roughly 106-bit significands for sums and products; used where an
/// independently higher-precision arithmetic path is wanted (trace
/// accumulation cross-checks).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s1, e1) = two_sum(self.hi, other.hi);
        let lo = e1 + self.lo + other.lo;
        let (hi, lo) = two_sum(s1, lo);
        Dd { hi, lo }
    }

    pub fn sub(self, other: Dd) -> Dd {
        self.add(Dd {
            hi: -other.hi,
            lo: -other.lo,
        })
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let lo = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = two_sum(p, lo);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

static LN_FACT: OnceLock<Mutex<Vec<f64>>> = OnceLock::new();

/// ln(n!) from a cached cumulative table (exact summation of ln i).
pub fn ln_factorial(n: usize) -> f64 {
    let table = LN_FACT.get_or_init(|| Mutex::new(vec![0.0]));
    let mut table = table.lock().unwrap();
    while table.len() <= n {
        let i = table.len();
        let prev = table[i - 1];
        table.push(prev + (i as f64).ln());
    }
    table[n]
}

/// ln of the multinomial coefficient `total! / prod(parts!)`.
pub fn ln_multinomial(total: usize, parts: &[usize]) -> f64 {
    debug_assert_eq!(total, parts.iter().sum::<usize>());
    ln_factorial(total) - parts.iter().map(|&p| ln_factorial(p)).sum::<f64>()
}

/// Sample mean, (unbiased) variance, and standard error of the mean.
pub fn mean_var_se(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var, (var / n as f64).sqrt())
}
