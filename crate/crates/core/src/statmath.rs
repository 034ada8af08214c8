//! Statistical primitives: standard-normal CDF/quantile, one-sided
//! confidence lower bounds, and seeded Gaussian sampling.
//!
//! Everything the certification pipeline proves rests on these few
//! functions, so their numeric contracts are deliberately tight:
//!
//! - [`std_normal_cdf`] is accurate to better than 1e-12 absolutely (it is
//!   built on a rational-approximation `erfc` that keeps full *relative*
//!   precision in the lower tail, which the quantile's Newton step relies
//!   on);
//! - [`std_normal_quantile`] clamps its argument to
//!   `[P_MIN, 1 - P_MIN]` with [`P_MIN`]` = 1e-9` and refines a rational
//!   first guess with one Newton step, so `cdf(quantile(p))` returns the
//!   clamped `p` to 1e-9 and the round trip through `x` is good to 1e-7 for
//!   `|x| <= 6`;
//! - [`clopper_pearson_lower`] solves the exact binomial tail equation by
//!   bisection on the regularized incomplete beta function to 1e-10.
//!
//! Randomness is counter-based: an [`RngStream`] is addressed by
//! `(seed, stream_id)` and produces a pure function of that address and a
//! draw counter, so independent substreams can be handed to every
//! (input, noise-sample) pair and replayed exactly.

use crate::{Error, Result};

/// Lower clamp for quantile arguments; quantiles are evaluated on
/// `[P_MIN, 1 - P_MIN]`, pinning them to roughly `[-6, 6]`.
pub const P_MIN: f64 = 1e-9;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A value verified to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    /// Validates `v` in `[0, 1]` (NaN rejected).
    pub fn new(v: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid("probability", format!("{v} not in [0, 1]")));
        }
        Ok(Probability(v))
    }

    /// Clamps a finite value into `[0, 1]`. Panics on NaN, which would mean
    /// the caller already lost the plot.
    pub fn clamped(v: f64) -> Self {
        assert!(!v.is_nan(), "probability from NaN");
        Probability(v.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Failure probability `alpha` of a one-sided confidence bound, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceLevel {
    alpha: f64,
}

impl ConfidenceLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::invalid("alpha", format!("{alpha} not in (0, 1]")));
        }
        Ok(ConfidenceLevel { alpha })
    }

    pub fn alpha(self) -> f64 {
        self.alpha
    }
}

// ---------------------------------------------------------------------------
// Standard normal CDF / quantile
// ---------------------------------------------------------------------------

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, absolute error below 1e-12 everywhere.
///
/// Errors on non-finite input.
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::invalid("x", format!("{x} is not finite")));
    }
    // Phi(x) = erfc(-x / sqrt(2)) / 2; erfc keeps full relative accuracy in
    // the small tail, which matters when the quantile Newton step divides a
    // tail difference by a tail density.
    Ok(Probability::clamped(0.5 * erfc(-x / SQRT_2)))
}

/// Standard normal quantile with the argument clamped to
/// `[P_MIN, 1 - P_MIN]`.
///
/// A rational approximation supplies the first guess and a single Newton
/// step against [`std_normal_cdf`] polishes it. Errors when `p` is NaN or
/// outside `[0, 1]`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} not in [0, 1]")));
    }
    // For p > 1/2 reflect through the median: 1 - p is exact in IEEE
    // arithmetic on [1/2, 1], so the tail branch never sees cancellation.
    // Clamping after the reflection keeps the two tails exactly symmetric.
    if p > 0.5 {
        Ok(-quantile_half((1.0 - p).max(P_MIN)))
    } else {
        Ok(quantile_half(p.max(P_MIN)))
    }
}

/// Derivative of the clamped quantile: `1 / pdf(quantile(p))` strictly
/// inside the clamp window and 0 outside it, where the clamped quantile is
/// constant. Keeping this next to [`std_normal_quantile`] lets gradients
/// match the implemented (clamped) function exactly rather than the ideal
/// one.
pub fn std_normal_quantile_derivative(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} not in [0, 1]")));
    }
    if p < P_MIN || p > 1.0 - P_MIN {
        return Ok(0.0);
    }
    let x = std_normal_quantile(p)?;
    Ok(1.0 / std_normal_pdf(x))
}

/// Quantile for p in [P_MIN, 1/2], rational guess + one Newton step.
fn quantile_half(p: f64) -> f64 {
    let x = if p < 0.02425 {
        // lower-tail branch
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        // central branch
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // One Newton step on Phi(x) = p. The guess is already good to ~1e-9
    // relative, so a single step lands at the f64 noise floor.
    let err = 0.5 * erfc(-x / SQRT_2) - p;
    x - err / std_normal_pdf(x)
}

// Coefficients of the rational initial guess (central and tail branches).
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

// Rational approximations for erfc with near machine accuracy, three ranges
// split at 0.46875 and 4.0. The exp(-x^2) factor is assembled from a
// 1/16-truncated square plus remainder to dodge the argument-rounding error
// that would otherwise dominate in the far tail.
fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let r = if y <= 4.0 { erfc_mid(y) } else { erfc_far(y) };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// erf on |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    const P: [f64; 5] = [
        3.16112374387056560e+00,
        1.13864154151050156e+02,
        3.77485237685302021e+02,
        3.20937758913846947e+03,
        1.85777706184603153e-01,
    ];
    const Q: [f64; 4] = [
        2.36012909523441209e+01,
        2.44024637934444173e+02,
        1.28261652607737228e+03,
        2.84423683343917062e+03,
    ];
    let z = x * x;
    let mut num = P[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + P[i]) * z;
        den = (den + Q[i]) * z;
    }
    x * (num + P[3]) / (den + Q[3])
}

/// erfc on 0.46875 < x <= 4.
fn erfc_mid(y: f64) -> f64 {
    const P: [f64; 9] = [
        5.64188496988670089e-01,
        8.88314979438837594e+00,
        6.61191906371416295e+01,
        2.98635138197400131e+02,
        8.81952221241769090e+02,
        1.71204761263407058e+03,
        2.05107837782607147e+03,
        1.23033935479799725e+03,
        2.15311535474403846e-08,
    ];
    const Q: [f64; 8] = [
        1.57449261107098347e+01,
        1.17693950891312499e+02,
        5.37181101862009858e+02,
        1.62138957456669019e+03,
        3.29079923573345963e+03,
        4.36261909014324716e+03,
        3.43936767414372164e+03,
        1.23033935480374942e+03,
    ];
    let mut num = P[8] * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + P[i]) * y;
        den = (den + Q[i]) * y;
    }
    exp_mxx(y) * (num + P[7]) / (den + Q[7])
}

/// erfc on x > 4.
fn erfc_far(y: f64) -> f64 {
    const SQRPI: f64 = 5.6418958354775628695e-01; // 1/sqrt(pi)
    const P: [f64; 6] = [
        3.05326634961232344e-01,
        3.60344899949804439e-01,
        1.25781726111229246e-01,
        1.60837851487422766e-02,
        6.58749161529837803e-04,
        1.63153871373020978e-02,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e+00,
        1.87295284992346047e+00,
        5.27905102951428412e-01,
        6.05183413124413191e-02,
        2.33520497626869185e-03,
    ];
    if y >= 26.543 {
        return 0.0;
    }
    let z = 1.0 / (y * y);
    let mut num = P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + P[i]) * z;
        den = (den + Q[i]) * z;
    }
    let r = z * (num + P[4]) / (den + Q[4]);
    exp_mxx(y) * (SQRPI - r) / y
}

/// exp(-y^2) with the square split as trunc(16 y)/16 plus remainder.
fn exp_mxx(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

// ---------------------------------------------------------------------------
// One-sided confidence lower bounds
// ---------------------------------------------------------------------------

/// Exact (Clopper-Pearson) one-sided lower confidence bound for a binomial
/// proportion: the largest `p` such that observing at least `successes` out
/// of `trials` still has probability `alpha` under `p`, i.e. the solution of
/// `I_p(s, n - s + 1) = alpha`. Zero successes give 0; all successes give
/// the closed form `alpha^(1/n)` (recovered by the same bisection).
pub fn clopper_pearson_lower(
    successes: u64,
    trials: u64,
    alpha: ConfidenceLevel,
) -> Result<Probability> {
    if trials == 0 {
        return Err(Error::invalid("trials", "needs at least one trial"));
    }
    if successes > trials {
        return Err(Error::invalid(
            "successes",
            format!("{successes} exceeds trials {trials}"),
        ));
    }
    if successes == 0 {
        return Ok(Probability(0.0));
    }
    let a = successes as f64;
    let b = (trials - successes) as f64 + 1.0;
    // The binomial upper tail P(X >= s | p) = I_p(s, n-s+1) increases in p;
    // bisect it against alpha and return the left end for conservatism.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if reg_inc_beta(a, b, mid) < alpha.alpha() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Probability(lo))
}

/// Hoeffding one-sided lower bound on the mean of `k` iid `[0, 1]` samples:
/// `mean - sqrt(-ln(alpha) / (2 k))`. May be negative; certification clamps
/// later.
pub fn hoeffding_lower(sample_mean: f64, k: u64, alpha: ConfidenceLevel) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k", "needs at least one sample"));
    }
    if !(0.0..=1.0).contains(&sample_mean) {
        return Err(Error::invalid(
            "sample_mean",
            format!("{sample_mean} not in [0, 1]"),
        ));
    }
    Ok(sample_mean - (-alpha.alpha().ln() / (2.0 * k as f64)).sqrt())
}

/// Empirical-Bernstein one-sided lower bound on the mean of `k` iid `[0, 1]`
/// samples with sample variance `sample_variance`:
///
/// `mean - sqrt(2 S^2 ln(2/alpha) / k) - 7 ln(2/alpha) / (3 (k - 1))`.
///
/// Variance-adaptive: for concentrated likelihoods it beats Hoeffding even
/// though its constant term pays for estimating the variance. Requires
/// `k >= 2`.
pub fn bernstein_lower(
    sample_mean: f64,
    sample_variance: f64,
    k: u64,
    alpha: ConfidenceLevel,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::invalid("k", "needs at least two samples"));
    }
    if !(0.0..=1.0).contains(&sample_mean) {
        return Err(Error::invalid(
            "sample_mean",
            format!("{sample_mean} not in [0, 1]"),
        ));
    }
    if !sample_variance.is_finite() || sample_variance < 0.0 {
        return Err(Error::invalid(
            "sample_variance",
            format!("{sample_variance} is negative or not finite"),
        ));
    }
    let l = (2.0 / alpha.alpha()).ln();
    Ok(sample_mean
        - (2.0 * sample_variance * l / k as f64).sqrt()
        - 7.0 * l / (3.0 * (k as f64 - 1.0)))
}

// Regularized incomplete beta via the standard continued fraction.
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * beta_cf(a, b, x) / a
    } else {
        1.0 - bt * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 3e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
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

// Lanczos (g = 7, n = 9) log-gamma for positive arguments.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
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
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

// ---------------------------------------------------------------------------
// Counter-based random streams
// ---------------------------------------------------------------------------

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-based random stream addressed by `(seed, stream_id)`.
///
/// Output `i` of a stream is `mix(key + i * gamma)` for a key derived from
/// the address, so a stream is a pure function of its address: two streams
/// built with the same `(seed, stream_id)` produce identical sequences, and
/// [`RngStream::substream`] derives statistically independent children
/// (training hands one to every (epoch, sample, draw) triple; certification
/// to every (input, stage) pair).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(seed).wrapping_add(mix64(stream_id ^ 0xA076_1D64_78BD_642F));
        RngStream {
            seed,
            stream_id,
            key,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives an independent child stream. Children are keyed by the
    /// parent's digest plus `child_id`, never by its counter, so derivation
    /// order does not matter.
    #[must_use]
    pub fn substream(&self, child_id: u64) -> RngStream {
        RngStream::new(self.key ^ mix64(child_id ^ 0x8CB9_2BA7_2F3D_8DD7), child_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        mix64(self.key.wrapping_add(c.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on `[0, 1)`, 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform on `(0, 1]`; safe to feed to `ln`.
    pub fn next_unit_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// Uniform draw from `0..n` without modulo bias.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let zone = u64::MAX - u64::MAX.wrapping_rem(n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }
}

/// One standard-normal pair via Box-Muller; consumes exactly two words.
fn gaussian_pair(rng: &mut RngStream) -> (f64, f64) {
    let u1 = rng.next_unit_f64();
    let u2 = rng.next_f64();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

/// The next `dim` iid `N(0, sigma^2)` draws from `rng`.
///
/// Requires `dim >= 1` and finite `sigma > 0`.
pub fn sample_gaussian(dim: usize, sigma: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::invalid("dim", "needs at least one dimension"));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid("sigma", format!("{sigma} not positive")));
    }
    let mut out = Vec::with_capacity(dim);
    while out.len() < dim {
        let (z0, z1) = gaussian_pair(rng);
        out.push(sigma * z0);
        if out.len() < dim {
            out.push(sigma * z1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alpha(a: f64) -> ConfidenceLevel {
        ConfidenceLevel::new(a).unwrap()
    }

    // -- oracles ------------------------------------------------------------

    /// Adaptive Simpson quadrature, the independent reference for the CDF.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let left = (m - a) / 6.0 * (f(a) + 4.0 * f(lm) + f(m));
        let right = (b - m) / 6.0 * (f(m) + 4.0 * f(rm) + f(b));
        let split = left + right;
        if depth == 0 || (split - whole).abs() < 15.0 * tol {
            split + (split - whole) / 15.0
        } else {
            simpson(f, a, m, 0.5 * tol, depth - 1) + simpson(f, m, b, 0.5 * tol, depth - 1)
        }
    }

    fn cdf_oracle(x: f64) -> f64 {
        let tail = simpson(&std_normal_pdf, 0.0, x.abs(), 1e-16, 40);
        if x >= 0.0 {
            0.5 + tail
        } else {
            0.5 - tail
        }
    }

    fn quantile_oracle(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf_oracle(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Exact binomial upper tail P(X >= s | n, p) summed in log space.
    fn binom_tail(s: u64, n: u64, p: f64) -> f64 {
        let ln_fact: Vec<f64> = std::iter::once(0.0)
            .chain((1..=n).scan(0.0, |acc, i| {
                *acc += (i as f64).ln();
                Some(*acc)
            }))
            .collect();
        (s..=n)
            .map(|i| {
                let ln_c = ln_fact[n as usize] - ln_fact[i as usize] - ln_fact[(n - i) as usize];
                (ln_c + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp()
            })
            .sum()
    }

    fn cp_oracle(s: u64, n: u64, a: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if binom_tail(s, n, mid) < a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    // -- CDF ------------------------------------------------------------

    #[test]
    fn cdf_matches_quadrature_oracle() {
        // Spot values first: Phi(0) is exactly 1/2 by symmetry of erfc.
        assert_eq!(std_normal_cdf(0.0).unwrap().value(), 0.5);
        assert!((std_normal_cdf(1.0).unwrap().value() - 0.841345).abs() < 1e-6);
        assert!((std_normal_cdf(1.96).unwrap().value() - 0.975002).abs() < 1e-6);

        let mut x = -8.0;
        while x <= 8.0 {
            let got = std_normal_cdf(x).unwrap().value();
            assert!(
                (got - cdf_oracle(x)).abs() <= 1e-12,
                "cdf({x}) = {got} vs oracle {}",
                cdf_oracle(x)
            );
            x += 0.173; // deliberately not hitting branch boundaries exactly
        }
        // and the branch boundaries themselves
        for x in [-4.0, -0.46875 * SQRT_2, 0.46875 * SQRT_2, 4.0] {
            assert!((std_normal_cdf(x).unwrap().value() - cdf_oracle(x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
        assert!(std_normal_cdf(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn cdf_tail_keeps_relative_accuracy() {
        // Phi(-6) ~ 1e-9; the oracle integrates the tail directly.
        let tail = simpson(&std_normal_pdf, 6.0, 14.0, 1e-24, 48);
        let got = std_normal_cdf(-6.0).unwrap().value();
        assert!((got - tail).abs() / tail < 1e-12, "got {got}, oracle {tail}");
    }

    // -- quantile ---------------------------------------------------------

    #[test]
    fn quantile_spot_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        let q = std_normal_quantile(0.841345).unwrap();
        assert!((q - quantile_oracle(0.841345)).abs() < 1e-9, "q = {q}");
        let q = std_normal_quantile(0.975).unwrap();
        assert!((q - quantile_oracle(0.975)).abs() < 1e-9, "q = {q}");
        assert!((q - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn quantile_clamps_to_p_min() {
        let lo = std_normal_quantile(0.0).unwrap();
        assert_eq!(lo, std_normal_quantile(P_MIN).unwrap());
        assert_eq!(std_normal_quantile(1.0).unwrap(), -lo);
        // Phi(quantile(clamped)) must come back to the clamp point.
        assert!((std_normal_cdf(lo).unwrap().value() - P_MIN).abs() < 1e-9 * P_MIN.max(1e-12));
        assert!(lo > -6.1 && lo < -5.9, "clamped quantile {lo}");
    }

    #[test]
    fn quantile_rejects_bad_arguments() {
        assert!(std_normal_quantile(f64::NAN).is_err());
        assert!(std_normal_quantile(-0.1).is_err());
        assert!(std_normal_quantile(1.1).is_err());
    }

    #[test]
    fn quantile_derivative_matches_clamp() {
        assert_eq!(std_normal_quantile_derivative(P_MIN / 2.0).unwrap(), 0.0);
        assert_eq!(std_normal_quantile_derivative(1.0).unwrap(), 0.0);
        let d = std_normal_quantile_derivative(0.5).unwrap();
        assert!((d - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn quantile_round_trips(x in -6.0_f64..6.0) {
            let p = std_normal_cdf(x).unwrap().value();
            let back = std_normal_quantile(p).unwrap();
            prop_assert!((back - x).abs() <= 1e-7, "x {x} -> p {p} -> {back}");
            prop_assert!((std_normal_cdf(back).unwrap().value() - p).abs() <= 1e-9);
        }

        #[test]
        fn cdf_and_quantile_are_monotone(a in -8.0_f64..8.0, b in -8.0_f64..8.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(
                std_normal_cdf(lo).unwrap().value() <= std_normal_cdf(hi).unwrap().value()
            );
            let (pa, pb) = (std_normal_cdf(lo).unwrap().value(), std_normal_cdf(hi).unwrap().value());
            prop_assert!(std_normal_quantile(pa).unwrap() <= std_normal_quantile(pb).unwrap());
        }
    }

    // -- Clopper-Pearson ----------------------------------------------------

    #[test]
    fn clopper_pearson_zero_successes_is_zero() {
        let b = clopper_pearson_lower(0, 100, alpha(0.001)).unwrap();
        assert_eq!(b.value(), 0.0);
    }

    #[test]
    fn clopper_pearson_all_successes_closed_form() {
        let b = clopper_pearson_lower(100, 100, alpha(0.001)).unwrap();
        assert!((b.value() - 0.001_f64.powf(0.01)).abs() < 1e-9, "{}", b.value());
    }

    #[test]
    fn clopper_pearson_matches_binomial_tail_oracle() {
        for (s, n, a) in [(90, 100, 0.001), (55, 100, 0.05), (990, 1000, 0.001), (1, 10, 0.3)] {
            let got = clopper_pearson_lower(s, n, alpha(a)).unwrap().value();
            let want = cp_oracle(s, n, a);
            assert!((got - want).abs() < 1e-8, "cp({s},{n},{a}) = {got} vs {want}");
        }
    }

    #[test]
    fn clopper_pearson_rejects_degenerate_input() {
        assert!(clopper_pearson_lower(0, 0, alpha(0.05)).is_err());
        assert!(clopper_pearson_lower(5, 4, alpha(0.05)).is_err());
    }

    proptest! {
        #[test]
        fn clopper_pearson_monotone_and_dominated(
            s in 0u64..=50,
            n in 50u64..=200,
            a in 1e-4_f64..0.5,
        ) {
            let al = alpha(a);
            let here = clopper_pearson_lower(s, n, al).unwrap().value();
            prop_assert!(here <= s as f64 / n as f64 + 1e-12);
            let bumped = clopper_pearson_lower(s + 1, n, al).unwrap().value();
            prop_assert!(bumped + 1e-12 >= here);
            // shrinking alpha makes the bound more conservative
            let tighter = clopper_pearson_lower(s, n, alpha(a / 2.0)).unwrap().value();
            prop_assert!(tighter <= here + 1e-12);
        }
    }

    #[test]
    fn clopper_pearson_simulated_coverage() {
        // 10^4 binomial experiments at p = 0.9: the lower bound may exceed
        // the truth with frequency at most alpha (plus Monte-Carlo slack).
        let p = 0.9;
        let (k, a) = (100u64, 0.05);
        let mut rng = RngStream::new(7, 100);
        let mut violations = 0u32;
        for _ in 0..10_000 {
            let s = (0..k).filter(|_| rng.next_f64() < p).count() as u64;
            if clopper_pearson_lower(s, k, alpha(a)).unwrap().value() > p {
                violations += 1;
            }
        }
        let freq = violations as f64 / 10_000.0;
        let slack = 3.0 * (a * (1.0 - a) / 10_000.0).sqrt();
        assert!(freq <= a + slack, "violation frequency {freq}");
    }

    // -- Hoeffding / Bernstein -----------------------------------------------

    #[test]
    fn hoeffding_formula_values() {
        // alpha = 1 zeroes the deviation term.
        assert_eq!(hoeffding_lower(0.9, 100, alpha(1.0)).unwrap(), 0.9);
        let got = hoeffding_lower(0.9, 100, alpha(0.001)).unwrap();
        let want = 0.9 - (1000.0_f64.ln() / 200.0).sqrt();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.714153).abs() < 1e-6);
        // tiny k may push the bound below zero; it is not clamped here
        assert!(hoeffding_lower(0.5, 1, alpha(0.001)).unwrap() < 0.0);
    }

    #[test]
    fn hoeffding_rejects_bad_input() {
        assert!(hoeffding_lower(0.5, 0, alpha(0.5)).is_err());
        assert!(hoeffding_lower(1.5, 10, alpha(0.5)).is_err());
        assert!(hoeffding_lower(f64::NAN, 10, alpha(0.5)).is_err());
    }

    #[test]
    fn bernstein_formula_values() {
        // Degenerate alpha = 2 makes ln(2/alpha) vanish; the public
        // constructor refuses it, so build the level directly (same module).
        let degenerate = ConfidenceLevel { alpha: 2.0 };
        assert_eq!(bernstein_lower(0.9, 0.0, 100, degenerate).unwrap(), 0.9);

        let got = bernstein_lower(0.9, 0.09, 100, alpha(0.001)).unwrap();
        let l = 2000.0_f64.ln();
        let want = 0.9 - (2.0 * 0.09 * l / 100.0).sqrt() - 7.0 * l / (3.0 * 99.0);
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.603885).abs() < 1e-6);
    }

    #[test]
    fn bernstein_requires_two_samples() {
        assert!(bernstein_lower(0.5, 0.1, 1, alpha(0.05)).is_err());
        assert!(bernstein_lower(0.5, -0.1, 10, alpha(0.05)).is_err());
    }

    #[test]
    fn bernstein_simulated_coverage() {
        // Bernoulli(0.7) observations: mean and sample variance both follow
        // from the success count.
        let p = 0.7;
        let (k, a) = (100u64, 0.05);
        let kf = k as f64;
        let mut rng = RngStream::new(11, 200);
        let mut covered = 0u32;
        for _ in 0..10_000 {
            let s = (0..k).filter(|_| rng.next_f64() < p).count() as f64;
            let mean = s / kf;
            let var = (s - s * s / kf) / (kf - 1.0);
            if bernstein_lower(mean, var, k, alpha(a)).unwrap() <= p {
                covered += 1;
            }
        }
        assert!(covered as f64 / 10_000.0 >= 1.0 - a, "coverage {covered}");
    }

    proptest! {
        #[test]
        fn bounds_monotone_in_mean_and_alpha(
            m in 0.0_f64..=1.0,
            bump in 0.0_f64..0.2,
            a in 1e-4_f64..1.0,
        ) {
            let m2 = (m + bump).min(1.0);
            let al = alpha(a);
            let tight = alpha(a / 2.0);
            prop_assert!(hoeffding_lower(m, 50, al).unwrap() <= hoeffding_lower(m2, 50, al).unwrap() + 1e-12);
            prop_assert!(hoeffding_lower(m, 50, tight).unwrap() <= hoeffding_lower(m, 50, al).unwrap() + 1e-12);
            prop_assert!(bernstein_lower(m, 0.1, 50, tight).unwrap() <= bernstein_lower(m, 0.1, 50, al).unwrap() + 1e-12);
            if a < 1.0 {
                prop_assert!(hoeffding_lower(m, 50, al).unwrap() <= m);
            }
        }
    }

    // -- gradient-clamp interaction -------------------------------------------

    #[test]
    fn clamped_quantile_gap_has_bounded_slopes() {
        // Finite-difference slopes of min{quantile(p1) - quantile(p2), gamma}
        // stay below the clamp-implied cap for sorted simplex points. The
        // interval argument: an active hinge forces p1 <= Phi(gamma), and the
        // runner-up can sink no lower than (1 - Phi(gamma)) / (K - 1); both
        // endpoints pass through the clamped quantile.
        let gamma = 8.0;
        let p_star = std_normal_cdf(gamma).unwrap().value();
        let cap = 1.0 / std_normal_pdf(std_normal_quantile(p_star).unwrap());
        let h = 1e-7;

        let mut rng = RngStream::new(21, 300);
        let mut checked = 0u32;
        while checked < 10_000 {
            let k = 2 + (rng.next_below(9)) as usize;
            let mut p: Vec<f64> = (0..k).map(|_| rng.next_unit_f64()).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            p.sort_by(|a, b| b.partial_cmp(a).unwrap());

            let gap = |p1: f64, p2: f64| {
                let xi = std_normal_quantile(p1).unwrap() - std_normal_quantile(p2).unwrap();
                xi.min(gamma)
            };
            // active, non-kink, FD window inside the clamp and ordering
            let xi = std_normal_quantile(p[0]).unwrap() - std_normal_quantile(p[1]).unwrap();
            if xi > gamma - 0.05 || p[0] - p[1] < 3.0 * h {
                continue;
            }
            if p[1] < P_MIN + 2.0 * h || p[0] > 1.0 - P_MIN - 2.0 * h {
                continue;
            }
            let d1 = (gap(p[0] + h, p[1]) - gap(p[0] - h, p[1])) / (2.0 * h);
            let d2 = (gap(p[0], p[1] + h) - gap(p[0], p[1] - h)) / (2.0 * h);
            assert!(d1.is_finite() && d2.is_finite());
            assert!(d1.abs() <= cap, "slope {d1} exceeds cap {cap}");
            assert!(d2.abs() <= cap, "slope {d2} exceeds cap {cap}");
            checked += 1;
        }
    }

    // -- sampling ------------------------------------------------------------

    #[test]
    fn streams_replay_and_children_diverge() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let xs: Vec<u64> = (0..32).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..32).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);

        let mut c = RngStream::new(42, 8);
        assert_ne!(xs, (0..32).map(|_| c.next_u64()).collect::<Vec<_>>());

        let parent = RngStream::new(42, 7);
        let mut child0 = parent.substream(0);
        let mut child1 = parent.substream(1);
        let c0: Vec<u64> = (0..32).map(|_| child0.next_u64()).collect();
        let c1: Vec<u64> = (0..32).map(|_| child1.next_u64()).collect();
        assert_ne!(c0, c1);
        assert_ne!(c0, xs);
    }

    #[test]
    fn gaussian_sampling_is_deterministic() {
        let mut a = RngStream::new(5, 0);
        let mut b = RngStream::new(5, 0);
        assert_eq!(
            sample_gaussian(9, 0.25, &mut a).unwrap(),
            sample_gaussian(9, 0.25, &mut b).unwrap()
        );
    }

    #[test]
    fn gaussian_moments_match() {
        let mut rng = RngStream::new(1234, 0);
        let n = 1_000_000;
        let draws = sample_gaussian(n, 1.0, &mut rng).unwrap();
        let mean: f64 = draws.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.004, "mean {mean}");

        let mut rng = RngStream::new(1234, 1);
        let draws = sample_gaussian(n, 0.25, &mut rng).unwrap();
        let mean: f64 = draws.iter().sum::<f64>() / n as f64;
        let var: f64 = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.0625).abs() < 0.0005, "variance {var}");
    }

    #[test]
    fn gaussian_rejects_bad_arguments() {
        let mut rng = RngStream::new(0, 0);
        assert!(sample_gaussian(0, 1.0, &mut rng).is_err());
        assert!(sample_gaussian(4, 0.0, &mut rng).is_err());
        assert!(sample_gaussian(4, -1.0, &mut rng).is_err());
        assert!(sample_gaussian(4, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn probability_and_confidence_validate() {
        assert!(Probability::new(-0.1).is_err());
        assert!(Probability::new(1.1).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert_eq!(Probability::clamped(1.7).value(), 1.0);
        assert!(ConfidenceLevel::new(0.0).is_err());
        assert!(ConfidenceLevel::new(1.2).is_err());
        assert!(ConfidenceLevel::new(1.0).is_ok());
    }
}
