//! Monte-Carlo certification of smoothed classifiers.
//!
//! Smoothing a base net `f` with `N(0, sigma^2 I)` input noise yields
//! `g(x) = argmax_c P(f(x + eta) = c)`. If the top class keeps probability
//! `p_A` and the runner-up at most `p_B`, then `g` is constant within L2
//! radius `(sigma / 2) (quantile(p_A) - quantile(p_B))` of `x`; the same
//! expression certifies the *soft* classifier that averages tempered
//! likelihoods instead of counting votes. Both certifiers here are
//! two-stage: a small stage-1 sample picks the candidate class, a fresh
//! stage-2 sample buys a one-sided lower confidence bound `L` on its vote
//! probability (hard, via Clopper-Pearson) or expected likelihood (soft,
//! via Hoeffding or empirical Bernstein). The reported radius is the
//! one-sided form `sigma * quantile(L)` — the runner-up is bounded by
//! `1 - L` — and the certifier abstains whenever `L <= 1/2`.

use crate::net::{self, LikelihoodVector, SmallNet};
use crate::statmath::{
    bernstein_lower, clopper_pearson_lower, hoeffding_lower, sample_gaussian, std_normal_quantile,
    ConfidenceLevel, Probability, RngStream,
};
use crate::{Error, Result};

/// Which one-sided lower bound backs the certificate.
///
/// `ClopperPearson` certifies the hard (voting) classifier; `Hoeffding` and
/// `Bernstein` certify the soft classifier built from expected tempered
/// likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    ClopperPearson,
    Hoeffding,
    Bernstein,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::ClopperPearson => "clopper_pearson",
            BoundKind::Hoeffding => "hoeffding",
            BoundKind::Bernstein => "bernstein",
        }
    }
}

impl std::str::FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clopper_pearson" | "clopper-pearson" => Ok(BoundKind::ClopperPearson),
            "hoeffding" => Ok(BoundKind::Hoeffding),
            "bernstein" => Ok(BoundKind::Bernstein),
            other => Err(Error::invalid(
                "bound",
                format!("unknown bound '{other}' (expected clopper_pearson, hoeffding or bernstein)"),
            )),
        }
    }
}

/// Parameters of a certification run.
#[derive(Debug, Clone)]
pub struct CertifyConfig {
    pub sigma: f64,
    /// Stage-1 (selection) sample count, at least 1.
    pub n0: usize,
    /// Stage-2 (estimation) sample count, at least 2 so a sample variance
    /// exists for the Bernstein bound.
    pub n: usize,
    pub alpha: ConfidenceLevel,
    pub bound_kind: BoundKind,
    /// Inverse softmax temperature of the soft classifier.
    pub beta: f64,
}

impl CertifyConfig {
    pub fn new(
        sigma: f64,
        n0: usize,
        n: usize,
        alpha: ConfidenceLevel,
        bound_kind: BoundKind,
        beta: f64,
    ) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::invalid("sigma", format!("{sigma} not positive")));
        }
        if n0 == 0 {
            return Err(Error::invalid("n0", "needs at least one selection sample"));
        }
        if n < 2 {
            return Err(Error::invalid(
                "n",
                "needs at least two estimation samples (k >= 2 required)",
            ));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::invalid("beta", format!("{beta} not in [0, inf)")));
        }
        Ok(CertifyConfig {
            sigma,
            n0,
            n,
            alpha,
            bound_kind,
            beta,
        })
    }

    /// Defaults shared by the CLI: `n0 = 100`, `n = 10^4`, `alpha = 0.001`.
    pub fn defaults(sigma: f64, bound_kind: BoundKind, beta: f64) -> Result<Self> {
        CertifyConfig::new(
            sigma,
            100,
            10_000,
            ConfidenceLevel::new(0.001).expect("0.001 is a valid level"),
            bound_kind,
            beta,
        )
    }
}

/// Certified prediction or abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Predicted(usize),
    Abstain,
}

/// Result of certifying one input. `radius` is 0 exactly when the certifier
/// abstained, which happens exactly when `lower_bound <= 1/2`.
#[derive(Debug, Clone)]
pub struct CertificationResult {
    pub outcome: Outcome,
    pub radius: f64,
    pub bound_kind: BoundKind,
    pub lower_bound: Probability,
}

impl CertificationResult {
    /// Builds the result from a candidate class and its clamped lower
    /// bound, enforcing the abstain-iff-`L <= 1/2` tie between fields.
    fn decide(candidate: usize, lower: Probability, cfg: &CertifyConfig) -> Result<Self> {
        if lower.value() > 0.5 {
            let radius = cfg.sigma * std_normal_quantile(lower.value())?;
            Ok(CertificationResult {
                outcome: Outcome::Predicted(candidate),
                radius,
                bound_kind: cfg.bound_kind,
                lower_bound: lower,
            })
        } else {
            Ok(CertificationResult {
                outcome: Outcome::Abstain,
                radius: 0.0,
                bound_kind: cfg.bound_kind,
                lower_bound: lower,
            })
        }
    }

    pub fn predicted_class(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Predicted(c) => Some(c),
            Outcome::Abstain => None,
        }
    }
}

/// Per-class first and second moments of tempered likelihoods under noise.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    first: Vec<f64>,
    second: Vec<f64>,
    num: usize,
}

impl MomentMatrix {
    fn zeros(classes: usize) -> Self {
        MomentMatrix {
            first: vec![0.0; classes],
            second: vec![0.0; classes],
            num: 0,
        }
    }

    fn accumulate(&mut self, z: &LikelihoodVector) {
        for (c, v) in z.values().iter().enumerate() {
            self.first[c] += v;
            self.second[c] += v * v;
        }
        self.num += 1;
    }

    pub fn num_samples(&self) -> usize {
        self.num
    }

    pub fn num_classes(&self) -> usize {
        self.first.len()
    }

    pub fn first_moment(&self, c: usize) -> f64 {
        self.first[c]
    }

    pub fn second_moment(&self, c: usize) -> f64 {
        self.second[c]
    }

    /// Mean likelihood of class `c`, clamped into `[0, 1]` (float summation
    /// can overshoot by an ulp).
    pub fn mean(&self, c: usize) -> Probability {
        Probability::clamped(self.first[c] / self.num as f64)
    }

    /// Unbiased sample variance of class `c`'s likelihood, floored at 0.
    pub fn sample_variance(&self, c: usize) -> f64 {
        assert!(self.num >= 2, "variance needs two samples");
        let n = self.num as f64;
        ((self.second[c] - self.first[c] * self.first[c] / n) / (n - 1.0)).max(0.0)
    }

    /// Class with the largest mean likelihood (lowest index wins ties).
    pub fn argmax_mean(&self) -> usize {
        net::argmax(&self.first)
    }
}

/// Draws `num` noisy evaluations of the tempered softmax and accumulates
/// per-class first and second moments.
pub fn sample_under_noise(
    net: &SmallNet,
    x: &[f64],
    num: usize,
    sigma: f64,
    beta: f64,
    rng: &mut RngStream,
) -> Result<MomentMatrix> {
    if num == 0 {
        return Err(Error::invalid("num", "needs at least one sample"));
    }
    let mut moments = MomentMatrix::zeros(net.num_classes());
    let mut noisy = vec![0.0; x.len()];
    for _ in 0..num {
        let noise = sample_gaussian(x.len(), sigma, rng)?;
        for ((n, xi), e) in noisy.iter_mut().zip(x).zip(&noise) {
            *n = xi + e;
        }
        let logits = net.forward_logits(&noisy)?;
        moments.accumulate(&net::softmax_temp(&logits, beta)?);
    }
    Ok(moments)
}

/// Certified radius of the hard smoothed classifier from a lower bound on
/// the top probability and an upper bound on the runner-up:
/// `(sigma / 2) (quantile(p_a) - quantile(p_b))`. Requires `p_a >= p_b`.
pub fn hard_radius_from_probs(p_a: Probability, p_b: Probability, sigma: f64) -> Result<f64> {
    radius_from_pair(p_a, p_b, sigma, "p_a", "p_b")
}

/// Same certificate for the soft classifier, reading expected tempered
/// likelihoods instead of vote probabilities.
pub fn soft_radius_from_expectations(
    z_a: Probability,
    z_b: Probability,
    sigma: f64,
) -> Result<f64> {
    radius_from_pair(z_a, z_b, sigma, "z_a", "z_b")
}

fn radius_from_pair(
    a: Probability,
    b: Probability,
    sigma: f64,
    name_a: &'static str,
    name_b: &'static str,
) -> Result<f64> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid("sigma", format!("{sigma} not positive")));
    }
    if a.value() < b.value() {
        return Err(Error::invalid(
            name_a,
            format!("{} is below {name_b} = {}", a.value(), b.value()),
        ));
    }
    Ok(0.5 * sigma * (std_normal_quantile(a.value())? - std_normal_quantile(b.value())?))
}

/// Two-stage hard certification: `n0` votes select the candidate class,
/// `n` fresh votes buy a Clopper-Pearson lower bound on its probability.
pub fn hard_certify(
    net: &SmallNet,
    x: &[f64],
    cfg: &CertifyConfig,
    rng: &RngStream,
) -> Result<CertificationResult> {
    if cfg.bound_kind != BoundKind::ClopperPearson {
        return Err(Error::invalid(
            "bound",
            "hard certification uses the clopper_pearson bound",
        ));
    }
    let mut stage1 = rng.substream(1);
    let mut counts = vec![0u64; net.num_classes()];
    let mut noisy = vec![0.0; x.len()];
    for _ in 0..cfg.n0 {
        counts[vote(net, x, cfg.sigma, &mut stage1, &mut noisy)?] += 1;
    }
    let candidate = net::argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());

    let mut stage2 = rng.substream(2);
    let mut successes = 0u64;
    for _ in 0..cfg.n {
        if vote(net, x, cfg.sigma, &mut stage2, &mut noisy)? == candidate {
            successes += 1;
        }
    }
    let lower = clopper_pearson_lower(successes, cfg.n as u64, cfg.alpha)?;
    CertificationResult::decide(candidate, lower, cfg)
}

fn vote(
    net: &SmallNet,
    x: &[f64],
    sigma: f64,
    rng: &mut RngStream,
    noisy: &mut [f64],
) -> Result<usize> {
    let noise = sample_gaussian(x.len(), sigma, rng)?;
    for ((n, xi), e) in noisy.iter_mut().zip(x).zip(&noise) {
        *n = xi + e;
    }
    Ok(net::hard_predict(&net.forward_logits(noisy)?))
}

/// Two-stage soft certification: a stage-1 moment pass selects the class
/// with the best mean tempered likelihood, a fresh stage-2 pass feeds the
/// configured mean bound (Hoeffding or empirical Bernstein).
pub fn soft_certify(
    net: &SmallNet,
    x: &[f64],
    cfg: &CertifyConfig,
    rng: &RngStream,
) -> Result<CertificationResult> {
    if cfg.bound_kind == BoundKind::ClopperPearson {
        return Err(Error::invalid(
            "bound",
            "soft certification uses the hoeffding or bernstein bound",
        ));
    }
    let mut stage1 = rng.substream(1);
    let moments0 = sample_under_noise(net, x, cfg.n0, cfg.sigma, cfg.beta, &mut stage1)?;
    let candidate = moments0.argmax_mean();

    let mut stage2 = rng.substream(2);
    let moments = sample_under_noise(net, x, cfg.n, cfg.sigma, cfg.beta, &mut stage2)?;
    let mean = moments.mean(candidate).value();
    let raw = match cfg.bound_kind {
        BoundKind::Hoeffding => hoeffding_lower(mean, cfg.n as u64, cfg.alpha)?,
        BoundKind::Bernstein => bernstein_lower(
            mean,
            moments.sample_variance(candidate),
            cfg.n as u64,
            cfg.alpha,
        )?,
        BoundKind::ClopperPearson => unreachable!("rejected above"),
    };
    CertificationResult::decide(candidate, Probability::clamped(raw), cfg)
}

/// Certification dispatched on `cfg.bound_kind`.
pub fn certify(
    net: &SmallNet,
    x: &[f64],
    cfg: &CertifyConfig,
    rng: &RngStream,
) -> Result<CertificationResult> {
    match cfg.bound_kind {
        BoundKind::ClopperPearson => hard_certify(net, x, cfg, rng),
        BoundKind::Hoeffding | BoundKind::Bernstein => soft_certify(net, x, cfg, rng),
    }
}

/// How [`smoothed_predict`] aggregates noisy evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Majority vote over hard predictions.
    Hard,
    /// Argmax of the mean tempered likelihood.
    Soft,
}

/// Plain smoothed prediction without a certificate.
pub fn smoothed_predict(
    net: &SmallNet,
    x: &[f64],
    num: usize,
    sigma: f64,
    beta: f64,
    mode: PredictMode,
    rng: &mut RngStream,
) -> Result<usize> {
    if num == 0 {
        return Err(Error::invalid("num", "needs at least one sample"));
    }
    match mode {
        PredictMode::Hard => {
            let mut counts = vec![0u64; net.num_classes()];
            let mut noisy = vec![0.0; x.len()];
            for _ in 0..num {
                counts[vote(net, x, sigma, rng, &mut noisy)?] += 1;
            }
            Ok(net::argmax(
                &counts.iter().map(|&c| c as f64).collect::<Vec<_>>(),
            ))
        }
        PredictMode::Soft => {
            let moments = sample_under_noise(net, x, num, sigma, beta, rng)?;
            Ok(moments.argmax_mean())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statmath::std_normal_cdf;

    fn level(a: f64) -> ConfidenceLevel {
        ConfidenceLevel::new(a).unwrap()
    }

    fn prob(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    /// Single affine layer computing logits [w.x - b, 0]: the hard
    /// prediction is the halfspace test w.x >= b, whose smoothed vote
    /// probability has the closed form Phi((w.x - b) / (sigma |w|)).
    fn halfspace_net(w: &[f64], b: f64) -> SmallNet {
        let mut net = SmallNet::zeros(&[w.len(), 2]).unwrap();
        for (i, wi) in w.iter().enumerate() {
            net.set_param(i, *wi);
        }
        net.set_param(2 * w.len(), -b);
        net
    }

    /// Net with constant logits ln(z) so softmax at beta = 1 returns `z`
    /// for every input.
    fn constant_net(z: &[f64]) -> SmallNet {
        let dim = 2;
        let mut net = SmallNet::zeros(&[dim, z.len()]).unwrap();
        for (c, v) in z.iter().enumerate() {
            net.set_param(dim * z.len() + c, v.ln());
        }
        net
    }

    fn check_invariant(res: &CertificationResult) {
        match res.outcome {
            Outcome::Abstain => {
                assert_eq!(res.radius, 0.0);
                assert!(res.lower_bound.value() <= 0.5);
            }
            Outcome::Predicted(_) => {
                assert!(res.radius > 0.0);
                assert!(res.lower_bound.value() > 0.5);
            }
        }
    }

    #[test]
    fn radius_formula_spot_values() {
        // symmetric pair around 1/2 at sigma = 0.25 gives the margin itself
        let r = hard_radius_from_probs(prob(0.841345), prob(0.158655), 0.25).unwrap();
        assert!((r - 0.25).abs() < 1e-4, "r = {r}");
        // equal probabilities certify nothing
        let r = hard_radius_from_probs(prob(0.5), prob(0.5), 1.0).unwrap();
        assert_eq!(r, 0.0);
        // frozen value from the quantile oracle
        let r = hard_radius_from_probs(prob(0.9), prob(0.05), 0.5).unwrap();
        assert!((r - 0.731601).abs() < 1e-5, "r = {r}");

        let r = soft_radius_from_expectations(prob(0.933246), prob(0.066754), 1.0).unwrap();
        assert!((r - 1.5004).abs() < 1e-4, "r = {r}");

        assert!(hard_radius_from_probs(prob(0.4), prob(0.6), 0.25).is_err());
        assert!(hard_radius_from_probs(prob(0.9), prob(0.05), 0.0).is_err());
    }

    #[test]
    fn moment_matrix_respects_bounds() {
        let net = halfspace_net(&[1.0, -0.5], 0.2);
        let mut rng = RngStream::new(5, 0);
        let m = sample_under_noise(&net, &[0.6, 0.4], 500, 0.3, 4.0, &mut rng).unwrap();
        assert_eq!(m.num_samples(), 500);
        let mut mean_total = 0.0;
        for c in 0..m.num_classes() {
            assert!(m.second_moment(c) <= m.first_moment(c) + 1e-9);
            assert!(m.first_moment(c) <= m.num_samples() as f64 + 1e-9);
            assert!(m.sample_variance(c) >= 0.0);
            mean_total += m.mean(c).value();
        }
        assert!((mean_total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_net_moments_are_exact() {
        let net = constant_net(&[0.7, 0.3]);
        let mut rng = RngStream::new(1, 0);
        let m = sample_under_noise(&net, &[0.5, 0.5], 200, 0.25, 1.0, &mut rng).unwrap();
        assert!((m.mean(0).value() - 0.7).abs() < 1e-12);
        assert!(m.sample_variance(0) < 1e-12);
    }

    #[test]
    fn hard_certify_all_successes_hits_closed_form() {
        // the always-class-0 net gives s = n exactly
        let net = constant_net(&[0.9, 0.1]);
        let cfg = CertifyConfig::new(0.25, 10, 100, level(0.001), BoundKind::ClopperPearson, 1.0)
            .unwrap();
        let res = hard_certify(&net, &[0.2, 0.8], &cfg, &RngStream::new(3, 0)).unwrap();
        check_invariant(&res);
        assert_eq!(res.outcome, Outcome::Predicted(0));
        let want_lb = 0.001_f64.powf(0.01);
        assert!((res.lower_bound.value() - want_lb).abs() < 1e-9);
        let want_radius = 0.25 * std_normal_quantile(want_lb).unwrap();
        assert!((res.radius - want_radius).abs() < 1e-9);
        assert!((res.radius - 0.375119).abs() < 1e-4);
    }

    #[test]
    fn hard_certify_abstains_on_a_coin_flip() {
        // point on the decision boundary: vote probability is exactly 1/2,
        // and a Clopper-Pearson bound from s ~ n/2 cannot clear it
        let net = halfspace_net(&[1.0, 0.0], 0.5);
        let cfg = CertifyConfig::new(0.25, 50, 1000, level(0.001), BoundKind::ClopperPearson, 1.0)
            .unwrap();
        let res = hard_certify(&net, &[0.5, 0.5], &cfg, &RngStream::new(11, 0)).unwrap();
        check_invariant(&res);
        assert_eq!(res.outcome, Outcome::Abstain);
    }

    #[test]
    fn soft_certify_hoeffding_abstains_below_threshold() {
        // constant likelihood 0.52: the Hoeffding deviation at n = 100,
        // alpha = 0.001 is ~0.186, so the bound lands far below 1/2
        let net = constant_net(&[0.52, 0.48]);
        let cfg =
            CertifyConfig::new(0.25, 10, 100, level(0.001), BoundKind::Hoeffding, 1.0).unwrap();
        let res = soft_certify(&net, &[0.5, 0.5], &cfg, &RngStream::new(17, 0)).unwrap();
        check_invariant(&res);
        assert_eq!(res.outcome, Outcome::Abstain);
        let want = 0.52 - (1000.0_f64.ln() / 200.0).sqrt();
        assert!((res.lower_bound.value() - want).abs() < 1e-9);
    }

    #[test]
    fn soft_certify_bernstein_certifies_concentrated_likelihoods() {
        let z0 = 1.0 - 1e-6;
        let net = constant_net(&[z0, 1e-6]);
        let cfg =
            CertifyConfig::new(0.25, 10, 10_000, level(0.001), BoundKind::Bernstein, 1.0).unwrap();
        let res = soft_certify(&net, &[0.5, 0.5], &cfg, &RngStream::new(23, 0)).unwrap();
        check_invariant(&res);
        assert_eq!(res.outcome, Outcome::Predicted(0));
        // constant samples have (near-)zero variance: only the
        // 7 ln(2/a)/(3(n-1)) term bites. Summation rounding over 10^4 terms
        // shifts the realized bound by ~1e-8, hence the loose outer
        // tolerance; radius and bound must still agree exactly.
        let want_lb = bernstein_lower(z0, 0.0, 10_000, level(0.001)).unwrap();
        assert!((res.lower_bound.value() - want_lb).abs() < 1e-6);
        let tied_radius = 0.25 * std_normal_quantile(res.lower_bound.value()).unwrap();
        assert_eq!(res.radius, tied_radius);
        assert!((res.radius - 0.25 * std_normal_quantile(want_lb).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn soft_certify_abstains_when_no_class_clears_half() {
        let net = constant_net(&[0.4, 0.35, 0.25]);
        for kind in [BoundKind::Hoeffding, BoundKind::Bernstein] {
            let cfg = CertifyConfig::new(0.25, 20, 500, level(0.001), kind, 1.0).unwrap();
            let res = soft_certify(&net, &[0.1, 0.1], &cfg, &RngStream::new(29, 0)).unwrap();
            check_invariant(&res);
            assert_eq!(res.outcome, Outcome::Abstain, "{kind:?}");
        }
    }

    #[test]
    fn certification_is_deterministic() {
        let net = halfspace_net(&[0.8, 0.6], 0.3);
        let cfg = CertifyConfig::new(0.25, 20, 400, level(0.01), BoundKind::ClopperPearson, 1.0)
            .unwrap();
        let a = hard_certify(&net, &[0.7, 0.6], &cfg, &RngStream::new(31, 5)).unwrap();
        let b = hard_certify(&net, &[0.7, 0.6], &cfg, &RngStream::new(31, 5)).unwrap();
        assert_eq!(a.outcome, b.outcome);
        assert_eq!(a.radius, b.radius);
        assert_eq!(a.lower_bound.value(), b.lower_bound.value());
    }

    #[test]
    fn halfspace_certificates_are_valid_and_tight() {
        // true margin m: certified radius must stay below it (validity) and
        // recover most of it at these sample sizes (tightness)
        let w = [3.0, -4.0]; // |w| = 5
        let sigma = 0.2;
        let b = 0.1;
        let cfg = CertifyConfig::new(
            sigma,
            100,
            10_000,
            level(0.001),
            BoundKind::ClopperPearson,
            1.0,
        )
        .unwrap();
        let net = halfspace_net(&w, b);
        let mut ratios = Vec::new();
        for (i, margin_mult) in [0.5, 1.0, 2.0, 3.0].iter().enumerate() {
            let m = margin_mult * sigma;
            // place x at distance m on the positive side: x = x0 + m w/|w|
            let x = [0.02 + m * w[0] / 5.0, (0.02 * 3.0 - b) / 4.0 - m * (-w[1]) / 5.0];
            // recompute the analytic margin from x directly
            let margin = (w[0] * x[0] + w[1] * x[1] - b) / 5.0;
            assert!((margin - m).abs() < 1e-12);
            let res = hard_certify(&net, &x, &cfg, &RngStream::new(37, i as u64)).unwrap();
            check_invariant(&res);
            assert_eq!(res.outcome, Outcome::Predicted(0));
            assert!(res.radius <= m, "radius {} exceeds margin {m}", res.radius);
            ratios.push(res.radius / m);

            // the empirical vote frequency should sit near Phi(m / sigma)
            let mut rng = RngStream::new(41, i as u64);
            let mut hits = 0;
            let trials = 2000;
            let mut noisy = vec![0.0; 2];
            for _ in 0..trials {
                if vote(&net, &x, sigma, &mut rng, &mut noisy).unwrap() == 0 {
                    hits += 1;
                }
            }
            let p = std_normal_cdf(m / sigma).unwrap().value();
            let freq = hits as f64 / trials as f64;
            let slack = 4.0 * (p * (1.0 - p) / trials as f64).sqrt().max(1e-3);
            assert!((freq - p).abs() <= slack, "freq {freq} vs analytic {p}");
        }
        let avg: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(avg >= 0.8, "average tightness {avg}");
    }

    #[test]
    fn sharp_softmax_converges_to_votes() {
        // logit gap stays above 0.5 for every noise draw here, so at
        // beta = 64 the tempered likelihood is within 1e-13 of the vote
        // indicator and the two aggregates agree to 1e-6
        let w = [1.0, 0.0];
        let sigma = 0.05;
        let net = halfspace_net(&w, 0.0);
        for i in 0..20 {
            let x = [0.75 + 0.01 * i as f64, 0.3];
            let shared = RngStream::new(43, i);
            let mut s1 = shared.clone();
            let m = sample_under_noise(&net, &x, 1000, sigma, 64.0, &mut s1).unwrap();
            let mut s2 = shared.clone();
            let mut hits = 0u32;
            let mut noisy = vec![0.0; 2];
            for _ in 0..1000 {
                if vote(&net, &x, sigma, &mut s2, &mut noisy).unwrap() == 0 {
                    hits += 1;
                }
            }
            let vote_frac = hits as f64 / 1000.0;
            assert!(
                (m.mean(0).value() - vote_frac).abs() <= 1e-6,
                "soft {} vs votes {vote_frac}",
                m.mean(0).value()
            );
        }
    }

    #[test]
    fn smoothed_argmax_quantile_is_lipschitz() {
        // For the analytic halfspace, quantile(P(class 0 | x)) is linear in
        // x with gradient norm exactly 1/sigma; finite differences on the
        // closed form must recover that.
        let w = [3.0, -4.0];
        let sigma = 0.4;
        let b = -0.2;
        let smoothed = |x: &[f64]| {
            let m = (w[0] * x[0] + w[1] * x[1] - b) / 5.0;
            std_normal_cdf(m / sigma).unwrap().value()
        };
        let x = [0.3, 0.6];
        let h = 1e-6;
        let mut grad = [0.0; 2];
        for d in 0..2 {
            let mut xp = x;
            xp[d] += h;
            let mut xm = x;
            xm[d] -= h;
            grad[d] = (std_normal_quantile(smoothed(&xp)).unwrap()
                - std_normal_quantile(smoothed(&xm)).unwrap())
                / (2.0 * h);
        }
        let norm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        assert!((norm - 1.0 / sigma).abs() < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn smoothed_predict_modes_agree_on_constant_net() {
        let net = constant_net(&[0.2, 0.7, 0.1]);
        let mut rng = RngStream::new(47, 0);
        let hard =
            smoothed_predict(&net, &[0.5, 0.5], 51, 0.25, 1.0, PredictMode::Hard, &mut rng)
                .unwrap();
        let soft =
            smoothed_predict(&net, &[0.5, 0.5], 51, 0.25, 1.0, PredictMode::Soft, &mut rng)
                .unwrap();
        assert_eq!(hard, 1);
        assert_eq!(soft, 1);
    }

    #[test]
    fn smoothed_predict_tracks_the_analytic_vote_rate() {
        // at margin 2 sigma a single-sample prediction is right with
        // probability Phi(2); check the empirical rate over many repeats
        let net = halfspace_net(&[1.0, 0.0], 0.4);
        let sigma = 0.15;
        let x = [0.4 + 2.0 * sigma, 0.5];
        let mut correct = 0;
        let trials = 10_000;
        for i in 0..trials {
            let mut rng = RngStream::new(53, i);
            if smoothed_predict(&net, &x, 1, sigma, 1.0, PredictMode::Hard, &mut rng).unwrap() == 0
            {
                correct += 1;
            }
        }
        let p = std_normal_cdf(2.0).unwrap().value();
        let lower = p - 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
        assert!(correct as f64 / trials as f64 >= lower);
    }

    #[test]
    fn config_and_dispatch_validation() {
        let a = level(0.001);
        assert!(CertifyConfig::new(0.0, 10, 100, a, BoundKind::Hoeffding, 1.0).is_err());
        assert!(CertifyConfig::new(0.25, 0, 100, a, BoundKind::Hoeffding, 1.0).is_err());
        assert!(CertifyConfig::new(0.25, 10, 1, a, BoundKind::Bernstein, 1.0).is_err());
        assert!(CertifyConfig::new(0.25, 10, 100, a, BoundKind::Hoeffding, -1.0).is_err());

        let net = constant_net(&[0.9, 0.1]);
        let hard_cfg = CertifyConfig::new(0.25, 10, 100, a, BoundKind::ClopperPearson, 1.0).unwrap();
        let soft_cfg = CertifyConfig::new(0.25, 10, 100, a, BoundKind::Hoeffding, 1.0).unwrap();
        assert!(soft_certify(&net, &[0.0, 0.0], &hard_cfg, &RngStream::new(0, 0)).is_err());
        assert!(hard_certify(&net, &[0.0, 0.0], &soft_cfg, &RngStream::new(0, 0)).is_err());

        assert_eq!("bernstein".parse::<BoundKind>().unwrap(), BoundKind::Bernstein);
        assert!("median".parse::<BoundKind>().is_err());
    }
}
