//! Robust training by maximizing the certified radius.
//!
//! The trainer minimizes, per example, a cross-entropy term on the mean
//! tempered likelihood under Gaussian input noise plus a hinge on the
//! certified-radius surrogate
//!
//! ```text
//! xi = quantile(zhat^y) - quantile(zhat^runner)
//! loss = -ln zhat^y + (lambda sigma / 2) * max(gamma - xi, 0)
//! ```
//!
//! where the hinge only fires on examples the smoothed classifier currently
//! gets right (the "correct set"). Three choices that matter and are easy
//! to get wrong:
//!
//! * The correct-set membership, the runner-up identity and the hinge gate
//!   are decided once per step and held fixed during differentiation — the
//!   update sees them as constants, not as functions of the parameters.
//! * Quantiles are the clamped ones from [`crate::statmath`], so the radius
//!   surrogate and its derivative stay finite no matter how extreme the
//!   likelihoods get.
//! * Noise is drawn from sub-streams keyed by (epoch, sample, draw), which
//!   makes training bit-reproducible and independent of batch processing
//!   order.

use crate::data::{minibatches, Dataset};
use crate::net::{self, GradientSet, LikelihoodVector, SmallNet};
use crate::statmath::{
    sample_gaussian, std_normal_quantile, std_normal_quantile_derivative, Probability, RngStream,
};
use crate::{Error, Result};

/// Stream tag for weight initialization ("init").
const INIT_STREAM: u64 = 0x696e_6974;
/// Stream tag for training-time Gaussian perturbations ("nois").
const NOISE_STREAM: u64 = 0x6e6f_6973;

/// Probabilities below this contribute a constant to the cross-entropy
/// instead of an unbounded log.
const CE_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Schedules and configuration
// ---------------------------------------------------------------------------

/// Stepwise-constant hyperparameter schedule: `(epoch, value)` change
/// points, strictly increasing in epoch, starting at epoch 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    points: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("schedule", "no change points"));
        }
        if points[0].0 != 0 {
            return Err(Error::invalid(
                "schedule",
                format!("first change point is epoch {}, must be 0", points[0].0),
            ));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(
                    "schedule",
                    format!("epochs must increase strictly ({} then {})", w[0].0, w[1].0),
                ));
            }
        }
        if let Some((e, v)) = points.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "schedule",
                format!("value {v} at epoch {e} not in [0, inf)"),
            ));
        }
        Ok(Schedule { points })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Schedule::new(vec![(0, value)])
    }

    /// Value in force at `epoch`: the last change point at or before it.
    pub fn value_at(&self, epoch: usize) -> f64 {
        self.points
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .expect("schedule starts at epoch 0")
            .1
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    /// Parses `"0:0.01,30:0.001"`; a bare number is a constant schedule.
    fn from_str(s: &str) -> Result<Self> {
        if !s.contains(':') {
            let v = s.trim().parse::<f64>().map_err(|_| {
                Error::invalid("schedule", format!("'{s}' is neither a number nor epoch:value pairs"))
            })?;
            return Schedule::constant(v);
        }
        let mut points = Vec::new();
        for part in s.split(',') {
            let (e, v) = part.trim().split_once(':').ok_or_else(|| {
                Error::invalid("schedule", format!("'{part}' is not an epoch:value pair"))
            })?;
            let epoch = e.trim().parse::<usize>().map_err(|_| {
                Error::invalid("schedule", format!("bad epoch '{e}' in '{part}'"))
            })?;
            let value = v.trim().parse::<f64>().map_err(|_| {
                Error::invalid("schedule", format!("bad value '{v}' in '{part}'"))
            })?;
            points.push((epoch, value));
        }
        Schedule::new(points)
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (e, v)) in self.points.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}:{v}")?;
        }
        Ok(())
    }
}

/// Everything the trainer needs. Fields are public so callers (notably the
/// CLI) can assemble configs piecemeal; [`MacerConfig::validate`] performs
/// the full cross-field check and [`train`] calls it up front.
#[derive(Debug, Clone)]
pub struct MacerConfig {
    pub sigma: f64,
    /// Gaussian samples per input and step.
    pub k: usize,
    pub lambda: Schedule,
    /// Hinge width in quantile-gap space.
    pub gamma: f64,
    /// Inverse softmax temperature.
    pub beta: f64,
    pub lr: Schedule,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden layer widths; input and class counts come from the dataset.
    pub hidden_dims: Vec<usize>,
    /// When false, the cross-entropy term runs at temperature 1 and only
    /// the radius term sees `beta` (the stability trick for large `beta`).
    pub beta_on_classification: bool,
}

impl MacerConfig {
    /// A reasonable starting point: `k = 16`, `lambda = 12`, `gamma = 8`,
    /// `beta = 16`, one hidden layer of 64.
    pub fn defaults(sigma: f64, seed: u64) -> Self {
        MacerConfig {
            sigma,
            k: 16,
            lambda: Schedule::constant(12.0).expect("12 is a valid constant"),
            gamma: 8.0,
            beta: 16.0,
            lr: Schedule::constant(0.01).expect("0.01 is a valid constant"),
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            seed,
            hidden_dims: vec![64],
            beta_on_classification: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::invalid("sigma", format!("{} not positive", self.sigma)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k", "needs at least one noise sample"));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::invalid("gamma", format!("{} not positive", self.gamma)));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::invalid("beta", format!("{} not positive", self.beta)));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                "momentum",
                format!("{} not in [0, 1)", self.momentum),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("hidden_dims", "zero-width hidden layer"));
        }
        Ok(())
    }

    fn lambda_at(&self, epoch: usize) -> f64 {
        self.lambda.value_at(epoch)
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Per-sample loss split into its two terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Exactly `classification + robustness`.
    pub total: f64,
    /// Cross-entropy of the mean likelihood, floored at `-ln 1e-12`.
    pub classification: f64,
    /// Hinge on the radius surrogate; 0 off the correct set.
    pub robustness: f64,
    /// The quantile gap, when the sample is in the correct set.
    pub xi_hat: Option<f64>,
    pub in_correct_set: bool,
}

/// Mean of `k` tempered softmax outputs over Gaussian perturbations of `x`,
/// draw `j` keyed to `rng.substream(j)`.
pub fn empirical_likelihood(
    net: &SmallNet,
    x: &[f64],
    k: usize,
    sigma: f64,
    beta: f64,
    rng: &RngStream,
) -> Result<LikelihoodVector> {
    if k == 0 {
        return Err(Error::invalid("k", "needs at least one noise sample"));
    }
    let mut acc = vec![0.0; net.num_classes()];
    let mut noisy = vec![0.0; x.len()];
    for j in 0..k {
        let mut sub = rng.substream(j as u64);
        let noise = sample_gaussian(x.len(), sigma, &mut sub)?;
        for ((n, xi), e) in noisy.iter_mut().zip(x).zip(&noise) {
            *n = xi + e;
        }
        let z = net::softmax_temp(&net.forward_logits(&noisy)?, beta)?;
        for (a, v) in acc.iter_mut().zip(z.values()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= k as f64;
    }
    LikelihoodVector::new(acc)
}

/// Radius surrogate `quantile(zhat^y) - quantile(zhat^runner)` where the
/// runner-up is the best non-`y` class (lowest index on ties). Returns
/// `None` when `y` is not the argmax of `zhat` — the sample is outside the
/// correct set and contributes no robustness term.
///
/// Panics if `y` is not a class index of `zhat`.
pub fn xi_hat(zhat: &LikelihoodVector, y: usize) -> Option<f64> {
    assert!(y < zhat.len(), "label {y} out of range for {} classes", zhat.len());
    if zhat.argmax() != y {
        return None;
    }
    let runner = runner_up(zhat, y);
    let qy = clamped_quantile(zhat.get(y));
    let qr = clamped_quantile(zhat.get(runner));
    Some(qy - qr)
}

fn runner_up(zhat: &LikelihoodVector, y: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (c, &v) in zhat.values().iter().enumerate() {
        if c != y && v > best_v {
            best = c;
            best_v = v;
        }
    }
    best
}

/// Quantile of a likelihood entry; entries can poke above 1 by summation
/// slack, so clamp into [0, 1] first.
fn clamped_quantile(z: f64) -> f64 {
    std_normal_quantile(Probability::clamped(z).value()).expect("clamped input")
}

fn clamped_quantile_derivative(z: f64) -> f64 {
    std_normal_quantile_derivative(Probability::clamped(z).value()).expect("clamped input")
}

/// The per-sample objective at `epoch`'s lambda: cross-entropy plus the
/// gated hinge `(lambda sigma / 2) max(gamma - xi, 0)`.
///
/// Panics if `y` is not a class index of `zhat`.
pub fn macer_loss(
    zhat: &LikelihoodVector,
    y: usize,
    cfg: &MacerConfig,
    epoch: usize,
) -> LossBreakdown {
    let classification = -zhat.get(y).max(CE_FLOOR).ln();
    let xi = xi_hat(zhat, y);
    let lambda = cfg.lambda_at(epoch);
    let robustness = match xi {
        Some(gap) if gap < cfg.gamma => 0.5 * lambda * cfg.sigma * (cfg.gamma - gap),
        _ => 0.0,
    };
    LossBreakdown {
        total: classification + robustness,
        classification,
        robustness,
        xi_hat: xi,
        in_correct_set: xi.is_some(),
    }
}

/// Gradient of the cross-entropy term with respect to the mean likelihood:
/// `-1/zhat^y` at `y` (zero once the floor takes over), zero elsewhere.
pub fn ce_grad_wrt_likelihood(zhat: &LikelihoodVector, y: usize) -> Vec<f64> {
    let mut g = vec![0.0; zhat.len()];
    let zy = zhat.get(y);
    if zy >= CE_FLOOR {
        g[y] = -1.0 / zy;
    }
    g
}

/// Gradient of the hinge term with respect to the mean likelihood, with the
/// correct-set membership, runner-up and hinge gate of the *current* `zhat`
/// baked in as constants. Zero everywhere when the hinge is inactive;
/// otherwise `-(lambda sigma / 2) quantile'(zhat^y)` at `y` and the
/// opposite sign at the runner-up. The clamped quantile derivative keeps
/// every entry finite.
pub fn robustness_grad_wrt_likelihood(
    zhat: &LikelihoodVector,
    y: usize,
    lambda: f64,
    sigma: f64,
    gamma: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; zhat.len()];
    match xi_hat(zhat, y) {
        Some(gap) if gap < gamma => {}
        _ => return g,
    }
    let runner = runner_up(zhat, y);
    let coef = 0.5 * lambda * sigma;
    g[y] = -coef * clamped_quantile_derivative(zhat.get(y));
    g[runner] = coef * clamped_quantile_derivative(zhat.get(runner));
    g
}

// ---------------------------------------------------------------------------
// Backward pass and training loop
// ---------------------------------------------------------------------------

/// Loss and parameter gradient of one sample at `epoch`, using `cfg.k`
/// noise draws from `rng.substream(j)`. The chain runs through the Monte
/// Carlo mean — each draw's softmax backward is scaled by `1/k` — while
/// the membership/runner-up/gate constants come from the mean itself.
pub fn macer_loss_backward(
    net: &SmallNet,
    x: &[f64],
    y: usize,
    cfg: &MacerConfig,
    epoch: usize,
    rng: &RngStream,
) -> Result<(LossBreakdown, GradientSet)> {
    cfg.validate()?;
    if y >= net.num_classes() {
        return Err(Error::invalid(
            "y",
            format!("label {y} out of range for {} classes", net.num_classes()),
        ));
    }
    let beta_ce = if cfg.beta_on_classification { cfg.beta } else { 1.0 };

    // forward: accumulate the mean likelihoods, keeping each noisy input
    let classes = net.num_classes();
    let mut noisy_inputs = Vec::with_capacity(cfg.k);
    let mut acc_rob = vec![0.0; classes];
    let mut acc_ce = vec![0.0; classes];
    for j in 0..cfg.k {
        let mut sub = rng.substream(j as u64);
        let noise = sample_gaussian(x.len(), cfg.sigma, &mut sub)?;
        let noisy: Vec<f64> = x.iter().zip(&noise).map(|(xi, e)| xi + e).collect();
        let logits = net.forward_logits(&noisy)?;
        for (a, v) in acc_rob
            .iter_mut()
            .zip(net::softmax_temp(&logits, cfg.beta)?.values())
        {
            *a += v;
        }
        if !cfg.beta_on_classification {
            for (a, v) in acc_ce
                .iter_mut()
                .zip(net::softmax_temp(&logits, beta_ce)?.values())
            {
                *a += v;
            }
        }
        noisy_inputs.push(noisy);
    }
    for a in acc_rob.iter_mut() {
        *a /= cfg.k as f64;
    }
    let zhat_rob = LikelihoodVector::new(acc_rob)?;
    let zhat_ce = if cfg.beta_on_classification {
        zhat_rob.clone()
    } else {
        for a in acc_ce.iter_mut() {
            *a /= cfg.k as f64;
        }
        LikelihoodVector::new(acc_ce)?
    };

    // loss pieces: cross-entropy from the classification-side mean, hinge
    // and membership from the robustness-side mean
    let classification = -zhat_ce.get(y).max(CE_FLOOR).ln();
    let xi = xi_hat(&zhat_rob, y);
    let lambda = cfg.lambda_at(epoch);
    let robustness = match xi {
        Some(gap) if gap < cfg.gamma => 0.5 * lambda * cfg.sigma * (cfg.gamma - gap),
        _ => 0.0,
    };
    let breakdown = LossBreakdown {
        total: classification + robustness,
        classification,
        robustness,
        xi_hat: xi,
        in_correct_set: xi.is_some(),
    };

    // backward: dL/dz per draw is the mean-level gradient over k
    let dce = ce_grad_wrt_likelihood(&zhat_ce, y);
    let drob = robustness_grad_wrt_likelihood(&zhat_rob, y, lambda, cfg.sigma, cfg.gamma);
    let rob_active = drob.iter().any(|&v| v != 0.0);
    let scale = 1.0 / cfg.k as f64;
    let mut grads = GradientSet::zeros_like(net);
    if cfg.beta_on_classification {
        let combined: Vec<f64> = dce
            .iter()
            .zip(&drob)
            .map(|(c, r)| scale * (c + r))
            .collect();
        for noisy in &noisy_inputs {
            grads.add_assign(&net.backward(noisy, &combined, cfg.beta)?);
        }
    } else {
        let dce_scaled: Vec<f64> = dce.iter().map(|c| scale * c).collect();
        let drob_scaled: Vec<f64> = drob.iter().map(|r| scale * r).collect();
        for noisy in &noisy_inputs {
            grads.add_assign(&net.backward(noisy, &dce_scaled, beta_ce)?);
            if rob_active {
                grads.add_assign(&net.backward(noisy, &drob_scaled, cfg.beta)?);
            }
        }
    }
    Ok((breakdown, grads))
}

/// One epoch's mean loss statistics, plus the schedule values in force.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_ce: f64,
    pub mean_hinge: f64,
    /// Fraction of training samples whose mean likelihood put the right
    /// class on top (the trainer's own accuracy estimate).
    pub frac_in_correct_set: f64,
    pub lr: f64,
    pub lambda: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str =
        "epoch,mean_total,mean_ce,mean_hinge,frac_in_G,lr,lambda";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.mean_total,
            self.mean_ce,
            self.mean_hinge,
            self.frac_in_correct_set,
            self.lr,
            self.lambda
        )
    }
}

/// Minibatch SGD on the mean per-sample objective. The net is He-initialized
/// from `cfg.seed`, shuffling is keyed by `(cfg.seed, epoch)`, and noise by
/// `(epoch, sample index, draw)` — so the run is a pure function of
/// `(dataset, cfg)`, batch iteration order notwithstanding.
pub fn train(dataset: &Dataset, cfg: &MacerConfig) -> Result<(SmallNet, Vec<EpochLog>)> {
    cfg.validate()?;
    let mut dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
    dims.push(dataset.num_features());
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(dataset.num_classes());
    let mut net = SmallNet::he_init(&dims, &mut RngStream::new(cfg.seed, INIT_STREAM))?;
    let mut velocity = GradientSet::zeros_like(&net);
    let noise_root = RngStream::new(cfg.seed, NOISE_STREAM);

    let n = dataset.len() as f64;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.value_at(epoch);
        let lambda = cfg.lambda_at(epoch);
        let epoch_noise = noise_root.substream(epoch as u64);
        let (mut sum_total, mut sum_ce, mut sum_hinge, mut in_g) = (0.0, 0.0, 0.0, 0usize);
        for batch in minibatches(dataset, cfg.batch_size, epoch, cfg.seed)? {
            let mut grand = GradientSet::zeros_like(&net);
            for &i in &batch {
                let sample_rng = epoch_noise.substream(i as u64);
                let (b, g) = macer_loss_backward(
                    &net,
                    dataset.feature_row(i),
                    dataset.label(i),
                    cfg,
                    epoch,
                    &sample_rng,
                )?;
                grand.add_assign(&g);
                sum_total += b.total;
                sum_ce += b.classification;
                sum_hinge += b.robustness;
                in_g += b.in_correct_set as usize;
            }
            grand.scale(1.0 / batch.len() as f64);
            net::sgd_step(&mut net, &grand, lr, cfg.momentum, &mut velocity)?;
        }
        logs.push(EpochLog {
            epoch,
            mean_total: sum_total / n,
            mean_ce: sum_ce / n,
            mean_hinge: sum_hinge / n,
            frac_in_correct_set: in_g as f64 / n,
            lr,
            lambda,
        });
    }
    Ok((net, logs))
}
