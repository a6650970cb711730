//! Construction of adversarial pairs `(x0, x_adv)` for inputs the verifier
//! proves robust: brightness search (step 1), tolerance bisection for a
//! quasi-adversarial input (step 2), and random perturbation under a
//! concrete inference backend (step 3).

pub mod perturb;
pub mod search;

use serde::Serialize;

pub use perturb::{
    clamp_bounds, random_perturb_attack, random_perturb_observed, random_perturb_within, AcceptedStep, AttackParams, AttackRun, ClampBounds,
    DEFAULT_ITERATIONS, DEFAULT_U,
};
pub use search::{
    alpha_search, quasi_adv_search, scale_image, AlphaSearchResult, Probe, QuasiAdvTuple, QuasiOutcome, VerdictKind,
    DELTA_TARGET, GRID_INTERVALS, TAU_GAP,
};

use crate::backends::{infer, BackendId};
use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::region::PerturbationSet;
use crate::scalar::{Rational, Scalar};
use crate::tensor::{linf_distance, ImageTensor};
use crate::verifier::Verifier;

/// Lower the final bias of class `t0` by `tau0`.
///
/// The new bias is the smallest single-precision value not below the exact
/// `bias − tau0`, so every logit margin of `t0` drops by at most `tau0`.
pub fn bias_shift(net: &Network, t0: usize, tau0: f64) -> Result<Network> {
    if !(tau0.is_finite() && tau0 >= 0.0) {
        return Err(Error::OutOfRange(format!("tau0 = {tau0} must be finite and non-negative")));
    }
    let k = net.num_classes();
    if t0 >= k {
        return Err(Error::InvalidClass { index: t0, classes: k });
    }
    let mut layers = net.layers().to_vec();
    let Some(Layer::Dense(last)) = layers.last_mut() else {
        return Err(Error::Unsupported("final layer has no bias to shift".into()));
    };
    let b = last.bias[t0];
    let target = Rational::from_f32(b) - Rational::from_f64(tau0);
    let mut v = f32::from_rational(&target);
    while Rational::from_f32(v) < target {
        v = v.next_up();
    }
    while Rational::from_f32(v.next_down()) >= target {
        v = v.next_down();
    }
    last.bias[t0] = v;
    net.with_layers(layers)
}

/// The four conditions of an adversarial pair, each reported separately.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairValidation {
    /// (1) both images lie in `[0, 1]`.
    pub in_unit_box: bool,
    /// (2) `‖x_adv − x0‖∞ ≤ single(ε)` evaluated in single precision.
    pub norm_single: bool,
    /// (2′) the same for the double widenings against `ε`.
    pub norm_double: bool,
    /// (3) the verifier proves `x0` robust at `τ = 0`.
    pub verified_robust: bool,
    /// (4) the backend's CW loss at `x_adv` is negative.
    pub misclassified: bool,
    pub linf_single: f32,
    pub linf_double: f64,
    pub cw_backend: f64,
}

impl PairValidation {
    pub fn all_pass(&self) -> bool {
        self.in_unit_box && self.norm_single && self.norm_double && self.verified_robust && self.misclassified
    }
}

pub fn validate_adversarial_pair(
    verifier: &Verifier,
    net: &Network,
    x0: &ImageTensor<f32>,
    x_adv: &ImageTensor<f32>,
    eps: f64,
    t0: usize,
    backend: BackendId,
) -> Result<PairValidation> {
    let linf_single = linf_distance(x_adv, x0)?;
    let linf_double = linf_distance(&x_adv.widen_to_double(), &x0.widen_to_double())?;
    let in_unit_box = x0.in_unit_range() && x_adv.in_unit_range();
    let verified_robust = in_unit_box && {
        let region = PerturbationSet::new(x0.clone(), eps)?;
        verifier.worst(net, &region, t0, 0.0)?.is_robust()
    };
    let cw_backend = if x_adv.in_unit_range() { infer(backend, net, x_adv)?.cw_loss(t0)? } else { f64::NAN };
    Ok(PairValidation {
        in_unit_box,
        norm_single: linf_single <= eps as f32,
        norm_double: linf_double <= eps,
        verified_robust,
        misclassified: cw_backend < 0.0,
        linf_single,
        linf_double,
        cw_backend,
    })
}

/// Outcome of step 3 on one backend.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackendAttack {
    pub backend: BackendId,
    pub success: bool,
    pub initial_cw: f64,
    pub final_cw: f64,
    pub accepted_steps: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub validation: Option<PairValidation>,
    #[serde(skip)]
    pub x_adv: Option<ImageTensor<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedStatus {
    /// Steps 1 and 2 completed.
    Complete,
    /// Step 2 stopped on a timeout after some progress.
    PartialTau,
    /// No non-robust brightness coefficient exists below the seed.
    Unbracketable,
    /// The seed itself is not verified robust.
    NotRobust,
    /// The solver timed out at the start of step 2.
    Discarded,
}

/// Everything the pipeline learned about one seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed_index: usize,
    pub label: usize,
    pub status: SeedStatus,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub alpha_probes: usize,
    pub tau0: Option<f64>,
    pub tau1: Option<f64>,
    pub tau_probes: usize,
    pub bias_shift: bool,
    /// Whether the shifted model is still verified robust at `τ = 0`.
    pub shifted_robust: Option<bool>,
    pub attacks: Vec<BackendAttack>,
    #[serde(skip)]
    pub x0: Option<ImageTensor<f32>>,
    #[serde(skip)]
    pub x1: Option<ImageTensor<f32>>,
    #[serde(skip)]
    pub attacked_network: Option<Network>,
}

impl SeedReport {
    pub fn quasi_adversarial(&self) -> bool {
        matches!(self.status, SeedStatus::Complete | SeedStatus::PartialTau)
    }

    pub fn succeeded_on(&self, b: BackendId) -> bool {
        self.attacks.iter().any(|a| a.backend == b && a.success)
    }
}

/// Pipeline settings shared by every seed.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub eps: f64,
    pub backends: Vec<BackendId>,
    pub u: f64,
    pub iterations: usize,
    pub attack_seed: u64,
    pub bias_shift: bool,
    pub delta_target: f64,
}

/// Steps 1–3 for one seed image of class `label`, then validation of every
/// successful pair. Search failures become statuses, not errors.
pub fn attack_seed(
    verifier: &Verifier,
    net: &Network,
    seed_index: usize,
    x_seed: &ImageTensor<f32>,
    label: usize,
    cfg: &PipelineConfig,
) -> Result<SeedReport> {
    let mut report = SeedReport {
        seed_index,
        label,
        status: SeedStatus::Complete,
        alpha: None,
        delta: None,
        alpha_probes: 0,
        tau0: None,
        tau1: None,
        tau_probes: 0,
        bias_shift: cfg.bias_shift,
        shifted_robust: None,
        attacks: Vec::new(),
        x0: None,
        x1: None,
        attacked_network: None,
    };
    let step1 = match alpha_search(verifier, net, x_seed, cfg.eps, label, cfg.delta_target) {
        Ok(r) => r,
        Err(Error::Search(m)) => {
            report.status = if m.starts_with("unbracketable") { SeedStatus::Unbracketable } else { SeedStatus::NotRobust };
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    report.alpha = Some(step1.alpha);
    report.delta = Some(step1.delta);
    report.alpha_probes = step1.trail.len();
    let x0 = step1.x0;
    report.x0 = Some(x0.clone());

    let bounds = clamp_bounds(&x0, cfg.eps);
    let tuple = match quasi_adv_search(verifier, net, &x0, cfg.eps, label, (&bounds.lower, &bounds.upper))? {
        QuasiOutcome::Found(t) => t,
        QuasiOutcome::Discarded => {
            report.status = SeedStatus::Discarded;
            return Ok(report);
        }
    };
    if tuple.partial {
        report.status = SeedStatus::PartialTau;
    }
    report.tau0 = Some(tuple.tau0);
    report.tau1 = Some(tuple.tau1);
    report.tau_probes = tuple.trail.len();
    report.x1 = Some(tuple.x1.clone());

    let target = if cfg.bias_shift {
        let shifted = bias_shift(net, label, tuple.tau0)?;
        let region = PerturbationSet::new(x0.clone(), cfg.eps)?;
        report.shifted_robust = Some(verifier.worst(&shifted, &region, label, 0.0)?.is_robust());
        shifted
    } else {
        net.clone()
    };

    for (i, &backend) in cfg.backends.iter().enumerate() {
        let params = AttackParams { u: cfg.u, iterations: cfg.iterations, backend, seed: cfg.attack_seed.wrapping_add(i as u64) };
        params.validate()?;
        let run = random_perturb_within(&target, label, &tuple.x1, &bounds, &params)?;
        let validation = if run.success {
            Some(validate_adversarial_pair(verifier, &target, &x0, &run.x, cfg.eps, label, backend)?)
        } else {
            None
        };
        report.attacks.push(BackendAttack {
            backend,
            success: run.success,
            initial_cw: run.initial_cw,
            final_cw: run.final_cw,
            accepted_steps: run.accepted.len(),
            iterations: params.iterations,
            evaluations: run.evaluations,
            validation,
            x_adv: run.success.then_some(run.x),
        });
    }
    report.attacked_network = Some(target);
    Ok(report)
}
