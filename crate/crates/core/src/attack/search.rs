//! Steps 1 and 2: bracketing the robustness boundary with verifier calls.

use serde::Serialize;

use crate::backends::{infer, BackendId};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::region::PerturbationSet;
use crate::tensor::ImageTensor;
use crate::verifier::{Verdict, Verifier, VerifyResult};

/// Target width of the final α bracket.
pub const DELTA_TARGET: f64 = 1e-7;
/// Number of intervals the α bracket is split into once the solver times out.
pub const GRID_INTERVALS: usize = 16;
/// The τ search stops once `τ1 − τ0` falls below this.
pub const TAU_GAP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    Robust,
    NotRobust,
    Timeout,
}

impl VerdictKind {
    pub fn of(r: &VerifyResult<f64>) -> Self {
        match r.verdict {
            Verdict::Robust { .. } => VerdictKind::Robust,
            Verdict::NotRobust { .. } => VerdictKind::NotRobust,
            Verdict::Timeout => VerdictKind::Timeout,
        }
    }
}

/// One verifier call of a search: the probed value (α or τ) and its verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub value: f64,
    pub verdict: VerdictKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSearchResult {
    /// Smallest coefficient found robust.
    pub alpha: f64,
    /// Distance from `alpha` down to the nearest coefficient found not robust.
    pub delta: f64,
    pub x0: ImageTensor<f32>,
    pub trail: Vec<Probe>,
    pub used_grid: bool,
}

/// `α·x`, computed in double and rounded once to single.
pub fn scale_image(x: &ImageTensor<f32>, alpha: f64) -> ImageTensor<f32> {
    x.map(|&v| ((alpha * v as f64) as f32).clamp(0.0, 1.0))
}

struct AlphaProbe<'a> {
    verifier: &'a Verifier,
    net: &'a Network,
    seed: &'a ImageTensor<f32>,
    eps: f64,
    t0: usize,
    trail: Vec<Probe>,
}

impl AlphaProbe<'_> {
    fn check(&mut self, alpha: f64) -> Result<VerdictKind> {
        let region = PerturbationSet::new(scale_image(self.seed, alpha), self.eps)?;
        let v = VerdictKind::of(&self.verifier.worst(self.net, &region, self.t0, 0.0)?);
        self.trail.push(Probe { value: alpha, verdict: v });
        Ok(v)
    }

    /// Probe the interior grid of `(lo, hi)`; returns the tightened bracket.
    fn grid(&mut self, lo: f64, hi: f64) -> Result<(f64, f64)> {
        let pts: Vec<f64> = (1..GRID_INTERVALS).map(|j| lo + (hi - lo) * j as f64 / GRID_INTERVALS as f64).collect();
        let mut verdicts = Vec::with_capacity(pts.len());
        for &p in &pts {
            verdicts.push(self.check(p)?);
        }
        let new_lo = pts
            .iter()
            .zip(&verdicts)
            .filter(|(_, v)| **v == VerdictKind::NotRobust)
            .map(|(p, _)| *p)
            .fold(lo, f64::max);
        let new_hi = pts
            .iter()
            .zip(&verdicts)
            .filter(|(p, v)| **v == VerdictKind::Robust && **p > new_lo)
            .map(|(p, _)| *p)
            .fold(hi, f64::min);
        Ok((new_lo, new_hi))
    }
}

/// Step 1: find `α` with `α·x_seed` robust and `(α − δ)·x_seed` not robust.
///
/// Binary search between a not-robust lower and a robust upper coefficient;
/// after the first solver timeout, the bracket is instead split into
/// [`GRID_INTERVALS`] pieces per round until no progress is made.
pub fn alpha_search(
    verifier: &Verifier,
    net: &Network,
    x_seed: &ImageTensor<f32>,
    eps: f64,
    t0: usize,
    delta_target: f64,
) -> Result<AlphaSearchResult> {
    let mut p = AlphaProbe { verifier, net, seed: x_seed, eps, t0, trail: Vec::new() };
    if p.check(1.0)? != VerdictKind::Robust {
        return Err(Error::Search("seed is not verified robust at alpha = 1".into()));
    }
    let (mut lo, mut hi) = if p.check(0.0)? == VerdictKind::NotRobust {
        (0.0, 1.0)
    } else {
        let (lo, hi) = p.grid(0.0, 1.0)?;
        if lo == 0.0 {
            return Err(Error::Search("unbracketable seed: no non-robust coefficient in [0, 1]".into()));
        }
        (lo, hi)
    };
    let mut used_grid = false;
    while hi - lo > delta_target {
        if used_grid {
            let (l, h) = p.grid(lo, hi)?;
            if (l, h) == (lo, hi) {
                break;
            }
            (lo, hi) = (l, h);
            continue;
        }
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        match p.check(mid)? {
            VerdictKind::Robust => hi = mid,
            VerdictKind::NotRobust => lo = mid,
            VerdictKind::Timeout => used_grid = true,
        }
    }
    Ok(AlphaSearchResult { alpha: hi, delta: hi - lo, x0: scale_image(x_seed, hi), trail: p.trail, used_grid })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuasiAdvTuple {
    /// Largest tolerance verified robust.
    pub tau0: f64,
    /// Smallest tolerance with a witness.
    pub tau1: f64,
    /// Witness for `tau1`, rounded to single and clamped into the region.
    pub x1: ImageTensor<f32>,
    /// The search stopped on a timeout before reaching [`TAU_GAP`].
    pub partial: bool,
    pub trail: Vec<Probe>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuasiOutcome {
    Found(QuasiAdvTuple),
    /// The solver timed out before the search got going.
    Discarded,
}

/// Step 2: bisect the tolerance `τ` of the shifted test `CW − τ > 0`.
///
/// Witnesses are the verifier's counterexamples, rounded to single and then
/// clamped into `[x_lo, x_hi]` (normally the tightened bounds of
/// [`super::clamp_bounds`]).
pub fn quasi_adv_search(
    verifier: &Verifier,
    net: &Network,
    x0: &ImageTensor<f32>,
    eps: f64,
    t0: usize,
    clamp: (&ImageTensor<f32>, &ImageTensor<f32>),
) -> Result<QuasiOutcome> {
    let region = PerturbationSet::new(x0.clone(), eps)?;
    let mut trail = Vec::new();
    let check = |tau: f64, trail: &mut Vec<Probe>| -> Result<VerifyResult<f64>> {
        let r = verifier.worst(net, &region, t0, tau)?;
        trail.push(Probe { value: tau, verdict: VerdictKind::of(&r) });
        Ok(r)
    };
    let witness = |r: &VerifyResult<f64>| -> Result<ImageTensor<f32>> {
        let cex = r.counterexample().expect("not-robust verdict carries a counterexample");
        let data = cex
            .data()
            .iter()
            .zip(clamp.0.data().iter().zip(clamp.1.data()))
            .map(|(&v, (&l, &u))| (v as f32).clamp(l, u))
            .collect();
        ImageTensor::new(cex.shape(), data)
    };

    match check(0.0, &mut trail)?.verdict {
        Verdict::Timeout => return Ok(QuasiOutcome::Discarded),
        Verdict::NotRobust { .. } => return Err(Error::Search("x0 is not verified robust at tau = 0".into())),
        Verdict::Robust { .. } => {}
    }
    // x0 itself attains CW(x0), so a slightly larger tolerance has a witness
    let cw0 = infer(BackendId::RefF64, net, x0)?.cw_loss(t0)?;
    let (mut tau0, mut tau1) = (0.0, cw0.max(0.0) + 1e-6);
    let r = check(tau1, &mut trail)?;
    let mut x1 = match r.verdict {
        Verdict::NotRobust { .. } => witness(&r)?,
        Verdict::Timeout => return Ok(QuasiOutcome::Discarded),
        Verdict::Robust { .. } => {
            return Err(Error::Search(format!("verifier reports robust at tau = {tau1} above CW(x0) = {cw0}")))
        }
    };
    let mut partial = false;
    let mut first = true;
    while tau1 - tau0 >= TAU_GAP {
        let mid = tau0 + (tau1 - tau0) / 2.0;
        let r = check(mid, &mut trail)?;
        match r.verdict {
            Verdict::Robust { .. } => tau0 = mid,
            Verdict::NotRobust { .. } => {
                tau1 = mid;
                x1 = witness(&r)?;
            }
            Verdict::Timeout if first => return Ok(QuasiOutcome::Discarded),
            Verdict::Timeout => {
                partial = true;
                break;
            }
        }
        first = false;
    }
    Ok(QuasiOutcome::Found(QuasiAdvTuple { tau0, tau1, x1, partial, trail }))
}
