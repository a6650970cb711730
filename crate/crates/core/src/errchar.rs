//! Error characterization: how far the backends drift apart.
//!
//! Two experiments, both emitted as CSV:
//!
//! * a local sweep that nudges one input element across `±1e-6` and records
//!   the ℓ∞ change of every backend's logits (`delta,backend,linf_change`);
//! * a histogram of first-layer relative differences against a reference
//!   backend (`bin_lo,bin_hi,backend,count`).
//!
//! The relative difference of a computed value `a` against a reference `r`
//! is `|a − r| / max(|r|, 1e-6)`. Exact zeros land in a dedicated zero bin,
//! nonzero values below `1e-12` in an underflow bin and values at or above
//! `1e-2` in an overflow bin. Between those, bins are log10-spaced with
//! [`BINS_PER_DECADE`] bins per decade.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{first_layer_output, forward, infer, BackendId};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::ImageTensor;

pub const GRADIENT_STEP: f64 = 1e-3;
pub const SWEEP_RANGE: f64 = 1e-6;
pub const SWEEP_STEPS: usize = 401;
pub const RELATIVE_FLOOR: f64 = 1e-6;
pub const HIST_LO_DECADE: i32 = -12;
pub const HIST_HI_DECADE: i32 = -2;
pub const BINS_PER_DECADE: usize = 4;

/// Index of the input element with the largest `|∂(max logit)/∂x_i|`,
/// estimated by central differences on the double-precision reference.
///
/// The class whose logit is differentiated is the argmax at `x`. Probes are
/// not clamped to `[0, 1]`. Ties go to the lowest index.
pub fn max_gradient_element(net: &Network, x: &ImageTensor<f32>) -> Result<usize> {
    max_gradient_element_with_step(net, x, GRADIENT_STEP)
}

pub fn max_gradient_element_with_step(net: &Network, x: &ImageTensor<f32>, h: f64) -> Result<usize> {
    let base = infer(BackendId::RefF64, net, x)?;
    let class = base.argmax();
    let kernel = BackendId::RefF64.kernel();
    let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let logit_at = |i: usize, d: f64| {
        let mut probe = x64.clone();
        probe[i] += d;
        forward(net, kernel, probe)[class]
    };
    let grads: Vec<f64> = (0..x64.len())
        .into_par_iter()
        .map(|i| ((logit_at(i, h) - logit_at(i, -h)) / (2.0 * h)).abs())
        .collect();
    let mut best = 0;
    for (i, &g) in grads.iter().enumerate() {
        if g > grads[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub delta: f64,
    pub backend: BackendId,
    pub linf_change: f64,
}

/// Offsets `δ_j = range · (2j − (steps − 1)) / (steps − 1)`; the middle one is exactly zero.
pub fn sweep_grid(range: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    let n = (steps - 1) as f64;
    (0..steps).map(|j| range * (2.0 * j as f64 - n) / n).collect()
}

/// Perturb only `element` by each offset of the grid (single-precision add,
/// then clamp to `[0, 1]`) and record every backend's ℓ∞ logit change.
///
/// Records are ordered by offset, then by the order of `backends`.
pub fn local_sweep(
    net: &Network,
    x: &ImageTensor<f32>,
    element: usize,
    range: f64,
    steps: usize,
    backends: &[BackendId],
) -> Result<Vec<SweepRecord>> {
    if element >= x.len() {
        return Err(Error::OutOfRange(format!("element {element} out of range for {} inputs", x.len())));
    }
    if steps == 0 || !range.is_finite() || range < 0.0 {
        return Err(Error::OutOfRange(format!("sweep of {steps} steps over ±{range}")));
    }
    let base = backends.iter().map(|&b| infer(b, net, x)).collect::<Result<Vec<_>>>()?;
    let grid = sweep_grid(range, steps);
    let rows = grid
        .par_iter()
        .map(|&delta| -> Result<Vec<SweepRecord>> {
            let mut xd = x.clone();
            let v = &mut xd.data_mut()[element];
            *v = (*v + delta as f32).clamp(0.0, 1.0);
            backends
                .iter()
                .zip(&base)
                .map(|(&backend, y0)| {
                    let y = infer(backend, net, &xd)?.to_f64();
                    let linf_change = y.iter().zip(y0.to_f64()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    Ok(SweepRecord { delta, backend, linf_change })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("delta,backend,linf_change\n");
    for r in records {
        let _ = writeln!(out, "{:e},{},{:e}", r.delta, r.backend, r.linf_change);
    }
    out
}

/// Median of the per-offset ℓ∞ changes recorded for `backend`.
pub fn sweep_median(records: &[SweepRecord], backend: BackendId) -> Option<f64> {
    median(records.iter().filter(|r| r.backend == backend).map(|r| r.linf_change).collect())
}

pub fn relative_difference(a: f64, r: f64) -> f64 {
    (a - r).abs() / r.abs().max(RELATIVE_FLOOR)
}

/// Bin edges `[lo, hi)` of the histogram, zero and underflow bins first and overflow last.
pub fn bin_edges() -> Vec<(f64, f64)> {
    let decade = |d: i32| -> f64 { format!("1e{d}").parse().expect("decimal literal") };
    let mut inner = Vec::new();
    for d in HIST_LO_DECADE..HIST_HI_DECADE {
        for j in 0..BINS_PER_DECADE {
            inner.push(if j == 0 { decade(d) } else { 10f64.powf(d as f64 + j as f64 / BINS_PER_DECADE as f64) });
        }
    }
    inner.push(decade(HIST_HI_DECADE));
    let mut edges = vec![(0.0, 0.0), (0.0, inner[0])];
    edges.extend(inner.windows(2).map(|w| (w[0], w[1])));
    edges.push((*inner.last().expect("nonempty"), f64::INFINITY));
    edges
}

fn bin_of(edges: &[(f64, f64)], v: f64) -> usize {
    if v == 0.0 {
        return 0;
    }
    // edges[1..] partition (0, ∞) in increasing order
    1 + edges[1..].partition_point(|&(_, hi)| hi <= v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendHistogram {
    pub backend: BackendId,
    pub counts: Vec<u64>,
    pub median: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffHistogram {
    pub reference: BackendId,
    pub edges: Vec<(f64, f64)>,
    pub backends: Vec<BackendHistogram>,
    /// Number of compared elements per backend.
    pub compared: u64,
}

impl DiffHistogram {
    pub fn get(&self, backend: BackendId) -> Option<&BackendHistogram> {
        self.backends.iter().find(|h| h.backend == backend)
    }

    /// Count in bins lying entirely at or above `threshold` (bin resolution).
    pub fn count_at_least(&self, backend: BackendId, threshold: f64) -> u64 {
        self.get(backend).map_or(0, |h| {
            self.edges.iter().zip(&h.counts).filter(|((lo, _), _)| *lo >= threshold && *lo > 0.0).map(|(_, c)| c).sum()
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,backend,count\n");
        for h in &self.backends {
            for ((lo, hi), c) in self.edges.iter().zip(&h.counts) {
                let _ = writeln!(out, "{lo:e},{hi:e},{},{c}", h.backend);
            }
        }
        out
    }
}

/// Relative differences of every first-layer output element of every image,
/// for each backend against `reference`.
pub fn cross_backend_histogram(
    images: &[ImageTensor<f32>],
    net: &Network,
    backends: &[BackendId],
    reference: BackendId,
) -> Result<DiffHistogram> {
    if images.is_empty() {
        return Err(Error::OutOfRange("histogram needs at least one image".into()));
    }
    let edges = bin_edges();
    let per_image = images
        .par_iter()
        .map(|x| -> Result<Vec<Vec<f64>>> {
            let r = first_layer_output(reference, net, x)?;
            backends
                .iter()
                .map(|&b| {
                    let a = first_layer_output(b, net, x)?;
                    Ok(a.iter().zip(&r).map(|(&a, &r)| relative_difference(a, r)).collect())
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(backends.len());
    let mut compared = 0;
    for (j, &backend) in backends.iter().enumerate() {
        let values: Vec<f64> = per_image.iter().flat_map(|img| img[j].iter().copied()).collect();
        compared = values.len() as u64;
        let mut counts = vec![0u64; edges.len()];
        for &v in &values {
            counts[bin_of(&edges, v)] += 1;
        }
        let max = values.iter().copied().fold(0.0, f64::max);
        out.push(BackendHistogram { backend, counts, median: median(values).unwrap_or(0.0), max });
    }
    Ok(DiffHistogram { reference, edges, backends: out, compared })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Dense, Layer};
    use crate::tensor::Shape;

    fn linear(w: Vec<f32>) -> Network {
        let n = w.len();
        let mut weights = w.clone();
        weights.extend(vec![0.0; n]);
        let d = Dense { rows: 2, cols: n, weights, bias: vec![0.0, 0.0] };
        Network::new(Shape::flat(n), vec![Layer::Dense(d)]).unwrap()
    }

    #[test]
    fn gradient_of_linear_model_is_its_weights() {
        let net = linear(vec![0.5, -2.0, 1.0, 2.0]);
        let x = ImageTensor::new(Shape::flat(4), vec![0.9f32, 0.8, 0.7, 0.6]).unwrap();
        assert_eq!(max_gradient_element(&net, &x).unwrap(), 1);
    }

    #[test]
    fn constant_network_picks_index_zero() {
        let net = linear(vec![0.0; 5]);
        let x = ImageTensor::new(Shape::flat(5), vec![0.5f32; 5]).unwrap();
        assert_eq!(max_gradient_element(&net, &x).unwrap(), 0);
    }

    #[test]
    fn grid_is_symmetric_with_exact_zero() {
        let g = sweep_grid(SWEEP_RANGE, SWEEP_STEPS);
        assert_eq!(g.len(), 401);
        assert_eq!(g[200], 0.0);
        assert_eq!(g[0], -1e-6);
        assert_eq!(g[400], 1e-6);
    }

    #[test]
    fn zero_offset_rows_are_zero() {
        let net = linear(vec![0.3, 0.7]);
        let x = ImageTensor::new(Shape::flat(2), vec![0.25f32, 0.5]).unwrap();
        let rec = local_sweep(&net, &x, 1, SWEEP_RANGE, 5, &BackendId::ALL).unwrap();
        assert_eq!(rec.len(), 5 * 6);
        assert!(rec.iter().filter(|r| r.delta == 0.0).all(|r| r.linf_change == 0.0));
        assert!(local_sweep(&net, &x, 2, SWEEP_RANGE, 5, &BackendId::ALL).is_err());
    }

    #[test]
    fn binning_respects_edges() {
        let e = bin_edges();
        assert_eq!(e.len(), 2 + 10 * BINS_PER_DECADE + 1);
        assert_eq!(bin_of(&e, 0.0), 0);
        assert_eq!(bin_of(&e, 1e-300), 1);
        assert_eq!(e[bin_of(&e, 1e-12)].0, 1e-12);
        assert_eq!(e[bin_of(&e, 1e-9)].0, 1e-9);
        assert_eq!(bin_of(&e, 0.5), e.len() - 1);
        for v in [3e-11, 2e-7, 9.99e-3] {
            let (lo, hi) = e[bin_of(&e, v)];
            assert!(lo <= v && v < hi, "{v} in [{lo}, {hi})");
        }
    }

    #[test]
    fn reference_against_itself_is_all_zero() {
        let net = linear(vec![0.1, 0.2, 0.3]);
        let x = ImageTensor::new(Shape::flat(3), vec![0.1f32, 0.2, 0.3]).unwrap();
        let h = cross_backend_histogram(&[x.clone(), x], &net, &[BackendId::Im2colF32], BackendId::Im2colF32).unwrap();
        assert_eq!(h.compared, 4);
        assert_eq!(h.backends[0].counts[0], 4);
        assert_eq!(h.backends[0].counts.iter().sum::<u64>(), 4);
    }
}
