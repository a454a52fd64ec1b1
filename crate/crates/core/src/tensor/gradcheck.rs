//! Central finite-difference verification of backward passes.
//!
//! The graph output is projected onto fixed random weights and the projection
//! is accumulated in f64, so a multi-element output is compared through a
//! single scalar without the rounding of an f32 reduction. Each checked input
//! element is perturbed by `±step` (the effective step is re-measured after
//! rounding to f32).
//!
//! The error for one element is `|analytic - numeric| / max(|analytic|,
//! |numeric|, abs_floor)`: relative for gradients above `abs_floor`, absolute
//! below it. Elements where the one-sided slopes disagree by more than
//! `kink_tol` (on the same scale) straddle a non-differentiable point and are
//! counted separately instead of compared. A kink inside the stencil shifts the
//! central difference by half the slope disagreement, so `kink_tol <= 2 *
//! rel_tol` keeps kinks from surfacing as mismatches.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{no_grad, Tensor};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub kink_tol: f64,
    /// Check at most this many elements per input (sampled without replacement).
    pub max_elements: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-2,
            abs_floor: 1.0,
            kink_tol: 1e-2,
            max_elements: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_nonsmooth: usize,
    pub max_error: f64,
    pub worst: Option<Mismatch>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.checked + self.skipped_nonsmooth;
        if total == 0 {
            0.0
        } else {
            self.skipped_nonsmooth as f64 / total as f64
        }
    }
}

fn project(y: &Tensor, weights: &[f64]) -> f64 {
    y.data().iter().zip(weights).map(|(&v, &w)| v as f64 * w).sum()
}

/// Compares the backward pass of `f` with central differences at `inputs`.
///
/// Only inputs that require gradients are perturbed. `f` must be
/// deterministic; its output may have any shape.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    inputs.iter().for_each(Tensor::zero_grad);
    let y = f(inputs)?;
    let weights: Vec<f64> = if y.len() == 1 {
        vec![1.0]
    } else {
        (0..y.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let seed: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    y.backward_with(&seed)?;
    // Seed rounded to f32 on the analytic side; use the same values for the
    // numeric projection.
    let weights: Vec<f64> = seed.iter().map(|&w| w as f64).collect();
    drop(y);

    let eval = |xs: &[Tensor]| -> Result<f64> { no_grad(|| f(xs).map(|y| project(&y, &weights))) };
    let phi0 = eval(inputs)?;

    let mut report = GradCheckReport {
        checked: 0,
        skipped_nonsmooth: 0,
        max_error: 0.0,
        worst: None,
        passed: true,
    };
    for (ii, x) in inputs.iter().enumerate() {
        if !x.requires_grad() {
            continue;
        }
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.len()]);
        let indices: Vec<usize> = match cfg.max_elements {
            Some(k) if k < x.len() => {
                let mut idx = sample(&mut rng, x.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..x.len()).collect(),
        };
        for j in indices {
            let orig = x.data()[j];
            let plus = (orig as f64 + cfg.step) as f32;
            let minus = (orig as f64 - cfg.step) as f32;
            x.update_data(|d| d[j] = plus);
            let phi_plus = eval(inputs)?;
            x.update_data(|d| d[j] = minus);
            let phi_minus = eval(inputs)?;
            x.update_data(|d| d[j] = orig);

            let h_plus = plus as f64 - orig as f64;
            let h_minus = orig as f64 - minus as f64;
            let numeric = (phi_plus - phi_minus) / (h_plus + h_minus);
            let slope_fwd = (phi_plus - phi0) / h_plus;
            let slope_bwd = (phi0 - phi_minus) / h_minus;
            let a = analytic[j] as f64;
            let scale = a.abs().max(numeric.abs()).max(cfg.abs_floor);
            if (slope_fwd - slope_bwd).abs() > cfg.kink_tol * scale {
                report.skipped_nonsmooth += 1;
                continue;
            }
            let err = (a - numeric).abs() / scale;
            report.checked += 1;
            if err > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(err);
                report.worst = Some(Mismatch {
                    input: ii,
                    index: j,
                    analytic: a,
                    numeric,
                    error: err,
                });
            }
        }
    }
    report.passed = report.max_error <= cfg.rel_tol;
    Ok(report)
}
