//! Finite-difference validation of the backpropagation code.

use rand::Rng;

use super::{MlpHyperparams, MlpModel, Params, Scratch};
use crate::util::{rng_for, RngStream};
use crate::vectorizer::SparseVector;
use crate::Class;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub batch: usize,
    pub nnz: usize,
    pub step: f64,
}

impl Default for GradCheckShape {
    fn default() -> Self {
        Self {
            input_dim: 20,
            hidden: 5,
            batch: 16,
            nnz: 6,
            step: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error between analytic and central-difference gradients.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a +-step moved some ReLU input across 0,
    /// where the loss is not differentiable.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    fn merge(self, other: GradCheckReport) -> GradCheckReport {
        GradCheckReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            checked: self.checked + other.checked,
            skipped_kinks: self.skipped_kinks + other.skipped_kinks,
        }
    }
}

/// Checks `trial_count` random nets (seeds `hp.seed`, `hp.seed + 1`, ...).
pub fn gradient_check(hp: &MlpHyperparams, trial_count: usize) -> GradCheckReport {
    gradient_check_with(GradCheckShape::default(), hp, trial_count)
}

pub fn gradient_check_with(
    shape: GradCheckShape,
    hp: &MlpHyperparams,
    trial_count: usize,
) -> GradCheckReport {
    (0..trial_count as u64)
        .map(|t| single_trial(shape, hp, hp.seed.wrapping_add(t)))
        .fold(GradCheckReport::default(), GradCheckReport::merge)
}

fn single_trial(shape: GradCheckShape, hp: &MlpHyperparams, seed: u64) -> GradCheckReport {
    let net_hp = MlpHyperparams {
        hidden_units: shape.hidden,
        seed,
        ..hp.clone()
    };
    let model = MlpModel::initialize(shape.input_dim, &net_hp);
    let mut rng = rng_for(seed, RngStream::Synth);
    let xs: Vec<SparseVector> = (0..shape.batch)
        .map(|_| {
            SparseVector::from_pairs(
                shape.input_dim,
                (0..shape.nnz).map(|_| {
                    (
                        rng.gen_range(0..shape.input_dim as u32),
                        rng.gen_range(1..4u32),
                    )
                }),
            )
        })
        .collect();
    let ys: Vec<Class> = (0..shape.batch)
        .map(|i| {
            if i % 2 == 0 {
                Class::Positive
            } else {
                Class::Negative
            }
        })
        .collect();
    max_relative_error(&model, &xs, &ys, hp.l2, shape.step)
}

pub(crate) fn analytic_gradients(model: &MlpModel, xs: &[SparseVector], ys: &[Class], l2: f64) -> Params {
    let mut grads = Params::zeros(model.input_dim, model.hidden);
    let mut scratch = Scratch::new(model.hidden);
    let batch: Vec<usize> = (0..xs.len()).collect();
    model.accumulate_gradients(xs, ys, &batch, &mut grads, &mut scratch);
    let n = xs.len() as f64;
    let p = model.params();
    for (g, w) in grads.w1.iter_mut().zip(&p.w1) {
        *g = (*g + l2 * w) / n;
    }
    for (g, w) in grads.w2.iter_mut().zip(&p.w2) {
        *g = (*g + l2 * w) / n;
    }
    grads.b1.iter_mut().for_each(|g| *g /= n);
    grads.b2.iter_mut().for_each(|g| *g /= n);
    grads
}

fn max_relative_error(
    model: &MlpModel,
    xs: &[SparseVector],
    ys: &[Class],
    l2: f64,
    step: f64,
) -> GradCheckReport {
    compare(model, xs, ys, l2, step, &analytic_gradients(model, xs, ys, l2))
}

fn compare(
    model: &MlpModel,
    xs: &[SparseVector],
    ys: &[Class],
    l2: f64,
    step: f64,
    analytic: &Params,
) -> GradCheckReport {
    // central differences cannot resolve gradients near eps * |L| / step;
    // relative errors are measured against at least 1e4 times that floor
    let resolution = f64::EPSILON * model.loss(xs, ys, l2).abs().max(1.0) / step;
    let floor = 1e4 * resolution;
    let pattern = model.activation_pattern(xs);
    let mut probe = model.clone();
    let mut report = GradCheckReport::default();

    // (block, offset) addressing over the four parameter blocks
    let sizes = [analytic.w1.len(), analytic.b1.len(), analytic.w2.len(), 2];
    for (block, &size) in sizes.iter().enumerate() {
        for k in 0..size {
            let a = match block {
                0 => analytic.w1[k],
                1 => analytic.b1[k],
                2 => analytic.w2[k],
                _ => analytic.b2[k],
            };
            let original = param(&mut probe, block, k);
            *param_ref(&mut probe, block, k) = original + step;
            let up = probe.loss(xs, ys, l2);
            let mut kink = probe.activation_pattern(xs) != pattern;
            *param_ref(&mut probe, block, k) = original - step;
            let down = probe.loss(xs, ys, l2);
            kink |= probe.activation_pattern(xs) != pattern;
            *param_ref(&mut probe, block, k) = original;
            if kink {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * step);
            report.checked += 1;

            let scale = a.abs().max(numeric.abs()).max(floor);
            report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / scale);
        }
    }
    report
}

fn param(model: &mut MlpModel, block: usize, k: usize) -> f64 {
    *param_ref(model, block, k)
}

fn param_ref(model: &mut MlpModel, block: usize, k: usize) -> &mut f64 {
    let (w1, b1, w2, b2) = model.params_mut();
    match block {
        0 => &mut w1[k],
        1 => &mut b1[k],
        2 => &mut w2[k],
        _ => &mut b2[k],
    }
}
