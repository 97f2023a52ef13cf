//! Per-subject feature alignment.
//!
//! Two mechanisms defeat covariate shift between subjects and sessions:
//!
//! 1. Statistical alignment: per-channel standardization using mean and
//!    (population) standard deviation computed across a subject's trials
//!    and the temporal dimension, followed by a shared trainable
//!    per-channel weight and bias.
//! 2. Deep-set alignment: a permutation-invariant readout over a
//!    subject's trials (mean, compressed by a trainable nonlinear map) is
//!    concatenated onto every trial's feature vector and transformed back
//!    into feature space by a second trainable nonlinear map.
//!
//! Statistics never mix two subjects: inputs are processed in contiguous
//! per-subject groups, and group reductions fold in sorted order so
//! outputs are bitwise invariant to trial order within a group.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{self, Tensor};

pub const ALIGN_EPSILON: f64 = 1e-5;

// ── statistics ──────────────────────────────────────────────────────

/// Per-channel mean and population standard deviation over one subject's
/// trials (and time, for [K, C, T] inputs).
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_trials: usize,
    pub n_timepoints: usize,
}

fn features_dims(features: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    let shape = features.shape();
    match shape.as_slice() {
        [k, c] => Ok((*k, *c, 1)),
        [k, c, t] => Ok((*k, *c, *t)),
        _ => Err(Error::Dimension {
            op,
            detail: format!("expected [K, C] or [K, C, T], got {shape:?}"),
        }),
    }
}

/// One-pass per-channel statistics over all K*T values of each channel.
pub fn compute_stats(features: &Tensor) -> Result<AlignmentStats> {
    let (k, c, t) = features_dims(features, "compute_stats")?;
    if k == 0 {
        return Err(Error::EmptySet("compute_stats on zero trials".into()));
    }
    let data = features.data();
    let n = (k * t) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for ki in 0..k {
            let base = (ki * c + ch) * t;
            sum += data[base..base + t].iter().sum::<f64>();
        }
        let mu = sum / n;
        let mut sq = 0.0;
        for ki in 0..k {
            let base = (ki * c + ch) * t;
            for &v in &data[base..base + t] {
                sq += (v - mu) * (v - mu);
            }
        }
        mean[ch] = mu;
        std[ch] = (sq / n).sqrt();
    }
    Ok(AlignmentStats {
        mean,
        std,
        n_trials: k,
        n_timepoints: t,
    })
}

/// Shared trainable per-channel affine applied after standardization.
#[derive(Clone, Debug)]
pub struct StatAlignLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub epsilon: f64,
}

impl StatAlignLayer {
    pub fn identity(channels: usize) -> Self {
        StatAlignLayer {
            weight: vec![1.0; channels],
            bias: vec![0.0; channels],
            epsilon: ALIGN_EPSILON,
        }
    }
}

/// Standardize features with precomputed stats, then apply the trainable
/// affine: `weight * (x - mean) / max(std, epsilon) + bias`.
///
/// Flooring the denominator at epsilon (rather than adding epsilon) keeps
/// the map exactly invariant to per-channel affine corruption of the
/// input whenever the channel std exceeds epsilon, while still bounding
/// the degenerate zero-variance case.
pub fn standardize(
    features: &Tensor,
    stats: &AlignmentStats,
    layer: &StatAlignLayer,
) -> Result<Tensor> {
    let (k, c, t) = features_dims(features, "standardize")?;
    if stats.mean.len() != c || layer.weight.len() != c || layer.bias.len() != c {
        return Err(Error::Dimension {
            op: "standardize",
            detail: format!(
                "feature channels {c} vs stats {} / layer {}",
                stats.mean.len(),
                layer.weight.len()
            ),
        });
    }
    let data = features.data();
    let mut out = vec![0.0; data.len()];
    for ki in 0..k {
        for ch in 0..c {
            let denom = stats.std[ch].max(layer.epsilon);
            let (w, b, mu) = (layer.weight[ch], layer.bias[ch], stats.mean[ch]);
            let base = (ki * c + ch) * t;
            for i in base..base + t {
                out[i] = w * (data[i] - mu) / denom + b;
            }
        }
    }
    drop(data);
    Ok(Tensor::new(features.shape(), out))
}

/// Differentiable grouped standardization used inside models during both
/// training and inference. Statistics are computed on-graph per subject
/// group (so gradients flow through them, batch-norm style) and the
/// trainable `weight`/`bias` are shared across subjects.
pub fn stat_align_grouped(
    features: &Tensor,
    groups: &[Range<usize>],
    weight: &Tensor,
    bias: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    let (k, _c, _t) = features_dims(features, "stat_align_grouped")?;
    check_groups(groups, k)?;
    let shape = features.shape();
    let mean = tensor::segment_mean(features, groups);
    let centered = tensor::sub(features, &tensor::broadcast_groups(&mean, groups, shape.clone()));
    let var = tensor::segment_mean(&tensor::mul(&centered, &centered), groups);
    let denom = tensor::clamp_min(&tensor::sqrt(&var), epsilon);
    let z = tensor::div(
        &centered,
        &tensor::broadcast_groups(&denom, groups, shape.clone()),
    );
    Ok(tensor::add(
        &tensor::mul(&z, &tensor::broadcast_channel(weight, shape.clone())),
        &tensor::broadcast_channel(bias, shape),
    ))
}

// ── deep-set alignment ──────────────────────────────────────────────

/// Trainable permutation-invariant set update: a readout map compresses
/// the mean feature vector across a subject's trials, and an update map
/// folds that readout back into every trial's features.
#[derive(Clone, Debug)]
pub struct DeepSetAlign {
    pub readout_weight: Tensor, // [R, N]
    pub readout_bias: Tensor,   // [R]
    pub update_weight: Tensor,  // [N, N + R]
    pub update_bias: Tensor,    // [N]
}

impl DeepSetAlign {
    pub fn readout_dim(feature_dim: usize) -> usize {
        (feature_dim / 4).max(1)
    }

    /// Fan-in uniform initialization from the given stream.
    pub fn init(feature_dim: usize, rng: &mut StreamRng) -> Self {
        let r = Self::readout_dim(feature_dim);
        let uniform = |rng: &mut StreamRng, rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            Tensor::param(vec![rows, cols], data)
        };
        DeepSetAlign {
            readout_weight: uniform(rng, r, feature_dim),
            readout_bias: Tensor::param(vec![r], vec![0.0; r]),
            update_weight: uniform(rng, feature_dim, feature_dim + r),
            update_bias: Tensor::param(vec![feature_dim], vec![0.0; feature_dim]),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.readout_weight.clone(),
            self.readout_bias.clone(),
            self.update_weight.clone(),
            self.update_bias.clone(),
        ]
    }

    /// All trials belong to one subject.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let shape = features.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "deepset_forward",
                detail: format!("expected [K, N], got {shape:?}"),
            });
        }
        deepset_grouped(features, &[0..shape[0]], self)
    }
}

fn check_groups(groups: &[Range<usize>], k: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::EmptySet("no subject groups".into()));
    }
    let mut cursor = 0;
    for g in groups {
        if g.is_empty() {
            return Err(Error::EmptySet(format!("group {g:?} is empty")));
        }
        if g.start != cursor {
            return Err(Error::Contract(format!(
                "groups must be contiguous from 0; got {groups:?}"
            )));
        }
        cursor = g.end;
    }
    if cursor != k {
        return Err(Error::Contract(format!(
            "groups cover {cursor} of {k} trials"
        )));
    }
    Ok(())
}

/// Deep-set update over per-subject groups of a [K, N] feature matrix.
///
/// Per group g: r = elu(W_r * mean_{k in g}(x_k) + b_r), and every trial
/// k in g maps to elu(W_u * concat(x_k, r) + b_u). Gradient flows through
/// both the per-trial path and the readout path.
pub fn deepset_grouped(
    features: &Tensor,
    groups: &[Range<usize>],
    module: &DeepSetAlign,
) -> Result<Tensor> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op: "deepset_forward",
            detail: format!("expected [K, N], got {shape:?}"),
        });
    }
    let k = shape[0];
    check_groups(groups, k)?;
    let pooled = tensor::segment_mean(features, groups); // [G, N]
    let readout = tensor::elu(&tensor::linear(
        &pooled,
        &module.readout_weight,
        &module.readout_bias,
    )?); // [G, R]
    let r = readout.shape()[1];
    let per_trial = tensor::broadcast_groups(&readout, groups, vec![k, r]);
    let joined = tensor::concat_channels(features, &per_trial);
    Ok(tensor::elu(&tensor::linear(
        &joined,
        &module.update_weight,
        &module.update_bias,
    )?))
}

/// Time-distributed deep-set over [K, C, T] feature maps: every (trial,
/// time) column is treated as a set element, so the readout is the mean
/// over a subject's trials and time per channel.
pub fn deepset_grouped_temporal(
    features: &Tensor,
    groups: &[Range<usize>],
    module: &DeepSetAlign,
) -> Result<Tensor> {
    let shape = features.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension {
            op: "deepset_forward",
            detail: format!("expected [K, C, T], got {shape:?}"),
        });
    }
    let (k, c, t) = (shape[0], shape[1], shape[2]);
    check_groups(groups, k)?;
    let flat = tensor::reshape(&tensor::transpose_12(features), vec![k * t, c]);
    let expanded: Vec<Range<usize>> = groups.iter().map(|g| g.start * t..g.end * t).collect();
    let out = deepset_grouped(&flat, &expanded, module)?;
    Ok(tensor::transpose_12(&tensor::reshape(&out, vec![k, t, c])))
}
