//! Elementwise, reduction, segment and shape operations.

use std::ops::Range;

use super::{GradRule, Tensor};

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

// ── elementwise binary ──────────────────────────────────────────────

struct AddRule;
impl GradRule for AddRule {
    fn op_name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.to_vec()),
        ]
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "add");
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Tensor::from_op(a.shape(), data, Box::new(AddRule), vec![a.clone(), b.clone()])
}

struct SubRule;
impl GradRule for SubRule {
    fn op_name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|v| -v).collect()),
        ]
    }
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "sub");
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Tensor::from_op(a.shape(), data, Box::new(SubRule), vec![a.clone(), b.clone()])
}

struct MulRule;
impl GradRule for MulRule {
    fn op_name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let a = parents[0].data();
        let b = parents[1].data();
        vec![
            needs[0].then(|| g.iter().zip(b.iter()).map(|(gi, bi)| gi * bi).collect()),
            needs[1].then(|| g.iter().zip(a.iter()).map(|(gi, ai)| gi * ai).collect()),
        ]
    }
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "mul");
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Tensor::from_op(a.shape(), data, Box::new(MulRule), vec![a.clone(), b.clone()])
}

struct DivRule;
impl GradRule for DivRule {
    fn op_name(&self) -> &'static str {
        "div"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let a = parents[0].data();
        let b = parents[1].data();
        vec![
            needs[0].then(|| g.iter().zip(b.iter()).map(|(gi, bi)| gi / bi).collect()),
            needs[1].then(|| {
                g.iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(gi, (ai, bi))| -gi * ai / (bi * bi))
                    .collect()
            }),
        ]
    }
}

pub fn div(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "div");
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x / y).collect();
    Tensor::from_op(a.shape(), data, Box::new(DivRule), vec![a.clone(), b.clone()])
}

// ── elementwise unary ───────────────────────────────────────────────

struct AddScalarRule;
impl GradRule for AddScalarRule {
    fn op_name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x + c).collect();
    Tensor::from_op(a.shape(), data, Box::new(AddScalarRule), vec![a.clone()])
}

struct MulScalarRule(f64);
impl GradRule for MulScalarRule {
    fn op_name(&self) -> &'static str {
        "mul_scalar"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

pub fn mul_scalar(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    Tensor::from_op(a.shape(), data, Box::new(MulScalarRule(c)), vec![a.clone()])
}

pub fn neg(a: &Tensor) -> Tensor {
    mul_scalar(a, -1.0)
}

struct SqrtRule;
impl GradRule for SqrtRule {
    fn op_name(&self) -> &'static str {
        "sqrt"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = parents[0].data();
        vec![Some(
            g.iter()
                .zip(x.iter())
                .map(|(gi, xi)| gi / (2.0 * xi.sqrt()))
                .collect(),
        )]
    }
}

pub fn sqrt(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| x.sqrt()).collect();
    Tensor::from_op(a.shape(), data, Box::new(SqrtRule), vec![a.clone()])
}

struct ClampMinRule(f64);
impl GradRule for ClampMinRule {
    fn op_name(&self) -> &'static str {
        "clamp_min"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = parents[0].data();
        vec![Some(
            g.iter()
                .zip(x.iter())
                .map(|(gi, xi)| if *xi > self.0 { *gi } else { 0.0 })
                .collect(),
        )]
    }
}

/// max(x, floor) elementwise.
pub fn clamp_min(a: &Tensor, floor: f64) -> Tensor {
    let data = a.data().iter().map(|x| x.max(floor)).collect();
    Tensor::from_op(
        a.shape(),
        data,
        Box::new(ClampMinRule(floor)),
        vec![a.clone()],
    )
}

// ── reductions ──────────────────────────────────────────────────────

struct SumAllRule;
impl GradRule for SumAllRule {
    fn op_name(&self) -> &'static str {
        "sum_all"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0]; parents[0].numel()])]
    }
}

pub fn sum_all(a: &Tensor) -> Tensor {
    let s: f64 = a.data().iter().sum();
    Tensor::from_op(vec![1], vec![s], Box::new(SumAllRule), vec![a.clone()])
}

pub fn mean_all(a: &Tensor) -> Tensor {
    let n = a.numel() as f64;
    mul_scalar(&sum_all(a), 1.0 / n)
}

struct SumColsRule;
impl GradRule for SumColsRule {
    fn op_name(&self) -> &'static str {
        "sum_cols"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let shape = parents[0].shape();
        let cols = shape[1];
        let mut out = vec![0.0; parents[0].numel()];
        for (row, gi) in g.iter().enumerate() {
            for v in &mut out[row * cols..(row + 1) * cols] {
                *v = *gi;
            }
        }
        vec![Some(out)]
    }
}

/// Row sums of a [R, C] tensor -> [R].
pub fn sum_cols(a: &Tensor) -> Tensor {
    let shape = a.shape();
    assert_eq!(shape.len(), 2, "sum_cols expects rank 2");
    let (rows, cols) = (shape[0], shape[1]);
    let data = a.data();
    let out: Vec<f64> = (0..rows)
        .map(|r| data[r * cols..(r + 1) * cols].iter().sum())
        .collect();
    Tensor::from_op(vec![rows], out, Box::new(SumColsRule), vec![a.clone()])
}

// ── segment (per-subject) ops ───────────────────────────────────────
//
// Tensors of shape [K, C] or [K, C, T] whose leading axis is partitioned
// into contiguous groups of rows (one group per subject). Group reductions
// fold values in sorted order so the result is bitwise invariant under
// permutation of the trials inside a group.

fn rank_ct(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        2 => (shape[0], shape[1], 1),
        3 => (shape[0], shape[1], shape[2]),
        _ => panic!("segment ops expect rank 2 or 3, got {shape:?}"),
    }
}

struct SegmentMeanRule {
    groups: Vec<Range<usize>>,
}
impl GradRule for SegmentMeanRule {
    fn op_name(&self) -> &'static str {
        "segment_mean"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let shape = parents[0].shape();
        let (_k, c, t) = rank_ct(&shape);
        let mut out = vec![0.0; parents[0].numel()];
        for (gi, group) in self.groups.iter().enumerate() {
            let scale = 1.0 / (group.len() * t) as f64;
            for ch in 0..c {
                let gv = g[gi * c + ch] * scale;
                for k in group.clone() {
                    let base = (k * c + ch) * t;
                    for v in &mut out[base..base + t] {
                        *v += gv;
                    }
                }
            }
        }
        vec![Some(out)]
    }
}

/// Per-channel mean over each group's trials (and time, when rank 3).
/// Input [K, C] or [K, C, T] -> output [G, C].
pub fn segment_mean(a: &Tensor, groups: &[Range<usize>]) -> Tensor {
    let shape = a.shape();
    let (k, c, t) = rank_ct(&shape);
    debug_assert!(groups.iter().all(|g| !g.is_empty() && g.end <= k));
    let data = a.data();
    let mut out = Vec::with_capacity(groups.len() * c);
    let mut scratch: Vec<f64> = Vec::new();
    for group in groups {
        let n = (group.len() * t) as f64;
        for ch in 0..c {
            scratch.clear();
            for k in group.clone() {
                let base = (k * c + ch) * t;
                scratch.extend_from_slice(&data[base..base + t]);
            }
            out.push(super::sorted_sum(&mut scratch) / n);
        }
    }
    drop(data);
    Tensor::from_op(
        vec![groups.len(), c],
        out,
        Box::new(SegmentMeanRule {
            groups: groups.to_vec(),
        }),
        vec![a.clone()],
    )
}

struct BroadcastGroupsRule {
    groups: Vec<Range<usize>>,
}
impl GradRule for BroadcastGroupsRule {
    fn op_name(&self) -> &'static str {
        "broadcast_groups"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let c = parents[0].shape()[1];
        // g has the broadcast shape [K, C] or [K, C, T].
        let t = g.len() / self.groups.iter().map(|r| r.len()).sum::<usize>() / c;
        let mut out = vec![0.0; parents[0].numel()];
        for (gi, group) in self.groups.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in group.clone() {
                    let base = (k * c + ch) * t;
                    acc += g[base..base + t].iter().sum::<f64>();
                }
                out[gi * c + ch] += acc;
            }
        }
        vec![Some(out)]
    }
}

/// Expand per-group channel values [G, C] back over trials (and time).
/// `out_shape` is [K, C] or [K, C, T] with K covered by `groups`.
pub fn broadcast_groups(a: &Tensor, groups: &[Range<usize>], out_shape: Vec<usize>) -> Tensor {
    let (k, c, t) = rank_ct(&out_shape);
    assert_eq!(a.shape(), vec![groups.len(), c]);
    debug_assert_eq!(groups.iter().map(|r| r.len()).sum::<usize>(), k);
    let data = a.data();
    let mut out = vec![0.0; k * c * t];
    for (gi, group) in groups.iter().enumerate() {
        for ch in 0..c {
            let v = data[gi * c + ch];
            for kk in group.clone() {
                let base = (kk * c + ch) * t;
                for o in &mut out[base..base + t] {
                    *o = v;
                }
            }
        }
    }
    drop(data);
    Tensor::from_op(
        out_shape,
        out,
        Box::new(BroadcastGroupsRule {
            groups: groups.to_vec(),
        }),
        vec![a.clone()],
    )
}

struct BroadcastChannelRule {
    k: usize,
    t: usize,
}
impl GradRule for BroadcastChannelRule {
    fn op_name(&self) -> &'static str {
        "broadcast_channel"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let c = parents[0].numel();
        let mut out = vec![0.0; c];
        for kk in 0..self.k {
            for ch in 0..c {
                let base = (kk * c + ch) * self.t;
                out[ch] += g[base..base + self.t].iter().sum::<f64>();
            }
        }
        vec![Some(out)]
    }
}

/// Expand a per-channel vector [C] to [K, C] or [K, C, T].
pub fn broadcast_channel(a: &Tensor, out_shape: Vec<usize>) -> Tensor {
    let (k, c, t) = rank_ct(&out_shape);
    assert_eq!(a.numel(), c, "broadcast_channel: channel count mismatch");
    let data = a.data();
    let mut out = vec![0.0; k * c * t];
    for kk in 0..k {
        for ch in 0..c {
            let base = (kk * c + ch) * t;
            out[base..base + t].fill(data[ch]);
        }
    }
    drop(data);
    Tensor::from_op(
        out_shape,
        out,
        Box::new(BroadcastChannelRule { k, t }),
        vec![a.clone()],
    )
}

// ── shape ops ───────────────────────────────────────────────────────

struct ReshapeRule;
impl GradRule for ReshapeRule {
    fn op_name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

/// Same data, new shape (row-major layout preserved).
pub fn reshape(a: &Tensor, new_shape: Vec<usize>) -> Tensor {
    assert_eq!(
        new_shape.iter().product::<usize>(),
        a.numel(),
        "reshape: element count mismatch"
    );
    Tensor::from_op(new_shape, a.to_vec(), Box::new(ReshapeRule), vec![a.clone()])
}

fn permute_12(data: &[f64], d0: usize, d1: usize, d2: usize, d3: usize) -> Vec<f64> {
    // [d0, d1, d2, d3] -> [d0, d2, d1, d3] with d3 the contiguous tail.
    let mut out = vec![0.0; data.len()];
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let src = ((i0 * d1 + i1) * d2 + i2) * d3;
                let dst = ((i0 * d2 + i2) * d1 + i1) * d3;
                out[dst..dst + d3].copy_from_slice(&data[src..src + d3]);
            }
        }
    }
    out
}

struct Transpose12Rule {
    dims: [usize; 4],
}
impl GradRule for Transpose12Rule {
    fn op_name(&self) -> &'static str {
        "transpose_12"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let [d0, d1, d2, d3] = self.dims;
        // Inverse of swapping axes 1 and 2 is swapping them back.
        vec![Some(permute_12(g, d0, d2, d1, d3))]
    }
}

/// Swap axes 1 and 2 of a rank-3 or rank-4 tensor.
pub fn transpose_12(a: &Tensor) -> Tensor {
    let shape = a.shape();
    let (d0, d1, d2, d3, new_shape) = match shape.as_slice() {
        [a0, a1, a2] => (*a0, *a1, *a2, 1usize, vec![*a0, *a2, *a1]),
        [a0, a1, a2, a3] => (*a0, *a1, *a2, *a3, vec![*a0, *a2, *a1, *a3]),
        _ => panic!("transpose_12 expects rank 3 or 4, got {shape:?}"),
    };
    let out = permute_12(&a.data(), d0, d1, d2, d3);
    Tensor::from_op(
        new_shape,
        out,
        Box::new(Transpose12Rule {
            dims: [d0, d1, d2, d3],
        }),
        vec![a.clone()],
    )
}

struct ConcatChannelsRule {
    c1: usize,
    c2: usize,
    rest: usize,
}
impl GradRule for ConcatChannelsRule {
    fn op_name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let rows = parents[0].shape()[0];
        let (c1, c2, rest) = (self.c1, self.c2, self.rest);
        let mut ga = needs[0].then(|| vec![0.0; rows * c1 * rest]);
        let mut gb = needs[1].then(|| vec![0.0; rows * c2 * rest]);
        let row_out = (c1 + c2) * rest;
        for r in 0..rows {
            let base = r * row_out;
            if let Some(ga) = ga.as_mut() {
                ga[r * c1 * rest..(r + 1) * c1 * rest]
                    .copy_from_slice(&g[base..base + c1 * rest]);
            }
            if let Some(gb) = gb.as_mut() {
                gb[r * c2 * rest..(r + 1) * c2 * rest]
                    .copy_from_slice(&g[base + c1 * rest..base + row_out]);
            }
        }
        vec![ga, gb]
    }
}

/// Concatenate along axis 1; trailing axes must match.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa.len(), sb.len(), "concat_channels: rank mismatch");
    assert!(sa.len() >= 2);
    assert_eq!(sa[0], sb[0], "concat_channels: leading dim mismatch");
    assert_eq!(sa[2..], sb[2..], "concat_channels: trailing dims mismatch");
    let rows = sa[0];
    let rest: usize = sa[2..].iter().product();
    let (c1, c2) = (sa[1], sb[1]);
    let mut new_shape = sa.clone();
    new_shape[1] = c1 + c2;
    let da = a.data();
    let db = b.data();
    let mut out = Vec::with_capacity(rows * (c1 + c2) * rest);
    for r in 0..rows {
        out.extend_from_slice(&da[r * c1 * rest..(r + 1) * c1 * rest]);
        out.extend_from_slice(&db[r * c2 * rest..(r + 1) * c2 * rest]);
    }
    drop(da);
    drop(db);
    Tensor::from_op(
        new_shape,
        out,
        Box::new(ConcatChannelsRule { c1, c2, rest }),
        vec![a.clone(), b.clone()],
    )
}
