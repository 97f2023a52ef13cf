//! Temporal pooling and padding.

use crate::error::{Error, Result};

use super::{GradRule, Tensor};

struct Pad1dRule {
    left: usize,
    right: usize,
}

impl GradRule for Pad1dRule {
    fn op_name(&self) -> &'static str {
        "pad1d"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let shape = parents[0].shape();
        let t = *shape.last().unwrap();
        let rows = parents[0].numel() / t;
        let tp = t + self.left + self.right;
        let mut out = vec![0.0; rows * t];
        for r in 0..rows {
            out[r * t..(r + 1) * t]
                .copy_from_slice(&g[r * tp + self.left..r * tp + self.left + t]);
        }
        vec![Some(out)]
    }
}

/// Zero-pad the trailing (time) axis.
pub fn pad1d(input: &Tensor, left: usize, right: usize) -> Tensor {
    if left == 0 && right == 0 {
        return input.clone();
    }
    let mut shape = input.shape();
    let t = *shape.last().unwrap();
    let rows = input.numel() / t;
    let tp = t + left + right;
    *shape.last_mut().unwrap() = tp;
    let x = input.data();
    let mut out = vec![0.0; rows * tp];
    for r in 0..rows {
        out[r * tp + left..r * tp + left + t].copy_from_slice(&x[r * t..(r + 1) * t]);
    }
    drop(x);
    Tensor::from_op(shape, out, Box::new(Pad1dRule { left, right }), vec![input.clone()])
}

struct AvgPool1dRule {
    k: usize,
    stride: usize,
}

impl GradRule for AvgPool1dRule {
    fn op_name(&self) -> &'static str {
        "avg_pool1d"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let shape = parents[0].shape();
        let t = *shape.last().unwrap();
        let rows = parents[0].numel() / t;
        let t_out = (t - self.k) / self.stride + 1;
        let inv = 1.0 / self.k as f64;
        let mut out = vec![0.0; rows * t];
        for r in 0..rows {
            let grow = &g[r * t_out..(r + 1) * t_out];
            let orow = &mut out[r * t..(r + 1) * t];
            for (to, gv) in grow.iter().enumerate() {
                let start = to * self.stride;
                for o in &mut orow[start..start + self.k] {
                    *o += gv * inv;
                }
            }
        }
        vec![Some(out)]
    }
}

/// Mean pooling along the trailing axis; T_out = (T - k)/stride + 1.
pub fn avg_pool1d(input: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    if k == 0 || stride == 0 {
        return Err(Error::Parameter {
            op: "avg_pool1d",
            detail: "k and stride must be >= 1".into(),
        });
    }
    let mut shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::Dimension {
            op: "avg_pool1d",
            detail: format!("expected rank >= 2, got {shape:?}"),
        });
    }
    let t = *shape.last().unwrap();
    if t < k {
        return Err(Error::EmptyOutput {
            op: "avg_pool1d",
            detail: format!("window {k} longer than input length {t}"),
        });
    }
    let rows = input.numel() / t;
    let t_out = (t - k) / stride + 1;
    *shape.last_mut().unwrap() = t_out;
    let inv = 1.0 / k as f64;
    let x = input.data();
    let mut out = vec![0.0; rows * t_out];
    for r in 0..rows {
        let xrow = &x[r * t..(r + 1) * t];
        let orow = &mut out[r * t_out..(r + 1) * t_out];
        for (to, o) in orow.iter_mut().enumerate() {
            let start = to * stride;
            *o = xrow[start..start + k].iter().sum::<f64>() * inv;
        }
    }
    drop(x);
    Ok(Tensor::from_op(
        shape,
        out,
        Box::new(AvgPool1dRule { k, stride }),
        vec![input.clone()],
    ))
}

/// Same-length mean smoothing: pad by k-1 total, then pool with stride 1.
pub fn avg_pool1d_same(input: &Tensor, k: usize) -> Result<Tensor> {
    if k <= 1 {
        return Ok(input.clone());
    }
    let left = (k - 1) / 2;
    let right = k - 1 - left;
    avg_pool1d(&pad1d(input, left, right), k, 1)
}

struct GlobalAvgPoolRule;

impl GradRule for GlobalAvgPoolRule {
    fn op_name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let shape = parents[0].shape();
        let t = shape[2];
        let inv = 1.0 / t as f64;
        let mut out = vec![0.0; parents[0].numel()];
        for (r, gv) in g.iter().enumerate() {
            out[r * t..(r + 1) * t].fill(gv * inv);
        }
        vec![Some(out)]
    }
}

/// Mean over the time axis: [B, C, T] -> [B, C].
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension {
            op: "global_avg_pool",
            detail: format!("expected rank 3, got {shape:?}"),
        });
    }
    let (b, c, t) = (shape[0], shape[1], shape[2]);
    if t == 0 {
        return Err(Error::EmptyOutput {
            op: "global_avg_pool",
            detail: "empty time axis".into(),
        });
    }
    let inv = 1.0 / t as f64;
    let x = input.data();
    let out: Vec<f64> = (0..b * c)
        .map(|r| x[r * t..(r + 1) * t].iter().sum::<f64>() * inv)
        .collect();
    drop(x);
    Ok(Tensor::from_op(
        vec![b, c],
        out,
        Box::new(GlobalAvgPoolRule),
        vec![input.clone()],
    ))
}
