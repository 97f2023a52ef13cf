//! Dense layer, activations, dropout and log-softmax.

use crate::error::{Error, Result};
use crate::rng::StreamRng;

use super::{GradRule, Tensor};

struct LinearRule;

impl GradRule for LinearRule {
    fn op_name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x_shape = parents[0].shape();
        let w_shape = parents[1].shape();
        let (b, n) = (x_shape[0], x_shape[1]);
        let m = w_shape[0];
        let x = parents[0].data();
        let w = parents[1].data();

        let gx = needs[0].then(|| {
            let mut out = vec![0.0; b * n];
            for bi in 0..b {
                for mi in 0..m {
                    let gv = g[bi * m + mi];
                    let wrow = &w[mi * n..(mi + 1) * n];
                    for (o, wv) in out[bi * n..(bi + 1) * n].iter_mut().zip(wrow) {
                        *o += gv * wv;
                    }
                }
            }
            out
        });
        let gw = needs[1].then(|| {
            let mut out = vec![0.0; m * n];
            for bi in 0..b {
                let xrow = &x[bi * n..(bi + 1) * n];
                for mi in 0..m {
                    let gv = g[bi * m + mi];
                    for (o, xv) in out[mi * n..(mi + 1) * n].iter_mut().zip(xrow) {
                        *o += gv * xv;
                    }
                }
            }
            out
        });
        let gb = needs[2].then(|| {
            let mut out = vec![0.0; m];
            for bi in 0..b {
                for mi in 0..m {
                    out[mi] += g[bi * m + mi];
                }
            }
            out
        });
        vec![gx, gw, gb]
    }
}

/// Affine map: [B, N] x [M, N] + [M] -> [B, M].
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let x_shape = input.shape();
    let w_shape = weight.shape();
    if x_shape.len() != 2 || w_shape.len() != 2 || x_shape[1] != w_shape[1] {
        return Err(Error::Dimension {
            op: "linear",
            detail: format!("input {x_shape:?} vs weight {w_shape:?}"),
        });
    }
    let (b, n) = (x_shape[0], x_shape[1]);
    let m = w_shape[0];
    if bias.shape() != vec![m] {
        return Err(Error::Dimension {
            op: "linear",
            detail: format!("bias shape {:?}, expected [{m}]", bias.shape()),
        });
    }
    let x = input.data();
    let w = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0; b * m];
    for bi in 0..b {
        let xrow = &x[bi * n..(bi + 1) * n];
        for mi in 0..m {
            let wrow = &w[mi * n..(mi + 1) * n];
            let dot: f64 = xrow.iter().zip(wrow).map(|(a, b)| a * b).sum();
            out[bi * m + mi] = dot + bd[mi];
        }
    }
    drop(x);
    drop(w);
    drop(bd);
    Ok(Tensor::from_op(
        vec![b, m],
        out,
        Box::new(LinearRule),
        vec![input.clone(), weight.clone(), bias.clone()],
    ))
}

struct EluRule;

impl GradRule for EluRule {
    fn op_name(&self) -> &'static str {
        "elu"
    }
    fn backward(&self, g: &[f64], parents: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = parents[0].data();
        vec![Some(
            g.iter()
                .zip(x.iter())
                .map(|(gi, xi)| if *xi >= 0.0 { *gi } else { gi * xi.exp() })
                .collect(),
        )]
    }
}

/// ELU with alpha = 1: x for x >= 0, exp(x) - 1 otherwise.
pub fn elu(input: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .map(|&x| if x >= 0.0 { x } else { x.exp() - 1.0 })
        .collect();
    Tensor::from_op(input.shape(), data, Box::new(EluRule), vec![input.clone()])
}

struct DropoutRule {
    mask: Vec<f64>,
}

impl GradRule for DropoutRule {
    fn op_name(&self) -> &'static str {
        "dropout"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(
            g.iter().zip(&self.mask).map(|(gi, mi)| gi * mi).collect(),
        )]
    }
}

/// Inverted dropout: zero each element with probability p and scale
/// survivors by 1/(1-p). Mask draws come from the caller's stream.
pub fn dropout(input: &Tensor, p: f64, rng: &mut StreamRng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter {
            op: "dropout",
            detail: format!("p must be in [0, 1), got {p}"),
        });
    }
    if p == 0.0 {
        return Ok(input.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..input.numel())
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(x, m)| x * m)
        .collect();
    Ok(Tensor::from_op(
        input.shape(),
        data,
        Box::new(DropoutRule { mask }),
        vec![input.clone()],
    ))
}

struct LogSoftmaxRule {
    softmax: Vec<f64>,
    cols: usize,
}

impl GradRule for LogSoftmaxRule {
    fn op_name(&self) -> &'static str {
        "log_softmax"
    }
    fn backward(&self, g: &[f64], _p: &[Tensor], _n: &[bool]) -> Vec<Option<Vec<f64>>> {
        let c = self.cols;
        let mut out = vec![0.0; g.len()];
        for r in 0..g.len() / c {
            let gsum: f64 = g[r * c..(r + 1) * c].iter().sum();
            for i in 0..c {
                out[r * c + i] = g[r * c + i] - self.softmax[r * c + i] * gsum;
            }
        }
        vec![Some(out)]
    }
}

/// Row-wise log-softmax of [B, C] logits.
pub fn log_softmax(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op: "log_softmax",
            detail: format!("expected rank 2, got {shape:?}"),
        });
    }
    let (b, c) = (shape[0], shape[1]);
    let x = input.data();
    let mut out = vec![0.0; b * c];
    let mut softmax = vec![0.0; b * c];
    for r in 0..b {
        let row = &x[r * c..(r + 1) * c];
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = maxv + row.iter().map(|v| (v - maxv).exp()).sum::<f64>().ln();
        for i in 0..c {
            let ls = row[i] - lse;
            out[r * c + i] = ls;
            softmax[r * c + i] = ls.exp();
        }
    }
    drop(x);
    Ok(Tensor::from_op(
        vec![b, c],
        out,
        Box::new(LogSoftmaxRule { softmax, cols: c }),
        vec![input.clone()],
    ))
}
