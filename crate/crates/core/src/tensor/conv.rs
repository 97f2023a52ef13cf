//! Temporal and spatial convolutions.

use crate::error::{Error, Result};

use super::{GradRule, Tensor};

#[derive(Clone, Copy)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            dilation: 1,
            groups: 1,
            padding: 0,
        }
    }
}

pub fn conv1d_out_len(t: usize, k: usize, spec: &ConvSpec) -> Option<usize> {
    let span = spec.dilation * (k - 1) + 1;
    let padded = t + 2 * spec.padding;
    if padded < span {
        return None;
    }
    Some((padded - span) / spec.stride + 1)
}

fn pad_rows(data: &[f64], rows: usize, t: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return data.to_vec();
    }
    let tp = t + 2 * pad;
    let mut out = vec![0.0; rows * tp];
    for r in 0..rows {
        out[r * tp + pad..r * tp + pad + t].copy_from_slice(&data[r * t..(r + 1) * t]);
    }
    out
}

struct Conv1dRule {
    spec: ConvSpec,
    has_bias: bool,
}

impl GradRule for Conv1dRule {
    fn op_name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, g: &[f64], parents: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let spec = &self.spec;
        let x_shape = parents[0].shape();
        let w_shape = parents[1].shape();
        let (b, c, t) = (x_shape[0], x_shape[1], x_shape[2]);
        let (f, cg, k) = (w_shape[0], w_shape[1], w_shape[2]);
        let fg = f / spec.groups;
        let t_out = conv1d_out_len(t, k, spec).expect("backward on valid conv");
        let tp = t + 2 * spec.padding;

        let x = parents[0].data();
        let w = parents[1].data();
        let xp = pad_rows(&x, b * c, t, spec.padding);

        let mut gx_padded = needs[0].then(|| vec![0.0; b * c * tp]);
        let mut gw = needs[1].then(|| vec![0.0; f * cg * k]);
        let mut gb = (self.has_bias && needs[2]).then(|| vec![0.0; f]);

        for bi in 0..b {
            for fi in 0..f {
                let gi = fi / fg;
                let gout = &g[(bi * f + fi) * t_out..(bi * f + fi + 1) * t_out];
                if let Some(gb) = gb.as_mut() {
                    gb[fi] += gout.iter().sum::<f64>();
                }
                for cl in 0..cg {
                    let ci = gi * cg + cl;
                    let xrow = &xp[(bi * c + ci) * tp..(bi * c + ci + 1) * tp];
                    for ki in 0..k {
                        let off = ki * spec.dilation;
                        let wv = w[(fi * cg + cl) * k + ki];
                        if let Some(gx) = gx_padded.as_mut() {
                            let row = &mut gx[(bi * c + ci) * tp..(bi * c + ci + 1) * tp];
                            if spec.stride == 1 {
                                for (r, gv) in row[off..off + t_out].iter_mut().zip(gout) {
                                    *r += wv * gv;
                                }
                            } else {
                                for (to, gv) in gout.iter().enumerate() {
                                    row[to * spec.stride + off] += wv * gv;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            let dot = if spec.stride == 1 {
                                xrow[off..off + t_out]
                                    .iter()
                                    .zip(gout)
                                    .map(|(xv, gv)| xv * gv)
                                    .sum::<f64>()
                            } else {
                                gout.iter()
                                    .enumerate()
                                    .map(|(to, gv)| xrow[to * spec.stride + off] * gv)
                                    .sum::<f64>()
                            };
                            gw[(fi * cg + cl) * k + ki] += dot;
                        }
                    }
                }
            }
        }

        let gx = gx_padded.map(|gp| {
            if spec.padding == 0 {
                gp
            } else {
                let mut out = vec![0.0; b * c * t];
                for r in 0..b * c {
                    out[r * t..(r + 1) * t]
                        .copy_from_slice(&gp[r * tp + spec.padding..r * tp + spec.padding + t]);
                }
                out
            }
        });

        if self.has_bias {
            vec![gx, gw, gb]
        } else {
            vec![gx, gw]
        }
    }
}

/// Grouped dilated 1-d convolution.
///
/// `input` [B, C, T], `kernel` [F, C/groups, K], optional `bias` [F];
/// output [B, F, T_out] with T_out = (T + 2p - d(K-1) - 1)/stride + 1.
pub fn conv1d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    let x_shape = input.shape();
    let w_shape = kernel.shape();
    if x_shape.len() != 3 || w_shape.len() != 3 {
        return Err(Error::Dimension {
            op: "conv1d",
            detail: format!("expected rank-3 input and kernel, got {x_shape:?} and {w_shape:?}"),
        });
    }
    if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
        return Err(Error::Parameter {
            op: "conv1d",
            detail: "stride, dilation and groups must be >= 1".into(),
        });
    }
    let (b, c, t) = (x_shape[0], x_shape[1], x_shape[2]);
    let (f, cg, k) = (w_shape[0], w_shape[1], w_shape[2]);
    if c % spec.groups != 0 || f % spec.groups != 0 {
        return Err(Error::Dimension {
            op: "conv1d",
            detail: format!(
                "channels {c} and filters {f} must divide groups {}",
                spec.groups
            ),
        });
    }
    if cg != c / spec.groups {
        return Err(Error::Dimension {
            op: "conv1d",
            detail: format!(
                "kernel expects {cg} channels per group, input provides {}",
                c / spec.groups
            ),
        });
    }
    if let Some(bias) = bias {
        if bias.shape() != vec![f] {
            return Err(Error::Dimension {
                op: "conv1d",
                detail: format!("bias shape {:?}, expected [{f}]", bias.shape()),
            });
        }
    }
    let t_out = conv1d_out_len(t, k, &spec).ok_or_else(|| Error::EmptyOutput {
        op: "conv1d",
        detail: format!(
            "input length {t} + 2*{} shorter than kernel span {}",
            spec.padding,
            spec.dilation * (k - 1) + 1
        ),
    })?;

    let fg = f / spec.groups;
    let tp = t + 2 * spec.padding;
    let x = input.data();
    let w = kernel.data();
    let xp = pad_rows(&x, b * c, t, spec.padding);
    let bias_data: Option<Vec<f64>> = bias.map(|bb| bb.to_vec());

    let mut out = vec![0.0; b * f * t_out];
    for bi in 0..b {
        for fi in 0..f {
            let gi = fi / fg;
            let orow = &mut out[(bi * f + fi) * t_out..(bi * f + fi + 1) * t_out];
            if let Some(bd) = &bias_data {
                orow.fill(bd[fi]);
            }
            for cl in 0..cg {
                let ci = gi * cg + cl;
                let xrow = &xp[(bi * c + ci) * tp..(bi * c + ci + 1) * tp];
                for ki in 0..k {
                    let off = ki * spec.dilation;
                    let wv = w[(fi * cg + cl) * k + ki];
                    if spec.stride == 1 {
                        for (o, xv) in orow.iter_mut().zip(&xrow[off..off + t_out]) {
                            *o += wv * xv;
                        }
                    } else {
                        for (to, o) in orow.iter_mut().enumerate() {
                            *o += wv * xrow[to * spec.stride + off];
                        }
                    }
                }
            }
        }
    }
    drop(x);
    drop(w);

    let has_bias = bias.is_some();
    let mut parents = vec![input.clone(), kernel.clone()];
    if let Some(bb) = bias {
        parents.push(bb.clone());
    }
    Ok(Tensor::from_op(
        vec![b, f, t_out],
        out,
        Box::new(Conv1dRule { spec, has_bias }),
        parents,
    ))
}

struct DepthwiseChannelsRule;

impl GradRule for DepthwiseChannelsRule {
    fn op_name(&self) -> &'static str {
        "depthwise_conv_channels"
    }

    fn backward(&self, g: &[f64], parents: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x_shape = parents[0].shape();
        let w_shape = parents[1].shape();
        let (b, c, e, t) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let d = w_shape[0] / c;
        let x = parents[0].data();
        let w = parents[1].data();

        let mut gx = needs[0].then(|| vec![0.0; b * c * e * t]);
        let mut gw = needs[1].then(|| vec![0.0; c * d * e]);

        for bi in 0..b {
            for ci in 0..c {
                for di in 0..d {
                    let fo = ci * d + di;
                    let gout = &g[(bi * c * d + fo) * t..(bi * c * d + fo + 1) * t];
                    for ei in 0..e {
                        let wv = w[fo * e + ei];
                        let xbase = ((bi * c + ci) * e + ei) * t;
                        if let Some(gx) = gx.as_mut() {
                            for (r, gv) in gx[xbase..xbase + t].iter_mut().zip(gout) {
                                *r += wv * gv;
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[fo * e + ei] += x[xbase..xbase + t]
                                .iter()
                                .zip(gout)
                                .map(|(xv, gv)| xv * gv)
                                .sum::<f64>();
                        }
                    }
                }
            }
        }
        vec![gx, gw]
    }
}

/// Spatial (electrode-collapsing) depthwise convolution.
///
/// `input` [B, C, E, T], `kernel` [C*D, 1, E, 1]: each input channel `c`
/// yields `D` outputs, each a learned linear combination over the E
/// electrodes. Output [B, C*D, 1, T].
pub fn depthwise_conv_channels(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let x_shape = input.shape();
    let w_shape = kernel.shape();
    if x_shape.len() != 4 || w_shape.len() != 4 {
        return Err(Error::Dimension {
            op: "depthwise_conv_channels",
            detail: format!("expected rank-4 input and kernel, got {x_shape:?} and {w_shape:?}"),
        });
    }
    let (b, c, e, t) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    if w_shape[1] != 1 || w_shape[3] != 1 {
        return Err(Error::Dimension {
            op: "depthwise_conv_channels",
            detail: format!("kernel must be [C*D, 1, E, 1], got {w_shape:?}"),
        });
    }
    if w_shape[2] != e {
        return Err(Error::Dimension {
            op: "depthwise_conv_channels",
            detail: format!("kernel electrode extent {} != input electrodes {e}", w_shape[2]),
        });
    }
    if w_shape[0] % c != 0 {
        return Err(Error::Dimension {
            op: "depthwise_conv_channels",
            detail: format!("kernel count {} not a multiple of channels {c}", w_shape[0]),
        });
    }
    let d = w_shape[0] / c;

    let x = input.data();
    let w = kernel.data();
    let mut out = vec![0.0; b * c * d * t];
    for bi in 0..b {
        for ci in 0..c {
            for di in 0..d {
                let fo = ci * d + di;
                let orow = &mut out[(bi * c * d + fo) * t..(bi * c * d + fo + 1) * t];
                for ei in 0..e {
                    let wv = w[fo * e + ei];
                    let xbase = ((bi * c + ci) * e + ei) * t;
                    for (o, xv) in orow.iter_mut().zip(&x[xbase..xbase + t]) {
                        *o += wv * xv;
                    }
                }
            }
        }
    }
    drop(x);
    drop(w);

    Ok(Tensor::from_op(
        vec![b, c * d, 1, t],
        out,
        Box::new(DepthwiseChannelsRule),
        vec![input.clone(), kernel.clone()],
    ))
}
