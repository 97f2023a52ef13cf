//! Signal preprocessing: IIR filter design and application, resampling,
//! channel selection and common average referencing.
//!
//! The homogenization chain runs in a fixed order: channel selection,
//! resampling to the target rate, highpass, notch filters, then common
//! average referencing. All filters are causal and applied per channel.

use std::f64::consts::PI;

use crate::datapipe::TrialSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One second-order section, normalized so a0 = 1:
/// y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2].
#[derive(Clone, Copy, Debug)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Schur stability test: both poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

/// Filter kind recorded for provenance.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterKind {
    Highpass { order: usize },
    Notch { q: f64 },
}

/// A cascade of stable biquad sections plus its design metadata.
#[derive(Clone, Debug)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub kind: FilterKind,
    pub freq_hz: f64,
    pub fs_hz: f64,
}

impl BiquadCascade {
    fn check(self, op: &'static str) -> Result<Self> {
        for s in &self.sections {
            let coeffs = [s.b0, s.b1, s.b2, s.a1, s.a2];
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Parameter {
                    op,
                    detail: format!("non-finite coefficients {coeffs:?}"),
                });
            }
            if !s.is_stable() {
                return Err(Error::Parameter {
                    op,
                    detail: format!("unstable section a1={}, a2={}", s.a1, s.a2),
                });
            }
        }
        Ok(self)
    }
}

fn check_band(f_hz: f64, fs: f64, op: &'static str) -> Result<()> {
    if !(fs > 0.0) {
        return Err(Error::Parameter {
            op,
            detail: format!("sample rate {fs} must be positive"),
        });
    }
    if !(f_hz > 0.0) || f_hz >= fs / 2.0 {
        return Err(Error::Parameter {
            op,
            detail: format!("frequency {f_hz} Hz outside (0, Nyquist={})", fs / 2.0),
        });
    }
    Ok(())
}

/// Butterworth highpass via the bilinear transform with frequency
/// prewarping, emitted as second-order sections (plus one first-order
/// section for odd orders). Gain is normalized to 1 at Nyquist per
/// section, which puts the -3 dB point exactly at the cutoff.
pub fn design_butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<BiquadCascade> {
    if order == 0 {
        return Err(Error::Parameter {
            op: "design_butter_highpass",
            detail: "order must be >= 1".into(),
        });
    }
    check_band(cutoff_hz, fs, "design_butter_highpass")?;

    let warped = 2.0 * fs * (PI * cutoff_hz / fs).tan();
    let fs2 = 2.0 * fs;
    let mut sections = Vec::new();

    // Conjugate pole pairs of the analog lowpass prototype, mapped through
    // s -> warped/s (highpass) and then the bilinear transform.
    for k in 0..order / 2 {
        let phi = PI * (2 * k + 1) as f64 / (2.0 * order as f64);
        // prototype pole exp(i(pi/2 + phi)); highpass pole = warped * conj(p)
        let (re, im) = (-warped * phi.sin(), -warped * phi.cos());
        // z = (fs2 + q) / (fs2 - q) for q = re + i*im
        let den = (fs2 - re) * (fs2 - re) + im * im;
        let zre = ((fs2 + re) * (fs2 - re) - im * im) / den;
        let zim = (im * (fs2 - re) + (fs2 + re) * im) / den;
        let a1 = -2.0 * zre;
        let a2 = zre * zre + zim * zim;
        // two zeros at z = 1; normalize |H| = 1 at z = -1
        let g = (1.0 - a1 + a2) / 4.0;
        sections.push(Biquad {
            b0: g,
            b1: -2.0 * g,
            b2: g,
            a1,
            a2,
        });
    }

    if order % 2 == 1 {
        // real prototype pole at -1: q = -warped
        let zp = (fs2 - warped) / (fs2 + warped);
        let g = (1.0 + zp) / 2.0;
        sections.push(Biquad {
            b0: g,
            b1: -g,
            b2: 0.0,
            a1: -zp,
            a2: 0.0,
        });
    }

    BiquadCascade {
        sections,
        kind: FilterKind::Highpass { order },
        freq_hz: cutoff_hz,
        fs_hz: fs,
    }
    .check("design_butter_highpass")
}

/// Second-order notch with unit gain at DC and Nyquist and a zero pair on
/// the unit circle at f0.
pub fn design_notch(f0_hz: f64, q: f64, fs: f64) -> Result<BiquadCascade> {
    if !(q > 0.0) {
        return Err(Error::Parameter {
            op: "design_notch",
            detail: format!("q must be positive, got {q}"),
        });
    }
    check_band(f0_hz, fs, "design_notch")?;

    let w0 = 2.0 * PI * f0_hz / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let section = Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * w0.cos() / a0,
        b2: 1.0 / a0,
        a1: -2.0 * w0.cos() / a0,
        a2: (1.0 - alpha) / a0,
    };
    BiquadCascade {
        sections: vec![section],
        kind: FilterKind::Notch { q },
        freq_hz: f0_hz,
        fs_hz: fs,
    }
    .check("design_notch")
}

/// Causal direct-form II transposed application of a cascade.
pub fn filt(cascade: &BiquadCascade, signal: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite sample at index {i}: {}",
            signal[i]
        )));
    }
    let mut out = signal.to_vec();
    for s in &cascade.sections {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in out.iter_mut() {
            let x = *v;
            let y = s.b0 * x + s1;
            s1 = s.b1 * x - s.a1 * y + s2;
            s2 = s.b2 * x - s.a2 * y;
            *v = y;
        }
    }
    Ok(out)
}

// ── resampling ──────────────────────────────────────────────────────

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < 1e-16 * sum {
            return sum;
        }
        k += 1.0;
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Antisymmetric edge extension keeps the slope continuous at the ends,
/// which preserves band-limited content much better than zero padding.
fn sample_extended(s: &[f64], i: isize) -> f64 {
    let n = s.len() as isize;
    if (0..n).contains(&i) {
        s[i as usize]
    } else if i < 0 {
        let j = (-i).min(n - 1);
        2.0 * s[0] - s[j as usize]
    } else {
        let j = (2 * (n - 1) - i).max(0);
        2.0 * s[(n - 1) as usize] - s[j as usize]
    }
}

const KAISER_BETA: f64 = 8.0;
const TAPS_PER_SIDE: f64 = 32.0;

/// Rate conversion by windowed-sinc interpolation (Kaiser window, 64 taps
/// per output phase, stretched when downsampling so the anti-aliasing
/// cutoff lands below the output Nyquist).
///
/// Output length is round(n * fs_out / fs_in). Equal rates are a no-op.
pub fn resample(signal: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Data("resample: empty input".into()));
    }
    if !(fs_in > 0.0) || !(fs_out > 0.0) {
        return Err(Error::Parameter {
            op: "resample",
            detail: format!("rates must be positive, got {fs_in} -> {fs_out}"),
        });
    }
    if fs_in == fs_out {
        return Ok(signal.to_vec());
    }

    let ratio = fs_out / fs_in;
    let out_len = ((signal.len() as f64) * ratio).round() as usize;
    let shrink = ratio.min(1.0);
    // cutoff in cycles per input sample, kept inside the output Nyquist
    let cutoff = 0.5 * shrink * 0.92;
    let half = (TAPS_PER_SIDE / shrink).ceil() as isize;
    let i0_beta = bessel_i0(KAISER_BETA);

    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let t = m as f64 / ratio;
        let k0 = t.floor() as isize;
        let mut acc = 0.0;
        for k in (k0 - half + 1)..=(k0 + half) {
            let tau = t - k as f64;
            let x = tau / half as f64;
            if x.abs() >= 1.0 {
                continue;
            }
            let window = bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / i0_beta;
            acc += sample_extended(signal, k) * 2.0 * cutoff * sinc(2.0 * cutoff * tau) * window;
        }
        out.push(acc);
    }
    Ok(out)
}

// ── referencing and channel selection ───────────────────────────────

/// Subtract the instantaneous mean across channels from every channel.
/// Input [C, T]; every output column then sums to zero.
pub fn common_average_reference(trial: &Tensor) -> Result<Tensor> {
    let shape = trial.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op: "common_average_reference",
            detail: format!("expected [C, T], got {shape:?}"),
        });
    }
    let (c, t) = (shape[0], shape[1]);
    if c < 2 {
        return Err(Error::Parameter {
            op: "common_average_reference",
            detail: format!("need at least 2 channels, got {c}"),
        });
    }
    let x = trial.data();
    let mut out = x.to_vec();
    for ti in 0..t {
        let mut mean = 0.0;
        for ci in 0..c {
            mean += x[ci * t + ti];
        }
        mean /= c as f64;
        for ci in 0..c {
            out[ci * t + ti] -= mean;
        }
    }
    drop(x);
    Ok(Tensor::new(vec![c, t], out))
}

/// Keep the named channels, in the requested order.
pub fn select_channels(trials: &TrialSet, names: &[String]) -> Result<TrialSet> {
    let mut picks = Vec::with_capacity(names.len());
    for name in names {
        match trials.channel_names.iter().position(|c| c == name) {
            Some(i) => picks.push(i),
            None => {
                return Err(Error::Data(format!(
                    "channel {name:?} not present in montage {:?}",
                    trials.channel_names
                )))
            }
        }
    }
    let (n, c, t) = (trials.n_trials(), trials.n_channels(), trials.n_samples());
    let src = trials.data.data();
    let mut out = Vec::with_capacity(n * picks.len() * t);
    for tr in 0..n {
        for &ci in &picks {
            out.extend_from_slice(&src[(tr * c + ci) * t..(tr * c + ci + 1) * t]);
        }
    }
    drop(src);
    Ok(TrialSet {
        data: Tensor::new(vec![n, picks.len(), t], out),
        labels: trials.labels.clone(),
        subject_ids: trials.subject_ids.clone(),
        dataset_id: trials.dataset_id,
        fs_hz: trials.fs_hz,
        n_classes: trials.n_classes,
        channel_names: names.to_vec(),
    })
}

// ── full preprocessing chain ────────────────────────────────────────

/// Which steps of the homogenization chain to run.
#[derive(Clone, Debug, Default)]
pub struct PreprocessOptions {
    pub channels: Option<Vec<String>>,
    pub resample_hz: Option<f64>,
    pub highpass_hz: Option<f64>,
    pub notch_hz: Vec<f64>,
    pub car: bool,
}

impl PreprocessOptions {
    /// The standard chain: resample to 160 Hz, 2 Hz highpass, 50/60 Hz
    /// notches, common average reference.
    pub fn standard() -> Self {
        PreprocessOptions {
            channels: None,
            resample_hz: Some(160.0),
            highpass_hz: Some(2.0),
            notch_hz: vec![50.0, 60.0],
            car: true,
        }
    }
}

pub const HIGHPASS_ORDER: usize = 4;
pub const NOTCH_Q: f64 = 30.0;

/// Apply the chain in its fixed order: selection, resample, highpass,
/// notches, CAR. Per-channel processing is independent; output bytes are a
/// pure function of input bytes.
pub fn preprocess(trials: &TrialSet, opts: &PreprocessOptions) -> Result<TrialSet> {
    let mut current = match &opts.channels {
        Some(names) => select_channels(trials, names)?,
        None => trials.clone(),
    };

    if let Some(target) = opts.resample_hz {
        if target != current.fs_hz {
            let (n, c, t) = (current.n_trials(), current.n_channels(), current.n_samples());
            let src = current.data.to_vec();
            let mut out = Vec::new();
            let mut t_out = 0;
            for tr in 0..n {
                for ci in 0..c {
                    let row = &src[(tr * c + ci) * t..(tr * c + ci + 1) * t];
                    let res = resample(row, current.fs_hz, target)
                        .map_err(|e| Error::Data(format!("trial {tr}, channel {ci}: {e}")))?;
                    t_out = res.len();
                    out.extend_from_slice(&res);
                }
            }
            current.data = Tensor::new(vec![n, c, t_out], out);
            current.fs_hz = target;
        }
    }

    let mut cascades = Vec::new();
    if let Some(hp) = opts.highpass_hz {
        cascades.push(design_butter_highpass(HIGHPASS_ORDER, hp, current.fs_hz)?);
    }
    for &f0 in &opts.notch_hz {
        cascades.push(design_notch(f0, NOTCH_Q, current.fs_hz)?);
    }
    if !cascades.is_empty() {
        let (n, c, t) = (current.n_trials(), current.n_channels(), current.n_samples());
        let mut data = current.data.to_vec();
        for tr in 0..n {
            for ci in 0..c {
                let range = (tr * c + ci) * t..(tr * c + ci + 1) * t;
                let mut row = data[range.clone()].to_vec();
                for cascade in &cascades {
                    row = filt(cascade, &row)
                        .map_err(|e| Error::Data(format!("trial {tr}, channel {ci}: {e}")))?;
                }
                data[range].copy_from_slice(&row);
            }
        }
        current.data = Tensor::new(vec![n, c, t], data);
    }

    if opts.car {
        let (n, c, t) = (current.n_trials(), current.n_channels(), current.n_samples());
        let src = current.data.to_vec();
        let mut out = Vec::with_capacity(src.len());
        for tr in 0..n {
            let trial = Tensor::new(vec![c, t], src[tr * c * t..(tr + 1) * c * t].to_vec());
            out.extend_from_slice(&common_average_reference(&trial)?.to_vec());
        }
        current.data = Tensor::new(vec![n, c, t], out);
    }

    Ok(current)
}
