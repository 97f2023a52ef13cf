//! Trial containers, the EEGT file format, fold planning, sampling
//! weights, subject-chunked batching and the synthetic benchmark
//! generator.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

// ── TrialSet ────────────────────────────────────────────────────────

/// A block of trials from one dataset: [N, C, T] samples with one label,
/// subject id and class space shared across the block.
#[derive(Clone, Debug)]
pub struct TrialSet {
    pub data: Tensor,
    pub labels: Vec<i32>,
    pub subject_ids: Vec<i32>,
    pub dataset_id: u32,
    pub fs_hz: f64,
    pub n_classes: u32,
    pub channel_names: Vec<String>,
}

impl TrialSet {
    pub fn n_trials(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_samples(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.data.shape();
        if shape.len() != 3 {
            return Err(Error::Data(format!("trial data must be [N,C,T], got {shape:?}")));
        }
        if self.labels.len() != shape[0] || self.subject_ids.len() != shape[0] {
            return Err(Error::Data(format!(
                "{} trials but {} labels / {} subject ids",
                shape[0],
                self.labels.len(),
                self.subject_ids.len()
            )));
        }
        if self.channel_names.len() != shape[1] {
            return Err(Error::Data(format!(
                "{} channels but {} channel names",
                shape[1],
                self.channel_names.len()
            )));
        }
        if !(self.fs_hz > 0.0) {
            return Err(Error::Data(format!("sample rate {} must be positive", self.fs_hz)));
        }
        for (i, &l) in self.labels.iter().enumerate() {
            if l < 0 || l as u32 >= self.n_classes {
                return Err(Error::Data(format!(
                    "label {l} of trial {i} outside [0, {})",
                    self.n_classes
                )));
            }
        }
        Ok(())
    }

    /// Unique subject ids in ascending order.
    pub fn subjects(&self) -> Vec<i32> {
        let mut s = self.subject_ids.clone();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Copy of the selected trials, in the given order.
    pub fn subset(&self, indices: &[usize]) -> TrialSet {
        let (c, t) = (self.n_channels(), self.n_samples());
        let src = self.data.data();
        let mut data = Vec::with_capacity(indices.len() * c * t);
        let mut labels = Vec::with_capacity(indices.len());
        let mut subject_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&src[i * c * t..(i + 1) * c * t]);
            labels.push(self.labels[i]);
            subject_ids.push(self.subject_ids[i]);
        }
        drop(src);
        TrialSet {
            data: Tensor::new(vec![indices.len(), c, t], data),
            labels,
            subject_ids,
            dataset_id: self.dataset_id,
            fs_hz: self.fs_hz,
            n_classes: self.n_classes,
            channel_names: self.channel_names.clone(),
        }
    }

    /// One trial as a [C, T] tensor.
    pub fn trial(&self, i: usize) -> Tensor {
        let (c, t) = (self.n_channels(), self.n_samples());
        let src = self.data.data();
        Tensor::new(vec![c, t], src[i * c * t..(i + 1) * c * t].to_vec())
    }
}

// ── EEGT container format ───────────────────────────────────────────
//
// Little-endian layout:
//   magic "EEGT", version u32 = 1,
//   n_trials u32, n_channels u32, n_samples u32,
//   fs f32, n_classes u32, dataset_id u32,
//   channel names: count u32, then per name u16 length + UTF-8 bytes,
//   labels i32[n], subject_ids i32[n], data f32[n*c*t] row-major.

const EEGT_MAGIC: &[u8; 4] = b"EEGT";
const EEGT_VERSION: u32 = 1;

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: at,
            detail: format!("reading {what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(i32::from_le_bytes(b))
    }
}

pub fn read_eegt(path: &Path) -> Result<TrialSet> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inner: std::io::BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if &magic != EEGT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic {magic:?}, expected \"EEGT\""),
        });
    }
    let version = r.u32("version")?;
    if version != EEGT_VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let n = r.u32("n_trials")? as usize;
    let c = r.u32("n_channels")? as usize;
    let t = r.u32("n_samples")? as usize;
    let fs = r.f32("fs")? as f64;
    let n_classes = r.u32("n_classes")?;
    let dataset_id = r.u32("dataset_id")?;

    let name_count = r.u32("channel name count")? as usize;
    if name_count != c {
        return Err(Error::Format {
            offset: r.offset - 4,
            detail: format!("{name_count} channel names for {c} channels"),
        });
    }
    let mut channel_names = Vec::with_capacity(c);
    for i in 0..c {
        let len = r.u16(&format!("name {i} length"))? as usize;
        let mut bytes = vec![0u8; len];
        let at = r.offset;
        r.take(&mut bytes, &format!("name {i}"))?;
        channel_names.push(String::from_utf8(bytes).map_err(|e| Error::Format {
            offset: at,
            detail: format!("channel name {i} not UTF-8: {e}"),
        })?);
    }

    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        labels.push(r.i32(&format!("label {i}"))?);
    }
    let mut subject_ids = Vec::with_capacity(n);
    for i in 0..n {
        subject_ids.push(r.i32(&format!("subject id {i}"))?);
    }

    let mut data = Vec::with_capacity(n * c * t);
    let mut buf = vec![0u8; 4 * 4096];
    let mut remaining = n * c * t;
    while remaining > 0 {
        let chunk = remaining.min(4096);
        r.take(&mut buf[..chunk * 4], "sample data")?;
        for i in 0..chunk {
            data.push(f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap()) as f64);
        }
        remaining -= chunk;
    }

    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra)? != 0 {
        return Err(Error::Format {
            offset: r.offset,
            detail: "trailing bytes after sample data".into(),
        });
    }

    let set = TrialSet {
        data: Tensor::new(vec![n, c, t], data),
        labels,
        subject_ids,
        dataset_id,
        fs_hz: fs,
        n_classes,
        channel_names,
    };
    set.validate()?;
    Ok(set)
}

pub fn write_eegt(set: &TrialSet, path: &Path) -> Result<()> {
    set.validate()?;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(EEGT_MAGIC)?;
    w.write_all(&EEGT_VERSION.to_le_bytes())?;
    w.write_all(&(set.n_trials() as u32).to_le_bytes())?;
    w.write_all(&(set.n_channels() as u32).to_le_bytes())?;
    w.write_all(&(set.n_samples() as u32).to_le_bytes())?;
    w.write_all(&(set.fs_hz as f32).to_le_bytes())?;
    w.write_all(&set.n_classes.to_le_bytes())?;
    w.write_all(&set.dataset_id.to_le_bytes())?;
    w.write_all(&(set.channel_names.len() as u32).to_le_bytes())?;
    for name in &set.channel_names {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    for &l in &set.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    for &s in &set.subject_ids {
        w.write_all(&s.to_le_bytes())?;
    }
    let data = set.data.data();
    for &v in data.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    drop(data);
    w.flush()?;
    Ok(())
}

// ── fold planning ───────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fold<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
}

/// Cross-validation plan over the calibration set: either subject-level
/// held-out groups or trial-index partitions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum FoldPlan {
    BySubject(Vec<Fold<i32>>),
    ByIndex(Vec<Fold<usize>>),
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        match self {
            FoldPlan::BySubject(f) => f.len(),
            FoldPlan::ByIndex(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Leave-one-subject-out, repeated. Every subject is the sole validation
/// subject exactly `repeats` times; folds are ordered repeat-major.
pub fn make_folds_loso_repeated(subjects: &[i32], repeats: usize) -> Result<FoldPlan> {
    if subjects.len() < 2 {
        return Err(Error::Parameter {
            op: "make_folds_loso_repeated",
            detail: format!("need at least 2 subjects, got {}", subjects.len()),
        });
    }
    if repeats == 0 {
        return Err(Error::Parameter {
            op: "make_folds_loso_repeated",
            detail: "repeats must be >= 1".into(),
        });
    }
    let mut folds = Vec::with_capacity(repeats * subjects.len());
    for _ in 0..repeats {
        for &held_out in subjects {
            folds.push(Fold {
                train: subjects.iter().copied().filter(|&s| s != held_out).collect(),
                val: vec![held_out],
            });
        }
    }
    Ok(FoldPlan::BySubject(folds))
}

/// k folds over a seeded random permutation of trial indices; sizes differ
/// by at most one.
pub fn make_folds_unstratified(n_trials: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || k > n_trials {
        return Err(Error::Parameter {
            op: "make_folds_unstratified",
            detail: format!("k={k} must be in [1, {n_trials}]"),
        });
    }
    let mut perm: Vec<usize> = (0..n_trials).collect();
    StreamRng::new(seed, "folds", &[]).shuffle(&mut perm);

    let base = n_trials / k;
    let extra = n_trials % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut val: Vec<usize> = perm[start..start + size].to_vec();
        val.sort_unstable();
        let mut train: Vec<usize> = perm[..start]
            .iter()
            .chain(&perm[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, val });
        start += size;
    }
    Ok(FoldPlan::ByIndex(folds))
}

// ── sampling weights ────────────────────────────────────────────────

/// Per-trial sampling weight over a source+calibration concatenation.
#[derive(Clone, Debug)]
pub struct SamplerWeights {
    pub weight: Vec<f64>,
}

/// Source trials get weight 1; calibration trials get source_n/calib_n so
/// the calibration block carries the same total sampling mass as the
/// source block. With no source trials the calibration weights are
/// uniform 1.
pub fn oversample_weights(source_n: usize, calib_n: usize) -> Result<SamplerWeights> {
    if calib_n == 0 {
        return Err(Error::Parameter {
            op: "oversample_weights",
            detail: "calibration set is empty".into(),
        });
    }
    let calib_w = if source_n == 0 {
        1.0
    } else {
        source_n as f64 / calib_n as f64
    };
    let mut weight = vec![1.0; source_n];
    weight.extend(std::iter::repeat(calib_w).take(calib_n));
    Ok(SamplerWeights { weight })
}

/// Inverse-frequency class weights with logical-class merging: each merge
/// group shares one unit of importance equally among its members, and the
/// result is normalized to mean 1.
///
/// `counts` may be fractional (expected class mass after oversampling).
pub fn class_weights(counts: &[f64], merge_groups: &[Vec<usize>]) -> Result<Vec<f64>> {
    let c = counts.len();
    let mut importance = vec![1.0; c];
    for group in merge_groups {
        for &cls in group {
            if cls >= c {
                return Err(Error::Parameter {
                    op: "class_weights",
                    detail: format!("merge class {cls} out of range for {c} classes"),
                });
            }
            importance[cls] = 1.0 / group.len() as f64;
        }
    }
    let mut weights = Vec::with_capacity(c);
    for (cls, (&n, &imp)) in counts.iter().zip(&importance).enumerate() {
        if !(n > 0.0) {
            return Err(Error::Data(format!("class {cls} has zero count")));
        }
        weights.push(imp / n);
    }
    let mean = weights.iter().sum::<f64>() / c as f64;
    for w in &mut weights {
        *w /= mean;
    }
    Ok(weights)
}

// ── subject-chunked batching ────────────────────────────────────────

/// One training minibatch: trials grouped contiguously by subject, with
/// the classifier head they belong to.
#[derive(Debug)]
pub struct Batch {
    pub data: Tensor,
    pub labels: Vec<i32>,
    pub groups: Vec<Range<usize>>,
    pub head: u32,
    /// Indices into the concatenated pool, for traceability.
    pub trial_indices: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchSpec {
    pub subjects_per_batch: usize,
    pub trials_per_subject: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            subjects_per_batch: 4,
            trials_per_subject: 16,
        }
    }
}

struct SubjectEntry {
    dataset: usize,
    /// Global indices into the concatenated pool.
    trials: Vec<usize>,
    mass: f64,
}

/// Weighted subject-chunked batches over a pool of datasets.
///
/// Each batch draws one dataset (by sampling mass), then
/// `subjects_per_batch` subject draws proportional to subject mass, then
/// `trials_per_subject` trials per drawn subject (weighted, without
/// replacement; a subject with fewer trials contributes all of them). The
/// sequence is a pure function of (seed, epoch).
pub fn subject_chunk_batches(
    pool: &[TrialSet],
    weights: &SamplerWeights,
    spec: BatchSpec,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if spec.subjects_per_batch == 0 || spec.trials_per_subject == 0 {
        return Err(Error::Parameter {
            op: "subject_chunk_batches",
            detail: "subjects_per_batch and trials_per_subject must be >= 1".into(),
        });
    }
    let total: usize = pool.iter().map(|s| s.n_trials()).sum();
    if weights.weight.len() != total {
        return Err(Error::Dimension {
            op: "subject_chunk_batches",
            detail: format!("{} weights for {total} pooled trials", weights.weight.len()),
        });
    }
    if total == 0 {
        return Err(Error::Data("subject_chunk_batches: empty pool".into()));
    }

    // catalog (dataset, subject) chunks with their global trial indices
    let mut subjects: Vec<SubjectEntry> = Vec::new();
    let mut offset = 0;
    for (di, set) in pool.iter().enumerate() {
        if set.n_trials() == 0 {
            log::warn!("dataset {di} has no trials; skipped");
            continue;
        }
        for sid in set.subjects() {
            let trials: Vec<usize> = set
                .subject_ids
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == sid)
                .map(|(i, _)| offset + i)
                .collect();
            let mass: f64 = trials.iter().map(|&i| weights.weight[i]).sum();
            if mass <= 0.0 {
                log::warn!("subject {sid} of dataset {di} has zero sampling mass; skipped");
                continue;
            }
            subjects.push(SubjectEntry {
                dataset: di,
                trials,
                mass,
            });
        }
        offset += set.n_trials();
    }
    if subjects.is_empty() {
        return Err(Error::Data("subject_chunk_batches: no usable subjects".into()));
    }

    let dataset_mass: Vec<f64> = (0..pool.len())
        .map(|di| {
            subjects
                .iter()
                .filter(|s| s.dataset == di)
                .map(|s| s.mass)
                .sum()
        })
        .collect();

    let mut rng = StreamRng::new(seed, "batch", &[epoch]);
    let n_batches =
        (total + spec.subjects_per_batch * spec.trials_per_subject - 1)
            / (spec.subjects_per_batch * spec.trials_per_subject);

    let (c, t) = (pool[0].n_channels(), pool[0].n_samples());
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let di = rng.weighted_index(&dataset_mass);
        let members: Vec<usize> = (0..subjects.len())
            .filter(|&i| subjects[i].dataset == di)
            .collect();
        let member_mass: Vec<f64> = members.iter().map(|&i| subjects[i].mass).collect();

        // subject draws, duplicates merged into bigger chunks
        let mut picked: Vec<(usize, usize)> = Vec::new(); // (subject idx, n requested)
        for _ in 0..spec.subjects_per_batch {
            let s = members[rng.weighted_index(&member_mass)];
            match picked.iter_mut().find(|(i, _)| *i == s) {
                Some((_, n)) => *n += spec.trials_per_subject,
                None => picked.push((s, spec.trials_per_subject)),
            }
        }

        let mut rows: Vec<usize> = Vec::new();
        let mut groups = Vec::with_capacity(picked.len());
        for (si, want) in picked {
            let entry = &subjects[si];
            let chosen = if entry.trials.len() <= want {
                entry.trials.clone()
            } else {
                weighted_sample_without_replacement(
                    &entry.trials,
                    &weights.weight,
                    want,
                    &mut rng,
                )
            };
            let start = rows.len();
            rows.extend(chosen);
            groups.push(start..rows.len());
        }

        // gather rows from the pool
        let mut data = Vec::with_capacity(rows.len() * c * t);
        let mut labels = Vec::with_capacity(rows.len());
        for &g in &rows {
            let (set, local) = locate(pool, g);
            let src = set.data.data();
            data.extend_from_slice(&src[local * c * t..(local + 1) * c * t]);
            labels.push(set.labels[local]);
        }
        batches.push(Batch {
            data: Tensor::new(vec![rows.len(), c, t], data),
            labels,
            groups,
            head: pool[di].dataset_id,
            trial_indices: rows,
        });
    }
    Ok(batches)
}

fn locate(pool: &[TrialSet], global: usize) -> (&TrialSet, usize) {
    let mut offset = 0;
    for set in pool {
        if global < offset + set.n_trials() {
            return (set, global - offset);
        }
        offset += set.n_trials();
    }
    panic!("global trial index {global} out of range");
}

/// Weighted sampling without replacement (exponential-key method); the
/// selected indices keep their stored order.
fn weighted_sample_without_replacement(
    candidates: &[usize],
    weights: &[f64],
    want: usize,
    rng: &mut StreamRng,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&i| {
            let mut u = rng.uniform();
            while u <= 0.0 {
                u = rng.uniform();
            }
            (u.powf(1.0 / weights[i]), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..want].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

// ── synthetic covariate-shift generator ─────────────────────────────

fn default_subject_offset() -> i32 {
    0
}

fn default_dataset_id() -> u32 {
    0
}

/// Recipe for a synthetic multi-subject dataset with per-subject affine
/// covariate shift. Classes are band-limited template mixtures shared
/// across subjects; each subject observes `a * (template + noise) + b`
/// with per-channel `a`, `b` drawn once per subject.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub trials_per_class: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub fs_hz: f64,
    /// Multiplicative corruption range, e.g. [0.5, 3.0]. Use [1, 1] to
    /// disable.
    pub scale_range: [f64; 2],
    /// Additive corruption range, e.g. [-2.0, 2.0]. Use [0, 0] to disable.
    pub offset_range: [f64; 2],
    /// Template-to-noise amplitude ratio; None means noiseless.
    pub snr: Option<f64>,
    #[serde(default = "default_subject_offset")]
    pub subject_id_offset: i32,
    #[serde(default = "default_dataset_id")]
    pub dataset_id: u32,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let positive = self.n_subjects > 0
            && self.n_classes > 0
            && self.trials_per_class > 0
            && self.n_channels > 0
            && self.n_samples > 0;
        if !positive {
            return Err(Error::Parameter {
                op: "synth_generate",
                detail: "counts must all be positive".into(),
            });
        }
        if !(self.fs_hz > 0.0) {
            return Err(Error::Parameter {
                op: "synth_generate",
                detail: format!("fs {} must be positive", self.fs_hz),
            });
        }
        if self.scale_range[0] > self.scale_range[1]
            || self.offset_range[0] > self.offset_range[1]
        {
            return Err(Error::Parameter {
                op: "synth_generate",
                detail: "ranges must be lo <= hi".into(),
            });
        }
        if let Some(snr) = self.snr {
            if !(snr > 0.0) {
                return Err(Error::Parameter {
                    op: "synth_generate",
                    detail: format!("snr {snr} must be positive"),
                });
            }
        }
        Ok(())
    }
}

/// Class templates: three sinusoids per channel inside a class-specific
/// frequency band, RMS-normalized per channel. Bands are disjoint across
/// classes, so classes stay separable by spectral content.
fn class_templates(spec: &SynthSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StreamRng::new(seed, "class-templates", &[]);
    let (c, t) = (spec.n_channels, spec.n_samples);
    let lo = 2.0;
    let hi = 0.35 * spec.fs_hz;
    let band = (hi - lo) / spec.n_classes as f64;
    let mut templates = Vec::with_capacity(spec.n_classes);
    for class in 0..spec.n_classes {
        let f_lo = lo + class as f64 * band;
        let mut tpl = vec![0.0; c * t];
        for ch in 0..c {
            let mut freqs = [0.0; 3];
            let mut phases = [0.0; 3];
            for j in 0..3 {
                freqs[j] = rng.uniform_in(f_lo, f_lo + band);
                phases[j] = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
            }
            for ti in 0..t {
                let time = ti as f64 / spec.fs_hz;
                let mut v = 0.0;
                for j in 0..3 {
                    v += (2.0 * std::f64::consts::PI * freqs[j] * time + phases[j]).sin();
                }
                tpl[ch * t + ti] = v;
            }
            let row = &mut tpl[ch * t..(ch + 1) * t];
            let rms = (row.iter().map(|v| v * v).sum::<f64>() / t as f64).sqrt();
            if rms > 0.0 {
                for v in row.iter_mut() {
                    *v /= rms;
                }
            }
        }
        templates.push(tpl);
    }
    templates
}

/// Deterministic synthetic dataset. Values are quantized to f32 so the
/// in-memory set round-trips bitwise through the EEGT container.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<TrialSet> {
    spec.validate()?;
    let templates = class_templates(spec, seed);
    let (c, t) = (spec.n_channels, spec.n_samples);
    let trials_per_subject = spec.n_classes * spec.trials_per_class;
    let n = spec.n_subjects * trials_per_subject;

    let mut data = Vec::with_capacity(n * c * t);
    let mut labels = Vec::with_capacity(n);
    let mut subject_ids = Vec::with_capacity(n);

    for s in 0..spec.n_subjects {
        let sid = spec.subject_id_offset + s as i32;
        let mut label_rng = StreamRng::new(seed, "labels", &[sid as u64]);
        let mut noise_rng = StreamRng::new(seed, "noise", &[sid as u64]);
        let mut affine_rng = StreamRng::new(seed, "affine", &[sid as u64]);

        let mut scale = Vec::with_capacity(c);
        let mut offset = Vec::with_capacity(c);
        for _ in 0..c {
            scale.push(affine_rng.uniform_in(spec.scale_range[0], spec.scale_range[1]));
            offset.push(affine_rng.uniform_in(spec.offset_range[0], spec.offset_range[1]));
        }

        let mut order: Vec<usize> = (0..trials_per_subject)
            .map(|i| i % spec.n_classes)
            .collect();
        label_rng.shuffle(&mut order);

        for &class in &order {
            let tpl = &templates[class];
            for ch in 0..c {
                for ti in 0..t {
                    let mut v = tpl[ch * t + ti];
                    if let Some(snr) = spec.snr {
                        v += noise_rng.normal() / snr;
                    }
                    v = scale[ch] * v + offset[ch];
                    data.push(v as f32 as f64);
                }
            }
            labels.push(class as i32);
            subject_ids.push(sid);
        }
    }

    let set = TrialSet {
        data: Tensor::new(vec![n, c, t], data),
        labels,
        subject_ids,
        dataset_id: spec.dataset_id,
        fs_hz: spec.fs_hz,
        n_classes: spec.n_classes as u32,
        channel_names: (0..c).map(|i| format!("ch{i:02}")).collect(),
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests;
