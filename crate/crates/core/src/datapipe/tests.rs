use proptest::prelude::*;

use super::*;
use crate::align::{compute_stats, standardize, StatAlignLayer};
use crate::testsupport::assert_close;

fn random_set(
    n_subjects: usize,
    trials_per_subject: usize,
    c: usize,
    t: usize,
    seed: u64,
) -> TrialSet {
    let mut rng = StreamRng::new(seed, "set", &[]);
    let n = n_subjects * trials_per_subject;
    let data: Vec<f64> = (0..n * c * t)
        .map(|_| rng.uniform_in(-1.0, 1.0) as f32 as f64)
        .collect();
    TrialSet {
        data: Tensor::new(vec![n, c, t], data),
        labels: (0..n).map(|i| (i % 3) as i32).collect(),
        subject_ids: (0..n).map(|i| (i / trials_per_subject) as i32).collect(),
        dataset_id: 0,
        fs_hz: 160.0,
        n_classes: 3,
        channel_names: (0..c).map(|i| format!("ch{i:02}")).collect(),
    }
}

// ── EEGT container ──────────────────────────────────────────────────

#[test]
fn eegt_round_trip_is_bitwise() {
    let dir = std::env::temp_dir().join("naln-eegt-roundtrip");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("set.eegt");
    let set = random_set(3, 4, 2, 16, 50);
    write_eegt(&set, &path).unwrap();
    let back = read_eegt(&path).unwrap();
    assert_eq!(back.data.to_vec(), set.data.to_vec());
    assert_eq!(back.labels, set.labels);
    assert_eq!(back.subject_ids, set.subject_ids);
    assert_eq!(back.channel_names, set.channel_names);
    assert_eq!(back.fs_hz, set.fs_hz);
    assert_eq!(back.n_classes, set.n_classes);
    assert_eq!(back.dataset_id, set.dataset_id);

    // writing the read-back set reproduces the same bytes
    let path2 = dir.join("set2.eegt");
    write_eegt(&back, &path2).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap()
    );
}

#[test]
fn eegt_truncation_is_a_format_error() {
    let dir = std::env::temp_dir().join("naln-eegt-trunc");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("set.eegt");
    let set = random_set(2, 2, 2, 8, 51);
    write_eegt(&set, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.join("cut.eegt");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    match read_eegt(&cut) {
        Err(crate::Error::Format { offset, .. }) => assert!(offset > 0),
        other => panic!("expected format error, got {other:?}"),
    }

    let garbage = dir.join("bad.eegt");
    std::fs::write(&garbage, b"NOPE0000").unwrap();
    assert!(matches!(
        read_eegt(&garbage),
        Err(crate::Error::Format { offset: 0, .. })
    ));
}

#[test]
fn eegt_empty_set_round_trips() {
    let dir = std::env::temp_dir().join("naln-eegt-empty");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("empty.eegt");
    let set = TrialSet {
        data: Tensor::new(vec![0, 2, 4], vec![]),
        labels: vec![],
        subject_ids: vec![],
        dataset_id: 7,
        fs_hz: 100.0,
        n_classes: 2,
        channel_names: vec!["a".into(), "b".into()],
    };
    write_eegt(&set, &path).unwrap();
    let back = read_eegt(&path).unwrap();
    assert_eq!(back.n_trials(), 0);
    assert_eq!(back.dataset_id, 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn eegt_round_trip_property(seed in 0u64..500, n_subj in 1usize..4, c in 1usize..4, t in 1usize..6) {
        let dir = std::env::temp_dir().join(format!("naln-eegt-prop-{seed}-{n_subj}-{c}-{t}"));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.eegt");
        let set = random_set(n_subj, 2, c, t, seed);
        write_eegt(&set, &path).unwrap();
        let back = read_eegt(&path).unwrap();
        prop_assert_eq!(back.data.to_vec(), set.data.to_vec());
        prop_assert_eq!(back.labels, set.labels);
        std::fs::remove_dir_all(&dir).ok();
    }
}

// ── folds ───────────────────────────────────────────────────────────

#[test]
fn loso_twice_on_five_subjects_gives_ten_folds() {
    let subjects = vec![10, 11, 12, 13, 14];
    let plan = make_folds_loso_repeated(&subjects, 2).unwrap();
    let folds = match &plan {
        FoldPlan::BySubject(f) => f,
        _ => panic!("expected subject folds"),
    };
    assert_eq!(folds.len(), 10);
    for s in &subjects {
        let held_out = folds.iter().filter(|f| f.val == vec![*s]).count();
        assert_eq!(held_out, 2, "subject {s} held out {held_out} times");
    }
    for f in folds {
        assert!(f.train.iter().all(|s| !f.val.contains(s)));
        let mut union: Vec<i32> = f.train.iter().chain(&f.val).copied().collect();
        union.sort_unstable();
        assert_eq!(union, subjects);
    }
}

#[test]
fn loso_edge_cases() {
    let plan = make_folds_loso_repeated(&[1, 2], 1).unwrap();
    assert_eq!(plan.len(), 2);
    assert!(make_folds_loso_repeated(&[1], 2).is_err());
    assert!(make_folds_loso_repeated(&[1, 2], 0).is_err());
}

#[test]
fn unstratified_folds_partition_evenly() {
    let plan = make_folds_unstratified(100, 10, 9).unwrap();
    let folds = match &plan {
        FoldPlan::ByIndex(f) => f,
        _ => panic!("expected index folds"),
    };
    assert_eq!(folds.len(), 10);
    let mut seen = vec![false; 100];
    for f in folds {
        assert_eq!(f.val.len(), 10);
        assert_eq!(f.train.len(), 90);
        for &i in &f.val {
            assert!(!seen[i], "index {i} in two folds");
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));

    // singleton folds
    let plan = make_folds_unstratified(10, 10, 9).unwrap();
    if let FoldPlan::ByIndex(f) = &plan {
        assert!(f.iter().all(|f| f.val.len() == 1));
    }

    // determinism and uneven sizes
    let a = make_folds_unstratified(23, 4, 3).unwrap();
    let b = make_folds_unstratified(23, 4, 3).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    if let FoldPlan::ByIndex(f) = &a {
        let sizes: Vec<usize> = f.iter().map(|f| f.val.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().all(|&s| s == 5 || s == 6));
    }
    assert!(make_folds_unstratified(5, 6, 0).is_err());
}

// ── oversampling ────────────────────────────────────────────────────

#[test]
fn oversample_weights_ratio() {
    let w = oversample_weights(900, 100).unwrap();
    assert_eq!(w.weight.len(), 1000);
    assert!(w.weight[..900].iter().all(|&x| x == 1.0));
    assert!(w.weight[900..].iter().all(|&x| x == 9.0));

    let w = oversample_weights(0, 50).unwrap();
    assert!(w.weight.iter().all(|&x| x == 1.0));

    assert!(oversample_weights(10, 0).is_err());
}

#[test]
fn oversample_total_mass_matches() {
    let w = oversample_weights(700, 300).unwrap();
    let source: f64 = w.weight[..700].iter().sum();
    let calib: f64 = w.weight[700..].iter().sum();
    assert_close(source, calib, 1e-9, "equal mass");
}

#[test]
fn oversample_monte_carlo_draw_fraction() {
    // sample 10^5 draws proportional to weight; calibration fraction
    // should be 0.5 when masses are equal
    let w = oversample_weights(900, 100).unwrap();
    let mut rng = StreamRng::new(52, "oversample-mc", &[]);
    let mut calib_draws = 0usize;
    let n = 100_000;
    for _ in 0..n {
        if rng.weighted_index(&w.weight) >= 900 {
            calib_draws += 1;
        }
    }
    let frac = calib_draws as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.01, "calibration fraction {frac}");
}

// ── class weights ───────────────────────────────────────────────────

#[test]
fn class_weights_merge_example() {
    let w = class_weights(&[100.0, 100.0, 100.0, 100.0], &[vec![2, 3]]).unwrap();
    // proportional to [1, 1, 0.5, 0.5], normalized to mean 1
    let expected = [4.0 / 3.0, 4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
    for (got, want) in w.iter().zip(expected) {
        assert_close(*got, want, 1e-12, "merged weights");
    }
}

#[test]
fn class_weights_plain_cases() {
    let w = class_weights(&[10.0, 10.0, 10.0], &[]).unwrap();
    assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-12));

    let w = class_weights(&[50.0, 100.0], &[]).unwrap();
    assert_close(w[0], 4.0 / 3.0, 1e-12, "inverse frequency");
    assert_close(w[1], 2.0 / 3.0, 1e-12, "inverse frequency");

    assert!(class_weights(&[1.0, 0.0], &[]).is_err());
    assert!(class_weights(&[1.0, 1.0], &[vec![0, 5]]).is_err());
}

// ── batching ────────────────────────────────────────────────────────

#[test]
fn single_subject_full_batch() {
    let set = random_set(1, 8, 2, 4, 53);
    let weights = SamplerWeights { weight: vec![1.0; 8] };
    let spec = BatchSpec { subjects_per_batch: 1, trials_per_subject: 8 };
    let batches = subject_chunk_batches(&[set], &weights, spec, 1, 0).unwrap();
    assert_eq!(batches.len(), 1);
    assert_eq!(batches[0].data.shape()[0], 8);
    assert_eq!(batches[0].groups, vec![0..8]);
    assert_eq!(batches[0].head, 0);
}

#[test]
fn batches_are_deterministic_in_seed_and_epoch() {
    let set = random_set(4, 6, 2, 4, 54);
    let weights = SamplerWeights { weight: vec![1.0; 24] };
    let spec = BatchSpec { subjects_per_batch: 2, trials_per_subject: 3 };
    let a = subject_chunk_batches(std::slice::from_ref(&set), &weights, spec, 7, 3).unwrap();
    let b = subject_chunk_batches(std::slice::from_ref(&set), &weights, spec, 7, 3).unwrap();
    let c = subject_chunk_batches(std::slice::from_ref(&set), &weights, spec, 7, 4).unwrap();
    let digest = |bs: &[Batch]| -> Vec<Vec<usize>> {
        bs.iter().map(|b| b.trial_indices.clone()).collect()
    };
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c), "different epoch reshuffles");
}

#[test]
fn batches_never_mix_subjects_within_group() {
    let set = random_set(5, 6, 2, 4, 55);
    let weights = SamplerWeights { weight: vec![1.0; 30] };
    let spec = BatchSpec { subjects_per_batch: 3, trials_per_subject: 4 };
    for epoch in 0..20 {
        let batches =
            subject_chunk_batches(std::slice::from_ref(&set), &weights, spec, 11, epoch).unwrap();
        for b in &batches {
            for g in &b.groups {
                let sids: Vec<i32> = b.trial_indices[g.clone()]
                    .iter()
                    .map(|&i| set.subject_ids[i])
                    .collect();
                assert!(sids.windows(2).all(|w| w[0] == w[1]), "mixed group {sids:?}");
            }
        }
    }
}

#[test]
fn batch_calibration_frequency_monte_carlo() {
    // source: 8 subjects x 10 trials; calib: 2 subjects x 10 trials,
    // oversampled to equal mass. Expect half the drawn trials to be
    // calibration trials over many batches.
    let source = random_set(8, 10, 1, 2, 56);
    let mut calib = random_set(2, 10, 1, 2, 57);
    for s in calib.subject_ids.iter_mut() {
        *s += 100;
    }
    let weights = oversample_weights(80, 20).unwrap();
    let spec = BatchSpec { subjects_per_batch: 2, trials_per_subject: 5 };
    let pool = [source, calib];
    let mut calib_rows = 0usize;
    let mut total_rows = 0usize;
    for epoch in 0..2500 {
        let batches = subject_chunk_batches(&pool, &weights, spec, 13, epoch).unwrap();
        for b in &batches {
            for &i in &b.trial_indices {
                total_rows += 1;
                if i >= 80 {
                    calib_rows += 1;
                }
            }
        }
    }
    let frac = calib_rows as f64 / total_rows as f64;
    assert!((frac - 0.5).abs() < 0.02, "calibration row fraction {frac} over {total_rows}");
}

// ── synthetic generator ─────────────────────────────────────────────

fn shiftless_spec() -> SynthSpec {
    SynthSpec {
        n_subjects: 4,
        n_classes: 3,
        trials_per_class: 2,
        n_channels: 3,
        n_samples: 64,
        fs_hz: 160.0,
        scale_range: [1.0, 1.0],
        offset_range: [0.0, 0.0],
        snr: None,
        subject_id_offset: 0,
        dataset_id: 0,
    }
}

fn trial_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[test]
fn synth_same_class_correlates_across_subjects_without_shift() {
    let set = synth_generate(&shiftless_spec(), 60).unwrap();
    let (c, t) = (set.n_channels(), set.n_samples());
    let data = set.data.to_vec();
    // find one trial of class 0 for subjects 0 and 1
    let find = |sid: i32| -> usize {
        (0..set.n_trials())
            .find(|&i| set.subject_ids[i] == sid && set.labels[i] == 0)
            .unwrap()
    };
    let (i, j) = (find(0), find(1));
    let a = &data[i * c * t..(i + 1) * c * t];
    let b = &data[j * c * t..(j + 1) * c * t];
    let corr = trial_correlation(a, b);
    assert!(corr > 0.99, "cross-subject same-class correlation {corr}");
}

#[test]
fn synth_shift_separates_means_and_alignment_restores() {
    let mut spec = shiftless_spec();
    spec.scale_range = [0.5, 3.0];
    spec.offset_range = [-2.0, 2.0];
    spec.snr = Some(8.0);
    let set = synth_generate(&spec, 61).unwrap();
    let (c, t) = (set.n_channels(), set.n_samples());

    // per-subject channel means differ
    let mut subject_means = Vec::new();
    for sid in set.subjects() {
        let idx: Vec<usize> = (0..set.n_trials())
            .filter(|&i| set.subject_ids[i] == sid)
            .collect();
        let sub = set.subset(&idx);
        let stats = compute_stats(&sub.data).unwrap();
        subject_means.push(stats.mean[0]);
    }
    let mut max_gap = 0.0f64;
    for a in &subject_means {
        for b in &subject_means {
            max_gap = max_gap.max((a - b).abs());
        }
    }
    assert!(max_gap > 0.5, "max pairwise mean gap {max_gap}");

    // standardize each subject and re-check cross-subject correlation
    let layer = StatAlignLayer::identity(c);
    let mut aligned: Vec<Vec<f64>> = Vec::new();
    for sid in [0, 1] {
        let idx: Vec<usize> = (0..set.n_trials())
            .filter(|&i| set.subject_ids[i] == sid && set.labels[i] == 1)
            .collect();
        let all_of_subject: Vec<usize> = (0..set.n_trials())
            .filter(|&i| set.subject_ids[i] == sid)
            .collect();
        let sub = set.subset(&all_of_subject);
        let stats = compute_stats(&sub.data).unwrap();
        let first = set.subset(&idx[..1]);
        let z = standardize(&first.data, &stats, &layer).unwrap();
        aligned.push(z.to_vec());
        let _ = t;
    }
    let corr = trial_correlation(&aligned[0], &aligned[1]);
    assert!(corr > 0.95, "aligned cross-subject correlation {corr}");
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let spec = shiftless_spec();
    let a = synth_generate(&spec, 62).unwrap();
    let b = synth_generate(&spec, 62).unwrap();
    assert_eq!(a.data.to_vec(), b.data.to_vec());
    assert_eq!(a.labels, b.labels);

    // labels balanced per subject
    for sid in a.subjects() {
        let mut counts = vec![0usize; 3];
        for i in 0..a.n_trials() {
            if a.subject_ids[i] == sid {
                counts[a.labels[i] as usize] += 1;
            }
        }
        assert!(counts.iter().all(|&n| n == 2), "{counts:?}");
    }

    // header arithmetic: 6 subjects x 4 classes x 40 trials = 960
    let big = SynthSpec {
        n_subjects: 6,
        n_classes: 4,
        trials_per_class: 40,
        ..shiftless_spec()
    };
    assert_eq!(synth_generate(&big, 1).unwrap().n_trials(), 960);

    assert!(synth_generate(
        &SynthSpec { n_subjects: 0, ..shiftless_spec() },
        1
    )
    .is_err());
}

#[test]
fn subset_and_subjects_helpers() {
    let set = random_set(3, 4, 2, 4, 63);
    assert_eq!(set.subjects(), vec![0, 1, 2]);
    let sub = set.subset(&[0, 5, 11]);
    assert_eq!(sub.n_trials(), 3);
    assert_eq!(sub.subject_ids, vec![0, 1, 2]);
    assert_eq!(sub.labels, vec![set.labels[0], set.labels[5], set.labels[11]]);
}
