use deepfeat::data::{load_dataset, parse_dataset, save_dataset, synth_generate, Dataset, Manifest, Sample, SynthSpec};
use deepfeat::fusion::{BranchVars, BranchWidths, Dft, DftConfig, HeadConfig, MlpHead};
use deepfeat::learned::{GlobalBranch, GlobalBranchConfig, LocalBranch, LocalBranchConfig};
use deepfeat::nn::ops::{self, Mode};
use deepfeat::nn::{Adam, AdamConfig, Graph, LrSchedule, ParamStore};
use deepfeat::rng::{stream, Stream};
use deepfeat::rocket::{KernelBank, RandomKernel};
use deepfeat::train::{classification_report, cohens_d, stratified_split};
use deepfeat::{DataError, Error, Tensor};
use proptest::prelude::*;

fn finite_series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..max_len)
}

fn small_bank() -> KernelBank {
    KernelBank::with_size(100, 64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(logits in prop::collection::vec(-30.0f64..30.0, 1..12), shift in -100.0f64..100.0) {
        let p = ops::softmax(&Tensor::vector(logits.clone())).unwrap();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let shifted = ops::softmax(&Tensor::vector(logits.iter().map(|v| v + shift).collect())).unwrap();
        prop_assert!(p.max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn focal_without_focusing_is_cross_entropy(logits in prop::collection::vec(-10.0f64..10.0, 2..8), pick in 0usize..8) {
        let p = ops::softmax(&Tensor::vector(logits.clone())).unwrap();
        let t = pick % logits.len();
        let focal = ops::focal_loss(&p, t, 0.0, 1.0).unwrap();
        prop_assert!((focal - (-p.data()[t].ln())).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_standardises(x in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-1);
        let n = x.len();
        let y = ops::layer_norm(&Tensor::vector(x), &Tensor::full(&[n], 1.0), &Tensor::zeros(&[n]), 1e-12).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-6);
        prop_assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn adam_with_zero_gradient_is_identity(values in prop::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..5) {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::vector(values.clone()));
        let mut adam = Adam::new(&store, AdamConfig::default());
        for _ in 0..steps {
            store.zero_grad();
            adam.step(&mut store, 0.1).unwrap();
        }
        let after: Vec<u64> = store.iter().next().unwrap().1.value.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(after, values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn lr_schedule_shape(lr0 in 1e-5f64..1.0, decay_steps in 1u64..500, rate in 0.0f64..3.0, step in 0u64..5000) {
        let s = LrSchedule { lr0, decay_steps, decay_rate: rate };
        prop_assert!(s.lr_at(step + 1) <= s.lr_at(step));
        prop_assert_eq!(s.lr_at(step % decay_steps), lr0);
    }

    #[test]
    fn rocket_features_are_pure_bounded_and_finite(series in finite_series(200)) {
        let bank = small_bank();
        let a = bank.extract(&series).unwrap();
        let b = bank.extract(&series).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.all_finite());
        let mut conv = Vec::new();
        for (k, kernel) in bank.kernels.iter().enumerate() {
            let (max, ppv) = (a.data()[2 * k], a.data()[2 * k + 1]);
            prop_assert!((0.0..=1.0).contains(&ppv));
            kernel.convolve(&series, &mut conv);
            let mean = conv.iter().sum::<f64>() / conv.len() as f64;
            prop_assert!(max >= mean - 1e-12 * mean.abs().max(1.0));
        }
    }

    #[test]
    fn rocket_scaling_is_homogeneous(series in finite_series(100), exp in -3i32..4, c in 0.01f64..100.0) {
        let bank = small_bank();
        let base = bank.extract(&series).unwrap();
        let pow2 = 2f64.powi(exp);
        let scaled = bank.extract(&series.iter().map(|v| v * pow2).collect::<Vec<_>>()).unwrap();
        for k in 0..bank.len() {
            prop_assert_eq!(scaled.data()[2 * k], pow2 * base.data()[2 * k]);
            prop_assert_eq!(scaled.data()[2 * k + 1], base.data()[2 * k + 1]);
        }
        let general = bank.extract(&series.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
        for k in 0..bank.len() {
            let want = c * base.data()[2 * k];
            prop_assert!((general.data()[2 * k] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn learned_widths_ignore_length(len in 1usize..40, seed in 0u64..1000) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(seed, Stream::Init);
        let gb = GlobalBranch::new(&mut store, GlobalBranchConfig::default(), &mut rng).unwrap();
        let lb = LocalBranch::new(&mut store, LocalBranchConfig::default(), &mut rng).unwrap();
        let s: Vec<f64> = (0..len).map(|i| ((i as f64) * 0.37 + seed as f64).sin()).collect();
        let fg = gb.features(&store, &s).unwrap();
        prop_assert_eq!(fg.len(), 128);
        prop_assert!(fg.data().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(lb.features(&store, &s).unwrap().len(), 256);
    }

    #[test]
    fn dft_blocks_are_isolated(seed in 0u64..1000, branch in 0usize..4, delta in -3.0f64..3.0) {
        let widths = BranchWidths { global: Some(5), local: Some(7), rocket: Some(9), llm: Some(4) };
        let cfg = DftConfig { width: 3, rocket_hidden: 6, ln_eps: 1e-5 };
        let mut store = ParamStore::<f64>::new();
        let dft = Dft::new(&mut store, cfg, widths, &mut stream(seed, Stream::Init)).unwrap();
        let dims = [5, 7, 9, 4];
        let inputs: Vec<Tensor<f64>> = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| Tensor::from_vec(&[2, d], (0..2 * d).map(|k| ((k * 7 + i * 3) as f64 + seed as f64).cos()).collect()).unwrap())
            .collect();
        let run = |xs: &[Tensor<f64>]| {
            let mut g = Graph::new(&store);
            let v: Vec<_> = xs.iter().map(|x| g.input(x.clone())).collect();
            let vars = BranchVars { global: Some(v[0]), local: Some(v[1]), rocket: Some(v[2]), llm: Some(v[3]) };
            let y = dft.forward(&mut g, &vars).unwrap();
            g.value(y).clone()
        };
        let base = run(&inputs);
        prop_assert!(base.data().iter().all(|&v| v >= 0.0));
        let mut perturbed = inputs.clone();
        perturbed[branch] = perturbed[branch].map(|v| v + delta);
        let moved = run(&perturbed);
        for r in 0..2 {
            for b in 0..4 {
                if b != branch {
                    prop_assert_eq!(&base.row(r)[b * 3..(b + 1) * 3], &moved.row(r)[b * 3..(b + 1) * 3]);
                }
            }
        }
    }

    #[test]
    fn split_partitions_every_class(counts in prop::collection::vec(2usize..30, 2..6), seed in any::<u64>(), ratio in 0.05f64..0.95) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let s = stratified_split(&labels, counts.len(), ratio, seed).unwrap();
        prop_assert_eq!(&s, &stratified_split(&labels, counts.len(), ratio, seed).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &n) in counts.iter().enumerate() {
            let train = s.train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(train, ((ratio * n as f64).ceil() as usize).min(n));
        }
    }

    #[test]
    fn report_invariants(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
        let (actual, predicted): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = classification_report(&actual, &predicted, 4).unwrap();
        let trace: usize = (0..4).map(|c| r.confusion[c][c]).sum();
        prop_assert_eq!(r.accuracy, trace as f64 / actual.len() as f64);
        for c in 0..4 {
            prop_assert_eq!(r.support()[c], actual.iter().filter(|&&a| a == c).count());
        }
        prop_assert!((0.0..=1.0).contains(&r.macro_f1));
        prop_assert!((0.0..=1.0).contains(&r.accuracy));
    }

    #[test]
    fn balanced_diagonal_f1_equals_accuracy(per_class in 1usize..20, classes in 2usize..6) {
        let actual: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        let r = classification_report(&actual, &actual, classes).unwrap();
        prop_assert_eq!(r.accuracy, 1.0);
        prop_assert_eq!(r.macro_f1, r.accuracy);
    }

    #[test]
    fn cohens_d_is_antisymmetric(a in prop::collection::vec(0.0f64..1.0, 2..10), b in prop::collection::vec(0.0f64..1.0, 2..10)) {
        match (cohens_d(&a, &b), cohens_d(&b, &a)) {
            (Ok(x), Ok(y)) => prop_assert!((x + y).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one direction failed"),
        }
    }

    #[test]
    fn dataset_round_trips_exactly(
        rows in prop::collection::vec((0usize..3, prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 4)), 3..12),
    ) {
        let mut samples: Vec<Sample> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (label, values))| Sample { id: format!("s{i}"), label, values })
            .collect();
        for (c, s) in samples.iter_mut().take(3).enumerate() {
            s.label = c;
        }
        let ds = Dataset { name: "p".into(), classes: vec!["x".into(), "y".into(), "z".into()], length: Some(4), samples };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.samples.len(), ds.samples.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn non_finite_values_are_located(row in 0usize..3, col in 0usize..3, which in 0usize..3) {
        let manifest = Manifest { name: "t".into(), classes: vec!["a".into()], length: Some(3) };
        let mut cells = vec![vec!["1.0".to_string(); 3]; 3];
        cells[row][col] = ["NaN", "inf", "-inf"][which].to_string();
        let mut csv = String::from("id,label,v1,v2,v3\n");
        for (i, r) in cells.iter().enumerate() {
            csv.push_str(&format!("r{i},a,{}\n", r.join(",")));
        }
        match parse_dataset(&manifest, &csv) {
            Err(Error::Data(DataError::NonFinite { row: r, column, .. })) => {
                prop_assert_eq!(r, row + 1);
                prop_assert_eq!(column, col + 3);
            }
            other => prop_assert!(false, "unexpected {other:?}"),
        }
    }
}

#[test]
fn local_blocks_follow_kernel_order() {
    let mut store = ParamStore::<f64>::new();
    let lb = LocalBranch::new(&mut store, LocalBranchConfig::default(), &mut stream(2, Stream::Init)).unwrap();
    let s: Vec<f64> = (0..30).map(|i| (i as f64 * 0.4).sin() + 0.2).collect();
    let base = lb.features(&store, &s).unwrap();
    assert_eq!(lb.stacks.iter().map(|st| st[0].kernel).collect::<Vec<_>>(), [3, 5, 7, 11]);
    for (k, stack) in lb.stacks.iter().enumerate() {
        let mut silenced = store.clone();
        for layer in stack {
            silenced.get_mut(layer.weights).value.fill(0.0);
        }
        let y = lb.features(&silenced, &s).unwrap();
        for b in 0..4 {
            let (old, new) = (&base.data()[b * 64..(b + 1) * 64], &y.data()[b * 64..(b + 1) * 64]);
            if b == k {
                assert!(new.iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(old, new);
            }
        }
    }
}

#[test]
fn head_eval_is_deterministic() {
    let mut store = ParamStore::<f64>::new();
    let head = MlpHead::new(&mut store, HeadConfig::default(), 10, 3, &mut stream(1, Stream::Init)).unwrap();
    let x = Tensor::from_vec(&[2, 10], (0..20).map(|i| (i as f64).sin()).collect()).unwrap();
    let run = |seed: u64| {
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let p = head.forward(&mut g, xv, Mode::Eval, &mut stream(seed, Stream::Dropout)).unwrap();
        g.value(p).clone()
    };
    assert_eq!(run(1), run(2));
    let mut g = Graph::new(&store);
    let xv = g.input(x.clone());
    let p = head.forward(&mut g, xv, Mode::Train, &mut stream(1, Stream::Dropout)).unwrap();
    assert_ne!(g.value(p), &run(1));
}

#[test]
fn synthetic_data_passes_validation_and_is_separable() {
    let ds = synth_generate(&SynthSpec::default(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    let summary = back.describe();
    assert_eq!((summary.length, summary.samples, summary.classes), (Some(128), 200, 4));

    let split = stratified_split(&ds.labels(), 4, 0.7, 100).unwrap();
    let mut centroids = vec![vec![0.0; 128]; 4];
    let mut counts = [0usize; 4];
    for &i in &split.train {
        let s = &ds.samples[i];
        counts[s.label] += 1;
        centroids[s.label].iter_mut().zip(&s.values).for_each(|(c, v)| *c += v);
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let correct = split
        .test
        .iter()
        .filter(|&&i| {
            let s = &ds.samples[i];
            let best = (0..4).min_by(|&a, &b| dist(&s.values, &centroids[a]).total_cmp(&dist(&s.values, &centroids[b]))).unwrap();
            best == s.label
        })
        .count();
    let acc = correct as f64 / split.test.len() as f64;
    assert!(acc > 0.8, "nearest-centroid accuracy {acc}");
}

#[test]
fn single_kernel_matches_brute_force() {
    let kernel = RandomKernel::new([0.3, -0.1, 0.05, 0.2, -0.4, 0.0, 0.1, -0.02, 0.07]);
    let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).cos() * 2.0).collect();
    let mut out = Vec::new();
    kernel.convolve(&x, &mut out);
    let padded: Vec<f64> = std::iter::repeat_n(0.0, 16).chain(x.iter().copied()).chain(std::iter::repeat_n(0.0, 16)).collect();
    let brute: Vec<f64> = (0..padded.len() - 32)
        .map(|t| (0..9).fold(0.0, |acc, j| acc + kernel.weights[j] * padded[t + 4 * j]))
        .collect();
    assert_eq!(out, brute);
}
