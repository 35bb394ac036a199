use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;

use saliq::data::{batches, synthetic, Dataset, Source, Split, PIXELS};
use saliq::model::{count_flops, Architecture, BitConfig, CnnModel, QuantSwitches};
use saliq::rng;
use saliq::saliency::{degradation_curve, DegradeOptions, RemovalPlan};
use saliq::train::{self, evaluate, SaliencyTarget, SgtConfig, TrainMode};

fn indexed(n: usize) -> Dataset {
    // pixels 0 and 1 carry the sample index in base 256
    let mut pixels = vec![0u8; n * PIXELS];
    for i in 0..n {
        pixels[i * PIXELS] = (i % 256) as u8;
        pixels[i * PIXELS + 1] = (i / 256) as u8;
    }
    let labels = (0..n).map(|i| (i % 10) as u8).collect();
    Dataset::from_raw(&pixels, labels, Split::Train, Source::Mnist).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_epoch_visits_each_sample_once(n in 1usize..300, bs in 1usize..70, seed in any::<u64>(), epoch in 0u64..4) {
        let set = indexed(n);
        let mut seen = Vec::new();
        for (x, y) in batches(&set, bs, seed, epoch) {
            prop_assert!(y.len() <= bs);
            for (row, &label) in x.data().chunks(PIXELS).zip(&y) {
                let i = (row[0] * 255.0).round() as usize + 256 * (row[1] * 255.0).round() as usize;
                prop_assert_eq!(label, i % 10);
                seen.push(i);
            }
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn removal_sets_are_nested(seed in any::<u64>(), image in 0usize..10_000, a in 0usize..=64, b in 0usize..=64) {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut r = rng::stream(seed, 4);
        let sal: Vec<f32> = (0..64).map(|_| r.gen_range(-2i32..3) as f32).collect();
        let row: Vec<f32> = (0..64).map(|i| 5.0 + i as f32).collect();
        let plan = RemovalPlan::new(&sal, seed, image);
        prop_assert_eq!(&plan, &RemovalPlan::new(&sal, seed, image));
        let removed = |count: usize| {
            let mut out = row.clone();
            plan.apply(&mut out, count);
            out
        };
        let (small, large) = (removed(lo), removed(hi));
        let changed = |v: &[f32]| -> BTreeSet<usize> { (0..64).filter(|&i| v[i] != row[i]).collect() };
        let (s, l) = (changed(&small), changed(&large));
        prop_assert_eq!(s.len(), lo);
        prop_assert_eq!(l.len(), hi);
        prop_assert!(s.is_subset(&l));
        for &i in &s {
            prop_assert_eq!(small[i], large[i]);
        }
        for &i in &l {
            prop_assert!((0.0..1.0).contains(&large[i]));
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let model = CnnModel::<f32>::new(Architecture::STANDARD, BitConfig::quantized(4, 2).unwrap(), &mut rng::stream(9, rng::INIT));
    let (x, _) = synthetic::dataset(24, 1, Split::Test).gather(&(0..24).collect::<Vec<_>>());
    let a = model.logits(&x).unwrap();
    let b = model.clone().logits(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn flops_follow_the_scaling_law() {
    let arch = Architecture::STANDARD;
    let c1 = (28 * 28 * 32 * 9) as f64;
    let c2 = (28 * 28 * 64 * 9 * 32) as f64;
    let f = (28 * 28 * 64 * 128 + 128 * 10) as f64;
    for bits in BitConfig::all_presets() {
        let b = |l: Option<saliq::quant::BitWidth>| l.map_or(32.0, |w| w.get() as f64);
        let law = f + c1 * b(bits.layer1) / 32.0 + c2 * b(bits.layer2) / 32.0;
        assert_eq!(count_flops(&arch, bits).total, law, "{bits:?}");
    }
    let t = |a, b| count_flops(&arch, BitConfig::quantized(a, b).unwrap()).total;
    assert_eq!(t(4, 2) - t(2, 2), 14_112.0);
}

/// A model trained with 16-bit fake quantization classifies its train and
/// test images like the same network with both quantizers switched off.
#[test]
fn sixteen_bit_training_tracks_unquantized() {
    let train_set = synthetic::dataset(1536, 21, Split::Train);
    let test_set = synthetic::dataset(1000, 22, Split::Test);
    let bits = BitConfig::quantized(16, 16).unwrap();
    let mut cfg = SgtConfig::defaults_for(Source::Mnist, bits);
    cfg.epochs = 1;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    cfg.mode = TrainMode::Plain;
    let mut quantized = CnnModel::<f32>::new(Architecture::STANDARD, bits, &mut rng::stream(4, rng::INIT));
    train::train(&mut quantized, &train_set, &test_set.clone().truncate(0), &cfg, |_| {}).unwrap();
    let mut plain = quantized.clone();
    plain.switches = QuantSwitches {
        weights: false,
        activations: false,
    };
    for set in [&train_set, &test_set] {
        let (q, p) = (evaluate(&quantized, set).unwrap(), evaluate(&plain, set).unwrap());
        assert!(p > 0.3, "run too short to be meaningful: {p}");
        assert!((q - p).abs() <= 0.002, "{q} vs {p}");
    }
}

#[test]
fn degradation_starts_at_test_accuracy_and_is_reproducible() {
    // 520 images span a full and a partial evaluation chunk
    let set = synthetic::dataset(520, 31, Split::Test);
    let model = CnnModel::<f32>::new(Architecture::STANDARD, BitConfig::quantized(4, 4).unwrap(), &mut rng::stream(2, rng::INIT));
    let opts = DegradeOptions {
        seed: 5,
        target: SaliencyTarget::True,
        model_id: "m".into(),
    };
    let fractions = [0.0, 0.5, 1.0];
    let curve = degradation_curve(&model, &set, &fractions, &opts).unwrap();
    assert_eq!(curve.points[0].1, evaluate(&model, &set).unwrap());
    let small = set.clone().truncate(40);
    let a = degradation_curve(&model, &small, &fractions, &opts).unwrap();
    let b = degradation_curve(&model, &small, &fractions, &opts).unwrap();
    assert_eq!(a, b);
}
