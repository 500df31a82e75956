mod oracles;

use oracles::{confusion_oracle, coverage_oracle, tiny_config};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use semvae_core::latent::{apply_edits, generate_part, interpolate_part, perturb_part, Edit, EditPlan, ClassRef};
use semvae_core::mask::{
    compute_class_weights, compute_dataset_stats, compute_label_stats, decompose_partwise, ingest_partwise,
    labels_from_color, one_hot_decode, one_hot_encode, render_color, CoverageAccumulator,
};
use semvae_core::metrics::dataset_metrics;
use semvae_core::serialize::{load_params, params_to_bytes};
use semvae_core::{ClassEmbeddings, ClassPalette, LabelMap, MaskVae};

fn label_map() -> impl Strategy<Value = LabelMap> {
    (1usize..=3, 1usize..=2, 2usize..=9).prop_flat_map(|(hb, wb, c)| {
        let (h, w) = (16 * hb, 16 * wb);
        proptest::collection::vec(0..c as u8, h * w).prop_map(move |l| LabelMap::new(h, w, c, l).unwrap())
    })
}

fn maps_of(c: usize, n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<LabelMap>> {
    proptest::collection::vec(proptest::collection::vec(0..c as u8, 256), n)
        .prop_map(move |v| v.into_iter().map(|l| LabelMap::new(16, 16, c, l).unwrap()).collect())
}

fn codes(c: usize, d: usize) -> impl Strategy<Value = ClassEmbeddings<f64>> {
    proptest::collection::vec(-3.0f64..3.0, c * d).prop_map(move |v| ClassEmbeddings::new(c, d, v).unwrap())
}

fn other_rows_equal(a: &ClassEmbeddings<f64>, b: &ClassEmbeddings<f64>, edited: &[usize]) -> bool {
    (0..a.class_count).filter(|k| !edited.contains(k)).all(|k| a.row(k) == b.row(k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_hot_round_trip(labels in label_map()) {
        let mask = one_hot_encode(&labels).unwrap();
        let plane = labels.pixel_count();
        for p in 0..plane {
            let on: u32 = (0..labels.class_count()).map(|c| mask.channel(c)[p] as u32).sum();
            prop_assert_eq!(on, 1);
        }
        prop_assert_eq!(&mask.to_labels(), &labels);
        let scalars = mask.to_scalars::<f32>();
        let decoded = one_hot_decode(&scalars, labels.class_count(), labels.height(), labels.width()).unwrap();
        prop_assert_eq!(&decoded, &labels);
    }

    #[test]
    fn color_render_round_trip(labels in label_map()) {
        let palette = ClassPalette::celebamask_hq();
        let img = render_color(&labels, &palette).unwrap();
        let back = labels_from_color(&img, &palette).unwrap().with_class_count(labels.class_count()).unwrap();
        prop_assert_eq!(back, labels);
    }

    #[test]
    fn weights_complement_sums_to_one(maps in maps_of(5, 1..=6)) {
        let stats = compute_label_stats(&maps).unwrap();
        let oracle = coverage_oracle(&maps, 5);
        for (a, b) in stats.per_class_mean_coverage.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let w = compute_class_weights(&stats);
        let s: f64 = w.w.iter().map(|v| 1.0 - v).sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(w.w.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn coverage_is_order_and_shard_invariant(maps in maps_of(4, 2..=8), split in 1usize..7) {
        let split = split.min(maps.len() - 1);
        let whole = compute_label_stats(&maps).unwrap();
        let masks: Vec<_> = maps.iter().rev().map(|m| one_hot_encode(m).unwrap()).collect();
        prop_assert_eq!(&compute_dataset_stats(&masks).unwrap(), &whole);
        let mut a = CoverageAccumulator::new();
        let mut b = CoverageAccumulator::new();
        maps[..split].iter().for_each(|m| a.add_labels(m).unwrap());
        maps[split..].iter().for_each(|m| b.add_labels(m).unwrap());
        b.merge(&a).unwrap();
        prop_assert_eq!(b.finish().unwrap(), whole);
    }

    #[test]
    fn metrics_match_confusion_matrix(gts in maps_of(4, 1..=4), seed in any::<u64>()) {
        let preds: Vec<LabelMap> = gts.iter().enumerate()
            .map(|(i, _)| oracles::random_labels(seed.wrapping_add(i as u64), 16, 16, 4))
            .collect();
        let pairs: Vec<(&LabelMap, &LabelMap)> = preds.iter().zip(&gts).collect();
        let got = dataset_metrics(pairs.iter().copied(), 4).unwrap();
        let want = confusion_oracle(&pairs, 4);
        prop_assert_eq!(got.pixel_accuracy, want.accuracy);
        prop_assert_eq!(&got.per_class_iou, &want.iou);
        prop_assert!((got.mean_iou - want.miou).abs() < 1e-12);
    }

    #[test]
    fn part_decomposition_is_idempotent(labels in label_map()) {
        let palette = ClassPalette::celebamask_hq();
        let labels = labels.with_class_count(palette.len()).unwrap();
        let mask = one_hot_encode(&labels).unwrap();
        let parts = decompose_partwise(&mask, &palette).unwrap();
        prop_assume!(!parts.is_empty());
        let again = ingest_partwise(&parts, &palette).unwrap();
        prop_assert_eq!(&again, &mask);
        let parts2 = decompose_partwise(&again, &palette).unwrap();
        prop_assert_eq!(ingest_partwise(&parts2, &palette).unwrap(), again);
    }

    #[test]
    fn row_edits_touch_only_their_row(z in codes(5, 8), t in codes(5, 8), class in 0usize..5, seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = generate_part(&z, class, None, &mut rng).unwrap();
        let p = perturb_part(&z, class, 0.7, &mut rng).unwrap();
        let i = interpolate_part(&z, &t, class, alpha).unwrap();
        for out in [&g, &p, &i] {
            prop_assert!(other_rows_equal(&z, out, &[class]));
        }
        let truncated = generate_part(&z, class, Some(0.5), &mut rng).unwrap();
        prop_assert!(truncated.row(class).iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn edits_on_distinct_classes_commute(z in codes(6, 4), a in 0usize..6, b in 0usize..6, seed in any::<u64>()) {
        prop_assume!(a != b);
        let palette = ClassPalette::toy(6).unwrap();
        let ea = Edit::generate(ClassRef::Index(a), seed);
        let eb = Edit::perturb(ClassRef::Index(b), 0.5, seed ^ 1);
        let no_targets = &mut |_: Option<&str>| -> semvae_core::Result<ClassEmbeddings<f64>> { unreachable!() };
        let ab = EditPlan::new(vec![ea.clone(), eb.clone()]).resolve(&palette).unwrap();
        let ba = EditPlan::new(vec![eb, ea]).resolve(&palette).unwrap();
        let x = apply_edits(&z, &ab, no_targets).unwrap();
        let y = apply_edits(&z, &ba, no_targets).unwrap();
        prop_assert_eq!(&x, &y);
        prop_assert!(other_rows_equal(&z, &x, &[a, b]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn parameters_survive_byte_round_trip(a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        let src = MaskVae::<f32>::new(tiny_config(3), a).unwrap();
        let mut dst = MaskVae::<f32>::new(tiny_config(3), b).unwrap();
        load_params(&mut dst, &params_to_bytes(&src)).unwrap();
        prop_assert_eq!(dst, src);
    }
}
