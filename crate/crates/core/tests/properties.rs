use mipcls::augment::{augment, hflip, AppliedTransform, AugmentPolicy, DropoutPolicy};
use mipcls::classhead::{class_weights, softmax, train_head, TrainConfig, TrainingSet};
use mipcls::evalkit::{
    confusion, ensemble, evaluate, roc_auc, sens_at_spec, spec_at_sens, stratified_kfold, Prediction,
};
use mipcls::geometry::{crop_or_pad, reorient_canonical, resample, split_lr, Interp};
use mipcls::mipbuild::{apply_mask, denormalize_stack, normalize_stack};
use mipcls::tensorio::{decode_blob, encode_blob, BlobMeta, TensorBlob};
use mipcls::volume::{apply, invert, Affine, IDENTITY};
use mipcls::{LesionClass, MipStack, NormConstants, Side, Volume};
use proptest::prelude::*;

fn volume_strategy(max: usize) -> impl Strategy<Value = Volume> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(nx, ny, nz)| {
        prop::collection::vec(-50.0f32..50.0, nx * ny * nz)
            .prop_map(move |d| Volume::with_spacing([nx, ny, nz], [0.8, 1.1, 2.5], d).unwrap())
    })
}

/// An axis permutation with flips, scaled by per-axis spacing.
fn oblique_affine(perm: [usize; 3], flips: [bool; 3], spacing: [f64; 3]) -> Affine {
    let mut a = IDENTITY;
    for (voxel_axis, &world_axis) in perm.iter().enumerate() {
        a[world_axis][voxel_axis] = if flips[voxel_axis] { -spacing[voxel_axis] } else { spacing[voxel_axis] };
        a[world_axis][3] = 7.0 * world_axis as f64 - 3.0;
    }
    a
}

fn perm_strategy() -> impl Strategy<Value = [usize; 3]> {
    Just(vec![0usize, 1, 2]).prop_shuffle().prop_map(|v| [v[0], v[1], v[2]])
}

fn stack_strategy() -> impl Strategy<Value = MipStack> {
    (2usize..24, 2usize..24).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..10.0, 4 * h * w).prop_map(move |d| MipStack::new(h, w, d, Side::Left).unwrap())
    })
}

fn class() -> impl Strategy<Value = LesionClass> {
    (0usize..3).prop_map(|i| LesionClass::from_index(i).unwrap())
}

fn simplex() -> impl Strategy<Value = [f64; 3]> {
    (0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0).prop_map(|(a, b, c)| {
        let s = a + b + c;
        [a / s, b / s, c / s]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reorientation_keeps_world_positions(
        v in volume_strategy(6),
        perm in perm_strategy(),
        flips in prop::array::uniform3(any::<bool>()),
    ) {
        let d = v.dims();
        let v = Volume::new(d, v.spacing(), oblique_affine(perm, flips, v.spacing()), v.data().to_vec()).unwrap();
        let r = reorient_canonical(&v).unwrap();
        prop_assert_eq!(r.orientation(), "RAS");
        prop_assert_eq!(&reorient_canonical(&r).unwrap(), &r);
        let inv = invert(v.affine()).unwrap();
        let [rx, ry, rz] = r.dims();
        for z in 0..rz {
            for y in 0..ry {
                for x in 0..rx {
                    let w = apply(r.affine(), [x as f64, y as f64, z as f64]);
                    let src = apply(&inv, w).map(|c| c.round() as usize);
                    prop_assert_eq!(r.get(x, y, z), v.get(src[0], src[1], src[2]));
                }
            }
        }
    }

    #[test]
    fn resampling_respects_value_bounds(v in volume_strategy(6), t in prop::array::uniform3(0.3f64..4.0)) {
        let (lo, hi) = v.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let lin = resample(&v, t, Interp::Trilinear).unwrap();
        prop_assert!(lin.data().iter().all(|&x| x >= lo - 1e-4 && x <= hi + 1e-4));
        let near = resample(&v, t, Interp::Nearest).unwrap();
        prop_assert!(near.data().iter().all(|x| v.data().contains(x)));
    }

    #[test]
    fn pad_then_crop_is_identity(v in volume_strategy(7), extra in prop::array::uniform3(0usize..5)) {
        let d = v.dims();
        let big = [d[0] + extra[0], d[1] + extra[1], d[2] + extra[2]];
        let padded = crop_or_pad(&v, big, 0.0).unwrap();
        prop_assert_eq!(padded.dims(), big);
        let back = crop_or_pad(&padded, d, 0.0).unwrap();
        prop_assert_eq!(back.data(), v.data());
    }

    #[test]
    fn halves_partition_the_width(v in volume_strategy(8)) {
        prop_assume!(v.dims()[0] >= 2);
        let (low, high) = split_lr(&v).unwrap();
        let [nx, ny, nz] = v.dims();
        prop_assert_eq!(low.dims()[0], nx / 2);
        prop_assert_eq!(low.dims()[0] + high.dims()[0], nx);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let got = if x < nx / 2 { low.get(x, y, z) } else { high.get(x - nx / 2, y, z) };
                    prop_assert_eq!(got, v.get(x, y, z));
                }
            }
        }
    }

    #[test]
    fn masking_is_idempotent(v in volume_strategy(6), seed in any::<u64>()) {
        let mask: Vec<f32> = (0..v.len()).map(|i| ((seed >> (i % 64)) & 1) as f32).collect();
        let mask = v.with_data(mask).unwrap();
        let once = apply_mask(&v, &mask).unwrap();
        prop_assert_eq!(&apply_mask(&once, &mask).unwrap(), &once);
    }

    #[test]
    fn normalization_inverts(m in stack_strategy()) {
        let n = normalize_stack(&m, &NormConstants::default()).unwrap();
        let back = denormalize_stack(&n).unwrap();
        for c in 0..4 {
            let ch = m.channel(c);
            let (lo, hi) = ch.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let range = (hi - lo).max(f32::MIN_POSITIVE);
            for (a, b) in back.channel(c).iter().zip(ch) {
                prop_assert!((a - b).abs() <= 1e-5 * range);
            }
        }
    }

    #[test]
    fn geometric_augmentation_keeps_channels_together(m in stack_strategy(), seed in any::<u64>()) {
        // identical channels stay identical when only geometry changes
        let plane = m.channel(0).to_vec();
        let mut same = m.clone();
        for c in 1..4 {
            same.channel_mut(c).copy_from_slice(&plane);
        }
        let mut policy = AugmentPolicy::none();
        policy.hflip_p = 0.5;
        policy.vflip_p = 0.5;
        policy.rotate.p = 1.0;
        policy.rotate.max_degrees = 15.0;
        policy.affine.p = 1.0;
        policy.affine.scale = [0.9, 1.1];
        policy.affine.max_shear_degrees = 10.0;
        policy.affine.max_translate = 0.05;
        let (out, _) = augment(&same, seed, &policy);
        let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        for c in 1..4 {
            prop_assert_eq!(out.channel(c), out.channel(0));
        }
        prop_assert!(out.channels.iter().all(|&x| x >= lo - 1e-4 && x <= hi + 1e-4));
        prop_assert_eq!(augment(&same, seed, &policy), augment(&same, seed, &policy));
    }

    #[test]
    fn dropout_only_touches_its_holes(m in stack_strategy(), seed in any::<u64>()) {
        let m = normalize_stack(&m, &NormConstants::default()).unwrap();
        let mut policy = AugmentPolicy::none();
        policy.coarse_dropout = DropoutPolicy { p: 1.0, max_holes: 3, max_size: 4 };
        let (out, applied) = augment(&m, seed, &policy);
        let holes = match applied.as_slice() {
            [AppliedTransform::CoarseDropout { holes }] => holes.clone(),
            other => return Err(TestCaseError::fail(format!("{other:?}"))),
        };
        prop_assert!(!holes.is_empty() && holes.len() <= 3);
        for c in 0..4 {
            for y in 0..m.height {
                for x in 0..m.width {
                    let inside = holes.iter().any(|&[r, col, h, w]| y >= r && y < r + h && x >= col && x < col + w);
                    let i = c * m.plane_len() + y * m.width + x;
                    if inside {
                        prop_assert_eq!(out.channels[i], m.fill_value(c));
                    } else {
                        prop_assert_eq!(out.channels[i], m.channels[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn double_flip_is_identity(m in stack_strategy()) {
        let mut f = m.clone();
        hflip(&mut f);
        hflip(&mut f);
        prop_assert_eq!(f, m);
    }

    #[test]
    fn class_weight_invariants(counts in prop::array::uniform3(1usize..100_000)) {
        let w = class_weights(counts).unwrap().weights;
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in 0..3 {
            for b in 0..3 {
                if counts[a] < counts[b] {
                    prop_assert!(w[a] > w[b]);
                }
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::array::uniform3(-700.0f64..700.0)) {
        let p = softmax(z);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 4..80),
    ) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let s: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 20.0).collect();
        let t: Vec<f64> = s.iter().map(|&x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&s, &labels).unwrap(), roc_auc(&t, &labels).unwrap());
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((roc_auc(&s, &labels).unwrap() + roc_auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
        // stricter floors never help
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for floor in [0.0, 0.5, 0.8, 0.9, 0.95, 1.0] {
            let cur = (sens_at_spec(&s, &labels, floor).unwrap(), spec_at_sens(&s, &labels, floor).unwrap());
            prop_assert!(cur.0 <= prev.0 && cur.1 <= prev.1);
            prev = cur;
        }
    }

    #[test]
    fn confusion_trace_is_accuracy(rows in prop::collection::vec((simplex(), class()), 6..60)) {
        let probs: Vec<[f64; 3]> = rows.iter().map(|r| r.0).collect();
        let truths: Vec<LesionClass> = rows.iter().map(|r| r.1).collect();
        prop_assume!(truths.contains(&LesionClass::Malignant) && truths.iter().any(|&t| t != LesionClass::Malignant));
        let cm = confusion(&probs, &truths);
        let total: usize = cm.iter().flatten().sum();
        prop_assert_eq!(total, rows.len());
        let report = evaluate(&probs, &truths).unwrap();
        let trace = (0..3).map(|i| cm[i][i]).sum::<usize>() as f64;
        prop_assert!((report.accuracy - trace / total as f64).abs() < 1e-15);
    }

    #[test]
    fn ensembling_commutes(members in prop::collection::vec(simplex(), 1..6), seed in any::<u64>()) {
        let preds: Vec<Prediction> = members
            .iter()
            .enumerate()
            .map(|(i, &probs)| Prediction { patient_id: "P".into(), side: Side::Left, probs, model_id: format!("m{i}") })
            .collect();
        let mut shuffled = preds.clone();
        let k = shuffled.len();
        shuffled.rotate_left((seed as usize) % k);
        let a = ensemble(&preds).unwrap();
        let b = ensemble(&shuffled).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a[0].probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blob_round_trip(dims in prop::collection::vec(1u32..6, 1..4), seed in any::<u32>()) {
        let n: u32 = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| (i ^ seed) as f32 * 0.25).collect();
        let blob = TensorBlob::f32(dims, data).unwrap().with_meta(BlobMeta::default());
        let mut back = decode_blob(&encode_blob(&blob).unwrap()).unwrap();
        back.meta = BlobMeta::default();
        prop_assert_eq!(back, blob);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scaling_weights_and_dividing_lr_gives_the_same_trajectory(
        feats in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 5), 6..20),
        scale in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let labels: Vec<LesionClass> = (0..feats.len()).map(|i| LesionClass::from_index(i % 3).unwrap()).collect();
        let data = TrainingSet::new(feats, labels).unwrap();
        let cw = class_weights(data.class_counts()).unwrap();
        let cfg = TrainConfig { epochs: 12, batch: 4, lr_max: 0.05, warmup_epochs: 2, seed, ..TrainConfig::default() };
        let base = train_head(&data, &cfg, &cw).unwrap();
        let scaled_cfg = TrainConfig { lr_max: cfg.lr_max / scale, ..cfg };
        let scaled = train_head(&data, &scaled_cfg, &cw.scaled(scale)).unwrap();
        for (a, b) in base.params.weights.iter().zip(&scaled.params.weights) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} vs {}", a, b);
        }
    }
}

#[test]
fn random_fold_sets_are_balanced_partitions() {
    let mut state = 1u64;
    let mut next = || {
        state = mipcls::rng::splitmix64(state);
        state
    };
    for _ in 0..500 {
        let k = 2 + (next() % 5) as usize;
        let n = k + (next() % 50) as usize;
        let patients: Vec<(String, LesionClass)> =
            (0..n).map(|i| (format!("id{i}"), LesionClass::from_index((next() % 3) as usize).unwrap())).collect();
        let plan = stratified_kfold(&patients, k, next()).unwrap();
        plan.validate().unwrap();
        assert_eq!(plan.folds.len(), n);
    }
}
