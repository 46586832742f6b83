use advforge::tensor::Tape;
use advforge::vision::*;
use proptest::prelude::*;

#[path = "support/reference.rs"]
mod reference;

fn small_faces(seed: u64) -> FaceDataset {
    synth_faces_with(&FaceSynthConfig { classes: 4, side: 16, seed })
}

fn small_arch() -> Vec<Layer> {
    use Layer::*;
    vec![Conv { kernels: 4, size: 3 }, Relu, MaxPool2, Conv { kernels: 6, size: 3 }, Relu, Flatten, Dense { units: 4 }]
}

fn set(model: &mut CnnModel, name: &str, values: &[f32]) {
    let t = model.params.get_mut(name).unwrap();
    assert_eq!(t.numel(), values.len(), "{name}");
    t.data_mut().copy_from_slice(values);
}

#[test]
fn pgm_round_trip_quantizes_to_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    let values: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).chain([-0.5, 1.5]).collect();
    write_pgm(&path, 7, 2, &values).unwrap();
    let img = read_pgm(&path).unwrap();
    assert_eq!((img.width, img.height), (7, 2));
    for (&b, &v) in img.pixels.iter().zip(&values) {
        assert_eq!(b, (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    assert!(write_pgm(&path, 3, 3, &values).is_err());
}

#[test]
fn pgm_header_comments_and_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.pgm");
    let mut bytes = b"P5\n# made by hand\n2 2\n# max\n255\n".to_vec();
    bytes.extend([0u8, 10, 200, 255]);
    std::fs::write(&p, &bytes).unwrap();
    assert_eq!(read_pgm(&p).unwrap().pixels, vec![0, 10, 200, 255]);

    for bad in [&b"P2\n2 2\n255\n0 0 0 0"[..], b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0", b"P5\n2 2\n255\n\0\0", b"P5\n2\n"] {
        std::fs::write(&p, bad).unwrap();
        assert!(matches!(read_pgm(&p), Err(VisionError::Pgm { .. })), "{:?}", String::from_utf8_lossy(bad));
    }
    assert!(matches!(read_pgm(&dir.path().join("missing.pgm")), Err(VisionError::Io { .. })));
}

#[test]
fn faces_written_to_disk_load_back() {
    let ds = synth_faces(3).select(&(0..20).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let files = write_faces(&ds, dir.path(), "face").unwrap();
    assert_eq!(files.len(), 21);
    let back = load_faces(dir.path(), &dir.path().join("manifest.csv")).unwrap();
    assert_eq!(back.labels(), ds.labels());
    // synthetic pixels sit on 8-bit levels, so the round trip is exact
    assert_eq!(back.images(), ds.images());
}

#[test]
fn manifest_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(&dir.path().join("ok.pgm"), 64, 64, &[0.5; 64 * 64]).unwrap();
    write_pgm(&dir.path().join("small.pgm"), 8, 8, &[0.5; 64]).unwrap();
    let m = dir.path().join("m.csv");
    let load = |text: &str| {
        std::fs::write(&m, text).unwrap();
        load_faces(dir.path(), &m)
    };
    assert_eq!(load("filename,label\nok.pgm,3\nok.pgm,39\n").unwrap().len(), 2);
    assert!(matches!(load("ok.pgm,40\n"), Err(VisionError::Label { label: 40, .. })));
    assert!(matches!(load("ok.pgm,-1\n"), Err(VisionError::Label { .. })));
    assert!(matches!(load("ok.pgm,x\n"), Err(VisionError::Manifest(_))));
    assert!(matches!(load("ok.pgm\n"), Err(VisionError::Manifest(_))));
    assert!(matches!(load("small.pgm,1\n"), Err(VisionError::Pgm { .. })));
    assert!(matches!(load("nope.pgm,1\n"), Err(VisionError::Io { .. })));
}

#[test]
fn synthetic_faces_are_deterministic_and_grouped() {
    let a = synth_faces(11);
    assert_eq!(a, synth_faces(11));
    assert_ne!(a.images(), synth_faces(12).images());
    assert_eq!(a.len(), FACE_CLASSES * IMAGES_PER_CLASS);
    assert_eq!(a.side, FACE_SIDE);
    for (i, &l) in a.labels().iter().enumerate() {
        assert_eq!(l, i / IMAGES_PER_CLASS);
    }
    assert!(a.images().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn nearest_centroid_recovers_most_synthetic_labels() {
    let ds = synth_faces(5);
    let p = ds.pixels();
    let centroid = |c: usize| -> Vec<f64> {
        let mut m = vec![0.0; p];
        for i in c * 10..c * 10 + 10 {
            for (a, &v) in m.iter_mut().zip(ds.image(i)) {
                *a += v as f64 / 10.0;
            }
        }
        m
    };
    let cents: Vec<Vec<f64>> = (0..FACE_CLASSES).map(centroid).collect();
    let dist = |a: &[f64], b: &[f32]| a.iter().zip(b).map(|(x, &y)| (x - y as f64).powi(2)).sum::<f64>().sqrt();
    // measured 358 of 400 for this seed
    let mut hits = 0;
    for i in 0..ds.len() {
        let best = (0..FACE_CLASSES)
            .min_by(|&a, &b| dist(&cents[a], ds.image(i)).total_cmp(&dist(&cents[b], ds.image(i))))
            .unwrap();
        hits += usize::from(best == ds.labels()[i]);
    }
    assert!(hits >= 340, "{hits}");
}

#[test]
fn split_takes_two_of_every_ten() {
    let ds = synth_faces(1);
    let (train, test) = split_faces(&ds).unwrap();
    assert_eq!((train.len(), test.len()), (320, 80));
    for c in 0..FACE_CLASSES {
        assert_eq!(test.labels().iter().filter(|&&l| l == c).count(), 2);
        assert_eq!(train.labels().iter().filter(|&&l| l == c).count(), 8);
    }
    for k in 0..80 {
        let i = (k / 2) * 10 + k % 2;
        assert_eq!(test.image(k), ds.image(i));
    }
    for k in 0..320 {
        let i = (k / 8) * 10 + 2 + k % 8;
        assert_eq!(train.image(k), ds.image(i));
    }
    assert!(split_faces(&ds.select(&(0..15).collect::<Vec<_>>())).is_err());
}

#[test]
fn standard_model_outputs_probabilities() {
    let m = CnnModel::new(CnnArch::standard(64, 40), 2).unwrap();
    let ds = synth_faces(2).select(&[0, 55, 399]);
    let mut images = ds.images().to_vec();
    images.extend(vec![0.0; 64 * 64]);
    images.extend(vec![1.0; 64 * 64]);
    let probs = m.predict_proba(&images).unwrap();
    assert_eq!(probs.len(), 5 * 40);
    for row in probs.chunks(40) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn forward_matches_reference_network() {
    let ds = small_faces(4);
    let m = CnnModel::new(CnnArch { side: 16, layers: small_arch() }, 9).unwrap();
    let x = reference::widen(&ds.images()[..3 * 256]);
    let w = |n: &str| reference::widen(m.params.get(n).unwrap().data());
    let (h, s) = reference::conv2d(&x, [3, 1, 16, 16], &w("l0.weight"), [4, 1, 3, 3], &w("l0.bias"), 1);
    let (h, s) = reference::maxpool2(&reference::relu(&h), s);
    let (h, s) = reference::conv2d(&h, s, &w("l3.weight"), [6, 4, 3, 3], &w("l3.bias"), 1);
    let h = reference::relu(&h);
    let f = s[1] * s[2] * s[3];
    let z = reference::dense(&h, 3, f, &w("l6.weight"), 4, &w("l6.bias"));
    let got = m.logits(&ds.images()[..3 * 256]).unwrap();
    for (a, b) in got.iter().zip(&z) {
        assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let (train, test) = split_faces(&small_faces(6)).unwrap();
    let cfg = CnnConfig { epochs: 12, batch: 8, lr: 3e-3, seed: 4, layers: Some(small_arch()) };
    let a = train_cnn(&train, &cfg).unwrap();
    let b = train_cnn(&train, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.len(), 12);
    assert!(a.log.last().unwrap().loss < a.log[0].loss);
    assert!(a.accuracy(&test).unwrap() >= 0.75);
    let c = train_cnn(&train, &CnnConfig { seed: 5, ..cfg.clone() }).unwrap();
    assert_ne!(a.params, c.params);

    assert!(train_cnn(&train, &CnnConfig { epochs: 0, ..cfg.clone() }).is_err());
    let one_class = train.select(&(0..8).collect::<Vec<_>>());
    assert!(train_cnn(&one_class, &cfg).is_err());
}

#[test]
fn one_epoch_beats_the_uniform_guess() {
    let (train, _) = split_faces(&synth_faces(7)).unwrap();
    let m = train_cnn(&train, &CnnConfig { epochs: 1, seed: 7, ..Default::default() }).unwrap();
    let probs = m.predict_proba(train.images()).unwrap();
    let ce = reference::cross_entropy(&reference::widen(&probs), 40, train.labels());
    assert!(ce < (40f64).ln(), "{ce}");
}

#[test]
fn saved_models_reload_exactly() {
    let m = CnnModel::new(CnnArch { side: 16, layers: small_arch() }, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.advf");
    m.save(&path).unwrap();
    let back = CnnModel::load(&path).unwrap();
    assert_eq!(back, m);
    let x = small_faces(1).images()[..256].to_vec();
    assert_eq!(back.logits(&x).unwrap(), m.logits(&x).unwrap());
}

#[test]
fn misshapen_stacks_are_rejected() {
    use Layer::*;
    let bad = [
        vec![Dense { units: 3 }],
        vec![Conv { kernels: 2, size: 20 }, Flatten, Dense { units: 2 }],
        vec![Conv { kernels: 2, size: 3 }, Flatten, Conv { kernels: 2, size: 3 }],
        vec![Conv { kernels: 2, size: 3 }],
    ];
    for layers in bad {
        assert!(CnnModel::new(CnnArch { side: 16, layers: layers.clone() }, 0).is_err(), "{layers:?}");
    }
}

// Single 1x1 convolution feeding a two-class dense layer on a 2x2 input.
fn toy_model(conv_w: f32, conv_b: f32, dense_w: [f32; 8], dense_b: [f32; 2]) -> CnnModel {
    use Layer::*;
    let mut m = CnnModel::new(CnnArch { side: 2, layers: vec![Conv { kernels: 1, size: 1 }, Flatten, Dense { units: 2 }] }, 0).unwrap();
    set(&mut m, "l0.weight", &[conv_w]);
    set(&mut m, "l0.bias", &[conv_b]);
    set(&mut m, "l2.weight", &dense_w);
    set(&mut m, "l2.bias", &dense_b);
    m
}

#[test]
fn gradcam_on_a_single_channel_matches_hand_computation() {
    // A = 2x - 0.5; d logit_c / dA is column c of the dense weight
    // (rows are the flattened positions), so alpha_c is its mean.
    let dense = [1.0, -2.0, 0.5, 0.0, -0.25, 1.0, 0.75, 3.0];
    let m = toy_model(2.0, -0.5, dense, [0.1, -0.1]);
    let x = [0.1f32, 0.6, 0.3, 0.9];
    let a: Vec<f64> = x.iter().map(|&v| 2.0 * v as f64 - 0.5).collect();
    for c in 0..2 {
        let alpha: f64 = (0..4).map(|p| dense[p * 2 + c] as f64).sum::<f64>() / 4.0;
        let raw: Vec<f64> = a.iter().map(|&v| (alpha * v).max(0.0)).collect();
        let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let want: Vec<f64> = raw.iter().map(|&v| if hi > 0.0 { (v - lo) / (hi - lo) } else { 0.0 }).collect();
        let h = gradcam(&m, &x, c).unwrap();
        assert_eq!(h.class_id, c);
        for (g, w) in h.values.iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-6, "class {c}: {:?} vs {want:?}", h.values);
        }
    }
}

#[test]
fn disconnected_class_gives_an_all_zero_map() {
    let m = toy_model(1.0, 0.0, [1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0], [0.0, 5.0]);
    let h = gradcam(&m, &[0.2, 0.4, 0.6, 0.8], 1).unwrap();
    assert!(h.values.iter().all(|&v| v == 0.0));
    assert_eq!(threshold_mask(&h, 0.4).unwrap().count(), 0);
    assert_eq!(threshold_mask(&h, 0.0).unwrap().count(), 4);
}

#[test]
fn gradcam_needs_a_conv_layer_and_valid_classes() {
    use Layer::*;
    let m = CnnModel::new(CnnArch { side: 4, layers: vec![Flatten, Dense { units: 3 }] }, 0).unwrap();
    assert!(matches!(gradcam(&m, &[0.0; 16], 0), Err(VisionError::InvalidModel(_))));
    let m = toy_model(1.0, 0.0, [0.0; 8], [0.0; 2]);
    assert!(gradcam(&m, &[0.0; 4], 2).is_err());
    assert!(gradcam_batch(&m, &[0.0; 5], &[0]).is_err());
}

#[test]
fn batch_gradcam_equals_single_image_gradcam() {
    let ds = small_faces(2);
    let m = CnnModel::new(CnnArch { side: 16, layers: small_arch() }, 3).unwrap();
    let idx = [0usize, 13, 27, 39];
    let images: Vec<f32> = idx.iter().flat_map(|&i| ds.image(i).to_vec()).collect();
    let classes = [0usize, 1, 2, 3];
    let batch = gradcam_batch(&m, &images, &classes).unwrap();
    for (k, (&i, &c)) in idx.iter().zip(&classes).enumerate() {
        let one = gradcam(&m, ds.image(i), c).unwrap();
        for (a, b) in one.values.iter().zip(&batch[k].values) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn gradcam_uses_the_last_conv_activation() {
    // relu after the last convolution is part of the activation; A >= 0
    let ds = small_faces(8);
    let m = CnnModel::new(CnnArch { side: 16, layers: small_arch() }, 6).unwrap();
    let mut tape = Tape::new();
    let b = m.params.bind(&mut tape, false);
    let x = m.input_leaf(&mut tape, ds.image(0), false).unwrap();
    let f = m.forward(&mut tape, &b, x).unwrap();
    let a = f.features.unwrap();
    assert_eq!(tape.shape(a), &[1, 6, 5, 5]);
    assert!(tape.data(a).iter().all(|&v| v >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heatmaps_are_normalized(seed in 0u64..1000, img in 0usize..40, class in 0usize..4) {
        let ds = small_faces(seed % 7);
        let m = CnnModel::new(CnnArch { side: 16, layers: small_arch() }, seed).unwrap();
        let h = gradcam(&m, ds.image(img), class).unwrap();
        prop_assert_eq!(h.values.len(), 256);
        prop_assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let max = h.values.iter().copied().fold(0.0f32, f32::max);
        prop_assert!(max == 0.0 || max == 1.0);
        let top = threshold_mask(&h, 1.0).unwrap();
        for (v, &mv) in h.values.iter().zip(&top.values) {
            prop_assert_eq!(mv == 1, max > 0.0 && *v == max);
        }
    }

    #[test]
    fn heatmaps_ignore_positive_logit_scaling(seed in 0u64..1000, scale in 0.05f32..20.0) {
        let ds = small_faces(seed % 5);
        let m = CnnModel::new(CnnArch { side: 16, layers: small_arch() }, seed).unwrap();
        let mut scaled = m.clone();
        for name in ["l6.weight", "l6.bias"] {
            for v in scaled.params.get_mut(name).unwrap().data_mut() {
                *v *= scale;
            }
        }
        let x = ds.image((seed % 40) as usize);
        let a = gradcam(&m, x, 1).unwrap();
        let b = gradcam(&scaled, x, 1).unwrap();
        for (p, q) in a.values.iter().zip(&b.values) {
            prop_assert!((p - q).abs() < 1e-4);
        }
        let arg = |v: &[f32]| v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best });
        if a.values.iter().any(|&v| v > 0.0) {
            prop_assert_eq!(arg(&a.values), arg(&b.values));
        }
    }

    #[test]
    fn zero_threshold_selects_everything(seed in 0u64..1000) {
        let ds = small_faces(seed % 3);
        let m = CnnModel::new(CnnArch { side: 16, layers: small_arch() }, seed).unwrap();
        let h = gradcam(&m, ds.image(0), 0).unwrap();
        prop_assert_eq!(threshold_mask(&h, 0.0).unwrap().count(), 256);
    }
}
