use std::fs;

use mltp_core::data::{
    augment, epoch_batches, epoch_order, load_csv, load_idx, make_synth, save_csv, split_indices, split_task_pair,
    standardize, standardize_per_image, write_idx, AugmentSpec, Standardize, SynthKind,
};
use mltp_core::{Dataset, Precision, Split, Targets, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: Precision = Precision::F64;

fn byte_images(n: usize, h: usize, w: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * h * w).map(|_| rng.random_range(0..=255u8) as f64 / 255.0).collect();
    let labels = (0..n).map(|_| rng.random_range(0..10)).collect();
    Dataset::new(Tensor::new(vec![n, 1, h, w], data, P).unwrap(), labels, 10, Split::Train).unwrap()
}

#[test]
fn idx_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (i1, l1, i2, l2) = (
        dir.path().join("a-images"),
        dir.path().join("a-labels"),
        dir.path().join("b-images"),
        dir.path().join("b-labels"),
    );
    let ds = byte_images(17, 5, 4, 1);
    write_idx(&ds, &i1, &l1).unwrap();
    let back = load_idx(&i1, &l1).unwrap();
    assert_eq!(back.samples, ds.samples);
    assert_eq!(back.labels, ds.labels);
    write_idx(&back, &i2, &l2).unwrap();
    assert_eq!(fs::read(&i1).unwrap(), fs::read(&i2).unwrap());
    assert_eq!(fs::read(&l1).unwrap(), fs::read(&l2).unwrap());
}

#[test]
fn idx_header_errors_are_ingest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("i"), dir.path().join("l"));
    write_idx(&byte_images(3, 2, 2, 0), &img, &lbl).unwrap();
    let mut bytes = fs::read(&img).unwrap();
    bytes.pop();
    fs::write(&img, &bytes).unwrap();
    let e = load_idx(&img, &lbl).unwrap_err().to_string();
    assert!(e.contains("data section"), "{e}");
    fs::write(&img, [0u8, 0, 8, 1]).unwrap();
    let e = load_idx(&img, &lbl).unwrap_err().to_string();
    assert!(e.contains("bad magic"), "{e}");
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let ds = make_synth(SynthKind::Spirals, 40, 3, 0.2, 5).unwrap();
    save_csv(&ds, &a).unwrap();
    let back = load_csv(&a, 2, 3).unwrap();
    assert_eq!(back.samples, ds.samples);
    assert_eq!(back.labels, ds.labels);
    save_csv(&back, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

proptest! {
    #[test]
    fn csv_round_trips_arbitrary_finite_values(values in prop::collection::vec(-1e300f64..1e300, 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let n = values.len();
        let ds = Dataset::new(Tensor::new(vec![n, 1], values.clone(), P).unwrap(), vec![0; n], 1, Split::Train).unwrap();
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p, 1, 1).unwrap();
        prop_assert_eq!(back.samples.data(), &values[..]);
    }

    #[test]
    fn split_halves_partition_the_batch(n in 2usize..300) {
        let idx: Vec<usize> = (0..n).collect();
        let (i, j) = split_indices(&idx).unwrap();
        prop_assert_eq!(i.len(), n / 2);
        prop_assert_eq!(j.len(), n / 2);
        prop_assert!(i.iter().all(|a| !j.contains(a)));
        prop_assert_eq!(&i[..], &idx[..n / 2]);
    }

    #[test]
    fn epoch_order_is_a_permutation(n in 1usize..500, seed in any::<u64>(), epoch in 0u64..1000) {
        let mut order = epoch_order(n, seed, epoch);
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn split_rule_example() {
    let (i, j) = split_indices(&[5, 2, 7, 1]).unwrap();
    assert_eq!((i, j), (vec![5, 2], vec![7, 1]));
}

#[test]
fn task_pair_splits_rows_in_order() {
    let ds = make_synth(SynthKind::Blobs, 5, 2, 0.1, 0).unwrap();
    let b = ds.batch(&[9, 0, 4, 7, 3]).unwrap();
    let pair = split_task_pair(&b).unwrap();
    assert_eq!(pair.task_i.y, Targets::Classes(vec![1, 0]));
    assert_eq!(pair.task_j.y, Targets::Classes(vec![0, 1]));
    assert_eq!(pair.task_i.x.data(), [ds.sample(9), ds.sample(0)].concat());
}

#[test]
fn drop_last_only_keeps_full_batches() {
    let b = epoch_batches(1000, 128, 2, 3, true);
    assert_eq!(b.len(), 7);
    assert!(b.iter().all(|c| c.len() == 128));
    let all = epoch_batches(1000, 128, 2, 3, false);
    assert_eq!(all.len(), 8);
    assert_eq!(all[7].len(), 1000 - 7 * 128);
}

/// Distance-to-class-mean classifier, independent of the training code.
fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let k = train.classes;
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for i in 0..train.len() {
        let s = train.sample(i);
        sums[train.labels[i]][0] += s[0];
        sums[train.labels[i]][1] += s[1];
        counts[train.labels[i]] += 1;
    }
    let centroids: Vec<[f64; 2]> = sums.iter().zip(&counts).map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64]).collect();
    let correct = (0..test.len())
        .filter(|&i| {
            let s = test.sample(i);
            let d = |c: &[f64; 2]| (s[0] - c[0]).powi(2) + (s[1] - c[1]).powi(2);
            let best = (0..k).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap();
            best == test.labels[i]
        })
        .count();
    100.0 * correct as f64 / test.len() as f64
}

#[test]
fn blobs_are_separable_by_nearest_centroid() {
    let train = make_synth(SynthKind::Blobs, 500, 4, 0.1, 1).unwrap();
    let test = make_synth(SynthKind::Blobs, 250, 4, 0.1, 2).unwrap();
    assert!(nearest_centroid_accuracy(&train, &test) > 99.0);
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let a = make_synth(SynthKind::Spirals, 100, 3, 0.2, 7).unwrap();
    assert_eq!(a, make_synth(SynthKind::Spirals, 100, 3, 0.2, 7).unwrap());
    assert_ne!(a.samples, make_synth(SynthKind::Spirals, 100, 3, 0.2, 8).unwrap().samples);
    for c in 0..3 {
        assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 100);
    }
}

#[test]
fn standardization_is_idempotent() {
    let ds = byte_images(6, 4, 4, 3);
    let once = standardize_per_image(&ds);
    let twice = standardize_per_image(&once);
    for (a, b) in once.samples.data().iter().zip(twice.samples.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let g = Standardize::Global { mean: None, std: None };
    let (tr, _) = standardize(&ds, &ds, g);
    let (tr2, _) = standardize(&tr, &tr, g);
    for (a, b) in tr.samples.data().iter().zip(tr2.samples.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Pad, optionally mirror, then crop one `h x w` plane.
fn reference_crop(img: &[f64], h: usize, w: usize, pad: usize, flip: bool, dy: usize, dx: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; ph * pw];
    for y in 0..h {
        for x in 0..w {
            padded[(y + pad) * pw + x + pad] = img[y * w + x];
        }
    }
    if flip {
        for row in padded.chunks_mut(pw) {
            row.reverse();
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(padded[(y + dy) * pw + x + dx]);
        }
    }
    out
}

#[test]
fn augmentation_offsets_and_flips_are_uniform() {
    let (h, w, pad) = (4usize, 4usize, 2usize);
    let img: Vec<f64> = (1..=h * w).map(|v| v as f64).collect();
    let n = 5000;
    let x = Tensor::new(vec![n, 1, h, w], img.repeat(n), P).unwrap();
    let spec = AugmentSpec { pad, flip: true, crop: [h, w] };
    let out = augment(&x, &spec, 42).unwrap();
    let offsets = 2 * pad + 1;
    let (mut dy_hist, mut dx_hist, mut flips) = (vec![0usize; offsets], vec![0usize; offsets], 0usize);
    for b in 0..n {
        let plane = &out.data()[b * h * w..(b + 1) * h * w];
        let mut matches = Vec::new();
        for flip in [false, true] {
            for dy in 0..offsets {
                for dx in 0..offsets {
                    if reference_crop(&img, h, w, pad, flip, dy, dx) == plane {
                        matches.push((flip, dy, dx));
                    }
                }
            }
        }
        assert_eq!(matches.len(), 1, "sample {b} matches {matches:?}");
        let (flip, dy, dx) = matches[0];
        dy_hist[dy] += 1;
        dx_hist[dx] += 1;
        flips += usize::from(flip);
    }
    // binomial std of a bin is about 28 here; 150 is over five of them
    let expect = n as f64 / offsets as f64;
    for c in dy_hist.iter().chain(&dx_hist) {
        assert!((*c as f64 - expect).abs() < 150.0, "{dy_hist:?} {dx_hist:?}");
    }
    assert!((flips as f64 - n as f64 / 2.0).abs() < 200.0, "{flips}");
}

#[test]
fn augmentation_is_reproducible() {
    let x = byte_images(8, 6, 6, 0).samples;
    let spec = AugmentSpec { pad: 2, flip: true, crop: [6, 6] };
    assert_eq!(augment(&x, &spec, 3).unwrap(), augment(&x, &spec, 3).unwrap());
    assert_ne!(augment(&x, &spec, 3).unwrap(), augment(&x, &spec, 4).unwrap());
}
