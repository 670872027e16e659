//! Deterministic synthetic dataset: each class is a smoothed random-field
//! prototype image, and samples are noisy, circularly shifted copies.
//! Everything derives from one seed, so datasets are bit-reproducible.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ClassRecord, DataError, Dataset, Split};
use crate::rng;
use crate::tensor::Tensor;

const SIDE: usize = 84;

/// Pool layout for a train/val/test benchmark.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub train_classes: usize,
    pub val_classes: usize,
    pub test_classes: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f32,
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_classes: 20,
            val_classes: 5,
            test_classes: 5,
            samples_per_class: 25,
            noise_sigma: 0.1,
            max_shift: 4,
            seed: 0,
        }
    }
}

/// One dataset of `num_classes` classes. Class `i` is identical across
/// calls with the same seed regardless of `num_classes`, which is what
/// lets [`synthetic_splits`] carve one pool into disjoint splits.
pub fn generate_synthetic_dataset(
    num_classes: usize,
    samples_per_class: usize,
    noise_sigma: f32,
    max_shift: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_classes < 5 {
        return Err(DataError::InvalidConfig(format!(
            "num_classes must be at least 5, got {num_classes}"
        )));
    }
    if samples_per_class < 6 {
        return Err(DataError::InvalidConfig(format!(
            "samples_per_class must be at least 6, got {samples_per_class}"
        )));
    }
    let classes = (0..num_classes)
        .map(|idx| make_class(idx, samples_per_class, noise_sigma, max_shift, seed))
        .collect();
    Dataset::new(Split::Train, classes)
}

/// Three disjoint splits carved from one class pool.
pub fn synthetic_splits(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let total = spec.train_classes + spec.val_classes + spec.test_classes;
    if spec.train_classes == 0 || spec.val_classes == 0 || spec.test_classes == 0 {
        return Err(DataError::InvalidConfig(
            "every split needs at least one class".into(),
        ));
    }
    if spec.samples_per_class < 6 {
        return Err(DataError::InvalidConfig(format!(
            "samples_per_class must be at least 6, got {}",
            spec.samples_per_class
        )));
    }
    let make_range = |split: Split, lo: usize, hi: usize| {
        let classes = (lo..hi)
            .map(|idx| {
                make_class(
                    idx,
                    spec.samples_per_class,
                    spec.noise_sigma,
                    spec.max_shift,
                    spec.seed,
                )
            })
            .collect();
        Dataset::new(split, classes)
    };
    let train = make_range(Split::Train, 0, spec.train_classes)?;
    let val = make_range(Split::Val, spec.train_classes, spec.train_classes + spec.val_classes)?;
    let test = make_range(Split::Test, spec.train_classes + spec.val_classes, total)?;
    Ok((train, val, test))
}

fn make_class(
    class_idx: usize,
    samples_per_class: usize,
    noise_sigma: f32,
    max_shift: usize,
    seed: u64,
) -> ClassRecord {
    let prototype = make_prototype(class_idx, seed);
    let samples = (0..samples_per_class)
        .map(|sample_idx| {
            let mut rng = rng::substream(
                seed,
                "synthetic-sample",
                (class_idx as u64) << 20 | sample_idx as u64,
            );
            let shift = |rng: &mut rand_chacha::ChaCha8Rng| -> isize {
                if max_shift == 0 {
                    0
                } else {
                    rng.random_range(-(max_shift as i64)..=max_shift as i64) as isize
                }
            };
            let (dy, dx) = (shift(&mut rng), shift(&mut rng));
            let mut img = circular_shift(&prototype, dy, dx);
            if noise_sigma > 0.0 {
                let normal = Normal::new(0.0, noise_sigma as f64).expect("sigma > 0");
                for v in img.data_mut() {
                    *v += normal.sample(&mut rng) as f32;
                }
            }
            for v in img.data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            img
        })
        .collect();
    ClassRecord {
        name: format!("class_{class_idx:03}"),
        samples,
    }
}

/// Smoothed random field in `[0,1]`: uniform noise, two box-blur passes,
/// then a per-channel min-max stretch to restore contrast.
fn make_prototype(class_idx: usize, seed: u64) -> Tensor<f32> {
    let mut rng = rng::substream(seed, "synthetic-proto", class_idx as u64);
    let mut img = Tensor::zeros(&[3, SIDE, SIDE]);
    for v in img.data_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    for _ in 0..2 {
        img = box_blur(&img, 2);
    }
    for c in 0..3 {
        let plane = &mut img.data_mut()[c * SIDE * SIDE..(c + 1) * SIDE * SIDE];
        let (mut lo, mut hi) = (f32::MAX, f32::MIN);
        for &v in plane.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = (hi - lo).max(1e-6);
        for v in plane {
            *v = (*v - lo) / range;
        }
    }
    img
}

fn box_blur(img: &Tensor<f32>, radius: usize) -> Tensor<f32> {
    let mut out = Tensor::zeros(&[3, SIDE, SIDE]);
    let r = radius as isize;
    let norm = 1.0 / ((2 * radius + 1) as f32);
    // Separable: horizontal then vertical, wrapping at the borders.
    let mut tmp = vec![0.0f32; 3 * SIDE * SIDE];
    for c in 0..3 {
        let plane = &img.data()[c * SIDE * SIDE..(c + 1) * SIDE * SIDE];
        for y in 0..SIDE {
            for x in 0..SIDE {
                let mut acc = 0.0;
                for o in -r..=r {
                    let sx = (x as isize + o).rem_euclid(SIDE as isize) as usize;
                    acc += plane[y * SIDE + sx];
                }
                tmp[(c * SIDE + y) * SIDE + x] = acc * norm;
            }
        }
    }
    for c in 0..3 {
        for y in 0..SIDE {
            for x in 0..SIDE {
                let mut acc = 0.0;
                for o in -r..=r {
                    let sy = (y as isize + o).rem_euclid(SIDE as isize) as usize;
                    acc += tmp[(c * SIDE + sy) * SIDE + x];
                }
                out.data_mut()[(c * SIDE + y) * SIDE + x] = acc * norm;
            }
        }
    }
    out
}

fn circular_shift(img: &Tensor<f32>, dy: isize, dx: isize) -> Tensor<f32> {
    if dy == 0 && dx == 0 {
        return img.clone();
    }
    let mut out = Tensor::zeros(&[3, SIDE, SIDE]);
    for c in 0..3 {
        for y in 0..SIDE {
            let sy = (y as isize - dy).rem_euclid(SIDE as isize) as usize;
            for x in 0..SIDE {
                let sx = (x as isize - dx).rem_euclid(SIDE as isize) as usize;
                out.data_mut()[(c * SIDE + y) * SIDE + x] = img.data()[(c * SIDE + sy) * SIDE + sx];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_zero_shift_repeats_the_prototype() {
        let ds = generate_synthetic_dataset(5, 6, 0.0, 0, 9).unwrap();
        for class in ds.classes() {
            for sample in &class.samples[1..] {
                assert_eq!(sample, &class.samples[0]);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic_dataset(5, 6, 0.15, 4, 33).unwrap();
        let b = generate_synthetic_dataset(5, 6, 0.15, 4, 33).unwrap();
        for (ca, cb) in a.classes().iter().zip(b.classes()) {
            assert_eq!(ca.name, cb.name);
            for (sa, sb) in ca.samples.iter().zip(&cb.samples) {
                assert_eq!(sa, sb);
            }
        }
    }

    #[test]
    fn class_prototypes_differ() {
        let a = make_prototype(0, 5);
        let b = make_prototype(1, 5);
        let diff: f32 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f32>()
            / a.numel() as f32;
        assert!(diff > 0.05, "mean abs diff {diff}");
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        assert!(generate_synthetic_dataset(4, 6, 0.1, 4, 0).is_err());
        assert!(generate_synthetic_dataset(5, 5, 0.1, 4, 0).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_consistent_with_the_pool() {
        let spec = SyntheticSpec {
            train_classes: 6,
            val_classes: 2,
            test_classes: 2,
            samples_per_class: 6,
            noise_sigma: 0.05,
            max_shift: 2,
            seed: 77,
        };
        let (train, val, test) = synthetic_splits(&spec).unwrap();
        assert_eq!(train.num_classes(), 6);
        assert_eq!(val.num_classes(), 2);
        assert_eq!(test.num_classes(), 2);
        let mut names: Vec<&str> = train
            .classes()
            .iter()
            .chain(val.classes())
            .chain(test.classes())
            .map(|c| c.name.as_str())
            .collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 10);

        // The pool's first classes coincide with the train split.
        let pool = generate_synthetic_dataset(10, 6, 0.05, 2, 77).unwrap();
        assert_eq!(pool.class(0).samples[0], train.class(0).samples[0]);
        assert_eq!(pool.class(6).samples[3], val.class(0).samples[3]);
    }
}
