//! N-way K-shot episode sampling.

use rand::seq::index::sample;
use rand::Rng;

use super::{DataError, Dataset, Episode};

/// Uniformly samples `n_way` classes without replacement, then support and
/// query samples without replacement inside each class. The query budget
/// `q` is split across classes as equally as possible (earlier sampled
/// classes absorb the remainder). Support and query never overlap.
pub fn sample_episode<R: Rng>(
    dataset: &Dataset,
    n_way: usize,
    k_shot: usize,
    q: usize,
    rng: &mut R,
) -> Result<Episode, DataError> {
    if dataset.num_classes() < n_way {
        return Err(DataError::InsufficientClasses {
            needed: n_way,
            available: dataset.num_classes(),
        });
    }
    let per_class_max = k_shot + q.div_ceil(n_way);
    for class in dataset.classes() {
        if class.samples.len() < per_class_max {
            return Err(DataError::InsufficientSamples {
                class: class.name.clone(),
                needed: per_class_max,
                available: class.samples.len(),
            });
        }
    }

    let chosen = sample(rng, dataset.num_classes(), n_way);
    let mut support = Vec::with_capacity(n_way);
    let mut support_keys = Vec::with_capacity(n_way);
    let mut query = Vec::with_capacity(q);
    let mut query_keys = Vec::with_capacity(q);
    for (label, class_idx) in chosen.iter().enumerate() {
        let class = dataset.class(class_idx);
        let query_count = q / n_way + usize::from(label < q % n_way);
        let picked = sample(rng, class.samples.len(), k_shot + query_count);
        let picked: Vec<usize> = picked.iter().collect();
        let (sup, qry) = picked.split_at(k_shot);
        support.push(sup.iter().map(|&i| class.samples[i].clone()).collect());
        support_keys.push(sup.iter().map(|&i| (class_idx, i)).collect());
        for &i in qry {
            query.push((class.samples[i].clone(), label));
            query_keys.push((class_idx, i));
        }
    }
    Ok(Episode {
        n_way,
        k_shot,
        support,
        query,
        support_keys,
        query_keys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{ClassRecord, Split};
    use crate::rng;
    use crate::tensor::Tensor;

    fn tiny_dataset(num_classes: usize, samples_per_class: usize) -> Dataset {
        let classes = (0..num_classes)
            .map(|c| ClassRecord {
                name: format!("class_{c:03}"),
                samples: (0..samples_per_class)
                    .map(|s| Tensor::full(&[3, 4, 4], (c * 100 + s) as f32))
                    .collect(),
            })
            .collect();
        Dataset::new(Split::Train, classes).unwrap()
    }

    #[test]
    fn five_way_one_shot_sixteen_queries() {
        let ds = tiny_dataset(8, 10);
        let mut rng = rng::stream(7, "sampler");
        let ep = sample_episode(&ds, 5, 1, 16, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert!(ep.support.iter().all(|s| s.len() == 1));
        assert_eq!(ep.query.len(), 16);
        assert!(ep.query.iter().all(|(_, label)| *label < 5));
        // 16 over 5 classes: 4,3,3,3,3 in class order.
        let mut counts = [0usize; 5];
        for (_, label) in &ep.query {
            counts[*label] += 1;
        }
        assert_eq!(counts, [4, 3, 3, 3, 3]);
    }

    #[test]
    fn support_and_query_are_disjoint() {
        let ds = tiny_dataset(10, 8);
        for seed in 0..50 {
            let mut rng = rng::substream(3, "sampler", seed);
            let ep = sample_episode(&ds, 5, 2, 16, &mut rng).unwrap();
            let support: std::collections::HashSet<_> =
                ep.support_keys.iter().flatten().copied().collect();
            for key in &ep.query_keys {
                assert!(!support.contains(key), "sample {key:?} in both sets");
            }
        }
    }

    #[test]
    fn two_class_dataset_forces_both_classes() {
        let ds = tiny_dataset(2, 6);
        for seed in 0..10 {
            let mut rng = rng::substream(11, "sampler", seed);
            let ep = sample_episode(&ds, 2, 1, 4, &mut rng).unwrap();
            let classes: std::collections::HashSet<_> =
                ep.support_keys.iter().map(|keys| keys[0].0).collect();
            assert_eq!(classes.len(), 2);
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let ds = tiny_dataset(12, 9);
        let a = sample_episode(&ds, 5, 1, 16, &mut rng::stream(42, "sampler")).unwrap();
        let b = sample_episode(&ds, 5, 1, 16, &mut rng::stream(42, "sampler")).unwrap();
        assert_eq!(a.support_keys, b.support_keys);
        assert_eq!(a.query_keys, b.query_keys);
        for (x, y) in a.query.iter().zip(&b.query) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn insufficient_classes_and_samples_are_descriptive() {
        let ds = tiny_dataset(3, 10);
        let err = sample_episode(&ds, 5, 1, 16, &mut rng::stream(0, "sampler")).unwrap_err();
        assert!(err.to_string().contains("3 classes"));

        let ds = tiny_dataset(6, 4);
        let err = sample_episode(&ds, 5, 1, 16, &mut rng::stream(0, "sampler")).unwrap_err();
        assert!(err.to_string().contains("need 5"), "{err}");
    }

    #[test]
    fn labels_are_episode_local() {
        // Even when high-index classes are sampled, labels stay in 0..n.
        let ds = tiny_dataset(30, 8);
        for seed in 0..20 {
            let mut rng = rng::substream(9, "sampler", seed);
            let ep = sample_episode(&ds, 5, 1, 16, &mut rng).unwrap();
            for (image, label) in &ep.query {
                // The query image's class must be the label-th sampled class.
                let class_of_query = ep.query_keys[ep
                    .query
                    .iter()
                    .position(|(img, l)| std::ptr::eq(img, image) && l == label)
                    .unwrap()]
                .0;
                assert_eq!(class_of_query, ep.support_keys[*label][0].0);
            }
        }
    }
}
