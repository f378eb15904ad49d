use std::collections::BTreeSet;

use bombus_core::dataset::{stratum_train_count, ClassCatalog, DatasetManifest, ImageRecord, Source, Split};
use bombus_core::Error;
use proptest::prelude::*;

fn catalog(classes: usize) -> ClassCatalog {
    let mut labels: Vec<String> = (0..classes).map(|i| format!("species_{i}")).collect();
    labels.push("honey".into());
    ClassCatalog::new(labels, Some("honey".into())).unwrap()
}

fn manifest(class_of: &[usize], test_every: usize) -> DatasetManifest {
    let classes = class_of.iter().copied().max().unwrap_or(0) + 1;
    let records = class_of
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let r = ImageRecord::new(format!("img{i:04}"), format!("species_{c}/img{i}.jpg"), format!("species_{c}"));
            if test_every > 0 && i % test_every == 0 {
                r.with_split(Split::Test)
            } else {
                r
            }
        })
        .collect();
    DatasetManifest::new(catalog(classes), records, 0).unwrap()
}

proptest! {
    #[test]
    fn split_is_deterministic_disjoint_and_covering(
        class_of in prop::collection::vec(0usize..5, 1..120),
        fraction in 0.0f64..=1.0,
        seed in any::<u64>(),
        test_every in 0usize..6,
    ) {
        let m = manifest(&class_of, test_every);
        let a = m.split(fraction, seed).unwrap();
        let b = m.split(fraction, seed).unwrap();
        prop_assert_eq!(&a, &b);

        let eligible: BTreeSet<&str> =
            m.records().iter().filter(|r| r.split != Split::Test).map(|r| r.id.as_str()).collect();
        let train: BTreeSet<&str> = a.in_split(Split::Train).map(|r| r.id.as_str()).collect();
        let val: BTreeSet<&str> = a.in_split(Split::Validation).map(|r| r.id.as_str()).collect();
        prop_assert!(train.is_disjoint(&val));
        let union: BTreeSet<&str> = train.union(&val).copied().collect();
        prop_assert_eq!(union, eligible);

        // Test records are left alone.
        for (before, after) in m.records().iter().zip(a.records()) {
            if before.split == Split::Test {
                prop_assert_eq!(after.split, Split::Test);
            }
        }

        // Per-class train counts follow round-half-away-from-zero.
        for label in m.catalog().labels() {
            let n = m.records().iter().filter(|r| &r.label == label && r.split != Split::Test).count();
            let expect = (fraction * n as f64).round() as usize;
            prop_assert_eq!(a.split_distribution(Split::Train).get(label).unwrap_or(0), expect);
            prop_assert_eq!(stratum_train_count(n, fraction), expect);
        }
    }

    #[test]
    fn histogram_conserves_under_permutation(
        class_of in prop::collection::vec(0usize..6, 0..80),
        rotate_by in 0usize..80,
    ) {
        let m = manifest(&class_of, 0);
        let mut records = m.records().to_vec();
        if !records.is_empty() {
            let k = rotate_by % records.len();
            records.rotate_left(k);
        }
        let p = DatasetManifest::new(m.catalog().clone(), records, 0).unwrap();
        prop_assert_eq!(m.class_distribution().total(), class_of.len());
        prop_assert_eq!(m.class_distribution().to_map(), p.class_distribution().to_map());
    }

    #[test]
    fn negatives_keep_their_label(
        class_of in prop::collection::vec(0usize..3, 1..40),
        negatives in 0usize..20,
        fraction in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let m = manifest(&class_of, 4);
        let neg: Vec<ImageRecord> = (0..negatives)
            .map(|i| {
                let r = ImageRecord::new(format!("honey{i}"), format!("honey/{i}.jpg"), "honey");
                if i % 3 == 0 { r.with_split(Split::Test) } else { r }
            })
            .collect();
        let injected = m.inject_negative_class(neg).unwrap();
        let split = injected.split(fraction, seed).unwrap();
        for r in split.records() {
            if r.id.starts_with("honey") {
                prop_assert_eq!(r.label.as_str(), "honey");
                prop_assert_eq!(r.source, Source::Negative);
                prop_assert_ne!(r.split, Split::Test);
            } else {
                prop_assert_ne!(r.label.as_str(), "honey");
            }
        }
    }
}

#[test]
fn negative_with_species_label_is_rejected() {
    let m = manifest(&[0, 1, 0], 0);
    let bad = vec![ImageRecord::new("h0", "honey/h0.jpg", "species_0")];
    assert!(matches!(m.inject_negative_class(bad), Err(Error::NegativeLabelMismatch { .. })));
}

#[test]
fn invalid_fractions_are_rejected() {
    let m = manifest(&[0, 1], 0);
    for f in [-0.1, 1.5, f64::NAN] {
        assert!(matches!(m.split(f, 1), Err(Error::InvalidFraction(_))));
    }
}
