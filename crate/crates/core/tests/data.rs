use flycl::data::{
    cosine, generate_prototypes, load_features, norm, sample_noisy, save_features, FeatureShift, LabeledFeatureSet,
    LabeledItem,
};
use proptest::prelude::*;

fn feature_set() -> impl Strategy<Value = LabeledFeatureSet> {
    (1usize..6, 1usize..5).prop_flat_map(|(d, k)| {
        prop::collection::vec(
            (prop::collection::vec(-1e6f64..1e6, d), 0..k),
            k..40,
        )
        .prop_map(move |rows| {
            // make every class nonempty
            let items = rows
                .into_iter()
                .enumerate()
                .map(|(n, (features, label))| LabeledItem {
                    features,
                    label: if n < k { n } else { label },
                })
                .collect();
            LabeledFeatureSet::new(d, items, k).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_files_round_trip(set in feature_set()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        save_features(&set, &path).unwrap();
        let back = load_features(&path).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn prototypes_respect_the_bound(n in 2usize..12, k in 1usize..4, xi in 0.05f64..0.9, seed in any::<u64>()) {
        let k = k.min(n);
        let set = generate_prototypes(n, 20, k, xi, seed).unwrap();
        prop_assert_eq!(set.len(), n);
        for p in &set.prototypes {
            prop_assert!((norm(p) - 1.0).abs() <= 1e-9);
        }
        for a in 0..n {
            for b in a + 1..n {
                prop_assert!(cosine(&set.prototypes[a], &set.prototypes[b]) <= xi + 1e-9);
            }
        }
        let mut seen = vec![false; k];
        for &y in &set.labels {
            seen[y] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn noise_averages_out() {
    let protos = generate_prototypes(4, 30, 2, 0.3, 5).unwrap();
    let sigma = 0.05;
    let n = 100;
    let set = sample_noisy(&protos, sigma, n, 6).unwrap();
    assert_eq!(set.len(), 4 * n);
    for (p, chunk) in protos.prototypes.iter().zip(set.items().chunks(n)) {
        for c in 0..30 {
            let mean = chunk.iter().map(|it| it.features[c]).sum::<f64>() / n as f64;
            // three standard errors
            assert!((mean - p[c]).abs() < 3.0 * sigma / (n as f64).sqrt(), "coordinate {c}");
        }
    }
}

#[test]
fn noise_has_the_requested_spread() {
    let protos = generate_prototypes(2, 50, 2, 0.5, 1).unwrap();
    let set = sample_noisy(&protos, 0.2, 400, 2).unwrap();
    let mut sq = 0.0;
    let mut count = 0.0;
    for (i, it) in set.items().iter().enumerate() {
        let p = &protos.prototypes[i / 400];
        for (x, c) in it.features.iter().zip(p) {
            sq += (x - c).powi(2);
            count += 1.0;
        }
    }
    let sd = (sq / count).sqrt();
    assert!((sd - 0.2).abs() < 0.01, "{sd}");
}

#[test]
fn noise_free_copies_are_exact() {
    let protos = generate_prototypes(3, 8, 3, 0.2, 9).unwrap();
    let set = sample_noisy(&protos, 0.0, 5, 1).unwrap();
    for (i, it) in set.items().iter().enumerate() {
        assert_eq!(it.features, protos.prototypes[i / 5]);
        assert_eq!(it.label, protos.labels[i / 5]);
    }
}

#[test]
fn tighter_bounds_give_less_similar_sets() {
    let mut last = f64::INFINITY;
    for xi in [0.9, 0.6, 0.3, 0.1] {
        let worst = (0..5)
            .map(|s| generate_prototypes(10, 40, 5, xi, s).unwrap().max_cosine())
            .fold(0.0, f64::max);
        assert!(worst <= xi + 1e-9);
        assert!(worst <= last + 1e-9);
        last = worst;
    }
}

#[test]
fn orthogonal_sets_are_exact() {
    let set = generate_prototypes(8, 8, 4, 0.0, 3).unwrap();
    assert!(set.max_cosine().abs() <= 1e-9);
    assert!(generate_prototypes(9, 8, 4, 0.0, 3).is_err());
}

#[test]
fn impossible_sets_fail_cleanly() {
    // a hundred nearly orthogonal directions cannot fit in two dimensions
    let err = generate_prototypes(100, 2, 2, 0.05, 1).unwrap_err();
    assert!(matches!(err, flycl::Error::Infeasible { .. }), "{err}");
    assert!(generate_prototypes(3, 5, 4, 0.3, 1).is_err());
    assert!(generate_prototypes(3, 5, 2, 1.0, 1).is_err());
}

#[test]
fn labels_are_remapped_in_ascending_order() {
    let text = "d=2,k=3\n7,0.5,1\n-1,2,3\n7,0,0\n3,1,1\n";
    let set = LabeledFeatureSet::read_from(text.as_bytes()).unwrap();
    assert_eq!(set.label_map(), &[-1, 3, 7]);
    let labels: Vec<usize> = set.items().iter().map(|it| it.label).collect();
    assert_eq!(labels, vec![2, 0, 2, 1]);
    let mut out = Vec::new();
    set.write_to(&mut out).unwrap();
    assert_eq!(LabeledFeatureSet::read_from(out.as_slice()).unwrap(), set);
}

#[test]
fn malformed_files_report_the_line() {
    let cases = [
        ("d=2,k=1\n0,1\n", 2),
        ("d=2,k=1\n0,1,x\n", 2),
        ("d=2,k=2\n0,1,1\n", 0),
        ("d=2;k=1\n0,1,1\n", 1),
        ("d=2,k=1\n0,1,1\n0,NaN,1\n", 3),
    ];
    for (text, line) in cases {
        let err = LabeledFeatureSet::read_from(text.as_bytes()).unwrap_err();
        if line > 0 {
            assert!(
                matches!(err, flycl::Error::Parse { line: l, .. } if l == line),
                "{text:?}: {err}"
            );
        }
    }
}

#[test]
fn crlf_files_parse() {
    let set = LabeledFeatureSet::read_from("d=1,k=1\r\n0,2.5\r\n".as_bytes()).unwrap();
    assert_eq!(set.items()[0].features, vec![2.5]);
}

#[test]
fn shift_lifts_negative_train_minimum() {
    let train = LabeledFeatureSet::read_from("d=2,k=1\n0,-1,2\n0,3,5\n".as_bytes()).unwrap();
    let test = LabeledFeatureSet::read_from("d=2,k=1\n0,-3,4\n".as_bytes()).unwrap();
    let shift = FeatureShift::fit(&train);
    let t = shift.apply(&train).unwrap();
    // only coordinates that go negative move
    assert_eq!(t.items()[0].features, vec![0.0, 2.0]);
    assert_eq!(t.items()[1].features, vec![4.0, 5.0]);
    assert_eq!(shift.apply(&test).unwrap().items()[0].features, vec![0.0, 4.0]);
}
