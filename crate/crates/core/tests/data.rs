use std::collections::HashSet;
use std::io::Write;

use proptest::prelude::*;
use rainbow_lab::data::{self, MixtureParams, Split, TabularSource, TeacherParams};

fn mixture(k: usize, n: usize, frac: f64) -> MixtureParams {
    MixtureParams {
        d0: 5,
        n_classes: k,
        n_per_class: n,
        separation: 1.5,
        test_fraction: frac,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixture_is_deterministic_and_splits_are_disjoint(k in 2usize..6, n in 1usize..30, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let a = data::generate_gaussian_mixture(&mixture(k, n, frac), seed).unwrap();
        let b = data::generate_gaussian_mixture(&mixture(k, n, frac), seed).unwrap();
        prop_assert_eq!(&a, &b);
        let train: HashSet<usize> = a.indices(Split::Train).into_iter().collect();
        let test: HashSet<usize> = a.indices(Split::Test).into_iter().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), k * n);
        for c in 0..k {
            prop_assert_eq!(a.labels().iter().filter(|&&y| y == c).count(), n);
        }
    }

    #[test]
    fn teacher_is_deterministic(seed in any::<u64>()) {
        let p = TeacherParams { d0: 4, width: 8, depth: 2, n_samples: 20, test_fraction: 0.25 };
        let a = data::generate_teacher_targets(&p, seed).unwrap();
        prop_assert_eq!(&a, &data::generate_teacher_targets(&p, seed).unwrap());
        prop_assert_eq!(a.test().len(), 5);
    }
}

#[test]
fn csv_ingest_standardizes_on_train() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "a,b,c,label,split").unwrap();
    let rows = [
        (1.0, 10.0, 3.0, 0, "train"),
        (2.0, 12.0, 3.0, 1, "train"),
        (4.0, 9.0, 3.0, 0, "train"),
        (7.0, 20.0, 3.0, 1, "train"),
        (100.0, -5.0, 8.0, 1, "test"),
    ];
    for (a, b, c, y, s) in rows {
        writeln!(f, "{a},{b},{c},{y},{s}").unwrap();
    }
    drop(f);
    let src = TabularSource::Csv {
        path,
        label_column: "label".into(),
        split_column: Some("split".into()),
    };
    let ds = data::ingest_tabular(&src, 0.0).unwrap();
    let train = ds.train();
    assert_eq!(train.len(), 4);
    for j in 0..3 {
        let col: Vec<f64> = (0..4).map(|i| train.inputs[(i, j)]).collect();
        let m = col.iter().sum::<f64>() / 4.0;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() <= 1e-8);
        if j < 2 {
            assert!((v - 1.0).abs() <= 1e-6, "feature {j} variance {v}");
        } else {
            assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn unknown_split_value_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    std::fs::write(&path, "a,label,split\n1,0,train\n2,1,validation\n").unwrap();
    let src = TabularSource::Csv {
        path,
        label_column: "label".into(),
        split_column: Some("split".into()),
    };
    assert!(data::ingest_tabular(&src, 0.0).is_err());
}
