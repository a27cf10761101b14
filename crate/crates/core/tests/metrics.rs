use camscope::dataset::ClassRegistry;
use camscope::metrics::{confusion, jaccard_from_f1, report, Averaging, MetricsError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn registry(k: usize) -> ClassRegistry {
    ClassRegistry::new((0..k).map(|i| format!("c{i}")).collect()).unwrap()
}

/// Independent recount straight from the label vectors.
fn recount(truth: &[usize], pred: &[usize], c: usize) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        if *t == c && *p == c {
            tp += 1.0;
        } else if *p == c {
            fp += 1.0;
        } else if *t == c {
            fn_ += 1.0;
        }
    }
    (tp, fp, fn_)
}

fn div0(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

#[test]
fn brute_force_oracle_and_micro_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = 4;
    for trial in 0..50 {
        let k = 2 + trial % k;
        let n = rng.random_range(1..200);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let cm = confusion(&truth, &pred, &registry(k)).unwrap();
        for i in 0..k {
            for j in 0..k {
                let want = truth.iter().zip(&pred).filter(|(t, p)| **t == i && **p == j).count() as u64;
                assert_eq!(cm.counts[i][j], want);
            }
        }
        let r = report(&cm, Averaging::Weighted).unwrap();
        for c in 0..k {
            let (tp, fp, fn_) = recount(&truth, &pred, c);
            let p = div0(tp, tp + fp);
            let rc = div0(tp, tp + fn_);
            let m = &r.per_class[c];
            assert_eq!(m.precision, p);
            assert_eq!(m.recall, rc);
            assert_eq!(m.f1, div0(2.0 * p * rc, p + rc));
            assert_eq!(m.jaccard, div0(tp, tp + fp + fn_));
        }
        let micro = r.with_averaging(Averaging::Micro);
        let acc = truth.iter().zip(&pred).filter(|(t, p)| t == p).count() as f64 / n as f64;
        for v in [micro.accuracy, micro.precision, micro.recall, micro.f1] {
            assert!((v - acc).abs() <= 1e-12);
        }
        assert!((micro.jaccard - jaccard_from_f1(micro.f1)).abs() <= 1e-12);

        let support: Vec<f64> = (0..k)
            .map(|c| truth.iter().filter(|t| **t == c).count() as f64)
            .collect();
        let weighted: f64 = (0..k).map(|c| support[c] / n as f64 * r.per_class[c].f1).sum();
        assert!((r.f1 - weighted).abs() <= 1e-12);
        let macro_ = r.with_averaging(Averaging::Macro);
        let mean: f64 = r.per_class.iter().map(|m| m.recall).sum::<f64>() / k as f64;
        assert!((macro_.recall - mean).abs() <= 1e-12);
    }
}

#[test]
fn reported_jaccard_follows_from_reported_f1() {
    let j = jaccard_from_f1(0.9983);
    assert!((j - 0.99661).abs() < 1e-5, "{j}");
}

#[test]
fn spec_examples() {
    let cm = confusion(&[0, 1, 2], &[0, 1, 2], &registry(3)).unwrap();
    assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    let r = report(&cm, Averaging::Weighted).unwrap();
    assert_eq!(
        (r.accuracy, r.precision, r.recall, r.f1, r.jaccard),
        (1.0, 1.0, 1.0, 1.0, 1.0)
    );

    let cm = confusion(&[0, 0], &[1, 1], &registry(2)).unwrap();
    assert_eq!(cm.counts, vec![vec![0, 2], vec![0, 0]]);
    let r = report(&cm, Averaging::Macro).unwrap();
    assert_eq!(r.accuracy, 0.0);
    assert!(r.per_class[1].undefined.contains(&"recall".to_string()));

    assert!(matches!(
        confusion(&[0], &[0, 1], &registry(2)),
        Err(MetricsError::LengthMismatch { .. })
    ));
    assert!(matches!(
        confusion(&[0], &[2], &registry(2)),
        Err(MetricsError::LabelOutOfRange { .. })
    ));
    let empty = confusion(&[], &[], &registry(2)).unwrap();
    assert!(matches!(report(&empty, Averaging::Micro), Err(MetricsError::Empty)));
}

fn labels() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=5).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..120)))
}

proptest! {
    #[test]
    fn range_and_permutation_invariance((k, pairs) in labels(), seed in any::<u64>()) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let (ts, ps): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        for mode in Averaging::ALL {
            let a = report(&confusion(&t, &p, &registry(k)).unwrap(), mode).unwrap();
            let b = report(&confusion(&ts, &ps, &registry(k)).unwrap(), mode).unwrap();
            prop_assert_eq!(&a, &b);
            for v in [a.accuracy, a.precision, a.recall, a.f1, a.jaccard] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            for m in &a.per_class {
                for v in [m.precision, m.recall, m.f1, m.jaccard] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn fixing_an_error_never_lowers_accuracy((k, pairs) in labels()) {
        let (t, mut p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let before = report(&confusion(&t, &p, &registry(k)).unwrap(), Averaging::Micro).unwrap().accuracy;
        if let Some(i) = (0..t.len()).find(|&i| t[i] != p[i]) {
            p[i] = t[i];
        }
        let after = report(&confusion(&t, &p, &registry(k)).unwrap(), Averaging::Micro).unwrap().accuracy;
        prop_assert!(after >= before);
    }
}
