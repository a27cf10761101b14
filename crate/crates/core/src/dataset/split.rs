use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassRegistry, DatasetError, Labeled};
use crate::rng;

const FRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Disjoint train/val/test partition of source ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub classes: ClassRegistry,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Which part holds `id`, if any.
    pub fn part_of(&self, id: &str) -> Option<SplitPart> {
        [SplitPart::Train, SplitPart::Val, SplitPart::Test]
            .into_iter()
            .find(|&p| self.part(p).iter().any(|x| x == id))
    }

    /// True when the three lists are pairwise disjoint.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.len());
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .all(|id| seen.insert(id.as_str()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }
}

fn check_fractions(f: [f64; 3]) -> Result<(), DatasetError> {
    let ok = f.iter().all(|&x| x.is_finite() && x > 0.0) && (f.iter().sum::<f64>() - 1.0).abs() <= FRACTION_TOLERANCE;
    if ok {
        Ok(())
    } else {
        Err(DatasetError::InvalidFractions(f))
    }
}

/// Per-class `(train, val, test)` counts: train and val are rounded
/// (half away from zero), test takes the remainder.
pub(crate) fn class_counts(n: usize, fractions: [f64; 3]) -> (usize, usize, usize) {
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Splits each class independently: ids are sorted, shuffled with a stream
/// seeded by `(seed, class)`, then sliced into train/val/test.
pub fn stratified_split<L: Labeled>(
    items: &[L],
    registry: &ClassRegistry,
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    check_fractions(fractions)?;
    let mut per_class: Vec<Vec<&str>> = vec![Vec::new(); registry.len()];
    for it in items {
        let bucket = per_class
            .get_mut(it.label())
            .ok_or_else(|| DatasetError::LabelOutOfRange {
                id: it.source_id().to_string(),
                label: it.label(),
                n_classes: registry.len(),
            })?;
        bucket.push(it.source_id());
    }
    let mut split = DatasetSplit {
        seed,
        fractions,
        classes: registry.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, ids) in per_class.iter_mut().enumerate() {
        let name = registry.name(c).expect("class index within registry");
        if ids.len() < 3 {
            return Err(DatasetError::TooFewItems {
                class: name.to_string(),
                count: ids.len(),
            });
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng::stream(seed, &["split", name]));
        let (n_train, n_val, _) = class_counts(ids.len(), fractions);
        let owned = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        split.train.extend(owned(&ids[..n_train]));
        split.val.extend(owned(&ids[n_train..n_train + n_val]));
        split.test.extend(owned(&ids[n_train + n_val..]));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(sizes: &[usize]) -> (ClassRegistry, Vec<(String, usize)>) {
        let names = (0..sizes.len()).map(|c| format!("class{c}")).collect();
        let reg = ClassRegistry::new(names).unwrap();
        let items = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (format!("class{c}/{i:05}.png"), c)))
            .collect();
        (reg, items)
    }

    #[test]
    fn exact_divisibility() {
        let (reg, it) = items(&[50, 50]);
        let s = stratified_split(&it, &reg, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let in_class0 = |v: &[String]| v.iter().filter(|x| x.starts_with("class0/")).count();
        assert_eq!(in_class0(&s.train), 40);
        assert_eq!(in_class0(&s.val), 5);
        assert_eq!(in_class0(&s.test), 5);
        assert!(s.is_disjoint());
    }

    #[test]
    fn reference_class_sizes() {
        let (reg, it) = items(&[2004, 2004, 2048]);
        let s = stratified_split(&it, &reg, [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (4844, 605, 607));
        assert_eq!(s.len(), 6056);
        assert!(s.is_disjoint());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let (reg, it) = items(&[30, 40]);
        let a = stratified_split(&it, &reg, [0.8, 0.1, 0.1], 3).unwrap();
        let b = stratified_split(&it, &reg, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = stratified_split(&it, &reg, [0.8, 0.1, 0.1], 4).unwrap();
        assert_ne!(a.train, c.train);
        let mut rev = it.clone();
        rev.reverse();
        let d = stratified_split(&rev, &reg, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(a, d);
    }

    #[test]
    fn small_class_and_bad_fractions_rejected() {
        let (reg, it) = items(&[10, 2]);
        match stratified_split(&it, &reg, [0.8, 0.1, 0.1], 0) {
            Err(DatasetError::TooFewItems { class, count }) => {
                assert_eq!(class, "class1");
                assert_eq!(count, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let (reg, it) = items(&[10, 10]);
        assert!(stratified_split(&it, &reg, [0.8, 0.1, 0.2], 0).is_err());
        assert!(stratified_split(&it, &reg, [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn json_roundtrip_has_manifest_keys() {
        let (reg, it) = items(&[5, 5]);
        let s = stratified_split(&it, &reg, [0.6, 0.2, 0.2], 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        for k in ["seed", "fractions", "classes", "train", "val", "test"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        let back: DatasetSplit = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }
}
