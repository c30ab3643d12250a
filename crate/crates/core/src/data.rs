//! Labeled feature sets and the synthetic prototype model.
//!
//! Feature files are plain CSV. The first line is `d=<int>,k=<int>`; every
//! following line is `label,v1,...,vd` with decimal reals using `.` as the
//! separator. Lines may end in LF or CRLF, blank lines are ignored. Labels are
//! arbitrary integers and get remapped to contiguous class ids `0..k` in
//! ascending label order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::learner::parse_dims;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Feature vectors of a fixed dimension with contiguous class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    dim: usize,
    items: Vec<LabeledItem>,
    /// Original label for each contiguous class id.
    label_map: Vec<i64>,
}

impl LabeledFeatureSet {
    /// Validates dimension and that every class `0..class_count` is present.
    pub fn new(dim: usize, items: Vec<LabeledItem>, class_count: usize) -> Result<Self> {
        Self::with_label_map(dim, items, (0..class_count as i64).collect())
    }

    pub fn with_label_map(dim: usize, items: Vec<LabeledItem>, label_map: Vec<i64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("feature dimension must be >= 1".into()));
        }
        let k = label_map.len();
        let mut counts = vec![0usize; k];
        for (n, item) in items.iter().enumerate() {
            if item.features.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "item {n} has {} features, expected {dim}",
                    item.features.len()
                )));
            }
            if item.label >= k {
                return Err(Error::InvalidDataset(format!(
                    "item {n} has label {} but there are only {k} classes",
                    item.label
                )));
            }
            counts[item.label] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidDataset(format!("class {empty} has no items")));
        }
        Ok(LabeledFeatureSet {
            dim,
            items,
            label_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.label_map.len()
    }

    pub fn items(&self) -> &[LabeledItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn label_map(&self) -> &[i64] {
        &self.label_map
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }

    /// Items of class `c` in dataset order.
    pub fn class_items(&self, c: usize) -> impl Iterator<Item = &LabeledItem> + '_ {
        self.items.iter().filter(move |it| it.label == c)
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        message: "empty feature file".into(),
                    })
                }
                Some((n, line)) => {
                    let line = line?;
                    let line = line.trim_end_matches('\r').to_owned();
                    if !line.is_empty() {
                        break (n + 1, line);
                    }
                }
            }
        };
        let (d, k) = parse_dims(&header.1, "d", "k").ok_or_else(|| Error::Parse {
            line: header.0,
            message: format!("expected header d=<int>,k=<int>, got {:?}", header.1),
        })?;
        if d == 0 || k == 0 {
            return Err(Error::Parse {
                line: header.0,
                message: "d and k must be positive".into(),
            });
        }

        let mut raw: Vec<(i64, Vec<f64>)> = Vec::new();
        for (n, line) in lines {
            let line = line?;
            let line = line.trim_end_matches('\r');
            let lineno = n + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label_str = fields.next().unwrap_or("");
            let label: i64 = label_str.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad label {label_str:?}"),
            })?;
            let mut features = Vec::with_capacity(d);
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad value {f:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("non-finite value {f:?}"),
                    });
                }
                features.push(v);
            }
            if features.len() != d {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!(
                        "dimension mismatch: expected {d} values, found {}",
                        features.len()
                    ),
                });
            }
            raw.push((label, features));
        }
        if raw.is_empty() {
            return Err(Error::Parse {
                line: header.0,
                message: "feature file has no data rows".into(),
            });
        }

        let ids: BTreeMap<i64, usize> = {
            let mut labels: Vec<i64> = raw.iter().map(|(l, _)| *l).collect();
            labels.sort_unstable();
            labels.dedup();
            labels.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
        };
        if ids.len() != k {
            return Err(Error::Parse {
                line: header.0,
                message: format!("header declares k={k} but {} distinct labels found", ids.len()),
            });
        }
        let label_map = ids.keys().copied().collect();
        let items = raw
            .into_iter()
            .map(|(l, features)| LabeledItem {
                features,
                label: ids[&l],
            })
            .collect();
        Self::with_label_map(d, items, label_map)
    }

    /// Writes the CSV format using the original labels. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "d={},k={}", self.dim, self.class_count())?;
        let mut line = String::new();
        for item in &self.items {
            line.clear();
            line.push_str(&self.label_map[item.label].to_string());
            for v in &item.features {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<LabeledFeatureSet> {
    LabeledFeatureSet::read_from(BufReader::new(File::open(path)?))
}

pub fn save_features(set: &LabeledFeatureSet, path: impl AsRef<Path>) -> Result<()> {
    set.write_to(BufWriter::new(File::create(path)?))
}

/// Per-coordinate shift that makes a training set nonnegative. Fitted on one
/// set and applied to others so train and test see the same transform.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureShift {
    offsets: Vec<f64>,
}

impl FeatureShift {
    /// Offsets are `min(0, train minimum)` per coordinate, so coordinates
    /// that are already nonnegative are left alone.
    pub fn fit(set: &LabeledFeatureSet) -> Self {
        let mut offsets = vec![0.0f64; set.dim()];
        for item in set.items() {
            for (o, &v) in offsets.iter_mut().zip(&item.features) {
                *o = o.min(v);
            }
        }
        FeatureShift { offsets }
    }

    /// Subtracts the fitted minimum from each coordinate and clamps at zero.
    pub fn apply(&self, set: &LabeledFeatureSet) -> Result<LabeledFeatureSet> {
        if set.dim() != self.offsets.len() {
            return Err(Error::InvalidInput {
                expected: self.offsets.len(),
                actual: set.dim(),
            });
        }
        let items = set
            .items()
            .iter()
            .map(|it| LabeledItem {
                features: it
                    .features
                    .iter()
                    .zip(&self.offsets)
                    .map(|(v, o)| (v - o).max(0.0))
                    .collect(),
                label: it.label,
            })
            .collect();
        LabeledFeatureSet::with_label_map(set.dim(), items, set.label_map().to_vec())
    }
}

/// Unit-norm prototypes with pairwise cosine at most `xi`, labeled
/// round-robin over `k` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub dim: usize,
    pub class_count: usize,
    pub xi: f64,
    pub prototypes: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Slack allowed on the unit-norm and cosine constraints.
pub const PROTOTYPE_TOLERANCE: f64 = 1e-9;

/// Cap on candidate draws during rejection sampling.
pub const MAX_PROTOTYPE_ATTEMPTS: usize = 1_000_000;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Largest pairwise cosine similarity.
    pub fn max_cosine(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(cosine(&self.prototypes[i], &self.prototypes[j]));
            }
        }
        best
    }

    /// Size of the largest class.
    pub fn largest_class_size(&self) -> usize {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    /// Checks unit norms and the cosine bound at `xi`.
    pub fn is_valid_at(&self, xi: f64) -> bool {
        self.prototypes
            .iter()
            .all(|p| (norm(p) - 1.0).abs() <= PROTOTYPE_TOLERANCE)
            && (self.len() < 2 || self.max_cosine() <= xi + PROTOTYPE_TOLERANCE)
    }
}

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws `n` unit vectors in `R^d` whose pairwise cosine never exceeds `xi`.
///
/// With `xi = 0` the set is built by Gram-Schmidt on Gaussian draws (exactly
/// orthonormal up to rounding). Otherwise candidates are uniform unit vectors
/// accepted one at a time if compatible with everything accepted so far.
pub fn generate_prototypes(n: usize, d: usize, k: usize, xi: f64, seed: u64) -> Result<PrototypeSet> {
    if d == 0 {
        return Err(Error::InvalidDimension("prototype dimension must be >= 1".into()));
    }
    if k == 0 || n < k {
        return Err(Error::Config(format!(
            "need at least one prototype per class (N={n}, k={k})"
        )));
    }
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::Config(format!("xi must lie in [0, 1), got {xi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n);

    if xi == 0.0 {
        if n > d {
            return Err(Error::Config(format!(
                "cannot place {n} mutually orthogonal prototypes in dimension {d}"
            )));
        }
        while accepted.len() < n {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            // two passes of modified Gram-Schmidt for numerical orthogonality
            for _ in 0..2 {
                for u in &accepted {
                    let c = dot(&v, u);
                    v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nv = norm(&v);
            if nv > 1e-6 {
                accepted.push(v.into_iter().map(|x| x / nv).collect());
            }
        }
    } else {
        let mut attempts = 0;
        let mut best_rejected = f64::INFINITY;
        while accepted.len() < n {
            if attempts == MAX_PROTOTYPE_ATTEMPTS {
                return Err(Error::Infeasible {
                    attempts,
                    achieved: best_rejected,
                    target: xi,
                });
            }
            attempts += 1;
            let v = random_unit(d, &mut rng);
            let worst = accepted
                .iter()
                .map(|u| dot(&v, u))
                .fold(f64::NEG_INFINITY, f64::max);
            if worst <= xi {
                accepted.push(v);
            } else {
                best_rejected = best_rejected.min(worst);
            }
        }
    }

    Ok(PrototypeSet {
        dim: d,
        class_count: k,
        xi,
        labels: (0..n).map(|i| i % k).collect(),
        prototypes: accepted,
    })
}

/// `n_per_prototype` noisy copies of each prototype, prototype by prototype.
/// Each copy adds independent `N(0, sigma^2)` noise to every coordinate.
pub fn sample_noisy(
    set: &PrototypeSet,
    sigma: f64,
    n_per_prototype: usize,
    seed: u64,
) -> Result<LabeledFeatureSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise level must be >= 0, got {sigma}")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(set.len() * n_per_prototype);
    for (p, &label) in set.prototypes.iter().zip(&set.labels) {
        for _ in 0..n_per_prototype {
            let features = if sigma == 0.0 {
                p.clone()
            } else {
                p.iter().map(|&x| x + noise.sample(&mut rng)).collect()
            };
            items.push(LabeledItem { features, label });
        }
    }
    LabeledFeatureSet::new(set.dim, items, set.class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let text = "d=2,k=2\n0,1.5,2\n1,-0.25,3e-2\r\n0,0,0\n";
        let set = LabeledFeatureSet::read_from(text.as_bytes()).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.dim(), 2);
        assert_eq!(set.items()[1].features, vec![-0.25, 0.03]);
    }

    #[test]
    fn remaps_labels() {
        let text = "d=1,k=3\n7,1\n-2,2\n40,3\n7,4\n";
        let set = LabeledFeatureSet::read_from(text.as_bytes()).unwrap();
        assert_eq!(set.label_map(), &[-2, 7, 40]);
        let labels: Vec<usize> = set.items().iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![1, 0, 2, 1]);
    }

    #[test]
    fn short_row_reports_line() {
        let text = "d=3,k=1\n0,1,2,3\n0,1,2\n";
        match LabeledFeatureSet::read_from(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("dimension mismatch"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_files() {
        for (text, bad_line) in [
            ("", 1),
            ("d=2\n0,1,2\n", 1),
            ("d=2,k=1\n", 1),
            ("d=2,k=1\n0,1,x\n", 2),
            ("d=2,k=1\nzero,1,2\n", 2),
            ("d=2,k=1\n0,1,inf\n", 2),
            ("d=2,k=1\n0,1;2,3\n", 2),
            ("d=1,k=2\n0,1\n", 1),
        ] {
            match LabeledFeatureSet::read_from(text.as_bytes()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, bad_line, "{text:?}"),
                other => panic!("{text:?}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn orthogonal_prototypes() {
        let set = generate_prototypes(10, 10, 5, 0.0, 4).unwrap();
        for i in 0..10 {
            assert!((norm(&set.prototypes[i]) - 1.0).abs() < 1e-9);
            for j in i + 1..10 {
                assert!(dot(&set.prototypes[i], &set.prototypes[j]).abs() < 1e-9);
            }
        }
        assert!(set.is_valid_at(0.0));
        assert!(generate_prototypes(11, 10, 5, 0.0, 4).is_err());
    }

    #[test]
    fn separated_prototypes_respect_bound() {
        let set = generate_prototypes(20, 50, 10, 0.3, 11).unwrap();
        assert!(set.max_cosine() <= 0.3);
        assert_eq!(set.largest_class_size(), 2);
        let mut counts = [0; 10];
        set.labels.iter().for_each(|&y| counts[y] += 1);
        assert!(counts.iter().all(|&c| c == 2));
        assert_eq!(set, generate_prototypes(20, 50, 10, 0.3, 11).unwrap());
    }

    #[test]
    fn prototype_errors() {
        assert!(matches!(generate_prototypes(3, 5, 4, 0.3, 0), Err(Error::Config(_))));
        assert!(matches!(generate_prototypes(4, 5, 4, 1.0, 0), Err(Error::Config(_))));
        // far more near-orthogonal vectors than the space can hold
        match generate_prototypes(40, 2, 2, 0.01, 0) {
            Err(Error::Infeasible { achieved, .. }) => assert!(achieved > 0.01),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noiseless_samples_equal_prototypes() {
        let set = generate_prototypes(4, 6, 2, 0.5, 1).unwrap();
        let data = sample_noisy(&set, 0.0, 3, 9).unwrap();
        assert_eq!(data.len(), 12);
        for (n, item) in data.items().iter().enumerate() {
            assert_eq!(item.features, set.prototypes[n / 3]);
            assert_eq!(item.label, set.labels[n / 3]);
        }
        assert!(sample_noisy(&set, -1.0, 3, 9).is_err());
    }

    #[test]
    fn shift_makes_features_nonnegative() {
        let text = "d=2,k=1\n0,-1,2\n0,3,-4\n";
        let set = LabeledFeatureSet::read_from(text.as_bytes()).unwrap();
        let shift = FeatureShift::fit(&set);
        let shifted = shift.apply(&set).unwrap();
        assert_eq!(shifted.items()[0].features, vec![0.0, 6.0]);
        assert_eq!(shifted.items()[1].features, vec![4.0, 0.0]);
    }
}
