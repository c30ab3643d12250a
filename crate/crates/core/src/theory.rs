//! Empirical checks of the separation and convergence properties.
//!
//! * [`empirical_gamma`] estimates the separation margin: for every anchor
//!   point and every other class, the mean dot product with the anchor's own
//!   class minus the mean dot product with the other class.
//! * [`shrinkage_profile`] measures how much two codes overlap as a function
//!   of the cosine similarity of their inputs.
//! * [`check_theorem1`] encodes a prototype set into binary supports and
//!   compares its margin against `1 / N_o - f(xi)`.
//! * [`mean_convergence_check`] verifies that partial freezing accumulates
//!   exactly `beta * sum(phi)` per class while nothing saturates.
//! * [`hijack_scenario`] replays two overlapping codes in long blocks under
//!   the classic perceptron (v1) and the fly rule (v4).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{dot, norm, LabeledFeatureSet, PrototypeSet};
use crate::encoder::{
    winner_take_all, Code, GaussianProjection, Projection, ProjectionMatrix, SparseCode,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::harness::derive_seed;
use crate::learner::{PerceptronVariant, WeightMatrix};

/// Whether an anchor counts toward its own class mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorPolicy {
    /// Sample estimate: the anchor is left out of its class mean.
    Exclude,
    /// The class distribution is exactly the finite point set, anchor
    /// included.
    Include,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub gamma_hat: f64,
    /// `margins[j][j2]`: smallest margin over anchors of class `j` against
    /// class `j2`; `None` on the diagonal.
    pub margins: Vec<Vec<Option<f64>>>,
    pub worst_pair: (usize, usize),
    pub anchor_policy: AnchorPolicy,
}

/// Separation margin of a labeled feature set, anchors excluded from their
/// own class mean. Every class needs at least two items.
pub fn empirical_gamma(set: &LabeledFeatureSet, exec: Execution) -> Result<SeparationReport> {
    let points: Vec<&[f64]> = set.items().iter().map(|it| it.features.as_slice()).collect();
    let labels: Vec<usize> = set.items().iter().map(|it| it.label).collect();
    separation(&points, &labels, set.class_count(), AnchorPolicy::Exclude, exec)
}

/// Separation margin of arbitrary points with labels in `0..k`.
pub fn separation(
    points: &[&[f64]],
    labels: &[usize],
    k: usize,
    policy: AnchorPolicy,
    exec: Execution,
) -> Result<SeparationReport> {
    if points.len() != labels.len() {
        return Err(Error::InvalidDataset("points and labels differ in length".into()));
    }
    if k < 2 {
        return Err(Error::InsufficientData("need at least two classes".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidClass { index: y, count: k });
        }
        members[y].push(i);
    }
    let min_items = match policy {
        AnchorPolicy::Exclude => 2,
        AnchorPolicy::Include => 1,
    };
    if let Some(c) = members.iter().position(|m| m.len() < min_items) {
        return Err(Error::InsufficientData(format!(
            "class {c} has {} items, need at least {min_items}",
            members[c].len()
        )));
    }

    // per anchor: margin against every other class
    let per_anchor: Vec<Vec<f64>> = exec.map_range(points.len(), |a| {
        let j = labels[a];
        let mean_dot = |class: &[usize], skip: Option<usize>| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for &b in class {
                if Some(b) == skip {
                    continue;
                }
                sum += dot(points[a], points[b]);
                n += 1;
            }
            sum / n as f64
        };
        let skip = (policy == AnchorPolicy::Exclude).then_some(a);
        let within = mean_dot(&members[j], skip);
        (0..k)
            .map(|j2| {
                if j2 == j {
                    f64::NAN
                } else {
                    within - mean_dot(&members[j2], None)
                }
            })
            .collect()
    });

    let mut margins = vec![vec![None; k]; k];
    for (a, row) in per_anchor.iter().enumerate() {
        let j = labels[a];
        for (j2, &m) in row.iter().enumerate() {
            if j2 == j {
                continue;
            }
            let slot = &mut margins[j][j2];
            *slot = Some(slot.map_or(m, |cur: f64| cur.min(m)));
        }
    }
    let mut gamma_hat = f64::INFINITY;
    let mut worst_pair = (0, 1);
    for (j, row) in margins.iter().enumerate() {
        for (j2, m) in row.iter().enumerate() {
            if let Some(m) = *m {
                if m < gamma_hat {
                    gamma_hat = m;
                    worst_pair = (j, j2);
                }
            }
        }
    }
    Ok(SeparationReport {
        gamma_hat,
        margins,
        worst_pair,
        anchor_policy: policy,
    })
}

/// Which random map produces the codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CodingMap {
    /// Binary projection with `ones_per_row` ones per row.
    SparseBinary { ones_per_row: usize },
    /// I.i.d. standard normal projection.
    DenseGaussian,
}

/// Coding map whose binarized winner-take-all supports are analyzed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingConfig {
    pub input_dim: usize,
    pub expansion_dim: usize,
    pub active_units: usize,
    pub map: CodingMap,
}

impl CodingConfig {
    fn build(&self, seed: u64) -> Result<Box<dyn Projection>> {
        if self.active_units == 0 || self.active_units > self.expansion_dim {
            return Err(Error::InvalidSparsity(format!(
                "active_units must lie in 1..={}, got {}",
                self.expansion_dim, self.active_units
            )));
        }
        Ok(match self.map {
            CodingMap::SparseBinary { ones_per_row } => Box::new(ProjectionMatrix::new(
                self.input_dim,
                self.expansion_dim,
                ones_per_row,
                seed,
            )?),
            CodingMap::DenseGaussian => Box::new(GaussianProjection::new(
                self.input_dim,
                self.expansion_dim,
                seed,
            )?),
        })
    }
}

fn support<P: Projection + ?Sized>(map: &P, x: &[f64], l: usize) -> Result<SparseCode> {
    winner_take_all(&map.project(x)?, l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShrinkageSample {
    /// Cosine similarity of the input pair.
    pub s: f64,
    /// Shared active units divided by `l`.
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrinkageProfile {
    pub config: CodingConfig,
    pub grid: Vec<f64>,
    pub mean_overlap: Vec<f64>,
    /// Largest sampled overlap at each grid cosine.
    pub max_overlap: Vec<f64>,
    /// `(l / m)^(1 - s)` on the grid.
    pub reference: Vec<f64>,
    pub samples: Vec<ShrinkageSample>,
}

/// Cosines at which overlap is sampled.
pub const SHRINKAGE_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

impl ShrinkageProfile {
    /// Estimated shrinkage `f(s)`. The shrinkage function bounds the overlap
    /// of every pair, so this interpolates the per-cosine sample maximum.
    pub fn f_hat(&self, s: f64) -> f64 {
        interpolate(&self.grid, &self.max_overlap, s)
    }

    /// Interpolated mean overlap at cosine `s`.
    pub fn mean_at(&self, s: f64) -> f64 {
        interpolate(&self.grid, &self.mean_overlap, s)
    }

    /// Fraction of adjacent grid pairs whose mean overlap does not decrease.
    pub fn monotone_fraction(&self) -> f64 {
        let pairs = self.mean_overlap.windows(2);
        let n = pairs.len();
        pairs.filter(|w| w[1] >= w[0]).count() as f64 / n as f64
    }
}

/// Piecewise-linear through `(grid, values)` plus `(1, 1)`; flat below the
/// first grid point.
fn interpolate(grid: &[f64], values: &[f64], s: f64) -> f64 {
    let xs = grid.iter().copied().chain([1.0]);
    let ys = values.iter().copied().chain([1.0]);
    let pts: Vec<(f64, f64)> = xs.zip(ys).collect();
    if s <= pts[0].0 {
        return pts[0].1;
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if s <= x1 {
            return y0 + (s - x0) / (x1 - x0) * (y1 - y0);
        }
    }
    1.0
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

/// Two unit vectors with cosine exactly `s` (up to rounding).
pub fn pair_at_cosine(d: usize, s: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let x = random_unit(d, rng);
    if d == 1 {
        return (x.clone(), x);
    }
    let u = loop {
        let mut u = random_unit(d, rng);
        let c = dot(&u, &x);
        u.iter_mut().zip(&x).for_each(|(ui, xi)| *ui -= c * xi);
        let n = norm(&u);
        if n > 1e-9 {
            break u.into_iter().map(|v| v / n).collect::<Vec<_>>();
        }
    };
    let t = (1.0 - s * s).max(0.0).sqrt();
    let y = x.iter().zip(&u).map(|(a, b)| s * a + t * b).collect();
    (x, y)
}

/// Samples `pair_count` input pairs at each grid cosine and records the
/// binarized-code overlap under one map drawn from `seed`.
pub fn shrinkage_profile(
    config: &CodingConfig,
    pair_count: usize,
    seed: u64,
    exec: Execution,
) -> Result<ShrinkageProfile> {
    if pair_count == 0 {
        return Err(Error::Config("pair_count must be >= 1".into()));
    }
    let map = config.build(derive_seed(seed, 0))?;
    let l = config.active_units;
    let jobs: Vec<(usize, usize)> = (0..SHRINKAGE_GRID.len())
        .flat_map(|g| (0..pair_count).map(move |t| (g, t)))
        .collect();
    let samples = exec.try_map(&jobs, |&(g, t)| {
        let s = SHRINKAGE_GRID[g];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + (g * pair_count + t) as u64));
        let (x, y) = pair_at_cosine(config.input_dim, s, &mut rng);
        let a = support(map.as_ref(), &x, l)?;
        let b = support(map.as_ref(), &y, l)?;
        Ok::<_, Error>(ShrinkageSample {
            s,
            overlap: a.overlap(&b) as f64 / l as f64,
        })
    })?;
    let mean_overlap = samples
        .chunks(pair_count)
        .map(|c| c.iter().map(|s| s.overlap).sum::<f64>() / pair_count as f64)
        .collect();
    let max_overlap = samples
        .chunks(pair_count)
        .map(|c| c.iter().map(|s| s.overlap).fold(0.0, f64::max))
        .collect();
    let ratio = l as f64 / config.expansion_dim as f64;
    Ok(ShrinkageProfile {
        config: *config,
        grid: SHRINKAGE_GRID.to_vec(),
        mean_overlap,
        max_overlap,
        reference: SHRINKAGE_GRID.iter().map(|s| ratio.powf(1.0 - s)).collect(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremStatus {
    Pass,
    Fail,
    /// The bound is not positive, so there is nothing to check.
    NoGuarantee,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub xi: f64,
    pub measured_max_cosine: f64,
    pub largest_class: usize,
    pub f_hat_xi: f64,
    /// `1 / largest_class - f_hat_xi`.
    pub bound: f64,
    pub gamma_hat: f64,
    pub tolerance: f64,
    pub status: TheoremStatus,
    pub separation: SeparationReport,
    pub profile: ShrinkageProfile,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.status != TheoremStatus::Fail
    }
}

/// Encodes every prototype into its winner-take-all support scaled by
/// `1 / sqrt(l)` (so a code's self dot product is one), measures the margin
/// with each class distribution equal to its prototypes' codes, and compares
/// it against `1 / N_o - f_hat(xi)`. The projection and the shrinkage
/// estimate share the map drawn from `seed`.
pub fn check_theorem1(
    prototypes: &PrototypeSet,
    config: &CodingConfig,
    pair_count: usize,
    tolerance: f64,
    seed: u64,
    exec: Execution,
) -> Result<Theorem1Report> {
    if config.input_dim != prototypes.dim {
        return Err(Error::InvalidInput {
            expected: config.input_dim,
            actual: prototypes.dim,
        });
    }
    if !prototypes.is_valid_at(prototypes.xi) {
        return Err(Error::InvalidDataset(format!(
            "prototypes violate their cosine bound {}",
            prototypes.xi
        )));
    }
    let map = config.build(derive_seed(seed, 0))?;
    let l = config.active_units;
    let scale = 1.0 / (l as f64).sqrt();
    let codes: Vec<Vec<f64>> = exec.try_map(&prototypes.prototypes, |p| {
        let sup = support(map.as_ref(), p, l)?;
        let mut v = vec![0.0; config.expansion_dim];
        for &i in sup.support() {
            v[i as usize] = scale;
        }
        Ok::<_, Error>(v)
    })?;
    let points: Vec<&[f64]> = codes.iter().map(Vec::as_slice).collect();
    let separation = separation(
        &points,
        &prototypes.labels,
        prototypes.class_count,
        AnchorPolicy::Include,
        exec,
    )?;
    let profile = shrinkage_profile(config, pair_count, seed, exec)?;
    let largest_class = prototypes.largest_class_size();
    let f_hat_xi = profile.f_hat(prototypes.xi);
    let bound = 1.0 / largest_class as f64 - f_hat_xi;
    let status = if bound <= 0.0 {
        TheoremStatus::NoGuarantee
    } else if separation.gamma_hat >= bound - tolerance {
        TheoremStatus::Pass
    } else {
        TheoremStatus::Fail
    };
    Ok(Theorem1Report {
        xi: prototypes.xi,
        measured_max_cosine: prototypes.max_cosine(),
        largest_class,
        f_hat_xi,
        bound,
        gamma_hat: separation.gamma_hat,
        tolerance,
        status,
        separation,
        profile,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Largest per-class `max |w_j - beta * sum(phi)| / max(beta * sum(phi))`.
    pub max_relative_deviation: f64,
    pub per_class: Vec<f64>,
    /// Some weight reached the upper bound, so the identity need not hold.
    pub saturated: bool,
    pub steps: usize,
}

/// Trains partial freezing (`alpha = 0`) on `codes` in order and compares
/// each class column with `beta` times the sum of that class's codes.
pub fn mean_convergence_check(
    k: usize,
    beta: f64,
    codes: &[SparseCode],
    labels: &[usize],
) -> Result<ConvergenceReport> {
    if codes.len() != labels.len() {
        return Err(Error::InvalidDataset("codes and labels differ in length".into()));
    }
    let m = codes.first().map_or(1, |c| c.dim());
    let mut w = WeightMatrix::new(m, k, 0.0, beta)?;
    let mut sums = vec![vec![0.0; m]; k];
    for (code, &y) in codes.iter().zip(labels) {
        w.update_fly(code, y)?;
        for (i, v) in code.nonzeros() {
            sums[y][i] += v;
        }
    }
    let per_class: Vec<f64> = (0..k)
        .map(|j| {
            let reference: Vec<f64> = sums[j].iter().map(|s| beta * s).collect();
            let scale = reference.iter().copied().fold(0.0, f64::max);
            if scale == 0.0 {
                return 0.0;
            }
            let dev = (0..m)
                .map(|i| (w.get(i, j) - reference[i]).abs())
                .fold(0.0, f64::max);
            dev / scale
        })
        .collect();
    Ok(ConvergenceReport {
        max_relative_deviation: per_class.iter().copied().fold(0.0, f64::max),
        per_class,
        saturated: w.is_saturated(),
        steps: codes.len(),
    })
}

/// Two labeled codes trained in two long blocks: all of A, then all of B.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HijackScenario {
    pub code_a: Vec<f64>,
    pub code_b: Vec<f64>,
    pub label_a: usize,
    pub label_b: usize,
    pub class_count: usize,
    pub block_len: usize,
    pub beta: f64,
}

impl Default for HijackScenario {
    fn default() -> Self {
        HijackScenario {
            code_a: vec![1.0, 1.0, 0.0],
            code_b: vec![0.0, 1.0, 1.0],
            label_a: 0,
            label_b: 1,
            class_count: 2,
            block_len: 50,
            beta: 0.01,
        }
    }
}

impl HijackScenario {
    /// Random binary codes whose shared part outweighs A's private part.
    /// Class indices, sizes, positions, block length and rate all vary.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let only_a = rng.random_range(1..=3);
        let only_b = rng.random_range(1..=3);
        let shared = rng.random_range(only_a + 1..=only_a + 4);
        let m = rng.random_range(only_a + only_b + shared..=40);
        let mut units: Vec<usize> = (0..m).collect();
        rand::seq::SliceRandom::shuffle(units.as_mut_slice(), &mut rng);
        let mut code_a = vec![0.0; m];
        let mut code_b = vec![0.0; m];
        for &u in &units[..shared] {
            code_a[u] = 1.0;
            code_b[u] = 1.0;
        }
        for &u in &units[shared..shared + only_a] {
            code_a[u] = 1.0;
        }
        for &u in &units[shared + only_a..shared + only_a + only_b] {
            code_b[u] = 1.0;
        }
        let label_a = rng.random_range(0..2);
        HijackScenario {
            code_a,
            code_b,
            label_a,
            label_b: 1 - label_a,
            class_count: 2,
            block_len: rng.random_range(20..=100),
            beta: rng.random_range(0.001..0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HijackOutcome {
    pub variant: PerceptronVariant,
    pub prediction_a: usize,
    pub prediction_b: usize,
    pub scores_a: Vec<f64>,
    pub scores_b: Vec<f64>,
    pub correct_a: bool,
    pub correct_b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HijackReport {
    pub scenario: HijackScenario,
    pub v1: HijackOutcome,
    pub v4: HijackOutcome,
    /// v1 misclassifies A after the B block.
    pub v1_hijacked: bool,
    /// v4 classifies both inputs correctly.
    pub v4_stable: bool,
}

fn replay(s: &HijackScenario, variant: PerceptronVariant) -> Result<HijackOutcome> {
    let a = SparseCode::from_dense(&s.code_a);
    let b = SparseCode::from_dense(&s.code_b);
    let mut w = WeightMatrix::new(s.code_a.len(), s.class_count, 0.0, s.beta)?;
    for (code, label) in [(&a, s.label_a), (&b, s.label_b)] {
        for _ in 0..s.block_len {
            let predicted = w.predict(code)?.class_index;
            w.update_perceptron(code, label, predicted, variant)?;
        }
    }
    let pa = w.predict(&a)?;
    let pb = w.predict(&b)?;
    Ok(HijackOutcome {
        variant,
        prediction_a: pa.class_index,
        prediction_b: pb.class_index,
        correct_a: pa.class_index == s.label_a,
        correct_b: pb.class_index == s.label_b,
        scores_a: pa.scores,
        scores_b: pb.scores,
    })
}

pub fn hijack_scenario(scenario: &HijackScenario) -> Result<HijackReport> {
    if scenario.code_a.len() != scenario.code_b.len() {
        return Err(Error::InvalidInput {
            expected: scenario.code_a.len(),
            actual: scenario.code_b.len(),
        });
    }
    let v1 = replay(scenario, PerceptronVariant::V1)?;
    let v4 = replay(scenario, PerceptronVariant::V4)?;
    Ok(HijackReport {
        scenario: scenario.clone(),
        v1_hijacked: !v1.correct_a,
        v4_stable: v4.correct_a && v4.correct_b,
        v1,
        v4,
    })
}
