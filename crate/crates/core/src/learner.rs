//! Associative output layer.
//!
//! [`WeightMatrix`] holds the `m x k` code-to-class synapses, bounded to
//! `[0, 1]`, and implements the partial-freezing update together with the four
//! perceptron variants. [`SoftmaxHead`] is the unbounded logistic-regression
//! ablation trained by per-example gradient steps.

use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::Code;
use crate::error::{Error, Result};

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub scores: Vec<f64>,
}

impl Prediction {
    fn from_scores(scores: Vec<f64>) -> Self {
        Prediction {
            class_index: argmax(&scores),
            scores,
        }
    }
}

/// Perceptron-family update rules.
///
/// | variant | on mistake                | on correct  |
/// |---------|---------------------------|-------------|
/// | V1      | +target, -predicted       | nothing     |
/// | V2      | +target                   | nothing     |
/// | V3      | +target, -predicted       | +target     |
/// | V4      | +target                   | +target     |
///
/// V4 is the partial-freezing rule with no decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptronVariant {
    V1,
    V2,
    V3,
    V4,
}

impl PerceptronVariant {
    pub const ALL: [PerceptronVariant; 4] = [Self::V1, Self::V2, Self::V3, Self::V4];

    fn learns_when_correct(self) -> bool {
        matches!(self, Self::V3 | Self::V4)
    }

    fn penalizes_prediction(self) -> bool {
        matches!(self, Self::V1 | Self::V3)
    }
}

impl fmt::Display for PerceptronVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::V1 => "v1",
            Self::V2 => "v2",
            Self::V3 => "v3",
            Self::V4 => "v4",
        };
        f.write_str(s)
    }
}

impl FromStr for PerceptronVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Self::V1),
            "v2" => Ok(Self::V2),
            "v3" => Ok(Self::V3),
            "v4" => Ok(Self::V4),
            other => Err(Error::Config(format!("unknown perceptron variant {other:?}"))),
        }
    }
}

/// Code-to-class weights `w[i][j]`, stored row-major (`i * k + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    m: usize,
    k: usize,
    alpha: f64,
    beta: f64,
    w: Vec<f64>,
}

impl WeightMatrix {
    /// All-zero weights. Requires `m, k >= 1`, `0 <= alpha < 1`, `beta > 0`.
    pub fn new(m: usize, k: usize, alpha: f64, beta: f64) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(Error::Config(format!(
                "weight matrix needs m >= 1 and k >= 1 (got m={m}, k={k})"
            )));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(WeightMatrix {
            m,
            k,
            alpha,
            beta,
            w: vec![0.0; m * k],
        })
    }

    pub fn code_dim(&self) -> usize {
        self.m
    }

    pub fn class_count(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.k + j]
    }

    /// Row-major view of all weights.
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.m).map(|i| self.get(i, j)).collect()
    }

    fn check_code<C: Code>(&self, phi: &C) -> Result<()> {
        if phi.dim() != self.m {
            return Err(Error::InvalidInput {
                expected: self.m,
                actual: phi.dim(),
            });
        }
        Ok(())
    }

    fn check_class(&self, j: usize) -> Result<()> {
        if j >= self.k {
            return Err(Error::InvalidClass {
                index: j,
                count: self.k,
            });
        }
        Ok(())
    }

    /// `scores[j] = sum_i w[i][j] * phi[i]`, accumulated in increasing `i`.
    pub fn scores<C: Code>(&self, phi: &C) -> Result<Vec<f64>> {
        self.check_code(phi)?;
        let mut scores = vec![0.0; self.k];
        for (i, v) in phi.nonzeros() {
            let row = &self.w[i * self.k..(i + 1) * self.k];
            for (s, &w) in scores.iter_mut().zip(row) {
                *s += w * v;
            }
        }
        Ok(scores)
    }

    pub fn predict<C: Code>(&self, phi: &C) -> Result<Prediction> {
        Ok(Prediction::from_scores(self.scores(phi)?))
    }

    /// Partial-freezing update. The target column gets
    /// `clamp((1 - alpha) w + beta phi)`; every other column decays by
    /// `(1 - alpha)`. With `alpha = 0` only `(i, target)` with `phi[i] > 0`
    /// can change.
    pub fn update_fly<C: Code>(&mut self, phi: &C, target: usize) -> Result<()> {
        self.check_code(phi)?;
        self.check_class(target)?;
        if self.alpha > 0.0 {
            let keep = 1.0 - self.alpha;
            for w in &mut self.w {
                *w = (keep * *w).clamp(0.0, 1.0);
            }
        }
        self.add_scaled(phi, target, self.beta);
        Ok(())
    }

    /// One perceptron-family step given the class the model predicted for
    /// `phi` before the update. Weights stay clamped to `[0, 1]`.
    pub fn update_perceptron<C: Code>(
        &mut self,
        phi: &C,
        target: usize,
        predicted: usize,
        variant: PerceptronVariant,
    ) -> Result<()> {
        self.check_code(phi)?;
        self.check_class(target)?;
        self.check_class(predicted)?;
        let mistake = predicted != target;
        if mistake || variant.learns_when_correct() {
            self.add_scaled(phi, target, self.beta);
        }
        if mistake && variant.penalizes_prediction() {
            self.add_scaled(phi, predicted, -self.beta);
        }
        Ok(())
    }

    fn add_scaled<C: Code>(&mut self, phi: &C, j: usize, step: f64) {
        for (i, v) in phi.nonzeros() {
            let w = &mut self.w[i * self.k + j];
            *w = (*w + step * v).clamp(0.0, 1.0);
        }
    }

    /// Whether any weight sits at the upper bound.
    pub fn is_saturated(&self) -> bool {
        self.w.iter().any(|&w| w >= 1.0)
    }

    /// CSV dump: `m=<m>,k=<k>` header followed by `m` rows of `k` values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "m={},k={}", self.m, self.k)?;
        for row in self.w.chunks_exact(self.k) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Reads a CSV dump. Hyperparameters are not part of the dump and must be
    /// supplied.
    pub fn read_csv<R: BufRead>(input: R, alpha: f64, beta: f64) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty weight dump".into(),
        })?;
        let header = header?;
        let (m, k) = parse_dims(header.trim_end_matches('\r'), "m", "k").ok_or(Error::Parse {
            line: 1,
            message: format!("expected header m=<int>,k=<int>, got {header:?}"),
        })?;
        let mut wm = WeightMatrix::new(m, k, alpha, beta)?;
        let mut rows = 0;
        for (n, line) in lines {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if rows == m {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("more than {m} rows"),
                });
            }
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != k {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {k} values, found {}", vals.len()),
                });
            }
            for (j, v) in vals.iter().enumerate() {
                wm.w[rows * k + j] = v.parse().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("bad weight {v:?}"),
                })?;
            }
            rows += 1;
        }
        if rows != m {
            return Err(Error::Parse {
                line: rows + 2,
                message: format!("expected {m} rows, found {rows}"),
            });
        }
        Ok(wm)
    }

    /// Binary dump: `m` and `k` as little-endian u64, then `m * k`
    /// little-endian f64 in row-major order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(&(self.m as u64).to_le_bytes())?;
        out.write_all(&(self.k as u64).to_le_bytes())?;
        for w in &self.w {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R, alpha: f64, beta: f64) -> Result<Self> {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let m = u64::from_le_bytes(buf) as usize;
        input.read_exact(&mut buf)?;
        let k = u64::from_le_bytes(buf) as usize;
        let mut wm = WeightMatrix::new(m, k, alpha, beta)?;
        for w in &mut wm.w {
            input.read_exact(&mut buf)?;
            *w = f64::from_le_bytes(buf);
        }
        Ok(wm)
    }
}

pub(crate) fn parse_dims(header: &str, a: &str, b: &str) -> Option<(usize, usize)> {
    let (first, second) = header.split_once(',')?;
    let x = first.trim().strip_prefix(a)?.strip_prefix('=')?.trim().parse().ok()?;
    let y = second.trim().strip_prefix(b)?.strip_prefix('=')?.trim().parse().ok()?;
    Some((x, y))
}

/// Single-layer softmax classifier over codes, trained online with
/// cross-entropy gradient steps. Weights are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    m: usize,
    k: usize,
    lr: f64,
    // row-major m x k
    w: Vec<f64>,
    bias: Vec<f64>,
}

impl SoftmaxHead {
    pub fn new(m: usize, k: usize, lr: f64) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(Error::Config(format!(
                "softmax head needs m >= 1 and k >= 1 (got m={m}, k={k})"
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(SoftmaxHead {
            m,
            k,
            lr,
            w: vec![0.0; m * k],
            bias: vec![0.0; k],
        })
    }

    pub fn with_params(m: usize, k: usize, lr: f64, w: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let mut head = Self::new(m, k, lr)?;
        if w.len() != m * k || bias.len() != k {
            return Err(Error::Config("softmax parameter shapes do not match m x k".into()));
        }
        head.w = w;
        head.bias = bias;
        Ok(head)
    }

    pub fn code_dim(&self) -> usize {
        self.m
    }

    pub fn class_count(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.k + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `s_j = w_j . phi + bias_j`.
    pub fn scores<C: Code>(&self, phi: &C) -> Result<Vec<f64>> {
        if phi.dim() != self.m {
            return Err(Error::InvalidInput {
                expected: self.m,
                actual: phi.dim(),
            });
        }
        let mut scores = self.bias.clone();
        for (i, v) in phi.nonzeros() {
            let row = &self.w[i * self.k..(i + 1) * self.k];
            for (s, &w) in scores.iter_mut().zip(row) {
                *s += w * v;
            }
        }
        Ok(scores)
    }

    pub fn predict<C: Code>(&self, phi: &C) -> Result<Prediction> {
        Ok(Prediction::from_scores(self.scores(phi)?))
    }

    /// Max-shifted softmax of the scores.
    pub fn probabilities<C: Code>(&self, phi: &C) -> Result<Vec<f64>> {
        let scores = self.scores(phi)?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NumericOverflow(format!("non-finite scores {scores:?}")));
        }
        Ok(softmax(&scores))
    }

    /// Cross-entropy `-ln q_target`.
    pub fn loss<C: Code>(&self, phi: &C, target: usize) -> Result<f64> {
        let scores = self.scores(phi)?;
        if target >= self.k {
            return Err(Error::InvalidClass {
                index: target,
                count: self.k,
            });
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        Ok(lse - scores[target])
    }

    /// One gradient step on the cross-entropy of `(phi, target)`.
    pub fn update<C: Code>(&mut self, phi: &C, target: usize) -> Result<()> {
        if target >= self.k {
            return Err(Error::InvalidClass {
                index: target,
                count: self.k,
            });
        }
        let q = self.probabilities(phi)?;
        let grad: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(j, &qj)| qj - if j == target { 1.0 } else { 0.0 })
            .collect();
        for (i, v) in phi.nonzeros() {
            let row = &mut self.w[i * self.k..(i + 1) * self.k];
            for (w, g) in row.iter_mut().zip(&grad) {
                *w -= self.lr * g * v;
            }
        }
        for (b, g) in self.bias.iter_mut().zip(&grad) {
            *b -= self.lr * g;
        }
        Ok(())
    }
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{DenseCode, SparseCode};

    fn two_by_two(cols: [[f64; 2]; 2]) -> WeightMatrix {
        let mut w = WeightMatrix::new(2, 2, 0.0, 0.01).unwrap();
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                w.w[i * 2 + j] = v;
            }
        }
        w
    }

    #[test]
    fn init_is_zero_and_validated() {
        let w = WeightMatrix::new(3200, 20, 0.0, 0.01).unwrap();
        assert!(w.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(w.as_slice().len(), 3200 * 20);
        let w = WeightMatrix::new(20000, 100, 0.0, 0.2).unwrap();
        assert!(w.as_slice().iter().all(|&v| v == 0.0));
        assert!(WeightMatrix::new(0, 2, 0.0, 0.1).is_err());
        assert!(WeightMatrix::new(2, 2, 1.0, 0.1).is_err());
        assert!(WeightMatrix::new(2, 2, -0.1, 0.1).is_err());
        assert!(WeightMatrix::new(2, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_weights_predict_class_zero() {
        let w = WeightMatrix::new(4, 3, 0.0, 0.1).unwrap();
        let p = w.predict(&DenseCode(vec![0.3, 0.1, 0.0, 0.9])).unwrap();
        assert_eq!(p.class_index, 0);
        assert_eq!(p.scores, vec![0.0; 3]);
    }

    #[test]
    fn predict_examples() {
        let w = two_by_two([[1.0, 0.0], [0.0, 1.0]]);
        let p = w.predict(&DenseCode(vec![0.2, 0.9])).unwrap();
        assert_eq!(p.scores, vec![0.2, 0.9]);
        assert_eq!(p.class_index, 1);
        let p = w.predict(&SparseCode::zeros(2)).unwrap();
        assert_eq!((p.class_index, p.scores), (0, vec![0.0, 0.0]));
        let same = two_by_two([[0.4, 0.7], [0.4, 0.7]]);
        assert_eq!(same.predict(&DenseCode(vec![0.9, 0.1])).unwrap().class_index, 0);
        assert!(matches!(
            w.predict(&DenseCode(vec![1.0; 3])),
            Err(Error::InvalidInput { .. })
        ));
    }

    #[test]
    fn fly_update_examples() {
        let mut w = two_by_two([[0.5, 0.5], [0.5, 0.5]]);
        w.update_fly(&DenseCode(vec![1.0, 0.0]), 0).unwrap();
        assert_eq!(w.get(0, 0), 0.51);
        assert_eq!(w.get(1, 0), 0.5);
        assert_eq!(w.get(0, 1), 0.5);
        assert_eq!(w.get(1, 1), 0.5);

        let mut w = two_by_two([[0.999, 0.0], [0.0, 0.0]]);
        w.update_fly(&DenseCode(vec![1.0, 0.0]), 0).unwrap();
        assert_eq!(w.get(0, 0), 1.0);

        assert!(matches!(
            w.update_fly(&DenseCode(vec![1.0, 0.0]), 2),
            Err(Error::InvalidClass { index: 2, count: 2 })
        ));
    }

    #[test]
    fn fly_update_with_decay() {
        let mut w = WeightMatrix::new(2, 2, 0.5, 0.1).unwrap();
        w.w = vec![0.4, 0.8, 0.2, 0.6];
        w.update_fly(&DenseCode(vec![1.0, 0.0]), 1).unwrap();
        assert_eq!(w.as_slice(), &[0.2, 0.5, 0.1, 0.3]);
    }

    #[test]
    fn perceptron_examples() {
        let phi = DenseCode(vec![1.0, 0.5]);
        let mut v1 = two_by_two([[0.3, 0.1], [0.2, 0.4]]);
        let before = v1.clone();
        v1.update_perceptron(&phi, 1, 1, PerceptronVariant::V1).unwrap();
        assert_eq!(v1, before);

        let mut v1 = two_by_two([[0.0, 0.005], [0.0, 0.0]]);
        v1.update_perceptron(&DenseCode(vec![1.0, 0.0]), 0, 1, PerceptronVariant::V1)
            .unwrap();
        assert_eq!(v1.get(0, 1), 0.0);
        assert_eq!(v1.get(0, 0), 0.01);

        let mut v4 = before.clone();
        let mut fly = before.clone();
        v4.update_perceptron(&phi, 0, 1, PerceptronVariant::V4).unwrap();
        fly.update_fly(&phi, 0).unwrap();
        assert_eq!(v4, fly);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("V3".parse::<PerceptronVariant>().unwrap(), PerceptronVariant::V3);
        assert!(matches!("v5".parse::<PerceptronVariant>(), Err(Error::Config(_))));
        assert_eq!(PerceptronVariant::V2.to_string(), "v2");
    }

    #[test]
    fn weight_dumps_round_trip() {
        let mut w = WeightMatrix::new(3, 2, 0.0, 0.1).unwrap();
        w.w = vec![0.1, 0.2, 0.30000000000000004, 1.0, 0.0, 1e-7];
        let mut csv = Vec::new();
        w.write_csv(&mut csv).unwrap();
        assert!(csv.starts_with(b"m=3,k=2\n"));
        assert_eq!(WeightMatrix::read_csv(&csv[..], 0.0, 0.1).unwrap(), w);
        let mut bin = Vec::new();
        w.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 16 + 6 * 8);
        assert_eq!(WeightMatrix::read_binary(&bin[..], 0.0, 0.1).unwrap(), w);
        assert!(WeightMatrix::read_csv(&b"m=3,k=2\n1,2\n"[..], 0.0, 0.1).is_err());
    }

    #[test]
    fn softmax_zero_input_moves_only_bias() {
        let mut h = SoftmaxHead::new(3, 4, 0.5).unwrap();
        let phi = SparseCode::zeros(3);
        assert_eq!(h.probabilities(&phi).unwrap(), vec![0.25; 4]);
        h.update(&phi, 2).unwrap();
        assert!(h.weights().iter().all(|&w| w == 0.0));
        assert_eq!(h.bias(), &[-0.125, -0.125, 0.375, -0.125]);
    }

    #[test]
    fn softmax_hand_example() {
        let mut h = SoftmaxHead::new(2, 2, 0.1).unwrap();
        h.update(&DenseCode(vec![1.0, 0.0]), 0).unwrap();
        assert_eq!(h.get(0, 0), 0.05);
        assert_eq!(h.get(0, 1), -0.05);
        assert_eq!(h.get(1, 0), 0.0);
    }

    #[test]
    fn softmax_overflow_is_reported() {
        let h = SoftmaxHead::with_params(1, 2, 0.1, vec![f64::INFINITY, 0.0], vec![0.0; 2])
            .unwrap();
        assert!(matches!(
            h.probabilities(&DenseCode(vec![1.0])),
            Err(Error::NumericOverflow(_))
        ));
        // large but finite scores survive the max shift
        let h = SoftmaxHead::with_params(1, 2, 0.1, vec![1e308, 0.0], vec![0.0; 2]).unwrap();
        let q = h.probabilities(&DenseCode(vec![1.0])).unwrap();
        assert_eq!(q, vec![1.0, 0.0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
