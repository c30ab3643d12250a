//! Brute-force reference implementations used as oracles. They work on dense
//! `Vec`s, read the projection one entry at a time, and share no code with
//! the library beyond `ProjectionMatrix::entry`.
//!
//! Floating-point operations happen in the same order as the library's, so
//! agreement is expected to be exact.

#![allow(dead_code)]

use flycl::ProjectionMatrix;

pub fn dense_theta(theta: &ProjectionMatrix) -> Vec<Vec<f64>> {
    (0..theta.rows())
        .map(|i| (0..theta.cols()).map(|c| theta.entry(i, c) as f64).collect())
        .collect()
}

/// `psi = Theta x`, summing columns in increasing order.
pub fn project(theta: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .map(|row| {
            let mut s = 0.0;
            for (c, &t) in row.iter().enumerate() {
                if t == 1.0 {
                    s += x[c];
                }
            }
            s
        })
        .collect()
}

/// Keeps entry `i` iff it is positive and fewer than `l` positive entries beat
/// it, where `j` beats `i` when `psi_j > psi_i`, or they tie and `j < i`.
pub fn winner_take_all(psi: &[f64], l: usize) -> Vec<f64> {
    (0..psi.len())
        .map(|i| {
            if psi[i] <= 0.0 {
                return 0.0;
            }
            let beaten_by = (0..psi.len())
                .filter(|&j| psi[j] > 0.0 && (psi[j] > psi[i] || (psi[j] == psi[i] && j < i)))
                .count();
            if beaten_by < l {
                psi[i]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn divide_by_max(v: &[f64]) -> Vec<f64> {
    let mut max = 0.0;
    for &x in v {
        if x > max {
            max = x;
        }
    }
    if max == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|&x| x / max).collect()
}

pub fn encode(theta: &[Vec<f64>], x: &[f64], l: usize) -> Vec<f64> {
    divide_by_max(&winner_take_all(&project(theta, x), l))
}

/// Min-max scaling to `[0, 1]`; a constant vector maps to zeros.
pub fn encode_dense(theta: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let psi = project(theta, x);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &psi {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        return vec![0.0; psi.len()];
    }
    psi.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

fn clamp01(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else if v > 1.0 {
        1.0
    } else {
        v
    }
}

/// `w[i][j]`, `m` rows by `k` columns.
pub type Weights = Vec<Vec<f64>>;

/// Scores `sum_i phi_i w[i][j]`, accumulated in increasing `i` over the
/// nonzero entries of `phi`.
pub fn scores(w: &Weights, phi: &[f64]) -> Vec<f64> {
    let k = w.first().map_or(0, Vec::len);
    (0..k)
        .map(|j| {
            let mut s = 0.0;
            for (i, &p) in phi.iter().enumerate() {
                if p != 0.0 {
                    s += p * w[i][j];
                }
            }
            s
        })
        .collect()
}

/// First index of the maximum.
pub fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..s.len() {
        if s[j] > s[best] {
            best = j;
        }
    }
    best
}

/// Partial freezing: every weight decays by `1 - alpha`; the target column
/// also gains `beta * phi`. Weights stay in `[0, 1]`.
pub fn fly_update(w: &mut Weights, phi: &[f64], target: usize, alpha: f64, beta: f64) {
    for i in 0..w.len() {
        for j in 0..w[i].len() {
            let decayed = if alpha > 0.0 { clamp01((1.0 - alpha) * w[i][j]) } else { w[i][j] };
            w[i][j] = if j == target && phi[i] != 0.0 {
                clamp01(decayed + beta * phi[i])
            } else {
                decayed
            };
        }
    }
}

/// The four perceptron variants, written out case by case.
pub fn perceptron_update(
    w: &mut Weights,
    phi: &[f64],
    target: usize,
    predicted: usize,
    variant: u8,
    beta: f64,
) {
    let add = |w: &mut Weights, j: usize, sign: f64| {
        for i in 0..phi.len() {
            if phi[i] != 0.0 {
                w[i][j] = clamp01(w[i][j] + sign * beta * phi[i]);
            }
        }
    };
    match variant {
        // mistake-driven: reward the target, punish the prediction
        1 => {
            if predicted != target {
                add(w, target, 1.0);
                add(w, predicted, -1.0);
            }
        }
        // mistake-driven, target only
        2 => {
            if predicted != target {
                add(w, target, 1.0);
            }
        }
        // always reward the target, punish a wrong prediction
        3 => {
            add(w, target, 1.0);
            if predicted != target {
                add(w, predicted, -1.0);
            }
        }
        // always reward the target only
        4 => add(w, target, 1.0),
        _ => panic!("unknown variant {variant}"),
    }
}

/// Softmax with max-shift, then one gradient step on cross entropy for
/// weights `w[i][j]` and bias `b[j]`.
pub fn softmax_step(w: &mut Weights, b: &mut [f64], phi: &[f64], target: usize, lr: f64) {
    let k = b.len();
    let z: Vec<f64> = (0..k)
        .map(|j| {
            let mut s = b[j];
            for (i, &p) in phi.iter().enumerate() {
                if p != 0.0 {
                    s += p * w[i][j];
                }
            }
            s
        })
        .collect();
    let q = softmax(&z);
    for j in 0..k {
        let g = q[j] - if j == target { 1.0 } else { 0.0 };
        for (i, &p) in phi.iter().enumerate() {
            if p != 0.0 {
                w[i][j] -= lr * g * p;
            }
        }
        b[j] -= lr * g;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in z {
        max = max.max(v);
    }
    let e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|&v| v / total).collect()
}

/// Dense copy of `(m, k)` row-major weights.
pub fn weights_from(flat: &[f64], m: usize, k: usize) -> Weights {
    (0..m).map(|i| flat[i * k..(i + 1) * k].to_vec()).collect()
}

pub fn flatten(w: &Weights) -> Vec<f64> {
    w.iter().flatten().copied().collect()
}

/// Library weight matrix holding `w`, built through the CSV reader.
pub fn load_weights(w: &Weights, alpha: f64, beta: f64) -> flycl::WeightMatrix {
    let mut text = format!("m={},k={}\n", w.len(), w[0].len());
    for row in w {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    flycl::WeightMatrix::read_csv(text.as_bytes(), alpha, beta).unwrap()
}
