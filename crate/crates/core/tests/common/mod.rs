#![allow(dead_code)]

use std::f64::consts::LN_2;

use qnn::schemes::SchemeId;
use qnn::tensor::{Tape, Tensor, Var};
use qnn::Result;

/// Largest relative deviation between the tape gradient and central
/// differences, over every input, normalized by `max(‖analytic‖, ‖numeric‖, 1)`.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        tape.value(out).data()[0] as f64
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars).expect("forward");
    tape.backward(out).expect("backward");

    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = tape.grad_or_zeros(vars[i]).data().iter().map(|&g| g as f64).collect();
        let mut numeric = Vec::with_capacity(x.numel());
        for j in 0..x.numel() {
            let shifted = |delta: f64| {
                let mut d = x.data().to_vec();
                d[j] = (d[j] as f64 + delta) as f32;
                let mut xs = inputs.to_vec();
                xs[i] = Tensor::new(x.shape().to_vec(), d).unwrap();
                let actual = xs[i].data()[j] as f64 - x.data()[j] as f64;
                (eval(&xs), actual)
            };
            let (fp, dp) = shifted(h);
            let (fm, dm) = shifted(-h);
            numeric.push((fp - fm) / (dp - dm));
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric)).max(1.0);
        worst = worst.max(norm(&diff) / scale);
    }
    worst
}

/// Weighted sum `Σ wᵢ·xᵢ` so a non-uniform upstream gradient reaches `x`.
pub fn weighted_sum(tape: &mut Tape, x: Var, weights: &[f32]) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.leaf(Tensor::new(shape, weights.to_vec())?);
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

pub fn weights(n: usize) -> Vec<f32> {
    (0..n).map(|i| 0.5 + 0.37 * ((i * 7 % 11) as f32) / 11.0).collect()
}

/// A connected DAG with `n` vertices (≤ 150 edges for `n ≤ 50`) and a random
/// expensive set drawn from its Op vertices. The first Op vertex consumes
/// every Data vertex; every later Op has at least one earlier input.
pub fn random_dag(n: usize, seed: u64) -> (qnn::graph::Graph, std::collections::BTreeSet<String>) {
    use qnn::graph::{Graph, OpType, Vertex};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = n.max(2);
    let data_count = rng.random_range(1..=(n / 3).max(1));
    let ops = [OpType::FC, OpType::Conv, OpType::ReLU, OpType::Add, OpType::BatchNormLike];
    let mut g = Graph::new();
    let id = |i: usize| format!("v{i:02}");
    for i in 0..n {
        if i < data_count {
            g.add_vertex(Vertex::data(id(i))).unwrap();
        } else {
            let op = ops[rng.random_range(0..ops.len())];
            g.add_vertex(Vertex::op(id(i), op)).unwrap();
            if i == data_count {
                for d in 0..data_count {
                    g.connect(&id(d), &id(i)).unwrap();
                }
            } else {
                let j = rng.random_range(0..i);
                g.connect(&id(j), &id(i)).unwrap();
            }
            for _ in 0..rng.random_range(0..=2) {
                let j = rng.random_range(0..i);
                g.connect(&id(j), &id(i)).unwrap();
            }
        }
    }
    let expensive = (data_count..n)
        .filter(|_| rng.random_bool(0.4))
        .map(id)
        .collect();
    (g, expensive)
}

/// Independent f64 projection on the `⌊b⌉` grid.
pub fn projection_oracle(scheme: SchemeId, x: f64, b: f64, offset: f64) -> f64 {
    let n = b.round().max(1.0) as i32;
    let half = 2f64.powi(n - 1);
    match scheme {
        SchemeId::FixedQ => {
            let r = if x >= 0.0 { (x + 0.5).floor() } else { -((-x + 0.5).floor()) };
            r.clamp(-half, half - 1.0)
        }
        SchemeId::ZoomQ => (x - offset).floor().clamp(0.0, 2f64.powi(n) - 1.0) + offset + 0.5,
        SchemeId::ClipQ => x.floor().clamp(-half, half - 1.0) + 0.5,
        SchemeId::PotQ => {
            if x == 0.0 {
                return 0.0;
            }
            let top = 2f64.powi(n.max(2) - 1) - 1.0;
            let l = x.abs().log2();
            let v = if l >= 0.0 { (l + 0.5).floor() } else { -((-l + 0.5).floor()) };
            let v = v.clamp(0.0, top);
            let e = if v == 0.0 { -1.0 } else { v };
            x.signum() * 2f64.powf(e)
        }
        _ => unreachable!(),
    }
}

/// `∂/∂b Σ g·λβ·H(d/β)` with `H' = 1`, evaluated term by term in f64.
/// Returns the sum and the sum of the terms' magnitudes.
pub fn symbolic_bit_gradient(d: &[f32], g: &[f32], scheme: SchemeId, b: f32, lambda: f32) -> (f64, f64) {
    let max = d.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
    let min = d.iter().fold(f32::INFINITY, |m, &x| m.min(x));
    let range = (max - min) as f64;
    let beta = range * 2f64.powf(-(b as f64));
    let dbeta = -beta * LN_2;
    let offset = min as f64 / beta;
    d.iter()
        .zip(g)
        .map(|(&v, &gi)| {
            let x = v as f64 / beta;
            // d(λβ·H)/db = λβ'·H + λβ·(−x·β'/β)
            let dq = lambda as f64 * dbeta * projection_oracle(scheme, x, b as f64, offset)
                - lambda as f64 * x * dbeta;
            gi as f64 * dq
        })
        .fold((0.0, 0.0), |(s, m), t| (s + t, m + t.abs()))
}
