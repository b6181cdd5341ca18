//! Independent reference implementations used by the integration tests and
//! the acceptance suite.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sozloc::noise_net::{NetworkConfig, NoiseNet};

/// 8-connected components by breadth-first search, each as a sorted pixel
/// list; components sorted by their first pixel.
pub fn components_8(bits: &[bool], h: usize, w: usize) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            comp.push((r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out.sort();
    out
}

fn objective(omega: &[f64; 4], g: &[Vec<f64>], y: &[f64]) -> f64 {
    g.iter()
        .zip(y)
        .map(|(gi, yi)| {
            let d: f64 = omega.iter().zip(gi).map(|(a, b)| a * b).sum();
            (1.0 - yi * d).powi(2)
        })
        .sum()
}

/// Minimum of `Σ (1 - y_i ω·g_i)²` over `Σω = 1` (rows normalized here) by a
/// grid over the three free coordinates followed by pattern search.
pub fn brute_force_eki(rows: &[Vec<f64>], y: &[f64]) -> ([f64; 4], f64) {
    let g: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / n).collect()
        })
        .collect();
    let at = |a: f64, b: f64, c: f64| [a, b, c, 1.0 - a - b - c];
    let mut best = (at(0.25, 0.25, 0.25), f64::INFINITY);
    let steps = 40;
    for i in -steps..=steps {
        for j in -steps..=steps {
            for k in -steps..=steps {
                let w = at(i as f64 * 0.1, j as f64 * 0.1, k as f64 * 0.1);
                let v = objective(&w, &g, y);
                if v < best.1 {
                    best = (w, v);
                }
            }
        }
    }
    let mut step = 0.05;
    while step > 1e-7 {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut w = best.0;
                w[axis] += sign * step;
                w[3] -= sign * step;
                let v = objective(&w, &g, y);
                if v < best.1 {
                    best = (w, v);
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best
}

/// Largest relative error between central differences of `net.loss` and
/// `net.gradient`.
pub fn gradient_error(net: &NoiseNet, xs: &[&[f64]], ys: &[usize]) -> f64 {
    let w = vec![1.0; net.config.n_classes()];
    let analytic = net.gradient(xs, ys, &w).unwrap();
    let h = 1e-4;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss(xs, ys, &w).unwrap();
        probe.params[i] = orig - h;
        let down = probe.loss(xs, ys, &w).unwrap();
        probe.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Gini index straight from the sorted-sum definition.
pub fn gini_reference(v: &[f64]) -> f64 {
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let l1: f64 = a.iter().sum();
    if l1 == 0.0 {
        return 0.0;
    }
    let n = a.len() as f64;
    let mut s = 0.0;
    for (k, x) in a.iter().enumerate() {
        let k = (k + 1) as f64;
        s += x / l1 * (n - k + 0.5) / n;
    }
    1.0 - 2.0 * s
}

fn tiny(outputs: usize) -> NetworkConfig {
    NetworkConfig {
        input_dims: (8, 8, 3),
        conv_filters: vec![2, 2, 2],
        dense_units: 4,
        dropout: 0.0,
        lr: 1e-2,
        outputs,
    }
}

/// A seeded net nudged off the zero-bias ReLU kinks, with five random inputs.
pub fn gradient_fixture(outputs: usize) -> (NoiseNet, Vec<Vec<f64>>, Vec<usize>) {
    let mut net = NoiseNet::init(&tiny(outputs), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in &mut net.params {
        *p += rng.random_range(-0.05..0.05);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs = (0..5).map(|_| (0..192).map(|_| rng.random::<f64>()).collect()).collect();
    let ys = (0..5).map(|i| i % net.config.n_classes()).collect();
    (net, xs, ys)
}
