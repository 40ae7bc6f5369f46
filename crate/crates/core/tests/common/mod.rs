//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use segnas::genome::Genome;

pub const BASELINE_X: &str = "xception:0100001111111111111111";
pub const FMAS_F1: &str = "xception:1000001111111011011111";
pub const FMAS_F2: &str = "xception:0100001111111011001001";
pub const FMAS_P1: &str = "xception:0100001111011110010100";
pub const FMAS_P2: &str = "xception:0100001111111011011111";
pub const FMAS_FP1: &str = "xception:0100001111111011001101";
pub const FMAS_FP2: &str = "xception:0100001111011010001100";
pub const BASELINE_M: &str = "mobilenetv2:00001111111111111111111";
pub const FMAS_L1: &str = "mobilenetv2:00011101011011111111111";
pub const FMAS_L2: &str = "mobilenetv2:01001111001011111111111";

pub fn genome(text: &str) -> Genome {
    text.parse().expect("fixture genome")
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Brute-force dominance partition: repeatedly peel off the points that no
/// remaining point dominates. Fronts hold ascending indices.
pub fn brute_force_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let dominates = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
    };
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Monte Carlo estimate of the area inside `[0, ref]` dominated by `points`,
/// with its standard error.
pub fn monte_carlo_hypervolume<R: Rng>(
    points: &[Vec<f64>],
    reference: &[f64],
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let mut hits = 0usize;
    for _ in 0..samples {
        let x = rng.gen::<f64>() * reference[0];
        let y = rng.gen::<f64>() * reference[1];
        if points.iter().any(|p| p[0] <= x && p[1] <= y) {
            hits += 1;
        }
    }
    let area = reference[0] * reference[1];
    let p = hits as f64 / samples as f64;
    (p * area, area * (p * (1.0 - p) / samples as f64).sqrt())
}

/// A random mutually non-dominated 2-D front inside the unit square.
pub fn random_front<R: Rng>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.95)).collect();
    let mut ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.95)).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(|a, b| b.total_cmp(a));
    xs.into_iter().zip(ys).map(|(x, y)| vec![x, y]).collect()
}
