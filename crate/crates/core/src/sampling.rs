//! Random variate helpers: Box-Muller normals, categorical draws, uniform indices.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

/// Box-Muller transform of two uniforms into two independent standard normals.
///
/// `u1` must lie in `(0, 1]` and `u2` in `[0, 1)`.
pub fn box_muller(u1: f64, u2: f64) -> Result<(f64, f64)> {
    if !(u1 > 0.0 && u1 <= 1.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "box_muller: u1 must be in (0, 1], got {u1}"
        )));
    }
    if !(0.0..1.0).contains(&u2) {
        return Err(Error::InvalidConfig(alloc::format!(
            "box_muller: u2 must be in [0, 1), got {u2}"
        )));
    }
    let radius = libm::sqrt(-2.0 * libm::log(u1));
    let angle = 2.0 * PI * u2;
    Ok((radius * libm::cos(angle), radius * libm::sin(angle)))
}

/// Uniform draw on `(0, 1]`.
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Standard normal source built on [`box_muller`]; the second variate of each
/// pair is kept for the next call.
#[derive(Debug, Default, Clone)]
pub struct Gaussian {
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new() -> Self {
        Self { spare: None }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(g) = self.spare.take() {
            return g;
        }
        let u1 = open_unit(rng);
        let u2 = rng.random::<f64>();
        // Both arguments are in range by construction.
        let (g0, g1) = box_muller(u1, u2).expect("uniforms in range");
        self.spare = Some(g1);
        g0
    }

    pub fn fill<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.sample(rng);
        }
    }

    pub fn vec<R: Rng + ?Sized>(&mut self, rng: &mut R, n: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; n];
        self.fill(rng, &mut out);
        out
    }
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    debug_assert!(!probs.is_empty());
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum: take the last
    // candidate with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn uniform_index<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    rng.random_range(0..n)
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, rng);
    idx
}

pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn box_muller_closed_forms() {
        let (g0, g1) = box_muller(libm::exp(-2.0), 0.0).unwrap();
        assert!((g0 - 2.0).abs() < 1e-12);
        assert_eq!(g1, 0.0);
        assert_eq!(box_muller(1.0, 0.3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn box_muller_rejects_zero() {
        assert!(box_muller(0.0, 0.5).is_err());
        assert!(box_muller(0.5, 1.0).is_err());
    }

    #[test]
    fn box_muller_moments() {
        let mut rng = rng_for(3, "bm", &[]);
        let n = 100_000;
        let (mut s0, mut s1, mut q0, mut q1, mut c) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b) = box_muller(open_unit(&mut rng), rng.random::<f64>()).unwrap();
            s0 += a;
            s1 += b;
            q0 += a * a;
            q1 += b * b;
            c += a * b;
        }
        let nf = n as f64;
        let (m0, m1) = (s0 / nf, s1 / nf);
        let (v0, v1) = (q0 / nf - m0 * m0, q1 / nf - m1 * m1);
        let rho = (c / nf - m0 * m1) / libm::sqrt(v0 * v1);
        assert!(m0.abs() <= 0.02 && m1.abs() <= 0.02, "means {m0} {m1}");
        assert!((v0 - 1.0).abs() <= 0.05 && (v1 - 1.0).abs() <= 0.05, "vars {v0} {v1}");
        assert!(rho.abs() <= 0.02, "rho {rho}");
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = rng_for(5, "cat", &[]);
        let probs = [0.25, 0.75];
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_categorical(&probs, &mut rng) == 1).count();
        let f = ones as f64 / n as f64;
        assert!((f - 0.75).abs() <= 0.01, "{f}");
    }

    #[test]
    fn categorical_degenerate() {
        let mut rng = rng_for(5, "cat", &[1]);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[0.0, 0.0, 1.0], &mut rng), 2);
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = rng_for(1, "perm", &[]);
        let mut p = permutation(50, &mut rng);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
