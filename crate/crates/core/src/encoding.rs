//! Random-Fourier-feature client encodings.
//!
//! `phi_j(x) = sqrt(2/D) cos(w_j . x)` with `w_j ~ N(0, I)`; a client's
//! encoding is the mean of `phi` over its training examples. With the optional
//! random phase `b_j ~ U[0, 2pi)`, `phi(x) . phi(x')` is an unbiased estimate
//! of the RBF kernel `exp(-|x - x'|^2 / 2)`; without it the estimate is
//! `(k(x - x') + k(x + x')) / 2`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Federation};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::sampling::Gaussian;

pub const DEFAULT_ENCODING_DIM: usize = 128;

/// Frequencies (and optional phases) shared by every client of a federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffProjection {
    /// `dim x num_features`, row-major.
    pub omegas: Vec<f64>,
    pub phases: Option<Vec<f64>>,
    pub dim: usize,
    pub num_features: usize,
    pub seed: u64,
}

pub fn draw_projection(num_features: usize, dim: usize, seed: u64, phase: bool) -> Result<RffProjection> {
    if dim == 0 || num_features == 0 {
        return Err(Error::InvalidConfig(
            "projection dimension and feature count must be at least 1".into(),
        ));
    }
    let mut rng = rng_for(seed, "rff", &[]);
    let omegas = Gaussian::new().vec(&mut rng, dim * num_features);
    let phases = phase.then(|| (0..dim).map(|_| 2.0 * PI * rng.random::<f64>()).collect());
    Ok(RffProjection {
        omegas,
        phases,
        dim,
        num_features,
        seed,
    })
}

impl RffProjection {
    pub fn has_phase(&self) -> bool {
        self.phases.is_some()
    }

    pub fn omega(&self, j: usize) -> &[f64] {
        &self.omegas[j * self.num_features..(j + 1) * self.num_features]
    }

    fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        let amp = libm::sqrt(2.0 / self.dim as f64);
        for (j, o) in out.iter_mut().enumerate() {
            let mut arg: f64 = self.omega(j).iter().zip(x).map(|(w, v)| w * v).sum();
            if let Some(b) = &self.phases {
                arg += b[j];
            }
            *o += amp * libm::cos(arg);
        }
    }
}

pub fn rff_features(x: &[f64], proj: &RffProjection) -> Result<Vec<f64>> {
    if x.len() != proj.num_features {
        return Err(Error::LengthMismatch {
            expected: proj.num_features,
            got: x.len(),
        });
    }
    let mut out = alloc::vec![0.0; proj.dim];
    proj.accumulate(x, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEncoding {
    pub client: usize,
    pub z: Vec<f64>,
}

/// Mean random-Fourier-feature vector of a client's training data.
pub fn encode_client(client: usize, train: &DataSet, proj: &RffProjection) -> Result<ClientEncoding> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.num_features() != proj.num_features {
        return Err(Error::InvalidConfig(format!(
            "projection expects {} features, data has {}",
            proj.num_features,
            train.num_features()
        )));
    }
    let mut z = alloc::vec![0.0; proj.dim];
    for i in 0..train.len() {
        proj.accumulate(train.row(i), &mut z);
    }
    let n = train.len() as f64;
    for v in &mut z {
        *v /= n;
    }
    Ok(ClientEncoding { client, z })
}

/// Encodes every client and stores the result in its bundle.
pub fn encode_federation(fed: &mut Federation, proj: &RffProjection) -> Result<Vec<ClientEncoding>> {
    let encs = fed
        .clients()
        .iter()
        .map(|c| encode_client(c.id, &c.train, proj))
        .collect::<Result<Vec<_>>>()?;
    for (c, e) in fed.clients_mut().iter_mut().zip(&encs) {
        c.encoding = e.z.clone();
    }
    Ok(encs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::make_base_dataset;
    use crate::sampling::permutation;
    use alloc::vec;

    #[test]
    fn projection_is_deterministic() {
        let a = draw_projection(3, 16, 5, true).unwrap();
        assert_eq!(a, draw_projection(3, 16, 5, true).unwrap());
        assert_ne!(a, draw_projection(3, 16, 6, true).unwrap());
        let one = draw_projection(4, 1, 1, false).unwrap();
        assert_eq!(one.omegas.len(), 4);
        assert!(one.phases.is_none());
        assert!(draw_projection(4, 0, 1, false).is_err());
    }

    #[test]
    fn projection_moments() {
        let p = draw_projection(10, 10_000, 17, false).unwrap();
        let n = p.omegas.len() as f64;
        let mean = p.omegas.iter().sum::<f64>() / n;
        let var = p.omegas.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
        assert!(mean.abs() <= 0.02, "{mean}");
        assert!((var - 1.0).abs() <= 0.05, "{var}");
    }

    #[test]
    fn origin_maps_to_amplitude() {
        let p = draw_projection(3, 64, 2, false).unwrap();
        let f = rff_features(&[0.0; 3], &p).unwrap();
        let amp = libm::sqrt(2.0 / 64.0);
        assert!(f.iter().all(|v| (v - amp).abs() < 1e-15));
        assert!(rff_features(&[0.0; 2], &p).is_err());
    }

    #[test]
    fn feature_norm_bound_and_lipschitz() {
        use rand::Rng;
        let p = draw_projection(3, 32, 3, false).unwrap();
        let mut rng = rng_for(1, "pts", &[]);
        let amp = libm::sqrt(2.0 / 32.0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fx = rff_features(&x, &p).unwrap();
            let fy = rff_features(&y, &p).unwrap();
            let norm: f64 = libm::sqrt(fx.iter().map(|v| v * v).sum());
            assert!(norm <= libm::sqrt(2.0) + 1e-12);
            for j in 0..32 {
                let proj: f64 = p
                    .omega(j)
                    .iter()
                    .zip(x.iter().zip(&y))
                    .map(|(w, (a, b))| w * (a - b))
                    .sum();
                assert!((fx[j] - fy[j]).abs() <= amp * proj.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn encoding_properties() {
        let p = draw_projection(2, 32, 9, false).unwrap();
        let single = DataSet::new(vec![0.3, -0.7], vec![0], 2, 2).unwrap();
        let e = encode_client(0, &single, &p).unwrap();
        assert_eq!(e.z, rff_features(&[0.3, -0.7], &p).unwrap());

        let d = make_base_dataset(2, 2, 40, 1).unwrap();
        let mut rng = rng_for(4, "perm", &[]);
        let shuffled = d.subset(&permutation(d.len(), &mut rng));
        let a = encode_client(0, &d, &p).unwrap();
        let b = encode_client(0, &shuffled, &p).unwrap();
        for (x, y) in a.z.iter().zip(&b.z) {
            assert!((x - y).abs() < 1e-14);
        }
        let amp = libm::sqrt(2.0 / 32.0);
        assert!(a.z.iter().all(|v| v.abs() <= amp));
        assert_eq!(
            encode_client(0, &DataSet::empty(2, 2), &p).unwrap_err(),
            Error::EmptyDataset
        );
    }
}
