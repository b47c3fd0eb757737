//! Hyperparameter search spaces.
//!
//! A [`SearchSpace`] is an ordered list of [`Dimension`]s describing one
//! client's local-training hyperparameters. Its order is the head order of the
//! policy network. A personalized assignment picks one point of the space per
//! client, so the joint space is the n-fold Cartesian power.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionKind {
    Discrete { candidates: Vec<f64> },
    Continuous { lo: f64, hi: f64, scale: Scale },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimensionKind,
}

impl Dimension {
    pub fn discrete(name: &str, candidates: &[f64]) -> Result<Self> {
        let d = Self {
            name: name.to_string(),
            kind: DimensionKind::Discrete {
                candidates: candidates.to_vec(),
            },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn continuous(name: &str, lo: f64, hi: f64, scale: Scale) -> Result<Self> {
        let d = Self {
            name: name.to_string(),
            kind: DimensionKind::Continuous { lo, hi, scale },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidSpace("dimension name is empty".into()));
        }
        match &self.kind {
            DimensionKind::Discrete { candidates } => {
                if candidates.is_empty() {
                    return Err(Error::InvalidSpace(format!("{}: no candidates", self.name)));
                }
                if candidates.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidSpace(format!("{}: candidates must be finite", self.name)));
                }
                if candidates.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidSpace(format!(
                        "{}: candidates must be strictly increasing",
                        self.name
                    )));
                }
            }
            DimensionKind::Continuous { lo, hi, scale } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidSpace(format!(
                        "{}: need finite lo < hi, got [{lo}, {hi}]",
                        self.name
                    )));
                }
                if *scale == Scale::Log && *lo <= 0.0 {
                    return Err(Error::InvalidSpace(format!("{}: log scale requires lo > 0", self.name)));
                }
            }
        }
        Ok(())
    }

    /// Number of candidates, or `None` for a continuous dimension.
    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            DimensionKind::Discrete { candidates } => Some(candidates.len()),
            DimensionKind::Continuous { .. } => None,
        }
    }

    /// Maps a unit-interval value onto a continuous dimension.
    ///
    /// Linear: `lo + u (hi - lo)`. Log: `exp(ln lo + u (ln hi - ln lo))`.
    /// The result is clamped to `[lo, hi]` and the endpoints are exact.
    pub fn map_unit(&self, u: f64) -> Result<f64> {
        match &self.kind {
            DimensionKind::Continuous { lo, hi, .. } if u <= 0.0 => Ok(*lo),
            DimensionKind::Continuous { hi, .. } if u >= 1.0 => Ok(*hi),
            DimensionKind::Continuous { lo, hi, scale } => {
                let v = match scale {
                    Scale::Linear => lo + u * (hi - lo),
                    Scale::Log => {
                        let (a, b) = (libm::log(*lo), libm::log(*hi));
                        libm::exp(a + u * (b - a))
                    }
                };
                Ok(v.clamp(*lo, *hi))
            }
            DimensionKind::Discrete { .. } => Err(Error::InvalidSpace(format!(
                "{}: map_unit on a discrete dimension",
                self.name
            ))),
        }
    }
}

/// The local-training subspace of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    dims: Vec<Dimension>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = Error;
    fn try_from(raw: RawSpace) -> Result<Self> {
        SearchSpace::new(raw.dims)
    }
}

impl From<SearchSpace> for RawSpace {
    fn from(s: SearchSpace) -> Self {
        RawSpace { dims: s.dims }
    }
}

/// Size of a (possibly personalized) search space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpaceSize {
    Finite(BigUint),
    Infinite,
}

impl SpaceSize {
    pub fn to_u128(&self) -> Option<u128> {
        match self {
            SpaceSize::Finite(b) => u128::try_from(b).ok(),
            SpaceSize::Infinite => None,
        }
    }
}

impl core::fmt::Display for SpaceSize {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SpaceSize::Finite(b) => write!(f, "{b}"),
            SpaceSize::Infinite => f.write_str("infinite"),
        }
    }
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("search space has no dimensions".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            d.validate()?;
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidSpace(format!("duplicate dimension {}", d.name)));
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn is_discrete(&self) -> bool {
        self.dims.iter().all(|d| d.cardinality().is_some())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn space_size(&self) -> SpaceSize {
        let mut total = BigUint::from(1u32);
        for d in &self.dims {
            match d.cardinality() {
                Some(k) => total *= BigUint::from(k),
                None => return SpaceSize::Infinite,
            }
        }
        SpaceSize::Finite(total)
    }

    /// Size of the joint space of `n` clients, `space_size^n`.
    pub fn personalized_space_size(&self, n: usize) -> Result<SpaceSize> {
        if n == 0 {
            return Err(Error::InvalidConfig("client count must be at least 1".into()));
        }
        Ok(match self.space_size() {
            SpaceSize::Finite(b) => {
                let exp = u32::try_from(n).map_err(|_| Error::InvalidConfig("client count too large".into()))?;
                SpaceSize::Finite(b.pow(exp))
            }
            SpaceSize::Infinite => SpaceSize::Infinite,
        })
    }

    pub fn validate_sample(&self, sample: &ConfigSample) -> Result<()> {
        if sample.values.len() != self.dims.len() {
            return Err(Error::LengthMismatch {
                expected: self.dims.len(),
                got: sample.values.len(),
            });
        }
        for (d, v) in self.dims.iter().zip(&sample.values) {
            match (&d.kind, v) {
                (DimensionKind::Discrete { candidates }, SampleValue::Index(i)) => {
                    if *i >= candidates.len() {
                        return Err(Error::InvalidSample(format!(
                            "{}: index {i} out of range ({} candidates)",
                            d.name,
                            candidates.len()
                        )));
                    }
                }
                (DimensionKind::Continuous { lo, hi, .. }, SampleValue::Real { value, .. }) => {
                    if !(value >= lo && value <= hi) {
                        return Err(Error::InvalidSample(format!(
                            "{}: value {value} outside [{lo}, {hi}]",
                            d.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::InvalidSample(format!(
                        "{}: value kind does not match dimension kind",
                        d.name
                    )))
                }
            }
        }
        Ok(())
    }

    /// Resolves a sample into concrete named values.
    pub fn decode(&self, sample: &ConfigSample) -> Result<DecodedConfig> {
        self.validate_sample(sample)?;
        let values = self
            .dims
            .iter()
            .zip(&sample.values)
            .map(|(d, v)| {
                let x = match (&d.kind, v) {
                    (DimensionKind::Discrete { candidates }, SampleValue::Index(i)) => candidates[*i],
                    (_, SampleValue::Real { value, .. }) => *value,
                    _ => unreachable!("validated above"),
                };
                (d.name.clone(), x)
            })
            .collect();
        Ok(DecodedConfig(values))
    }

    /// Draws one configuration uniformly: a uniform candidate per discrete
    /// dimension, a uniform unit value mapped by scale per continuous one.
    /// The returned `log_prob` is that of the uniform proposal on the
    /// unit-interval parametrization.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ConfigSample {
        let mut log_prob = 0.0;
        let values = self
            .dims
            .iter()
            .map(|d| match &d.kind {
                DimensionKind::Discrete { candidates } => {
                    log_prob -= libm::log(candidates.len() as f64);
                    SampleValue::Index(rng.random_range(0..candidates.len()))
                }
                DimensionKind::Continuous { .. } => {
                    let u: f64 = rng.random();
                    let value = d.map_unit(u).expect("continuous dimension");
                    SampleValue::Real {
                        value,
                        latent: logit(u),
                    }
                }
            })
            .collect();
        ConfigSample { values, log_prob }
    }

    /// Every index tuple of an all-discrete space, in lexicographic order with
    /// the first dimension slowest.
    pub fn enumerate(&self) -> Result<Vec<ConfigSample>> {
        if !self.is_discrete() {
            return Err(Error::InvalidSpace("cannot enumerate a continuous space".into()));
        }
        let cards: Vec<usize> = self.dims.iter().filter_map(|d| d.cardinality()).collect();
        let total: usize = cards.iter().product();
        let log_prob = -libm::log(total as f64);
        let mut out = Vec::with_capacity(total);
        for mut k in 0..total {
            let mut idx = alloc::vec![0usize; cards.len()];
            for (slot, &c) in idx.iter_mut().zip(&cards).rev() {
                *slot = k % c;
                k /= c;
            }
            out.push(ConfigSample {
                values: idx.into_iter().map(SampleValue::Index).collect(),
                log_prob,
            });
        }
        Ok(out)
    }
}

pub(crate) fn logit(u: f64) -> f64 {
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    libm::log(u / (1.0 - u))
}

/// One realized dimension value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleValue {
    /// Candidate index of a discrete dimension.
    Index(usize),
    /// Value of a continuous dimension in natural units, with the Gaussian
    /// variable it was squashed from.
    Real { value: f64, latent: f64 },
}

/// A drawn configuration for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSample {
    pub values: Vec<SampleValue>,
    /// Log-mass (discrete) or log-density (continuous latent) of the draw.
    pub log_prob: f64,
}

impl ConfigSample {
    pub fn from_indices(indices: &[usize]) -> Self {
        Self {
            values: indices.iter().copied().map(SampleValue::Index).collect(),
            log_prob: 0.0,
        }
    }

    pub fn index(&self, dim: usize) -> Option<usize> {
        match self.values.get(dim) {
            Some(SampleValue::Index(i)) => Some(*i),
            _ => None,
        }
    }
}

/// One configuration per client, indexed by client id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedAssignment {
    pub per_client: Vec<ConfigSample>,
}

impl PersonalizedAssignment {
    pub fn uniform(sample: ConfigSample, n: usize) -> Self {
        Self {
            per_client: alloc::vec![sample; n],
        }
    }

    pub fn len(&self) -> usize {
        self.per_client.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_client.is_empty()
    }

    pub fn log_prob(&self) -> f64 {
        self.per_client.iter().map(|c| c.log_prob).sum()
    }
}

/// Dimension name to concrete value, in canonical dimension order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedConfig(pub Vec<(String, f64)>);

impl DecodedConfig {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn graph_dc() -> SearchSpace {
        SearchSpace::new(vec![
            Dimension::discrete("lr", &[1e-4, 1e-3, 1e-2, 1e-1]).unwrap(),
            Dimension::discrete("steps", &[1.0, 2.0, 3.0, 4.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn sizes() {
        let s = graph_dc();
        assert_eq!(s.space_size().to_u128(), Some(16));
        assert_eq!(s.personalized_space_size(5).unwrap().to_u128(), Some(1_048_576));
        assert_eq!(s.personalized_space_size(1).unwrap(), s.space_size());

        let one = SearchSpace::new(vec![Dimension::discrete("x", &[3.0]).unwrap()]).unwrap();
        assert_eq!(one.space_size().to_u128(), Some(1));

        let two = SearchSpace::new(vec![Dimension::discrete("x", &[0.0, 1.0]).unwrap()]).unwrap();
        assert_eq!(two.personalized_space_size(10).unwrap().to_u128(), Some(1024));

        let mixed = SearchSpace::new(vec![
            Dimension::discrete("x", &[0.0, 1.0]).unwrap(),
            Dimension::continuous("lr", 1e-3, 1.0, Scale::Log).unwrap(),
        ])
        .unwrap();
        assert_eq!(mixed.space_size(), SpaceSize::Infinite);
        assert_eq!(mixed.personalized_space_size(3).unwrap(), SpaceSize::Infinite);
        assert!(s.personalized_space_size(0).is_err());
    }

    #[test]
    fn huge_personalized_size_is_exact() {
        let s = graph_dc();
        let size = s.personalized_space_size(3300).unwrap();
        assert_eq!(size.to_u128(), None);
        match size {
            SpaceSize::Finite(b) => assert_eq!(b, BigUint::from(16u32).pow(3300)),
            SpaceSize::Infinite => panic!(),
        }
    }

    #[test]
    fn decode_examples() {
        let s = SearchSpace::new(vec![
            Dimension::discrete("lr", &[1e-3, 5e-3, 1e-2, 5e-2, 1e-1]).unwrap(),
            Dimension::discrete("steps", &[1.0, 2.0, 3.0, 4.0]).unwrap(),
        ])
        .unwrap();
        let d = s.decode(&ConfigSample::from_indices(&[2, 3])).unwrap();
        assert_eq!(d.get("lr"), Some(1e-2));
        assert_eq!(d.get("steps"), Some(4.0));
        assert!(s.decode(&ConfigSample::from_indices(&[5, 0])).is_err());
        assert!(s.decode(&ConfigSample::from_indices(&[0])).is_err());

        let one = SearchSpace::new(vec![Dimension::discrete("x", &[0.7]).unwrap()]).unwrap();
        assert_eq!(
            one.decode(&ConfigSample::from_indices(&[0])).unwrap().get("x"),
            Some(0.7)
        );
    }

    #[test]
    fn invalid_dimensions() {
        assert!(Dimension::discrete("x", &[]).is_err());
        assert!(Dimension::discrete("x", &[1.0, 1.0]).is_err());
        assert!(Dimension::discrete("x", &[2.0, 1.0]).is_err());
        assert!(Dimension::discrete("x", &[f64::NAN]).is_err());
        assert!(Dimension::continuous("x", 1.0, 1.0, Scale::Linear).is_err());
        assert!(Dimension::continuous("x", 0.0, 1.0, Scale::Log).is_err());
        let d = Dimension::discrete("x", &[1.0]).unwrap();
        assert!(SearchSpace::new(vec![d.clone(), d]).is_err());
        assert!(SearchSpace::new(vec![]).is_err());
    }

    #[test]
    fn unit_maps() {
        let lin = Dimension::continuous("d", 0.0, 0.5, Scale::Linear).unwrap();
        assert_eq!(lin.map_unit(0.5).unwrap(), 0.25);
        let log = Dimension::continuous("lr", 1e-3, 1e-1, Scale::Log).unwrap();
        assert!((log.map_unit(0.5).unwrap() - 1e-2).abs() < 1e-15);
        assert_eq!(log.map_unit(0.0).unwrap(), 1e-3);
        assert_eq!(log.map_unit(1.0).unwrap(), 1e-1);
    }

    #[test]
    fn decode_is_bijective_on_enumeration() {
        let s = graph_dc();
        let all = s.enumerate().unwrap();
        assert_eq!(all.len(), 16);
        let decoded: BTreeSet<Vec<u64>> = all
            .iter()
            .map(|c| s.decode(c).unwrap().0.iter().map(|(_, v)| v.to_bits()).collect())
            .collect();
        assert_eq!(decoded.len(), 16);
        let indices: BTreeSet<Vec<usize>> = all
            .iter()
            .map(|c| (0..2).map(|d| c.index(d).unwrap()).collect())
            .collect();
        assert_eq!(indices.len(), 16);
    }

    #[test]
    fn personalized_size_matches_enumeration() {
        let s = SearchSpace::new(vec![
            Dimension::discrete("a", &[0.0, 1.0]).unwrap(),
            Dimension::discrete("b", &[0.0, 1.0, 2.0]).unwrap(),
        ])
        .unwrap();
        let per_client = s.enumerate().unwrap().len();
        for n in 1..=4usize {
            let joint = per_client.pow(n as u32);
            assert_eq!(s.personalized_space_size(n).unwrap().to_u128(), Some(joint as u128));
        }
    }
}
