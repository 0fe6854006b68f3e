use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic RNG used everywhere a seed is taken.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// How singular directions are chosen for the trainable subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SamplingScheme {
    /// Uniform without replacement.
    #[default]
    Random,
    /// Largest singular values.
    Top,
    /// Smallest singular values.
    Bottom,
}

impl SamplingScheme {
    pub const ALL: [SamplingScheme; 3] = [SamplingScheme::Random, SamplingScheme::Top, SamplingScheme::Bottom];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplingScheme::Random => "random",
            SamplingScheme::Top => "top",
            SamplingScheme::Bottom => "bottom",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SamplingScheme::Random => 0,
            SamplingScheme::Top => 1,
            SamplingScheme::Bottom => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(SamplingScheme::Random),
            "top" => Ok(SamplingScheme::Top),
            "bottom" => Ok(SamplingScheme::Bottom),
            other => Err(Error::InvalidInput(format!("unknown sampling scheme {other:?}"))),
        }
    }
}

/// `R` distinct positions in `[0, bound)`, kept in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSubset {
    indices: Vec<usize>,
}

impl IndexSubset {
    pub fn new(mut indices: Vec<usize>, bound: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate index in subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= bound) {
            return Err(Error::InvalidInput(format!("index {bad} out of range [0, {bound})")));
        }
        Ok(Self { indices })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Picks `count` singular-value positions out of `bound` according to `scheme`.
///
/// Positions index the descending-sorted spectrum, so `Top` is `0..count`
/// and `Bottom` is `bound-count..bound`. `Random` samples without
/// replacement; drawing with replacement would silently lower the adapter rank.
pub fn sample_indices(count: usize, bound: usize, scheme: SamplingScheme, rng: &mut SeededRng) -> Result<IndexSubset> {
    if count == 0 || count > bound {
        return Err(Error::RankTooLarge { rank: count, bound });
    }
    let indices = match scheme {
        SamplingScheme::Top => (0..count).collect(),
        SamplingScheme::Bottom => (bound - count..bound).collect(),
        SamplingScheme::Random => rand::seq::index::sample(rng, bound, count).into_vec(),
    };
    IndexSubset::new(indices, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_and_bottom() {
        let mut rng = seeded_rng(0);
        assert_eq!(sample_indices(2, 5, SamplingScheme::Top, &mut rng).unwrap().as_slice(), &[0, 1]);
        assert_eq!(sample_indices(2, 5, SamplingScheme::Bottom, &mut rng).unwrap().as_slice(), &[3, 4]);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let a = sample_indices(3, 10, SamplingScheme::Random, &mut seeded_rng(42)).unwrap();
        let b = sample_indices(3, 10, SamplingScheme::Random, &mut seeded_rng(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_out_of_range() {
        let mut rng = seeded_rng(0);
        assert_eq!(
            sample_indices(6, 5, SamplingScheme::Random, &mut rng),
            Err(Error::RankTooLarge { rank: 6, bound: 5 })
        );
        assert!(sample_indices(0, 5, SamplingScheme::Top, &mut rng).is_err());
    }

    #[test]
    fn subset_validation() {
        assert!(IndexSubset::new(vec![1, 1], 3).is_err());
        assert!(IndexSubset::new(vec![3], 3).is_err());
        assert_eq!(IndexSubset::new(vec![2, 0], 3).unwrap().as_slice(), &[0, 2]);
    }

    #[test]
    fn scheme_parsing() {
        for s in SamplingScheme::ALL {
            assert_eq!(s.as_str().parse::<SamplingScheme>().unwrap(), s);
            assert_eq!(SamplingScheme::from_code(s.code()), Some(s));
        }
        assert!("middle".parse::<SamplingScheme>().is_err());
    }

    proptest! {
        #[test]
        fn random_subsets_are_valid(bound in 1usize..64, frac in 0.0f64..1.0, seed in any::<u64>()) {
            let count = 1 + ((bound - 1) as f64 * frac) as usize;
            let s = sample_indices(count, bound, SamplingScheme::Random, &mut seeded_rng(seed)).unwrap();
            prop_assert_eq!(s.len(), count);
            prop_assert!(s.as_slice().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.as_slice().iter().all(|&i| i < bound));
        }
    }
}
