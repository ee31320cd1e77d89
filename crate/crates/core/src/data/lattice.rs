use super::CovariateSchema;
use crate::error::{Error, Result};

/// All fine subgroups of the full cross-classification, in canonical order:
/// lexicographic over covariate positions with the last covariate varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgroupLattice {
    level_counts: Vec<usize>,
    profiles: Vec<Vec<usize>>,
}

impl SubgroupLattice {
    pub fn profiles(&self) -> &[Vec<usize>] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn level_counts(&self) -> &[usize] {
        &self.level_counts
    }

    /// Position of a profile in the canonical order (mixed-radix encoding).
    pub fn index_of(&self, profile: &[usize]) -> Option<usize> {
        if profile.len() != self.level_counts.len() {
            return None;
        }
        let mut idx = 0;
        for (&level, &k) in profile.iter().zip(&self.level_counts) {
            if level >= k {
                return None;
            }
            idx = idx * k + level;
        }
        Some(idx)
    }
}

pub fn enumerate_lattice(schema: &CovariateSchema) -> Result<SubgroupLattice> {
    for c in schema.covariates() {
        if c.levels.len() < 2 {
            return Err(Error::TooFewLevels(c.name.clone()));
        }
    }
    let level_counts = schema.level_counts();
    let total: usize = level_counts.iter().product();
    let mut profiles = Vec::with_capacity(total);
    let mut current = vec![0usize; level_counts.len()];
    for _ in 0..total {
        profiles.push(current.clone());
        for pos in (0..current.len()).rev() {
            current[pos] += 1;
            if current[pos] < level_counts[pos] {
                break;
            }
            current[pos] = 0;
        }
    }
    Ok(SubgroupLattice {
        level_counts,
        profiles,
    })
}
