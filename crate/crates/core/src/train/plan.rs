use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SeededRng;

/// Fixed-size training subsets, each a sorted list of distinct indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPlan {
    pub n: usize,
    pub a: usize,
    pub subsets: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SubsetPlan {
    pub fn s(&self) -> usize {
        self.subsets.len()
    }

    /// Every size-`a` subset of `0..n` in lexicographic order.
    pub fn exhaustive(n: usize, a: usize) -> Result<Self> {
        check_sizes(n, a)?;
        let count = binomial(n, a);
        if count > 1_000_000 {
            return Err(Error::Capability(format!(
                "C({n}, {a}) = {count} subsets is too many to enumerate"
            )));
        }
        let mut subsets = Vec::with_capacity(count as usize);
        let mut cur: Vec<usize> = (0..a).collect();
        loop {
            subsets.push(cur.clone());
            // advance to the next combination
            let mut i = a;
            loop {
                if i == 0 {
                    return Ok(Self {
                        n,
                        a,
                        subsets,
                        seed: 0,
                    });
                }
                i -= 1;
                if cur[i] < n - a + i {
                    break;
                }
            }
            cur[i] += 1;
            for j in i + 1..a {
                cur[j] = cur[j - 1] + 1;
            }
        }
    }

    /// Number of subsets containing each index.
    pub fn inclusion_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n];
        for s in &self.subsets {
            for &i in s {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Membership mask of subset `j`.
    pub fn mask(&self, j: usize) -> Vec<bool> {
        let mut m = vec![false; self.n];
        for &i in &self.subsets[j] {
            m[i] = true;
        }
        m
    }
}

fn check_sizes(n: usize, a: usize) -> Result<()> {
    if a == 0 || a > n {
        return Err(Error::Domain(format!(
            "subset size must satisfy 1 <= a <= n, got a={a}, n={n}"
        )));
    }
    Ok(())
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `s` independent uniform draws of size-`a` subsets of `0..n`; subset `j`
/// uses its own stream of `seed`.
pub fn sample_subsets(n: usize, a: usize, s: usize, seed: u64) -> Result<SubsetPlan> {
    check_sizes(n, a)?;
    if s == 0 {
        return Err(Error::Domain("need at least one subset".into()));
    }
    let subsets = (0..s)
        .map(|j| SeededRng::new(seed, j as u64).sample_without_replacement(n, a))
        .collect();
    Ok(SubsetPlan {
        n,
        a,
        subsets,
        seed,
    })
}
