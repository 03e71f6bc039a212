//! Synthetic preference profiles and reward means derived from rankings.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DEFAULT_TIE_TOLERANCE;

/// Rankings over alternatives `0..n_alternatives`, most preferred first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    n_alternatives: usize,
    rankings: Vec<Vec<usize>>,
}

impl PreferenceProfile {
    pub fn new(n_alternatives: usize, rankings: Vec<Vec<usize>>) -> Result<Self> {
        if rankings.is_empty() {
            return Err(Error::InvalidInput("profile needs at least one voter".into()));
        }
        for (v, r) in rankings.iter().enumerate() {
            if !is_permutation(r, n_alternatives) {
                return Err(Error::InvalidInput(format!(
                    "ranking of voter {v} is not a permutation of {n_alternatives} alternatives"
                )));
            }
        }
        Ok(Self {
            n_alternatives,
            rankings,
        })
    }

    pub fn n_voters(&self) -> usize {
        self.rankings.len()
    }

    pub fn n_alternatives(&self) -> usize {
        self.n_alternatives
    }

    pub fn rankings(&self) -> &[Vec<usize>] {
        &self.rankings
    }
}

pub(crate) fn is_permutation(r: &[usize], n: usize) -> bool {
    if r.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    r.iter().all(|&a| a < n && !std::mem::replace(&mut seen[a], true))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Distribution {
    Uniform,
    ImpartialCulture,
    SinglePeaked,
    Mallows { phi: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Mallows { phi } if !(phi > 0.0 && phi <= 1.0) => Err(
                Error::InvalidInput(format!("Mallows dispersion must lie in (0, 1], got {phi}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::ImpartialCulture => "impartial-culture",
            Distribution::SinglePeaked => "single-peaked",
            Distribution::Mallows { .. } => "mallows",
        }
    }

    pub fn phi(&self) -> Option<f64> {
        match self {
            Distribution::Mallows { phi } => Some(*phi),
            _ => None,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Mallows { phi } => write!(f, "mallows-{phi}"),
            other => f.write_str(other.label()),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let d = match s {
            "uniform" => Distribution::Uniform,
            "impartial-culture" | "ic" => Distribution::ImpartialCulture,
            "single-peaked" | "sp" => Distribution::SinglePeaked,
            _ => match s.strip_prefix("mallows-") {
                Some(phi) => Distribution::Mallows {
                    phi: phi
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad Mallows dispersion in '{s}'")))?,
                },
                None => return Err(Error::InvalidInput(format!("unknown distribution '{s}'"))),
            },
        };
        d.validate()?;
        Ok(d)
    }
}

impl TryFrom<String> for Distribution {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Distribution> for String {
    fn from(d: Distribution) -> String {
        d.to_string()
    }
}

fn mallows_ranking<R: Rng + ?Sized>(k: usize, phi: f64, rng: &mut R) -> Vec<usize> {
    let mut ranking: Vec<usize> = Vec::with_capacity(k);
    for item in 0..k {
        // Inserting at position j (0-based) in a list of length `item`
        // creates `item - j` inversions against the identity.
        let weights: Vec<f64> = (0..=item).map(|j| phi.powi((item - j) as i32)).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pos = item;
        for (j, w) in weights.iter().enumerate() {
            if u < *w {
                pos = j;
                break;
            }
            u -= w;
        }
        ranking.insert(pos, item);
    }
    ranking
}

fn single_peaked_ranking<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<usize> {
    let (mut lo, mut hi) = (0, k - 1);
    let mut worst_first = Vec::with_capacity(k);
    while lo < hi {
        if rng.random::<bool>() {
            worst_first.push(lo);
            lo += 1;
        } else {
            worst_first.push(hi);
            hi -= 1;
        }
    }
    worst_first.push(lo);
    worst_first.reverse();
    worst_first
}

/// True iff every prefix of `ranking` is a contiguous block of the axis `0 < 1 < … < K-1`.
pub fn is_single_peaked(ranking: &[usize]) -> bool {
    let Some(&first) = ranking.first() else {
        return true;
    };
    let (mut lo, mut hi) = (first, first);
    ranking[1..].iter().all(|&a| {
        if lo > 0 && a == lo - 1 {
            lo = a;
            true
        } else if a == hi + 1 {
            hi = a;
            true
        } else {
            false
        }
    })
}

pub fn sample_profile<R: Rng + ?Sized>(
    distribution: Distribution,
    n_voters: usize,
    n_alternatives: usize,
    rng: &mut R,
) -> Result<PreferenceProfile> {
    distribution.validate()?;
    if n_voters == 0 || n_alternatives == 0 {
        return Err(Error::InvalidInput("profile needs voters and alternatives".into()));
    }
    let rankings = (0..n_voters)
        .map(|_| match distribution {
            Distribution::Uniform | Distribution::ImpartialCulture => {
                let mut r: Vec<usize> = (0..n_alternatives).collect();
                r.shuffle(rng);
                r
            }
            Distribution::SinglePeaked => single_peaked_ranking(n_alternatives, rng),
            Distribution::Mallows { phi } => mallows_ranking(n_alternatives, phi, rng),
        })
        .collect();
    PreferenceProfile::new(n_alternatives, rankings)
}

pub const MEAN_CENTER: f64 = 0.5;
pub const MEAN_STD: f64 = 0.25;
const OPEN_MARGIN: f64 = 1e-6;

/// Assigns descending `sorted` values to arms by rank and flattens the top `f` to the maximum.
pub fn assign_means(ranking: &[usize], sorted: &[f64], n_favorites: usize) -> Vec<f64> {
    let mut means = vec![0.0; ranking.len()];
    for (rank, &arm) in ranking.iter().enumerate() {
        means[arm] = if rank < n_favorites { sorted[0] } else { sorted[rank] };
    }
    means
}

/// Draws clamped normal means for one agent with exactly `n_favorites` tied best arms.
///
/// Draws whose clamped values would create an extra tie at the top are redrawn.
pub fn means_from_ranking<R: Rng + ?Sized>(
    ranking: &[usize],
    n_favorites: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    means_from_ranking_with_std(ranking, n_favorites, MEAN_STD, rng)
}

/// [`means_from_ranking`] with an explicit standard deviation for the draws.
pub fn means_from_ranking_with_std<R: Rng + ?Sized>(
    ranking: &[usize],
    n_favorites: usize,
    std: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = ranking.len();
    if n_favorites == 0 || n_favorites > k {
        return Err(Error::InvalidInput(format!(
            "favourite count {n_favorites} must lie in 1..={k}"
        )));
    }
    let normal = Normal::new(MEAN_CENTER, std)
        .map_err(|_| Error::InvalidInput(format!("invalid standard deviation {std}")))?;
    loop {
        let mut draws: Vec<f64> = (0..k)
            .map(|_| normal.sample(rng).clamp(OPEN_MARGIN, 1.0 - OPEN_MARGIN))
            .collect();
        draws.sort_by(|a, b| b.total_cmp(a));
        if n_favorites < k && draws[0] - draws[n_favorites] <= DEFAULT_TIE_TOLERANCE {
            continue;
        }
        return Ok(assign_means(ranking, &draws, n_favorites));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use crate::model::{favorite_sets, RewardMatrix};

    #[test]
    fn rank_assignment() {
        assert_eq!(assign_means(&[1, 0, 2], &[0.9, 0.6, 0.2], 1), vec![0.6, 0.9, 0.2]);
        assert_eq!(assign_means(&[1, 0, 2], &[0.9, 0.6, 0.2], 3), vec![0.9; 3]);
    }

    #[test]
    fn favourite_counts() {
        let mut rng = stream_rng(3, 0);
        for f in 1..=5 {
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| {
                    let mut r: Vec<usize> = (0..5).collect();
                    r.shuffle(&mut rng);
                    means_from_ranking(&r, f, &mut rng).unwrap()
                })
                .collect();
            assert!(rows.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
            let sets = favorite_sets(&RewardMatrix::new(rows).unwrap(), DEFAULT_TIE_TOLERANCE);
            assert!(sets.sets().iter().all(|s| s.len() == f));
        }
        assert!(means_from_ranking(&[0, 1], 0, &mut rng).is_err());
        assert!(means_from_ranking(&[0, 1], 3, &mut rng).is_err());
    }

    #[test]
    fn single_peaked_shapes() {
        assert!(!is_single_peaked(&[2, 0, 1]));
        assert!(is_single_peaked(&[1, 2, 0]));
        let mut rng = stream_rng(9, 0);
        let p = sample_profile(Distribution::SinglePeaked, 5000, 3, &mut rng).unwrap();
        assert!(p.rankings().iter().all(|r| is_single_peaked(r)));
        assert!(p.rankings().iter().all(|r| r != &vec![2, 0, 1]));
        assert_eq!(sample_profile(Distribution::SinglePeaked, 1, 1, &mut rng).unwrap().rankings()[0], vec![0]);
    }

    #[test]
    fn distribution_labels() {
        for d in [
            Distribution::Uniform,
            Distribution::ImpartialCulture,
            Distribution::SinglePeaked,
            Distribution::Mallows { phi: 0.25 },
        ] {
            assert_eq!(d.to_string().parse::<Distribution>().unwrap(), d);
        }
        assert!("mallows-0".parse::<Distribution>().is_err());
        assert!("mallows-1.5".parse::<Distribution>().is_err());
        let mut rng = stream_rng(0, 0);
        assert!(sample_profile(Distribution::Mallows { phi: 0.0 }, 3, 3, &mut rng).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(PreferenceProfile::new(3, vec![vec![0, 0, 2]]).is_err());
        assert!(PreferenceProfile::new(3, vec![]).is_err());
        assert!(PreferenceProfile::new(3, vec![vec![2, 0, 1]]).is_ok());
    }
}
