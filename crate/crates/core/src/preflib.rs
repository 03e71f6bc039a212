//! PrefLib strict-order-complete (SOC) files and bandits built from them.

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{beta_shape, RewardDist, RewardMatrix, RewardModel};
use crate::prefgen::{is_permutation, PreferenceProfile};
use crate::stream_rng;

/// Rank means used for the Dots experiment: first choice 0.9 down to last 0.1.
pub const DOTS_RANK_MEANS: [f64; 4] = [0.9, 0.63, 0.37, 0.1];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub multiplicity: u64,
    /// Zero-based alternatives, most preferred first.
    pub ranking: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocFile {
    /// `# KEY: value` header lines in file order.
    pub metadata: Vec<(String, String)>,
    pub n_alternatives: usize,
    pub n_voters: u64,
    pub ballots: Vec<Ballot>,
}

const KEY_DATA_TYPE: &str = "DATA TYPE";
const KEY_ALTERNATIVES: &str = "NUMBER ALTERNATIVES";
const KEY_VOTERS: &str = "NUMBER VOTERS";
const KEY_UNIQUE: &str = "NUMBER UNIQUE ORDERS";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn header_number<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| parse_err(line, format!("{key} must be a non-negative integer, got '{value}'")))
}

/// Parses a SOC file; other PrefLib variants and ties are rejected.
pub fn parse_soc(text: &str) -> Result<SocFile> {
    let mut metadata = Vec::new();
    let mut n_alternatives: Option<(usize, usize)> = None;
    let mut n_voters: Option<(u64, usize)> = None;
    let mut n_unique: Option<(usize, usize)> = None;
    let mut ballots: Vec<Ballot> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if !ballots.is_empty() {
                return Err(parse_err(line_no, "metadata line after the first ballot"));
            }
            let (key, value) = header
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, "metadata line without ':'"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                KEY_DATA_TYPE if !value.eq_ignore_ascii_case("soc") => {
                    return Err(parse_err(
                        line_no,
                        format!("unsupported PrefLib data type '{value}', only soc is accepted"),
                    ))
                }
                KEY_ALTERNATIVES => n_alternatives = Some((header_number(value, key, line_no)?, line_no)),
                KEY_VOTERS => n_voters = Some((header_number(value, key, line_no)?, line_no)),
                KEY_UNIQUE => n_unique = Some((header_number(value, key, line_no)?, line_no)),
                _ => {}
            }
            metadata.push((key.to_string(), value.to_string()));
            continue;
        }

        let (k, _) = n_alternatives
            .ok_or_else(|| parse_err(line_no, format!("ballot before '# {KEY_ALTERNATIVES}'")))?;
        let (count, order) = line
            .split_once(':')
            .ok_or_else(|| parse_err(line_no, "expected 'count: a,b,...'"))?;
        let multiplicity: u64 = count
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad multiplicity '{}'", count.trim())))?;
        if multiplicity == 0 {
            return Err(parse_err(line_no, "multiplicity must be positive"));
        }
        if order.contains('{') || order.contains('}') {
            return Err(parse_err(line_no, "tied alternatives are not allowed in soc data"));
        }
        let ranking = order
            .split(',')
            .map(|tok| {
                let a: usize = tok
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad alternative '{}'", tok.trim())))?;
                if a == 0 || a > k {
                    return Err(parse_err(line_no, format!("alternative {a} outside 1..={k}")));
                }
                Ok(a - 1)
            })
            .collect::<Result<Vec<usize>>>()?;
        if !is_permutation(&ranking, k) {
            return Err(parse_err(
                line_no,
                format!("incomplete ranking: expected each of the {k} alternatives exactly once"),
            ));
        }
        ballots.push(Ballot {
            multiplicity,
            ranking,
        });
    }

    let (n_alternatives, _) =
        n_alternatives.ok_or_else(|| parse_err(last_line, format!("missing '# {KEY_ALTERNATIVES}'")))?;
    let (n_voters, voters_line) =
        n_voters.ok_or_else(|| parse_err(last_line, format!("missing '# {KEY_VOTERS}'")))?;
    let total: u64 = ballots.iter().map(|b| b.multiplicity).sum();
    if total != n_voters {
        return Err(parse_err(
            voters_line,
            format!("ballot multiplicities sum to {total} but {n_voters} voters are declared"),
        ));
    }
    if let Some((unique, line)) = n_unique {
        if unique != ballots.len() {
            return Err(parse_err(
                line,
                format!("{} distinct orders listed but {unique} declared", ballots.len()),
            ));
        }
    }
    if ballots.is_empty() {
        return Err(parse_err(last_line, "file contains no ballots"));
    }
    Ok(SocFile {
        metadata,
        n_alternatives,
        n_voters,
        ballots,
    })
}

impl SocFile {
    pub fn to_soc_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}: {v}");
        }
        for b in &self.ballots {
            let order: Vec<String> = b.ranking.iter().map(|a| (a + 1).to_string()).collect();
            let _ = writeln!(out, "{}: {}", b.multiplicity, order.join(","));
        }
        out
    }

    /// One ranking per voter, ballots expanded by multiplicity in file order.
    pub fn to_profile(&self) -> Result<PreferenceProfile> {
        let rankings = self
            .ballots
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.ranking.clone(), b.multiplicity as usize))
            .collect();
        PreferenceProfile::new(self.n_alternatives, rankings)
    }
}

/// Samples `n_sample` voters without replacement and maps rank `r` to `rank_means[r]`.
pub fn bandit_from_profile(
    profile: &PreferenceProfile,
    rank_means: &[f64],
    n_sample: usize,
    seed: u64,
) -> Result<RewardMatrix> {
    let k = profile.n_alternatives();
    if rank_means.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} rank means for {k} alternatives",
            rank_means.len()
        )));
    }
    if n_sample > profile.n_voters() {
        return Err(Error::SampleTooLarge {
            requested: n_sample,
            available: profile.n_voters(),
        });
    }
    if n_sample == 0 {
        return Err(Error::InvalidInput("sample at least one voter".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let rows = sample(&mut rng, profile.n_voters(), n_sample)
        .into_iter()
        .map(|v| {
            let mut row = vec![0.0; k];
            for (rank, &arm) in profile.rankings()[v].iter().enumerate() {
                row[arm] = rank_means[rank];
            }
            row
        })
        .collect();
    RewardMatrix::new(rows)
}

/// Beta reward model with the given standard deviation around every mean.
pub fn beta_models(means: &RewardMatrix, std: f64) -> Result<RewardModel> {
    let offending: Vec<(usize, usize)> = (0..means.n_agents())
        .flat_map(|i| (0..means.n_arms()).map(move |k| (i, k)))
        .filter(|&(i, k)| beta_shape(means.get(i, k), std).is_err())
        .collect();
    if !offending.is_empty() {
        return Err(Error::InfeasibleStd {
            std,
            entries: offending,
        });
    }
    let dists = means
        .as_flat()
        .iter()
        .map(|&mean| RewardDist::BetaMeanStd { mean, std })
        .collect();
    RewardModel::new(means.n_agents(), means.n_arms(), dists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SMALL: &str = "# FILE NAME: small.soc\n# DATA TYPE: soc\n# NUMBER ALTERNATIVES: 4\n# NUMBER VOTERS: 5\n# NUMBER UNIQUE ORDERS: 2\n3: 1,2,3,4\n2: 2,4,1,3\n";

    #[test]
    fn parses_ballots() {
        let soc = parse_soc(SMALL).unwrap();
        assert_eq!(soc.n_alternatives, 4);
        assert_eq!(soc.n_voters, 5);
        assert_eq!(soc.ballots[0], Ballot { multiplicity: 3, ranking: vec![0, 1, 2, 3] });
        assert_eq!(soc.to_profile().unwrap().n_voters(), 5);
    }

    #[test]
    fn round_trip() {
        let soc = parse_soc(SMALL).unwrap();
        assert_eq!(parse_soc(&soc.to_soc_string()).unwrap(), soc);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = |body: &str| parse_soc(&format!("# DATA TYPE: soc\n# NUMBER ALTERNATIVES: 4\n# NUMBER VOTERS: 2\n{body}"));
        let err = bad("2: 1,1,3,4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, ref message } if message.contains("incomplete")));
        assert!(matches!(bad("1: 1,2,3,4\n").unwrap_err(), Error::Parse { line: 3, .. }));
        assert!(matches!(bad("two: 1,2,3,4\n").unwrap_err(), Error::Parse { line: 4, .. }));
        assert!(matches!(bad("2: 1,2,3\n").unwrap_err(), Error::Parse { line: 4, .. }));
        assert!(matches!(bad("2: 1,2,3,5\n").unwrap_err(), Error::Parse { line: 4, .. }));
        assert!(matches!(bad("2: 1,{2,3},4\n").unwrap_err(), Error::Parse { line: 4, .. }));
        assert!(parse_soc("# DATA TYPE: soi\n# NUMBER ALTERNATIVES: 2\n# NUMBER VOTERS: 1\n1: 1\n").is_err());
        assert!(parse_soc("1: 1,2\n").is_err());
    }

    #[test]
    fn rank_to_arm_mapping() {
        let profile = PreferenceProfile::new(4, vec![vec![1, 3, 0, 2]]).unwrap();
        let m = bandit_from_profile(&profile, &DOTS_RANK_MEANS, 1, 0).unwrap();
        assert_eq!(m.row(0), &[0.37, 0.9, 0.1, 0.63]);
        assert!(matches!(
            bandit_from_profile(&profile, &DOTS_RANK_MEANS, 2, 0),
            Err(Error::SampleTooLarge { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn full_sample_covers_every_ballot() {
        let soc = parse_soc(SMALL).unwrap();
        let profile = soc.to_profile().unwrap();
        let m = bandit_from_profile(&profile, &DOTS_RANK_MEANS, 5, 7).unwrap();
        let first_choice_two = m.rows().filter(|r| r[1] == 0.9).count();
        assert_eq!(first_choice_two, 2);
        assert_eq!(m, bandit_from_profile(&profile, &DOTS_RANK_MEANS, 5, 7).unwrap());
        for row in m.rows() {
            let mut sorted = row.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(sorted, DOTS_RANK_MEANS);
        }
    }

    #[test]
    fn beta_parameters() {
        let (a, b) = beta_shape(0.9, 0.1).unwrap();
        assert_abs_diff_eq!(a, 7.2, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 0.8, epsilon = 1e-12);
        let (a, b) = beta_shape(0.5, 0.1).unwrap();
        assert_abs_diff_eq!(a, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 12.0, epsilon = 1e-12);
        let m = RewardMatrix::new(vec![vec![0.5, 0.1]]).unwrap();
        assert!(beta_models(&m, 0.1).is_ok());
        match beta_models(&m, 0.31) {
            Err(Error::InfeasibleStd { entries, .. }) => assert_eq!(entries, vec![(0, 1)]),
            other => panic!("{other:?}"),
        }
    }
}
