use fairband::preflib::{bandit_from_profile, beta_models, parse_soc, DOTS_RANK_MEANS};
use fairband::{stream_rng, RewardMatrix};

const DOTS: &str = include_str!("fixtures/dots.soc");

#[test]
fn fixture_is_consistent() {
    let soc = parse_soc(DOTS).unwrap();
    assert_eq!(soc.n_alternatives, 4);
    assert_eq!(soc.n_voters, 800);
    assert_eq!(soc.ballots.iter().map(|b| b.multiplicity).sum::<u64>(), 800);
    assert_eq!(soc.ballots[0].ranking, vec![0, 1, 2, 3]);
    assert_eq!(soc.to_profile().unwrap().n_voters(), 800);
}

#[test]
fn serialisation_round_trips() {
    let soc = parse_soc(DOTS).unwrap();
    let again = parse_soc(&soc.to_soc_string()).unwrap();
    assert_eq!(soc, again);
}

#[test]
fn sampled_bandit_is_deterministic_and_rank_valued() {
    let profile = parse_soc(DOTS).unwrap().to_profile().unwrap();
    let a = bandit_from_profile(&profile, &DOTS_RANK_MEANS, 50, 7).unwrap();
    let b = bandit_from_profile(&profile, &DOTS_RANK_MEANS, 50, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_agents(), 50);
    let mut want = DOTS_RANK_MEANS.to_vec();
    want.sort_by(f64::total_cmp);
    for row in a.rows() {
        let mut got = row.to_vec();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }
    assert!(bandit_from_profile(&profile, &DOTS_RANK_MEANS, 801, 7).is_err());
}

#[test]
fn beta_rewards_have_configured_means() {
    let means = RewardMatrix::new(vec![DOTS_RANK_MEANS.to_vec()]).unwrap();
    let model = beta_models(&means, 0.1).unwrap();
    let mut rng = stream_rng(5, 1);
    let draws = 100_000;
    for (arm, &mean) in DOTS_RANK_MEANS.iter().enumerate() {
        let avg = (0..draws).map(|_| model.sample(0, arm, &mut rng)).sum::<f64>() / draws as f64;
        assert!((avg - mean).abs() <= 0.01, "arm {arm}: {avg} vs {mean}");
    }
}

#[test]
fn rejects_ties_and_other_variants() {
    let tied = DOTS.replacen("131: 1,2,3,4", "131: 1,{2,3},4", 1);
    assert!(parse_soc(&tied).is_err());
    let soi = DOTS.replacen("DATA TYPE: soc", "DATA TYPE: soi", 1);
    assert!(parse_soc(&soi).is_err());
}
