use std::collections::HashMap;

use fairband::model::favorite_sets;
use fairband::prefgen::{is_single_peaked, sample_profile, Distribution};
use fairband::sweep::{
    aggregate, cell_matrix, enumerate_sweep, run_sweep, write_records, write_table1, FavoriteMode,
    SweepConfig,
};
use fairband::stream_rng;
use proptest::prelude::*;

const PERMS3: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn inversions(r: &[usize]) -> i32 {
    let mut d = 0;
    for i in 0..r.len() {
        for j in i + 1..r.len() {
            if r[i] > r[j] {
                d += 1;
            }
        }
    }
    d
}

fn total_variation(dist: Distribution, samples: usize, expected: impl Fn(&[usize]) -> f64) -> f64 {
    let mut rng = stream_rng(2024, 0);
    let profile = sample_profile(dist, samples, 3, &mut rng).unwrap();
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for r in profile.rankings() {
        *counts.entry(r.clone()).or_default() += 1;
    }
    PERMS3
        .iter()
        .map(|p| (counts.get(&p.to_vec()).copied().unwrap_or(0) as f64 / samples as f64 - expected(p)).abs())
        .sum::<f64>()
        / 2.0
}

#[test]
fn mallows_frequencies_match_kendall_weights() {
    for phi in [0.01f64, 0.25, 0.5, 0.75, 0.99] {
        let z: f64 = PERMS3.iter().map(|p| phi.powi(inversions(p))).sum();
        let tv = total_variation(Distribution::Mallows { phi }, 100_000, |p| phi.powi(inversions(p)) / z);
        assert!(tv <= 0.02, "phi {phi}: tv {tv}");
    }
}

#[test]
fn uniform_cultures_are_uniform() {
    for dist in [Distribution::Uniform, Distribution::ImpartialCulture] {
        let tv = total_variation(dist, 100_000, |_| 1.0 / 6.0);
        assert!(tv <= 0.02, "{dist}: tv {tv}");
    }
}

#[test]
fn single_peaked_samples_pass_prefix_test() {
    let mut rng = stream_rng(3, 0);
    for k in 1..=10 {
        let profile = sample_profile(Distribution::SinglePeaked, 500, k, &mut rng).unwrap();
        assert!(profile.rankings().iter().all(|r| is_single_peaked(r)));
    }
}

#[test]
fn default_sweep_has_7776_cells() {
    assert_eq!(enumerate_sweep(&SweepConfig::default()).len(), 7776);
}

#[test]
fn sweep_means_and_favourite_counts() {
    let cfg = SweepConfig::default();
    for cell in enumerate_sweep(&cfg) {
        let m = cell_matrix(&cell, &cfg).unwrap();
        assert!(m.as_flat().iter().all(|&v| v > 0.0 && v < 1.0));
        let sets = favorite_sets(&m, cfg.tie_tolerance);
        for s in sets.sets() {
            match cell.mode {
                FavoriteMode::Equal => assert_eq!(s.len(), cell.n_favorites, "cell {}", cell.cell_id),
                FavoriteMode::Random => assert!((1..=cell.n_favorites).contains(&s.len())),
            }
        }
    }
}

fn small_config() -> SweepConfig {
    SweepConfig {
        n_agents: vec![2, 3, 4],
        n_arms: vec![2, 3, 4],
        n_favorites: vec![1, 2],
        ..SweepConfig::default()
    }
}

fn render(cfg: &SweepConfig, jobs: usize) -> (Vec<u8>, Vec<u8>) {
    let records = run_sweep(&enumerate_sweep(cfg), cfg, jobs).unwrap();
    let (mut table, mut raw) = (Vec::new(), Vec::new());
    write_table1(&mut table, &aggregate(&records)).unwrap();
    write_records(&mut raw, &records).unwrap();
    (table, raw)
}

#[test]
fn sweep_output_independent_of_worker_count() {
    let cfg = small_config();
    assert_eq!(render(&cfg, 1), render(&cfg, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_rankings_are_permutations(phi in 0.01f64..=1.0, k in 1usize..8, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        for dist in [Distribution::Mallows { phi }, Distribution::SinglePeaked, Distribution::Uniform] {
            let profile = sample_profile(dist, 20, k, &mut rng).unwrap();
            for r in profile.rankings() {
                let mut s = r.clone();
                s.sort_unstable();
                prop_assert_eq!(s, (0..k).collect::<Vec<_>>());
            }
        }
    }
}
