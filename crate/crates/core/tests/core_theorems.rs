use fairband::coregame::{check_outcome_core, check_procedural_core, CoreVerdict, BLOCKING_TOLERANCE};
use fairband::model::{decision_shares, favorite_sets, utilities};
use fairband::policies::{nsw_optimal, pf_optimal};
use fairband::{stream_rng, Policy, RewardMatrix, SolverSettings, DEFAULT_TIE_TOLERANCE};
use rand::seq::SliceRandom;
use rand::Rng;

fn random_instance(rng: &mut impl Rng) -> RewardMatrix {
    let n = rng.random_range(1..=5);
    let k = rng.random_range(1..=5);
    RewardMatrix::new(
        (0..n)
            .map(|_| {
                let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
                if k > 1 && rng.random::<f64>() < 0.4 {
                    let top = row.iter().copied().fold(0.0, f64::max);
                    row[rng.random_range(0..k)] = top;
                }
                row
            })
            .collect(),
    )
    .unwrap()
}

fn random_policy(rng: &mut impl Rng, k: usize) -> Policy {
    let w: Vec<f64> = (0..k)
        .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() + 1e-3 })
        .collect();
    let s: f64 = w.iter().sum();
    if s == 0.0 {
        return Policy::uniform(k);
    }
    Policy::new(w.into_iter().map(|v| v / s).collect()).unwrap()
}

#[test]
fn pf_optimal_lies_in_procedural_core() {
    let mut rng = stream_rng(500, 0);
    let settings = SolverSettings::default();
    for case in 0..200 {
        let m = random_instance(&mut rng);
        let (p, _) = pf_optimal(&m, DEFAULT_TIE_TOLERANCE, &settings).unwrap();
        let v = check_procedural_core(&m, &p, DEFAULT_TIE_TOLERANCE, BLOCKING_TOLERANCE).unwrap();
        assert!(v.in_core, "case {case}: blocked by {:?}", v.blocking_coalition);
    }
}

#[test]
fn core_certified_policies_give_fair_shares() {
    let mut rng = stream_rng(501, 0);
    let settings = SolverSettings::default();
    let mut certified = 0;
    for _ in 0..200 {
        let m = random_instance(&mut rng);
        let k = m.n_arms();
        let (pf, _) = pf_optimal(&m, DEFAULT_TIE_TOLERANCE, &settings).unwrap();
        let mut candidates = vec![pf.clone(), Policy::uniform(k)];
        for _ in 0..5 {
            let q = random_policy(&mut rng, k);
            candidates.push(pf.mix(&q, rng.random_range(0.0..0.2)).unwrap());
            candidates.push(q);
        }
        for p in candidates {
            let v = check_procedural_core(&m, &p, DEFAULT_TIE_TOLERANCE, BLOCKING_TOLERANCE).unwrap();
            if v.in_core {
                certified += 1;
                let n = m.n_agents() as f64;
                for s in decision_shares(&m, &p, DEFAULT_TIE_TOLERANCE).unwrap() {
                    assert!(s >= 1.0 / n - 1e-6, "share {s} below 1/{n}");
                }
            }
        }
    }
    assert!(certified >= 200);
}

#[test]
fn blocking_witnesses_satisfy_definition() {
    let mut rng = stream_rng(502, 0);
    let mut seen = 0;
    for _ in 0..200 {
        let m = random_instance(&mut rng);
        let p = random_policy(&mut rng, m.n_arms());
        let v = check_outcome_core(&m, &p, BLOCKING_TOLERANCE).unwrap();
        let (Some(coalition), Some(dev)) = (v.blocking_coalition, v.blocking_policy) else {
            continue;
        };
        seen += 1;
        let scale = coalition.len() as f64 / m.n_agents() as f64;
        let (old, new) = (utilities(&m, &p).unwrap(), utilities(&m, &dev).unwrap());
        assert!(coalition.iter().all(|&i| scale * new[i] >= old[i] - 1e-9));
        assert!(coalition.iter().any(|&i| scale * new[i] > old[i] + BLOCKING_TOLERANCE));
    }
    assert!(seen > 20);
}

/// Witnesses are minimal in size, so only their size is label-free; the margin is the global maximum when in core.
fn same_verdict(a: &CoreVerdict, b: &CoreVerdict) {
    assert_eq!(a.in_core, b.in_core);
    if a.in_core {
        assert!((a.margin - b.margin).abs() < 1e-7);
    } else {
        assert_eq!(a.blocking_coalition.as_ref().map(Vec::len), b.blocking_coalition.as_ref().map(Vec::len));
    }
}

#[test]
fn verdicts_invariant_under_relabelling() {
    let mut rng = stream_rng(503, 0);
    for _ in 0..100 {
        let m = random_instance(&mut rng);
        let p = random_policy(&mut rng, m.n_arms());
        let mut order: Vec<usize> = (0..m.n_agents()).collect();
        order.shuffle(&mut rng);
        let q = m.permute_agents(&order).unwrap();
        let a = check_procedural_core(&m, &p, DEFAULT_TIE_TOLERANCE, BLOCKING_TOLERANCE).unwrap();
        let b = check_procedural_core(&q, &p, DEFAULT_TIE_TOLERANCE, BLOCKING_TOLERANCE).unwrap();
        same_verdict(&a, &b);
        let a = check_outcome_core(&m, &p, BLOCKING_TOLERANCE).unwrap();
        let b = check_outcome_core(&q, &p, BLOCKING_TOLERANCE).unwrap();
        same_verdict(&a, &b);
    }
}

#[test]
fn nsw_policy_can_leave_procedural_core() {
    let m = RewardMatrix::new(vec![vec![1.0, 0.99], vec![0.0, 1.0]]).unwrap();
    let p = nsw_optimal(&m, &SolverSettings::default()).unwrap();
    assert!(p.max_abs_diff(&Policy::new(vec![0.0, 1.0]).unwrap()) < 1e-6);
    let v = check_procedural_core(&m, &p, DEFAULT_TIE_TOLERANCE, BLOCKING_TOLERANCE).unwrap();
    assert!(!v.in_core);
    assert_eq!(v.blocking_coalition, Some(vec![0]));
    assert_eq!(favorite_sets(&m, DEFAULT_TIE_TOLERANCE).set(0), &[0]);
    let pf = pf_optimal(&m, DEFAULT_TIE_TOLERANCE, &SolverSettings::default()).unwrap().0;
    assert!(check_procedural_core(&m, &pf, DEFAULT_TIE_TOLERANCE, BLOCKING_TOLERANCE).unwrap().in_core);
}
