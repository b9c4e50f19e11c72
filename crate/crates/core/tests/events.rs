mod support;

use percolymer::env::derive_seed;
use percolymer::events::*;
use percolymer::polymer::for_each_path;
use percolymer::{Environment, LatticePoint, Pos};
use support::{repair_by_enumeration, verify_witnesses, RepairPair};

fn cfg(seed: u64) -> MarginConfig {
    MarginConfig { inner_samples: 12, horizon_extra: 24, seed, ..MarginConfig::default() }
}

fn open_at(env: &Environment, t: u64, x: Pos) -> bool {
    env.is_open(&LatticePoint::new(t, x)).unwrap()
}

#[test]
fn repair_checkers_match_enumeration() {
    let (mut a_seen, mut b_seen) = ([0usize; 2], [0usize; 2]);
    for i in 0..16u64 {
        let s = derive_seed(77, "instance", i);
        let p = 0.55 + 0.35 * (i as f64 / 16.0);
        let b = Environment::from_seed(derive_seed(s, "b", 0), 1, p).unwrap();
        let sl = Environment::from_seed(derive_seed(s, "sl", 0), 1, p).unwrap();
        let e = Environment::from_seed(derive_seed(s, "e", 0), 1, p).unwrap();
        let slab = 2 + i % 2;
        let k = 1 + (i * 5) % 11;
        let scale = ScaleParams::with_ell(12, 1).with_slab(slab);
        let pair = RepairPair { b: &b, sl: &sl, e: &e, k, slab };
        let (a_ref, b_ref) = repair_by_enumeration(&pair, &scale);
        let a = check_a_repair(&b, &sl, &e, &scale, k).unwrap();
        let bb = check_b_repair(&b, &sl, &e, &scale, k).unwrap();
        assert_eq!(a.holds, a_ref, "A_repair instance {i}, k={k}, L={slab}");
        assert_eq!(bb.holds, b_ref, "B_repair instance {i}, k={k}, L={slab}");
        verify_witnesses(&a, &pair, &scale, true).unwrap();
        verify_witnesses(&bb, &pair, &scale, false).unwrap();
        a_seen[a.holds as usize] += 1;
        b_seen[bb.holds as usize] += 1;
        if bb.holds {
            assert!(a.holds, "B_repair must imply A_repair (instance {i})");
        }
    }
    assert!(a_seen[0] > 0 && a_seen[1] > 0, "A outcomes {a_seen:?}");
    assert!(b_seen[0] > 0 && b_seen[1] > 0, "B outcomes {b_seen:?}");
}

#[test]
fn a_conn_matches_path_enumeration() {
    let scale = ScaleParams::with_ell(10, 2);
    for i in 0..6u64 {
        let env = Environment::from_seed(derive_seed(5, "aconn", i), 1, 0.6 + 0.05 * i as f64).unwrap();
        let k = 4 + i;
        let c = cfg(i);
        let report = check_a_conn(&env, &scale, k, &c).unwrap();
        let mut oracle = GoodOracle::new(&env, &c);
        let l2 = scale.ell2();
        let mut holds = true;
        for_each_path(1, Pos::ORIGIN, k, |xs| {
            if !holds || (1..=k).any(|t| !open_at(&env, t, xs[t as usize])) {
                return;
            }
            let passes = (l2..=(2 * l2).min(k)).any(|j| oracle.good_pair(k - j, xs[(k - j) as usize], j).unwrap());
            if !passes {
                holds = false;
            }
        });
        assert_eq!(report.holds, holds, "instance {i}");
        if let Some(cx) = report.counterexample {
            assert_eq!(cx.len(), k);
            assert!((1..=k).all(|t| open_at(&env, t, cx.at(t).unwrap())));
        }
    }
}

#[test]
fn b_conn_matches_path_enumeration() {
    let scale = ScaleParams::with_ell(10, 2);
    for i in 0..6u64 {
        let env = Environment::from_seed(derive_seed(6, "bconn", i), 1, 0.65 + 0.05 * i as f64).unwrap();
        let k = 4 + i;
        let c = cfg(100 + i);
        let report = check_b_conn(&env, &scale, k, &c).unwrap();
        let mut oracle = GoodOracle::new(&env, &c);
        let (l, l2) = (scale.ell, scale.ell2());
        let lo = k - (2 * l2).min(k);
        let mut holds = true;
        for_each_path(1, Pos::ORIGIN, k, |xs| {
            if !holds {
                return;
            }
            let first = (l2..=(2 * l2).min(k)).any(|j| oracle.good_pair(k - j, xs[(k - j) as usize], j).unwrap());
            let second = k >= 2 * l2 && {
                let h = (lo + 1..=k - l2).filter(|&t| !open_at(&env, t, xs[t as usize])).count() as u64;
                h >= l && (-(l as i64)..=l as i64).any(|dx| oracle.good_pair(lo + l, xs[lo as usize] + Pos::line(dx), 2 * l2 - l).unwrap())
            };
            if !first && !second {
                holds = false;
            }
        });
        assert_eq!(report.holds, holds, "instance {i}");
    }
}

#[test]
fn martingale_difference_is_bounded_and_reproducible() {
    let b = Environment::from_seed(11, 1, 0.8).unwrap();
    let scale = ScaleParams::with_ell(24, 2);
    let s1 = martingale_diff_estimate(&b, &scale, 8, 20, 3).unwrap();
    let s2 = martingale_diff_estimate(&b, &scale, 8, 20, 3).unwrap();
    assert_eq!(s1, s2);
    assert!(s1.estimate.abs() <= 24.0 * 3f64.ln());
    assert!(martingale_diff_estimate(&b, &scale, 4, 20, 3).is_err());
    assert_eq!(martingale_diff_estimate(&Environment::all_open(1), &scale, 8, 20, 3).unwrap().estimate, 0.0);
    assert!(martingale_diff_estimate(&Environment::custom(1, |_, _| true), &scale, 8, 20, 3).is_err());
}
