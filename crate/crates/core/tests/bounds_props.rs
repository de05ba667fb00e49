use proptest::prelude::*;
use qote_core::bounds::{
    functional_bounds, makarov_bounds, qote_bounds, qote_lp_bounds, rank_invariance_qote, AssumptionSet, Functional,
    QoteBounds,
};
use qote_core::marginals::{midpoint_grid, QuantileCurve};
use qote_core::Error;

fn curve(mut v: Vec<f64>) -> QuantileCurve {
    v.sort_by(f64::total_cmp);
    QuantileCurve::new(midpoint_grid(v.len()), v).unwrap()
}

fn pair(k: usize) -> impl Strategy<Value = (QuantileCurve, QuantileCurve)> {
    (prop::collection::vec(-5.0..5.0f64, k), prop::collection::vec(-5.0..5.0f64, k)).prop_map(|(a, b)| (curve(a), curve(b)))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn assumptions_nest((q1, q0) in pair(6), tau in 0.05..0.95f64) {
        let none = qote_bounds(&q1, &q0, AssumptionSet::None, tau, 6, None).unwrap();
        let pqd = qote_lp_bounds(&q1, &q0, AssumptionSet::Pqd, tau, 6).unwrap();
        let si = qote_lp_bounds(&q1, &q0, AssumptionSet::Si, tau, 6).unwrap();
        prop_assert!(si.within(&pqd, 1e-9), "{si:?} not in {pqd:?}");
        prop_assert!(pqd.within(&none, 1e-9), "{pqd:?} not in {none:?}");
        let ri = rank_invariance_qote(&q1, &q0, tau).unwrap();
        prop_assert!(si.contains(ri, 1e-9));
    }

    #[test]
    fn shifting_treated_outcomes_shifts_bounds((q1, q0) in pair(5), shift in -3.0..3.0f64) {
        for a in [AssumptionSet::None, AssumptionSet::Si] {
            let b = qote_lp_bounds(&q1, &q0, a, 0.4, 5).unwrap();
            let s = qote_lp_bounds(&q1.shifted(shift), &q0, a, 0.4, 5).unwrap();
            prop_assert!((s.lower - b.lower - shift).abs() < 1e-9);
            prop_assert!((s.upper - b.upper - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn bounds_monotone_in_tau((q1, q0) in pair(6)) {
        let mut prev = QoteBounds { lower: f64::NEG_INFINITY, upper: f64::NEG_INFINITY };
        for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let b = qote_lp_bounds(&q1, &q0, AssumptionSet::Si, tau, 6).unwrap();
            prop_assert!(b.lower >= prev.lower - 1e-12 && b.upper >= prev.upper - 1e-12);
            prev = b;
        }
    }

    #[test]
    fn unconstrained_lp_equals_makarov((q1, q0) in pair(8), tau in 0.07..0.93f64) {
        let lp = qote_lp_bounds(&q1, &q0, AssumptionSet::None, tau, 8).unwrap();
        let mk = makarov_bounds(&q1, &q0, tau).unwrap();
        prop_assert!((lp.lower - mk.lower).abs() < 1e-9 && (lp.upper - mk.upper).abs() < 1e-9);
    }
}

#[test]
fn cvar_matches_permutation_vertices() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let perms = permutations(4);
    let mut checked = 0;
    while checked < 20 {
        let q1 = curve((0..4).map(|_| rng.random_range(-3.0..3.0)).collect());
        let q0 = curve((0..4).map(|_| rng.random_range(-3.0..3.0)).collect());
        let threshold = rng.random_range(-2.0..4.0);
        let f = Functional::Cvar { threshold };
        let b = match functional_bounds(&q1, &q0, AssumptionSet::None, f, 4) {
            Ok(b) => b,
            Err(Error::EventNotPositive) => continue,
            Err(e) => panic!("{e}"),
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &perms {
            let d: Vec<f64> = (0..4).map(|i| q1.values[i] - q0.values[p[i]]).filter(|&d| d < threshold).collect();
            assert!(!d.is_empty());
            let m = d.iter().sum::<f64>() / d.len() as f64;
            lo = lo.min(m);
            hi = hi.max(m);
        }
        assert!((b.lower - lo).abs() < 1e-7 && (b.upper - hi).abs() < 1e-7, "{b:?} vs ({lo}, {hi})");
        let si = functional_bounds(&q1, &q0, AssumptionSet::Si, f, 4).unwrap();
        assert!(si.within(&b, 1e-9), "{si:?} not in {b:?}");
        checked += 1;
    }
}
