mod common;

use proptest::prelude::*;
use tsa_core::dispatch::{check_limits, evaluate_dispatch, objective, solve_acopf, DispatchOptions};
use tsa_core::netcase::NetworkCase;
use tsa_core::powerflow::Schedule;
use tsa_core::scenario::{apply_scenario, LoadScenario};

use common::*;

fn loads(coeffs: Vec<f64>) -> tsa_core::scenario::BusLoads {
    apply_scenario(&NetworkCase::wscc9(), &LoadScenario { id: 0, coeffs }).unwrap()
}

#[test]
fn benchmark_load_matches_grid_oracle() {
    let case = NetworkCase::wscc9();
    let l = loads(vec![1.0; 3]);
    let r = solve_acopf(&case, &l, &DispatchOptions::default()).unwrap();
    let (oracle, _, _) = brute_force_dispatch(&case, &l).unwrap();
    assert!(r.feasible);
    assert!((r.objective - oracle).abs() <= 0.01 * oracle);
}

#[test]
fn seeded_scenarios_match_grid_oracle() {
    let gap = dispatch_oracle_gap(&fixture_scenarios(6, 7));
    assert!(gap.compared > 0);
    assert_eq!(gap.missed_feasible, 0);
    assert!(gap.worst <= 0.01, "worst gap {}", gap.worst);
}

#[test]
fn objective_matches_recomputation() {
    let case = NetworkCase::wscc9();
    for s in fixture_scenarios(10, 11) {
        let r = solve_acopf(&case, &apply_scenario(&case, &s).unwrap(), &DispatchOptions::default()).unwrap();
        let direct: f64 = case
            .generators
            .iter()
            .zip(&r.solution.pg)
            .map(|(g, &p)| g.cost_a + g.cost_b * p + g.cost_c * p * p)
            .sum();
        assert!((r.objective - direct).abs() <= 1e-6, "{} vs {direct}", r.objective);
        assert_eq!(r.objective, objective(&case, &r.solution));
        assert_eq!(r.feasible, r.violations.is_empty());
    }
}

#[test]
fn two_megawatt_moves_do_not_beat_the_optimum() {
    let case = NetworkCase::wscc9();
    let opts = DispatchOptions::default();
    for s in fixture_scenarios(10, 3) {
        let l = apply_scenario(&case, &s).unwrap();
        let r = solve_acopf(&case, &l, &opts).unwrap();
        if !r.feasible {
            continue;
        }
        for k in 1..case.generators.len() {
            for delta in [-2.0, 2.0] {
                let mut pg = r.pg_set.clone();
                pg[k] += delta;
                let Ok(p) = evaluate_dispatch(&case, &l, &pg, &opts) else { continue };
                if p.feasible {
                    assert!(
                        p.objective >= r.objective * 0.99,
                        "scenario {} gen {k} {delta:+}: {} < {}",
                        s.id,
                        p.objective,
                        r.objective
                    );
                }
            }
        }
    }
}

#[test]
fn flat_cost_heavy_load_sits_on_a_rating() {
    // All loads x1.7 with flat costs: the optimizer stays feasible only by
    // loading the slack step-up transformer to its rating, and leaving the
    // whole load on the slack machine breaks its limits.
    let mut case = NetworkCase::wscc9();
    for g in &mut case.generators {
        g.cost_a = 0.0;
        g.cost_b = 1.0;
        g.cost_c = 0.0;
    }
    let l = loads(vec![1.7; 3]);
    assert!((l.p.iter().sum::<f64>() - 535.5).abs() < 1e-9);
    let opts = DispatchOptions::default();
    let r = solve_acopf(&case, &l, &opts).unwrap();
    let k = case.branches.iter().position(|b| b.id == "1-4").unwrap();
    let rating = case.branches[k].rating;
    assert!(r.feasible, "{:?}", r.violations);
    assert!(r.solution.flows[k].max_mva() > rating - 0.5, "{}", r.solution.flows[k].max_mva());

    let pg: Vec<f64> = case.generators.iter().enumerate().map(|(i, g)| if i == 0 { 0.0 } else { g.pmin }).collect();
    let naive = evaluate_dispatch(&case, &l, &pg, &opts).unwrap();
    let kinds: Vec<String> = naive.violations.iter().map(|v| format!("{} {}", v.kind, v.element)).collect();
    assert!(kinds.contains(&"pg_upper gen_1".to_string()), "{kinds:?}");
    assert!(kinds.contains(&"flow_rating 1-4".to_string()), "{kinds:?}");
    assert_eq!(check_limits(&naive, &case), naive.violations);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn optimal_cost_grows_with_load(base in prop::collection::vec(0.4f64..1.1, 3), up in 1.02f64..1.3) {
        let case = NetworkCase::wscc9();
        let opts = DispatchOptions::default();
        let lo = solve_acopf(&case, &loads(base.clone()), &opts).unwrap();
        let hi = solve_acopf(&case, &loads(base.iter().map(|c| c * up).collect()), &opts).unwrap();
        prop_assume!(lo.feasible && hi.feasible);
        prop_assert!(hi.objective >= lo.objective - 1e-9, "{} < {}", hi.objective, lo.objective);
    }

    #[test]
    fn random_loads_keep_global_balance(coeffs in prop::collection::vec(0.3f64..1.7, 3)) {
        let case = NetworkCase::wscc9();
        let l = loads(coeffs);
        let mut sc = Schedule::from_case(&case);
        sc.load_p = l.p;
        sc.load_q = l.q;
        let sol = tsa_core::powerflow::solve_powerflow(&case, &sc, 1e-10, 30).unwrap();
        prop_assume!(sol.converged);
        prop_assert!(sol.mismatch < 1e-8);
        prop_assert!(balance_error(&case, &sc, &sol) < 1e-6);
    }
}

#[test]
fn powerflow_fixture_mismatch_and_balance() {
    let (mismatch, balance, converged) = powerflow_fixture_errors(20, 5);
    assert!(converged >= 20);
    assert!(mismatch < 1e-8, "{mismatch:e}");
    assert!(balance < 1e-6, "{balance:e}");
}
