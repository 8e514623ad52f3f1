mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use tsa_core::tdsim::{simulate_system, Condition, DynamicSystem, FaultEnd, FaultSpec, SimConfig};

use common::*;

#[test]
fn smib_internal_angle_matches_closed_form() {
    let case = smib_case();
    let sol = smib_solution(&case);
    let sys = DynamicSystem::new(&case, &sol).unwrap();
    let m = sys.initial_state()[0];
    let inf = sys.initial_state()[1];
    let x = SMIB_XDP + SMIB_X_LINE;
    let expected = (SMIB_P_MW / 100.0 * x / (m.emf * 1.0)).asin();
    assert!((m.delta - inf.delta - expected).abs() < 1e-5, "{} vs {}", m.delta - inf.delta, expected);
    assert!((m.pm - SMIB_P_MW / 100.0).abs() < 1e-8);
}

#[test]
fn smib_critical_clearing_time_matches_equal_area() {
    let (cct, t_cr) = smib_cct();
    eprintln!("simulated cct {cct:.5} s, equal-area {t_cr:.5} s");
    assert!((cct - t_cr).abs() <= 0.05 * t_cr);
}

#[test]
fn undamped_power_balance_holds_along_trajectory() {
    let worst = undamped_balance_worst();
    assert!(worst < 1e-9, "{worst:e}");
}

#[test]
fn trajectory_sampling_is_uniform() {
    let (case, sol) = nine_bus_system_point();
    let sys = DynamicSystem::new(&case, &sol).unwrap();
    let cfg = SimConfig::default();
    let fault = FaultSpec {
        branch_id: "8-9".into(),
        faulted_end: FaultEnd::To,
        t_clear: 0.1,
        trip_line: true,
    };
    let traj = simulate_system(&sys, &fault, &cfg).unwrap();
    assert_eq!(traj.times.len(), 5001);
    for w in traj.times.windows(2) {
        assert!(w[1] > w[0]);
        assert!((w[1] - w[0] - cfg.dt).abs() < 1e-12);
    }
}

#[test]
fn reduced_networks_are_symmetric() {
    let (case, sol) = nine_bus_system_point();
    let sys = DynamicSystem::new(&case, &sol).unwrap();
    for cond in [
        Condition::PreFault,
        Condition::FaultOn { bus: 7 },
        Condition::PostFault { exclude: Some("5-7") },
    ] {
        let (red, on) = sys.reduce(cond).unwrap();
        let y = &red.y_red;
        assert_eq!(y.nrows(), on.iter().filter(|&&b| b).count());
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                assert!((y[(i, j)] - y[(j, i)]).norm() < 1e-9 * y[(i, i)].norm().max(1.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn kron_reduction_preserves_retained_voltages(
        vals in prop::collection::vec((0.01f64..2.0, 0.5f64..20.0), 15),
        shunts in prop::collection::vec((0.05f64..1.0, -0.5f64..0.5), 6),
        currents in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3),
    ) {
        let y = random_network(&vals, &shunts);
        let c: Vec<Complex64> = currents.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        prop_assert!(kron_error(&y, &[0, 2, 5], &c) <= 1e-10);
    }
}
