use std::f64::consts::TAU;

use fastgate::gpg::{solve_gate_ranked, GateSolution, SearchConfig};
use fastgate::sequence::RepRate;
use fastgate::trap::{calibrate, TrapConfig, TrapRecord};

#[test]
fn solution_json_round_trip_is_bit_exact() {
    for (q, rate) in [(0.01, RepRate::Infinite), (0.4, RepRate::Finite(500.0))] {
        let trap = calibrate(q, 40.0, -0.014, 0.15, 0.7).unwrap();
        let mut cfg = SearchConfig::new(&trap, 2.0 * TAU, rate, 21);
        cfg.multistarts = 4;
        cfg.stage2_iters = 200;
        let sol = solve_gate_ranked(&trap, &cfg).unwrap().best;
        let text = serde_json::to_string_pretty(&sol).unwrap();
        let back: GateSolution = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sol);
        assert_eq!(back.reevaluate().unwrap(), sol.metrics);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }
}

#[test]
fn trap_record_rebuilds_identically() {
    let trap = calibrate(0.37, 33.0, -0.02, 0.11, 1.2).unwrap();
    let rec: TrapRecord = serde_json::from_str(&serde_json::to_string(&trap.record()).unwrap()).unwrap();
    let rebuilt = TrapConfig::from_record(&rec).unwrap();
    assert_eq!(rebuilt, trap);
    assert!(serde_json::from_str::<TrapRecord>(r#"{"q_x": 0.1, "typo": 1}"#).is_err());
}
