use super::*;
use crate::field::relative_l2;

fn draw(pairs: &[(&str, f64)]) -> ParameterDraw {
    ParameterDraw::new(pairs.iter().map(|&(k, v)| (k, v)))
}

/// Linear interpolation of `values` on a uniform grid over [0, len] at `x`.
fn interp(values: &[f64], len: f64, x: f64) -> f64 {
    let n = values.len();
    let s = x / len * (n - 1) as f64;
    let i = (s.floor() as usize).min(n - 2);
    let w = s - i as f64;
    (1.0 - w) * values[i] + w * values[i + 1]
}

#[test]
fn tubular_without_reaction_or_heating_stays_at_zero() {
    let cfg = PlantConfig::tubular().without_noise();
    let tr = simulate(&cfg, &draw(&[("Da", 0.0)]), &ControlSchedule::constant(0.0, 10), 1).unwrap();
    assert!(tr.states.data.iter().all(|&v| v == 0.0));
    assert!(tr.outputs.data.iter().all(|&v| v == 0.0));
    assert_eq!(tr.time_grid.len(), 11);
    assert!(tr.time_grid.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn tubular_without_reaction_obeys_concentration_envelope() {
    let cfg = PlantConfig::tubular();
    let tr = simulate(&cfg, &draw(&[("Da", 0.0)]), &ControlSchedule::constant(2.0, 10), 3).unwrap();
    let sd = (cfg.state_noise_var + cfg.output_noise_var).sqrt();
    for t in 0..tr.time_grid.len() {
        assert!(tr.states.profile(t, 0).iter().all(|c| c.abs() <= 8.0 * sd));
    }
    // Wall heating still warms the reactor.
    assert!(tr.states.get(10, 1, 199) > 0.5);
}

#[test]
fn tubular_nominal_reaches_steady_profile_and_refines() {
    let cfg = PlantConfig::tubular().without_noise();
    let sched = ControlSchedule::constant(1.0, 40);
    let tr = simulate(&cfg, &ParameterDraw::default(), &sched, 0).unwrap();
    let m = cfg.spatial_nodes;
    let exit_c = tr.states.get(40, 0, m - 1);
    assert!(exit_c > 0.0 && exit_c < 1.0, "{exit_c}");
    let drift = (tr.states.get(40, 0, m - 1) - tr.states.get(35, 0, m - 1)).abs();
    assert!(drift < 1e-4, "not steady: {drift}");

    let mut fine = cfg.clone();
    fine.spatial_nodes = 400;
    let trf = simulate(&fine, &ParameterDraw::default(), &sched, 0).unwrap();
    let grid = cfg.grid();
    for f in 0..2 {
        let coarse = tr.states.profile(40, f);
        let reference: Vec<f64> = grid.iter().map(|&x| interp(trf.states.profile(40, f), 1.0, x)).collect();
        let e = relative_l2(coarse, &reference);
        assert!(e < 0.01, "field {f}: {e}");
    }
}

#[test]
fn noise_free_runs_are_bitwise_deterministic() {
    for cfg in [PlantConfig::tubular().without_noise(), {
        let mut c = PlantConfig::packed_bed().without_noise();
        c.spatial_nodes = 30;
        c
    }] {
        let (lo, hi) = cfg.control_bounds();
        let sched = ControlSchedule::new(vec![lo, hi, 0.5 * (lo + hi)]);
        let a = simulate(&cfg, &ParameterDraw::default(), &sched, 1).unwrap();
        let b = simulate(&cfg, &ParameterDraw::default(), &sched, 2).unwrap();
        assert_eq!(a.states.data, b.states.data);
        assert_eq!(a.outputs.data, a.states.data);
    }
}

#[test]
fn seeded_noise_is_reproducible_and_matches_stepping() {
    let cfg = PlantConfig::tubular();
    let d = draw(&[("Da", 0.085), ("B", 8.4)]);
    let sched = ControlSchedule::new(vec![0.3, 1.7, 1.1, 2.0]);
    let a = simulate(&cfg, &d, &sched, 77).unwrap();
    let b = simulate(&cfg, &d, &sched, 77).unwrap();
    assert_eq!(a, b);
    let c = simulate(&cfg, &d, &sched, 78).unwrap();
    assert_ne!(a.outputs.data, c.outputs.data);

    let mut session = PlantSession::new(&cfg, &d, 77).unwrap();
    let first = session.initial();
    assert_eq!(&first.output[..], &a.outputs.data[..400]);
    for (t, &u) in sched.values.iter().enumerate() {
        let s = session.advance(u).unwrap();
        assert_eq!(&s.state[..], &a.states.data[(t + 1) * 400..(t + 2) * 400]);
        assert_eq!(&s.output[..], &a.outputs.data[(t + 1) * 400..(t + 2) * 400]);
    }
}

#[test]
fn argument_errors() {
    let cfg = PlantConfig::tubular();
    let d = ParameterDraw::default();
    assert!(matches!(
        simulate(&cfg, &d, &ControlSchedule::new(vec![]), 0),
        Err(Error::InvalidArgument(_))
    ));
    assert!(simulate(&cfg, &d, &ControlSchedule::constant(2.5, 2), 0).is_err());
    assert!(simulate(&cfg, &draw(&[("D_bead_gly", 0.01)]), &ControlSchedule::constant(1.0, 2), 0).is_err());
    let mut bad = cfg.clone();
    bad.spatial_nodes = 2;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let mut bad = PlantConfig::packed_bed();
    bad.set_param("eps", 1.0).unwrap();
    assert!(bad.validate().is_err());
    assert!(bad.set_param("nope", 1.0).is_err());
    assert_eq!(PlantConfig::packed_bed().param("SA_star"), Some(45.6));
}

#[test]
fn integration_failure_carries_time() {
    // A runaway reaction without cooling blows up in finite time.
    let mut cfg = PlantConfig::tubular().without_noise();
    cfg.set_param("gamma", 1e6).unwrap();
    cfg.set_param("beta", 0.0).unwrap();
    cfg.set_param("B", 200.0).unwrap();
    cfg.set_param("Da", 1.0).unwrap();
    cfg.spatial_nodes = 20;
    match simulate(&cfg, &ParameterDraw::default(), &ControlSchedule::constant(0.0, 20), 0) {
        Err(Error::Integration { time, .. }) => assert!(time > 0.0 && time <= 8.0),
        other => panic!("expected integration failure, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn packed_bed_without_substrate_stays_empty() {
    let mut cfg = PlantConfig::packed_bed().without_noise();
    cfg.set_param("feed_min", 0.0).unwrap();
    cfg.spatial_nodes = 40;
    let tr = simulate(&cfg, &draw(&[("x_gly0_offset", 0.0)]), &ControlSchedule::constant(0.0, 4), 0).unwrap();
    assert!(tr.states.data.iter().all(|&v| v == 0.0));
}

#[test]
fn packed_bed_produces_succinate_and_clamps_noise() {
    let mut cfg = PlantConfig::packed_bed();
    cfg.spatial_nodes = 40;
    cfg.state_noise_var = 1e-2;
    let tr = simulate(&cfg, &draw(&[("x_gly0_offset", 1.0), ("D_bead_gly", 0.009)]), &ControlSchedule::constant(60.0, 8), 5).unwrap();
    assert!(tr.states.get(0, 0, 0) == 0.0 && (tr.states.get(1, 0, 0) - 61.0).abs() < 1e-12);
    assert!(tr.states.get(8, 1, 39) > 1.0, "exit succinate {}", tr.states.get(8, 1, 39));
    assert!(tr.clamp_events > 0);
    assert!(tr.states.data.iter().chain(&tr.outputs.data).all(|&v| v >= 0.0));
}

#[test]
fn trajectory_csv_layout() {
    let mut cfg = PlantConfig::tubular().without_noise();
    cfg.spatial_nodes = 5;
    let tr = simulate(&cfg, &ParameterDraw::default(), &ControlSchedule::constant(1.0, 1), 0).unwrap();
    let csv = tr.to_csv(false);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "time,field,node,value");
    assert_eq!(lines.len(), 1 + 2 * 2 * 5);
    assert!(lines[1].starts_with("0,C,0,"));
    assert!(lines[11].starts_with("0.4,C,0,"));
}
