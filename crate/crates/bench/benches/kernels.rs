use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stochmpc_core::milp::{encode_rnn_rollout, propagate_activation_bounds, solve_milp, MilpOptions};
use stochmpc_core::nmpc::{ObjectiveKind, OcpObjective, OcpSpec, OutputConstraint};
use stochmpc_core::{
    compute_pod_basis, fit_pce, quadrature_rule, simulate, ControlSchedule, Family, FieldArray, FieldShape,
    ParameterDraw, PceBasis, PlantConfig, RnnModel, SnapshotMatrix,
};

fn pce(c: &mut Criterion) {
    let fams = [Family::HermiteProb, Family::HermiteProb];
    let rule = quadrature_rule(&fams, &[3, 3]).unwrap();
    let basis = PceBasis::total_degree(&fams, 2).unwrap();
    let shape = FieldShape::new(51, 2, 200);
    let evals: Vec<FieldArray> = (0..rule.len())
        .map(|k| {
            let x = rule.node(k);
            let data = (0..shape.len()).map(|i| (i as f64 * 1e-3).sin() * (1.0 + 0.1 * x[0] + 0.05 * x[1] * x[1])).collect();
            FieldArray::from_vec(shape, data).unwrap()
        })
        .collect();
    c.bench_function("fit_pce 2x51x200 points", |b| b.iter(|| fit_pce(black_box(&evals), &rule, &basis).unwrap()));
}

fn pod(c: &mut Criterion) {
    let cols: Vec<Vec<f64>> = (0..1000)
        .map(|j| (0..200).map(|i| ((i * (j % 7 + 1)) as f64 * 0.01).sin() + 0.01 * ((i + j) as f64).cos()).collect())
        .collect();
    let snaps = SnapshotMatrix::from_columns("bench", &cols).unwrap();
    c.bench_function("pod 200x1000", |b| b.iter(|| compute_pod_basis(black_box(&snaps), 0.998).unwrap()));
}

fn rnn(c: &mut Criterion) {
    let m = RnnModel::random(1, &[15, 15], 2, 1).unwrap();
    let u: Vec<f64> = (0..50).map(|t| (t as f64 * 0.1).sin()).collect();
    c.bench_function("rnn forward 15/15 x 50 steps", |b| b.iter(|| m.forward_controls(black_box(&u), None).unwrap()));
}

fn milp(c: &mut Criterion) {
    let m = RnnModel::random(1, &[6], 1, 3).unwrap();
    let spec = OcpSpec {
        horizon: 3,
        control_lo: -1.0,
        control_hi: 1.0,
        rate_limit: 0.5,
        previous_control: 0.0,
        objective: OcpObjective { model: 0, weights: vec![1.0], offset: 0.0, kind: ObjectiveKind::Sum },
        constraints: vec![OutputConstraint {
            name: "cap".into(),
            model: 0,
            rows: vec![vec![1.0]],
            offsets: vec![0.0],
            setpoint: 0.5,
            epsilon: 0.0,
        }],
        prediction_cap: None,
    };
    let bounds = propagate_activation_bounds(&m, &spec.control_box(0.0, 3), &m.zero_state()).unwrap();
    let enc = encode_rnn_rollout(std::slice::from_ref(&m), &[bounds], &spec).unwrap();
    c.bench_function("milp random 6-unit rollout", |b| {
        b.iter(|| solve_milp(black_box(&enc.problem), &MilpOptions::default()).unwrap())
    });
}

fn plant(c: &mut Criterion) {
    let cfg = PlantConfig::tubular().without_noise();
    let draw = ParameterDraw::new([("Da", 0.08), ("B", 8.0)]);
    let u = ControlSchedule::constant(1.0, 10);
    let mut g = c.benchmark_group("plant");
    g.sample_size(10);
    g.bench_function("tubular 200 nodes x 10 steps", |b| b.iter(|| simulate(&cfg, &draw, black_box(&u), 0).unwrap()));
    g.finish();
}

criterion_group!(benches, pce, pod, rnn, milp, plant);
criterion_main!(benches);
