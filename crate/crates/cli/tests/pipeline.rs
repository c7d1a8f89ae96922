use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use stochmpc_cli::{run_pipeline, BuildOptions, Bundle, CliError, Evaluator, PipelineConfig};
use stochmpc_core::{FieldArray, FieldShape, ParameterDraw, PlantKind, Result};

const NODES: usize = 12;
const DECAY: f64 = 0.7;

/// Fields `C`, `T` equal to `(1 + 0.1 θ_Da + 0.05 θ_B) · z_t · g_f(n)` with
/// `z_{t+1} = 0.7 z_t + u_t`: linear in the controls and in the germ.
struct LinearPlant {
    calls: AtomicUsize,
}

impl LinearPlant {
    fn new() -> Self {
        LinearPlant { calls: AtomicUsize::new(0) }
    }

    fn shape(f: usize, n: usize) -> f64 {
        let x = n as f64 / (NODES - 1) as f64;
        if f == 0 {
            1.0 + x
        } else {
            2.0 - x * x
        }
    }

    fn states(u: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0];
        for &v in u {
            z.push(DECAY * z.last().unwrap() + v);
        }
        z
    }
}

impl Evaluator for LinearPlant {
    fn field_names(&self) -> Vec<String> {
        vec!["C".into(), "T".into()]
    }

    fn grid(&self) -> Vec<f64> {
        (0..NODES).map(|n| n as f64 / (NODES - 1) as f64).collect()
    }

    fn identity(&self) -> Option<String> {
        Some("linear test plant".into())
    }

    fn evaluate(&self, schedule: &[f64], draw: &ParameterDraw, _seed: u64) -> Result<FieldArray> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let th_da = (draw.get("Da").unwrap() - 0.08) / 0.008;
        let th_b = (draw.get("B").unwrap() - 8.0) / 0.8;
        let gain = 1.0 + 0.1 * th_da + 0.05 * th_b;
        let z = Self::states(schedule);
        let shape = FieldShape::new(z.len(), 2, NODES);
        let mut a = FieldArray::zeros(shape);
        for (t, zt) in z.iter().enumerate() {
            for f in 0..2 {
                for n in 0..NODES {
                    a.set(t, f, n, gain * zt * Self::shape(f, n));
                }
            }
        }
        Ok(a)
    }
}

fn small_config() -> PipelineConfig {
    let text = r#"
[case]
kind = "tubular"
seed = 11

[sampling]
n1 = 10
n_fresh = 2
segments = 3

[pce]
n2 = 2000

[rnn]
steady_start = 2
restarts = 1

[rnn.hidden]
C_mean = [3]
T_upper = [3]

[ocp]
horizon = 12
"#;
    PipelineConfig::from_toml_str(text, None).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn linear_plant_is_recovered_exactly() {
    let cfg = small_config();
    let ev = LinearPlant::new();
    let b = run_pipeline(&cfg, &ev, &BuildOptions::default()).unwrap();
    assert_eq!(b.attempts, 1);
    assert_eq!(ev.calls.load(Ordering::SeqCst), (10 + 2) * 9);
    let z: Vec<Vec<f64>> = b.schedules.iter().map(|u| LinearPlant::states(u)).collect();
    // Mean of a germ-linear output is the zero-germ value.
    let c = &b.targets[0];
    for (s, times) in c.stats.iter().enumerate() {
        for (t, prof) in times.iter().enumerate() {
            for (n, v) in prof.iter().enumerate() {
                assert!((v - z[s][t] * LinearPlant::shape(0, n)).abs() < 1e-10 * (1.0 + v.abs()));
            }
        }
    }
    // Upper bound = (1 + q_s) times the mean; one sample set per schedule,
    // so q_s is shared by every time and node of that schedule.
    let tu = &b.targets[1];
    let sd = (0.1f64 * 0.1 + 0.05 * 0.05).sqrt();
    for (s, times) in tu.stats.iter().enumerate() {
        let mut ratio = None;
        for (t, prof) in times.iter().enumerate().skip(1) {
            for (n, v) in prof.iter().enumerate() {
                let r = v / (z[s][t] * LinearPlant::shape(1, n));
                let r0 = *ratio.get_or_insert(r);
                assert!((r - r0).abs() < 1e-9, "{r} vs {r0}");
            }
        }
        let q = ratio.unwrap() - 1.0;
        assert!((q / sd - 1.959964).abs() < 0.15, "{q}");
    }
    for t in &b.targets {
        let pod = t.pod.as_ref().unwrap();
        assert_eq!(pod.mode_count(), 1, "{}", t.target.name);
        assert!(t.validation.pass);
    }
    // The mean coefficient is an exact linear recurrence in the controls; the
    // upper one also carries the per-schedule sampling quantile.
    assert!(b.targets[0].training.test_mse < 1e-4, "test mse {}", b.targets[0].training.test_mse);
}

#[test]
fn bundle_is_deterministic_and_round_trips() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let ev = LinearPlant::new();
    let first = run_pipeline(&cfg, &ev, &BuildOptions { cache_dir: Some(cache.path().into()), verbose: false }).unwrap();
    first.save(&cfg, a.path()).unwrap();
    let evaluated = ev.calls.load(Ordering::SeqCst);
    let second = run_pipeline(&cfg, &ev, &BuildOptions { cache_dir: Some(cache.path().into()), verbose: false }).unwrap();
    assert_eq!(ev.calls.load(Ordering::SeqCst), evaluated, "cache must serve the rerun");
    second.save(&cfg, b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    assert!(files(a.path()).iter().all(|(_, bytes)| bytes.starts_with(format!("# config_hash={}", cfg.hash()).as_bytes())));
    let loaded = Bundle::load(&cfg, a.path()).unwrap();
    assert_eq!(loaded, first);
}

#[test]
fn foreign_hash_is_refused() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let b = run_pipeline(&cfg, &LinearPlant::new(), &BuildOptions::default()).unwrap();
    b.save(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.case.seed += 1;
    assert!(matches!(Bundle::load(&other, dir.path()), Err(CliError::Provenance { .. })));
    // One file from another run is enough to refuse the bundle.
    let other_dir = tempfile::tempdir().unwrap();
    let ob = run_pipeline(&other, &LinearPlant::new(), &BuildOptions::default()).unwrap();
    ob.save(&other, other_dir.path()).unwrap();
    std::fs::copy(other_dir.path().join("rnn_C_mean.txt"), dir.path().join("rnn_C_mean.txt")).unwrap();
    assert!(matches!(Bundle::load(&cfg, dir.path()), Err(CliError::Provenance { .. })));
}

#[test]
fn failing_validation_retries_with_doubled_samples_then_aborts() {
    let mut cfg = small_config();
    cfg.rnn.tolerance = 0.0;
    let ev = LinearPlant::new();
    match run_pipeline(&cfg, &ev, &BuildOptions::default()) {
        Err(CliError::Validation { error, tolerance, .. }) => {
            assert!(error > 0.0);
            assert_eq!(tolerance, 0.0);
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
    // Fresh set once, then N1 and 2·N1 training schedules.
    assert_eq!(ev.calls.load(Ordering::SeqCst), (2 + 10 + 20) * 9);
}

#[test]
fn schedules_respect_box_and_rate() {
    let cfg = PipelineConfig::defaults(PlantKind::Tubular);
    let s = stochmpc_cli::make_schedules(&cfg, 20, 5).unwrap();
    assert_eq!(s.len(), 20);
    for u in &s {
        assert_eq!(u.len(), cfg.ocp.horizon);
        let mut prev = cfg.ocp.previous_control;
        for &v in u {
            assert!((cfg.ocp.control_lo..=cfg.ocp.control_hi).contains(&v));
            assert!((v - prev).abs() <= cfg.ocp.rate_limit + 1e-12);
            prev = v;
        }
    }
    assert_eq!(s, stochmpc_cli::make_schedules(&cfg, 20, 5).unwrap());
    assert_ne!(s, stochmpc_cli::make_schedules(&cfg, 20, 6).unwrap());
}
