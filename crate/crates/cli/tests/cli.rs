use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
[case]
kind = "tubular"
seed = 3

[plant]
spatial_nodes = 16

[sampling]
n1 = 5
n_fresh = 2
segments = 3

[pce]
n2 = 400

[rnn]
steady_start = 2
restarts = 1
tolerance = 1.0

[rnn.hidden]
C_mean = [3]
T_upper = [3]

[ocp]
horizon = 6

[validate]
n_draws = 2
"#;

fn stochmpc(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stochmpc"))
        .arg("--config")
        .arg(dir.join("run.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let o = stochmpc(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn every_verb_runs_and_stamps_its_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let out = dir.join("out");

    ok(dir, &["simulate", "--control", "1.0"]);
    let states = read(&out.join("simulate/states.csv"));
    let hash_line = states.lines().next().unwrap().to_string();
    assert!(hash_line.starts_with("# config_hash="));
    assert_eq!(states.lines().nth(1), Some("time,field,node,value"));

    ok(dir, &["build"]);
    ok(dir, &["control"]);
    ok(dir, &["validate"]);
    ok(dir, &["export", "--kind", "all"]);
    for sub in ["bundle", "control", "validate", "plots"] {
        let manifest = read(&out.join(sub).join("manifest.csv"));
        assert!(manifest.starts_with(&hash_line), "{sub}");
        for line in manifest.lines().skip(2) {
            let name = line.split(',').next().unwrap();
            assert!(read(&out.join(sub).join(name)).starts_with(&hash_line), "{sub}/{name}");
        }
    }
    let policy = read(&out.join("control/policy.csv"));
    let controls: Vec<f64> = policy.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(controls.len(), 6);
    let mut prev = 0.0;
    for u in controls {
        assert!((0.0..=2.0).contains(&u) && (u - prev).abs() <= 0.1 + 1e-9);
        prev = u;
    }
    let plot = read(&out.join("plots/plot_policy.csv"));
    assert_eq!(plot.lines().nth(1), Some("x,series,value"));

    // Export is idempotent.
    let before: Vec<(String, String)> = std::fs::read_dir(out.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.display().to_string(), read(&p)))
        .collect();
    ok(dir, &["export"]);
    for (p, body) in before {
        assert_eq!(read(Path::new(&p)), body, "{p}");
    }

    // A different seed changes the hash; the stored bundle is refused.
    let o = stochmpc(dir, &["--seed", "4", "control"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("config hash"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_inputs_and_bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let o = stochmpc(dir, &["control"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = stochmpc(dir, &["export", "--kind", "nonsense"]);
    assert!(!o.status.success());
    std::fs::write(dir.join("run.toml"), "[case]\nkind = \"tubular\"\nbogus = 1\n").unwrap();
    assert!(!stochmpc(dir, &["simulate"]).status.success());
}
