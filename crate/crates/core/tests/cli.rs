use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mcflow::io::GridDump;
use tempfile::TempDir;

fn mcflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("MCFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn sidecar(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn measure_writes_headed_csv_sidecar_and_resolved_config() {
    let t = TempDir::new().unwrap();
    let o = mcflow(t.path(), &["measure", "--out", "m"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(t.path().join("m/measures.csv")).unwrap();
    assert!(csv.starts_with("point [-],x [length],y [length],component [-],omega [-]\n"));
    let meta = sidecar(&t.path().join("m"), "measure.meta.json");
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(meta["passed"], true);
    assert!(meta["tables"][0]["columns"][4]["definition"].as_str().unwrap().contains("harmonic measure"));
    let resolved = fs::read_to_string(t.path().join("m/config.resolved.toml")).unwrap();
    let cfg = mcflow::cli::parse_config_str(&resolved).unwrap();
    assert_eq!(cfg.measure.modes, 24);
    assert!(cfg.physics.friction.is_some());
}

#[test]
fn same_seed_gives_identical_tables_for_any_thread_count() {
    let t = TempDir::new().unwrap();
    for (dir, seed, threads) in [("a", "5", "1"), ("b", "5", "3"), ("c", "6", "1")] {
        let o = mcflow(t.path(), &["measure", "--out", dir, "--seed", seed, "--threads", threads]);
        assert_eq!(code(&o), 0);
    }
    let read = |d: &str| fs::read(t.path().join(d).join("measures.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn witness_mode_needs_expect_blowup() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("c.toml"), "[divcurl]\npoint_terms = false\nfields = 10\n").unwrap();
    assert_eq!(code(&mcflow(t.path(), &["divcurl-bench", "--config", "c.toml", "--out", "a"])), 2);
    assert_eq!(code(&mcflow(t.path(), &["divcurl-bench", "--config", "c.toml", "--out", "b", "--expect-blowup"])), 0);
}

#[test]
fn configuration_errors_exit_with_one() {
    let t = TempDir::new().unwrap();
    let o = mcflow(t.path(), &["green-check", "--domain", "missing.toml"]);
    assert_eq!(code(&o), 1);
    fs::write(t.path().join("dup.toml"), "seed = 1\nseed = 2\n").unwrap();
    assert_eq!(code(&mcflow(t.path(), &["measure", "--config", "dup.toml"])), 1);
    fs::write(t.path().join("typo.toml"), "[measure]\nmodez = 3\n").unwrap();
    assert_eq!(code(&mcflow(t.path(), &["measure", "--config", "typo.toml"])), 1);
}

#[test]
fn small_beta_is_rejected_unless_overridden() {
    let t = TempDir::new().unwrap();
    fs::write(
        t.path().join("b.toml"),
        "[physics]\nbeta = 1.0\n[simulate]\nt_end = 0.05\nresolution = 16\ndump = true\n",
    )
    .unwrap();
    let o = mcflow(t.path(), &["simulate", "--config", "b.toml", "--out", "s"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("4/3"));
    let o = mcflow(t.path(), &["simulate", "--config", "b.toml", "--out", "s", "--allow-small-beta"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dump = GridDump::read(&t.path().join("s/final_state.bin")).unwrap();
    assert_eq!((dump.n1, dump.n2, dump.fields.len()), (16, 32, 3));
    assert!((dump.t - 0.05).abs() < 1e-12);
    let csv = fs::read_to_string(t.path().join("s/diagnostics.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("t [time],mass ["));
}

#[test]
fn domain_paths_resolve_relative_to_the_config() {
    let t = TempDir::new().unwrap();
    fs::create_dir(t.path().join("cfg")).unwrap();
    fs::write(t.path().join("cfg/ecc.toml"), "[[holes]]\ncenter = [0.2, 0.0]\nradius = 0.3\n").unwrap();
    fs::write(t.path().join("cfg/run.toml"), "domain = \"ecc.toml\"\n").unwrap();
    let o = mcflow(t.path(), &["conformal", "--config", "cfg/run.toml", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta = sidecar(&t.path().join("c"), "conformal.meta.json");
    assert!(meta["summary"]["modulus_error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn green_check_exit_code_reflects_its_verdict() {
    let t = TempDir::new().unwrap();
    let o = mcflow(t.path(), &["green-check", "--out", "g"]);
    let meta = sidecar(&t.path().join("g"), "green-check.meta.json");
    let expected = if meta["passed"] == true { 0 } else { 2 };
    assert_eq!(code(&o), expected);
    let csv = fs::read_to_string(t.path().join("g/green_ladder.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
}

#[test]
fn schema_file_lists_exactly_the_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let text = fs::read_to_string(root.join("docs/config.schema.toml")).unwrap();
    assert_eq!(mcflow::cli::parse_config_str(&text).unwrap(), mcflow::cli::RunConfig::default());
}

#[test]
fn bundled_domains_and_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for e in fs::read_dir(root.join("domains")).unwrap() {
        let p = e.unwrap().path();
        mcflow::geometry::Domain::load(&p).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
    }
    for e in fs::read_dir(root.join("configs")).unwrap() {
        let p = e.unwrap().path();
        let cfg = mcflow::cli::parse_config_str(&fs::read_to_string(&p).unwrap()).unwrap();
        if let Some(d) = cfg.domain {
            assert!(root.join("configs").join(d).exists(), "{}", p.display());
        }
    }
}
