use std::path::Path;
use std::process::{Command, Output};

fn dicke3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dicke3"))
        .args(args)
        .env("DICKE3_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = dicke3(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn header(csv: &str) -> Vec<&str> {
    csv.lines().take(2).collect()
}

/// Column `name` of a CSV table, skipping the schema line.
fn column<'a>(csv: &'a str, name: &str) -> Vec<&'a str> {
    let mut lines = csv.lines().skip(1);
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = cols.iter().position(|c| *c == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap()).collect()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn golden_headers() {
    let cases: &[(&[&str], [&str; 2])] = &[
        (
            &["gfunc", "--x=0.3:0.32:0.01", "--parity", "plus"],
            ["# schema: gfunc/1", "x,parity,g_norm,log_scale,log_abs_g,near_baseline_kind,baseline_distance,status"],
        ),
        (
            &["spectrum", "--x=0:0.5"],
            ["# schema: spectrum/1", "x,e,parity,class,residual,bracket_lo,bracket_hi"],
        ),
        (
            &["sweep", "--g-lo", "0.2", "--g-hi", "0.25", "--steps", "2", "--levels", "2"],
            ["# schema: sweep/1", "g,parity,level_index,x,e,class"],
        ),
        (
            &["oracle", "--k", "2", "--certify", "false"],
            ["# schema: oracle/1", "kind,index,energy,x,delta,cutoff,cutoff_check"],
        ),
        (
            &["compare", "--k", "2"],
            ["# schema: compare/1", "parity,root_x,oracle_x,deviation,max_deviation"],
        ),
        (
            &["degeneracy", "--g-lo", "0.2", "--g-hi", "0.25", "--x=0.3:0.6", "--grid", "3:3"],
            [
                "# schema: degeneracy/1",
                "status,x,g,delta,parity,det,c1,kernel_dim,converged,iterations,sv_min,sv_next",
            ],
        ),
        (&["rabi", "--what", "gfunc", "--x=0.3:0.31"], ["# schema: rabi-gfunc/1", "x,g_plus,g_minus,status"]),
        (
            &["rabi", "--what", "spectrum", "--x=0:0.5"],
            ["# schema: rabi-spectrum/1", "x,e,parity,class,residual,bracket_lo,bracket_hi"],
        ),
    ];
    for (args, expected) in cases {
        let mut a = args.to_vec();
        a.extend(["--format", "csv"]);
        let out = stdout(&a);
        assert_eq!(header(&out), expected.to_vec(), "{args:?}");
    }
}

#[test]
fn sweep_files_and_their_headers() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("s");
    let stem_s = stem.to_str().unwrap();
    stdout(&["sweep", "--g-lo", "0.2", "--g-hi", "0.25", "--steps", "2", "--levels", "2", "--out", stem_s]);
    let crossings = read(&dir.path().join("s-crossings.csv"));
    assert_eq!(
        header(&crossings),
        ["# schema: sweep-crossings/1", "g,x,parity_a,parity_b,level_a,level_b,baseline_distance,refined"]
    );
    let overlay = read(&dir.path().join("s-baselines.csv"));
    assert_eq!(header(&overlay), ["# schema: sweep-baselines/1", "g,n,x"]);
    for name in ["s.json", "s-crossings.json", "s-baselines.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }

    stdout(&["rabi", "--what", "sweep", "--g-lo", "0.2", "--g-hi", "0.3", "--steps", "3", "--levels", "2", "--out", stem_s]);
    let deg = read(&dir.path().join("s-degeneracies.csv"));
    assert_eq!(header(&deg), ["# schema: rabi-degeneracies/1", "g,x,integer_distance"]);
    assert_eq!(header(&read(&dir.path().join("s.csv")))[0], "# schema: rabi-sweep/1");
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let stem = dir.path().join(format!("run{i}"));
        let out = Command::new(env!("CARGO_BIN_EXE_dicke3"))
            .args(["spectrum", "--x=-0.4:3", "--out", stem.to_str().unwrap()])
            .env("DICKE3_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        bodies.push((read(&stem.with_extension("csv")), read(&stem.with_extension("json"))));
    }
    assert_eq!(bodies[0], bodies[1]);
    assert!(bodies[0].0.lines().count() > 4);
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let out = stdout(&["oracle", "--k", "3", "--parity", "minus", "--format", "csv"]);
    for v in column(&out, "energy") {
        let mantissa = v.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{v}");
    }
}

#[test]
fn json_mirrors_csv() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("o");
    stdout(&["oracle", "--k", "4", "--out", stem.to_str().unwrap()]);
    let csv = read(&stem.with_extension("csv"));
    let json: serde_json::Value = serde_json::from_str(&read(&stem.with_extension("json"))).unwrap();
    assert_eq!(json["schema"], "oracle/1");
    let rows = json["rows"].as_array().unwrap();
    let energies = column(&csv, "energy");
    assert_eq!(rows.len(), energies.len());
    for (row, e) in rows.iter().zip(energies) {
        assert_eq!(row["energy"].as_f64().unwrap(), e.parse::<f64>().unwrap());
    }
}

#[test]
fn empty_window_gives_an_empty_table() {
    let out = stdout(&["spectrum", "--x-lo", "2", "--x-hi", "2", "--format", "csv"]);
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn compare_stays_within_tolerance() {
    let out = stdout(&["compare", "--g", "0.25", "--delta", "0.7", "--k", "12", "--format", "csv"]);
    let devs = column(&out, "max_deviation");
    assert_eq!(devs.len(), 24);
    for d in devs {
        assert!(d.parse::<f64>().unwrap() < 1e-7, "{d}");
    }
    assert!(column(&out, "oracle_x").iter().all(|v| !v.is_empty()));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# oracle job\ng = 0.4\ndelta = 0.9\nk = 3\ncertify = false\nparity = minus\n").unwrap();
    let from_file = stdout(&["oracle", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    let direct = stdout(&["oracle", "--g", "0.4", "--delta", "0.9", "--k", "3", "--certify", "false", "--parity", "minus", "--format", "csv"]);
    assert_eq!(from_file, direct);
    let overridden = stdout(&["oracle", "--config", cfg.to_str().unwrap(), "--g", "0.3", "--format", "csv"]);
    let expected = stdout(&["oracle", "--g", "0.3", "--delta", "0.9", "--k", "3", "--certify", "false", "--parity", "minus", "--format", "csv"]);
    assert_eq!(overridden, expected);
}

#[test]
fn config_errors_exit_with_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "delta = seven\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["spectrum", "--no-such-flag"],
        vec!["spectrum", "--g", "-1"],
        vec!["gfunc", "--z0", "0.9"],
        vec!["spectrum", "--x=3:1"],
        vec!["spectrum", "--order", "sometimes"],
        vec!["spectrum", "--config", cfg.to_str().unwrap()],
        vec!["oracle", "--kind", "quartic"],
    ];
    for args in cases {
        let out = dicke3(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty());
    }
    let err = String::from_utf8(dicke3(&["spectrum", "--config", cfg.to_str().unwrap()]).stderr).unwrap();
    assert!(err.contains("delta"), "{err}");
}

#[test]
fn bad_thread_count_is_a_config_error() {
    for v in ["0", "many"] {
        let out = Command::new(env!("CARGO_BIN_EXE_dicke3"))
            .args(["oracle", "--k", "1"])
            .env("DICKE3_THREADS", v)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "{v}");
    }
}

#[test]
fn computation_failure_exits_with_three_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("o");
    // Certification cannot pass with twelve bosons at strong coupling.
    let out = dicke3(&["oracle", "--g", "1.0", "--cutoff", "12", "--k", "6", "--out", stem.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unwritable_output_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("missing").join("o");
    let out = dicke3(&["oracle", "--k", "1", "--certify", "false", "--out", stem.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn gfunc_spikes_sit_on_baselines() {
    let out = stdout(&["gfunc", "--g", "0.25", "--delta", "0.7", "--z0", "0.5", "--x=0.9:1.1:0.05", "--parity", "plus", "--format", "csv"]);
    let xs = column(&out, "x");
    let logs = column(&out, "log_abs_g");
    let kinds = column(&out, "near_baseline_kind");
    let mut near = f64::NEG_INFINITY;
    let mut far = f64::NEG_INFINITY;
    for ((x, l), k) in xs.iter().zip(&logs).zip(&kinds) {
        let (x, l): (f64, f64) = (x.parse().unwrap(), l.parse().unwrap());
        if (x - 1.0).abs() < 1e-3 {
            assert_eq!(*k, "first");
            near = near.max(l);
        } else if (x - 1.0).abs() > 0.04 {
            assert_eq!(*k, "none");
            far = far.max(l);
        }
    }
    assert!(near > 1e3f64.ln() + far, "near {near} far {far}");
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(dicke3(&["--help"]).status.code(), Some(0));
    assert_eq!(dicke3(&["--version"]).status.code(), Some(0));
}
