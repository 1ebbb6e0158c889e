use std::fs;
use std::path::Path;

use cowqkd_cli::run_with;
use tempfile::TempDir;

fn cowqkd(args: &[&str]) -> i32 {
    run_with(
        std::iter::once("cowqkd").chain(args.iter().copied()),
        &mut std::io::sink(),
    )
}

fn out_arg(dir: &Path, name: &str) -> String {
    format!("--out={}", dir.join(name).display())
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn column(rows: &[Vec<String>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn every_csv_starts_with_seed_and_config_hash() {
    let dir = TempDir::new().unwrap();
    for (cmd, extra) in [
        ("predict", ""),
        ("sweep", "--analytic-only"),
        ("align", "--alignment.lock_time_s=60"),
        ("session", "--session.n_blocks=1"),
    ] {
        let name = format!("{cmd}.csv");
        let mut args = vec![cmd, "--seed=2a"];
        let out = out_arg(dir.path(), &name);
        args.push(&out);
        if !extra.is_empty() {
            args.push(extra);
        }
        assert_eq!(cowqkd(&args), 0, "{cmd}");
        let text = fs::read_to_string(dir.path().join(&name)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(
            first.starts_with(
                "# seed=000000000000000000000000000000000000000000000000000000000000002a config="
            ),
            "{first}"
        );
        assert_eq!(first.len(), "# seed= config=".len() + 64 + 16);
    }
}

#[test]
fn analytic_sweep_is_monotone_and_hits_the_link_budget() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        cowqkd(&["sweep", "--analytic-only", &out_arg(dir.path(), "s.csv")]),
        0
    );
    let rows = csv_rows(&dir.path().join("s.csv"));
    assert_eq!(
        column(&rows, 0),
        vec![100.0, 125.0, 150.0, 175.0, 200.0, 225.0, 250.0]
    );
    let rate = column(&rows, 3);
    assert!(rate.windows(2).all(|w| w[1] < w[0]), "{rate:?}");
    let loss = column(&rows, 1);
    assert!((loss[6] - 42.6).abs() <= 0.1);
    assert!(rows.iter().all(|r| r[4].is_empty() && r[5].is_empty()));
}

#[test]
fn simulated_sweep_at_100_km() {
    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path(), "s.csv");
    let args = ["sweep", "--sweep.lengths_km=100", "--slots=1e8", &out];
    assert_eq!(cowqkd(&args), 0);
    let rows = csv_rows(&dir.path().join("s.csv"));
    let q: f64 = rows[0][4].parse().unwrap();
    assert!((q - 0.0085).abs() <= 0.005, "{q}");
    assert_eq!(rows[0][7], "true");
}

#[test]
fn align_trace_has_four_stages_in_order() {
    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path(), "a.csv");
    let args = [
        "align",
        "--fibre.length_km=100",
        "--alignment.lock_time_s=300",
        &out,
    ];
    assert_eq!(cowqkd(&args), 0);
    let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let mut stages: Vec<&str> = Vec::new();
    for line in text.lines().skip(2) {
        let stage = line.split(',').nth(1).unwrap();
        if stages.last() != Some(&stage) {
            stages.push(stage);
        }
    }
    assert_eq!(stages, ["noise", "scan", "hold_max", "locked_min"]);
}

#[test]
fn align_scan_covers_two_fringes() {
    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path(), "a.csv");
    assert_eq!(
        cowqkd(&[
            "align",
            "--fibre.length_km=100",
            "--alignment.lock_time_s=30",
            &out
        ]),
        0
    );
    let rows = csv_rows(&dir.path().join("a.csv"));
    let offsets: Vec<f64> = rows
        .iter()
        .filter(|r| r[1] == "scan")
        .map(|r| r[2].parse().unwrap())
        .collect();
    let span = offsets.last().unwrap() - offsets.first().unwrap();
    let phase_per_step = 0.05;
    assert!(
        span * phase_per_step >= 2.0 * std::f64::consts::TAU,
        "{span}"
    );
}

#[test]
fn session_writes_csv_and_transcript() {
    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path(), "run.csv");
    assert_eq!(cowqkd(&["session", "--session.n_blocks=2", &out]), 0);
    let rows = csv_rows(&dir.path().join("run.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[1] == "32768"));
    // the first key exists only once the first block has been filled
    let first_t: f64 = rows[0][6].parse().unwrap();
    assert!(first_t > 60.0, "{first_t}");
    let transcript = fs::read(dir.path().join("run.transcript")).unwrap();
    assert!(!transcript.is_empty());
}

#[test]
fn noiseless_session_tracks_optical_error() {
    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path(), "z.csv");
    let args = [
        "session",
        "--fibre.length_km=0",
        "--data_detector.dark_rate_hz=0",
        "--monitor_detector.dark_rate_hz=0",
        "--session.n_blocks=2",
        &out,
    ];
    assert_eq!(cowqkd(&args), 0);
    for r in csv_rows(&dir.path().join("z.csv")) {
        let q: f64 = r[2].parse().unwrap();
        let e = 0.008 / 1.008;
        assert!((q - e).abs() < 0.0015, "{q}");
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path(), "x.csv");
    assert_eq!(cowqkd(&["predict", "--nope.key=1", &out]), 2);
    assert_eq!(cowqkd(&["predict", "--source.mu=abc", &out]), 2);
    assert_eq!(cowqkd(&["predict", "--source.mu", &out]), 2);
    assert_eq!(cowqkd(&["predict", "--sweep.lengths_km=200,100", &out]), 2);
    assert_eq!(cowqkd(&["bogus"]), 2);
    assert_eq!(
        cowqkd(&["predict", "--config=/definitely/missing.conf", &out]),
        4
    );
    assert_eq!(cowqkd(&["predict", "--out=/definitely/missing/x.csv"]), 4);
    let abort = [
        "session",
        "--session.unreliable_visibility=abort",
        "--session.n_blocks=1",
        &out,
    ];
    assert_eq!(cowqkd(&abort), 3);
    let blind = ["session", "--data_detector.efficiency=0", &out];
    assert_eq!(cowqkd(&blind), 3);
}

#[test]
fn config_file_is_read_and_overridden() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        "# short sweep\nsweep.lengths_km = 50, 60\nsource.mu = 0.3 # weaker pulses\n",
    )
    .unwrap();
    let c = format!("--config={}", conf.display());
    let out = out_arg(dir.path(), "p.csv");
    assert_eq!(cowqkd(&["predict", &c, "--source.mu=0.4", &out]), 0);
    let rows = csv_rows(&dir.path().join("p.csv"));
    assert_eq!(column(&rows, 0), vec![50.0, 60.0]);

    fs::write(&conf, "source.mu = 0.3\nfoo = 1\n").unwrap();
    assert_eq!(cowqkd(&["predict", &c, &out]), 2);
}

#[test]
fn effective_config_round_trips() {
    use clap::Parser;
    use cowqkd_cli::{build_config, Cli, ExperimentConfig};

    let dir = TempDir::new().unwrap();
    let cli = Cli::parse_from(["cowqkd", "predict", "--seed=ff"]);
    let overrides = vec![("source.mu".to_string(), "0.37".to_string())];
    let cfg = build_config(&cli, &overrides).unwrap();
    let conf = dir.path().join("effective.conf");
    fs::write(&conf, cfg.to_text()).unwrap();
    let reloaded = ExperimentConfig::from_text(&fs::read_to_string(&conf).unwrap()).unwrap();
    assert_eq!(reloaded.hash(), cfg.hash());

    let a = out_arg(dir.path(), "a.csv");
    let b = out_arg(dir.path(), "b.csv");
    assert_eq!(cowqkd(&["predict", "--seed=ff", "--source.mu=0.37", &a]), 0);
    let c = format!("--config={}", conf.display());
    assert_eq!(cowqkd(&["predict", &c, &b]), 0);
    assert_eq!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("b.csv")).unwrap()
    );
}
