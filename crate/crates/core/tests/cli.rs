use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blocksense")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const DIMS: [&str; 8] = ["--n1", "16", "--n2", "16", "--k1", "4", "--k2", "4"];

#[test]
fn detect_writes_risk_table() {
    let mut args = vec!["detect"];
    args.extend(DIMS);
    args.extend(["--mu", "0,2", "--m", "20", "--trials", "50"]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mu,type_I,type_II,risk,trials,stderr");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("2.0,"));
}

#[test]
fn localize_passive_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let mut args = vec!["localize-passive"];
    args.extend(DIMS);
    args.extend([
        "--mu",
        "5",
        "--m",
        "30",
        "--trials",
        "4",
        "--seed",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    let out = run(&args);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "trial,success,est_row,est_col,true_row,true_col,f_star,f_best"
    );
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn localize_active_columns_and_variants() {
    for variant in ["proof", "box"] {
        let mut args = vec!["localize-active"];
        args.extend(["--n1", "32", "--n2", "32", "--k1", "4", "--k2", "4"]);
        args.extend(["--mu", "3", "--budget", "2200", "--trials", "3", "--variant", variant]);
        let out = run(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = stdout(&out);
        assert_eq!(
            text.lines().next().unwrap(),
            "trial,success,est_row,est_col,spent_total,spent_cbs,spent_stage1,spent_search"
        );
        for line in text.lines().skip(1) {
            let spent: usize = line.split(',').nth(4).unwrap().parse().unwrap();
            assert!(spent <= 2200);
        }
    }
}

#[test]
fn bounds_grid() {
    let out = run(&["bounds", "--which", "det-lb,det-ub", "--grid", "n=64;k=4;m=100;level=0.5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("which,n1,n2,k1,k2,m,sigma,level,value"));
    assert!(lines[1].starts_with("det-lb,64,64,4,4,100,1.0,0.5,0.75,"));

    let out = run(&["bounds", "--which", "ploc-ub", "--grid", "n=16,32;k=2:4:3"]);
    assert_eq!(stdout(&out).lines().count(), 7);
}

#[test]
fn sweep_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(
        &cfg,
        "# tiny sweep\nmode = passive\nsizes = 8:2, 12:3\nm = 20\nsnr_grid = 0.5, 4\ntrials = 10\nseed = 2\n",
    )
    .unwrap();
    let csv = dir.path().join("s.csv");
    let svg = dir.path().join("s.svg");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--threads",
        "2",
        "--out-csv",
        csv.to_str().unwrap(),
        "--out-svg",
        svg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "mode,n1,n2,k1,k2,m,sigma,snr,snr_rescaled,successes,trials,phat,stderr,theory_lb,theory_ub"
    );
    assert_eq!(text.lines().count(), 5);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));

    // flags override the file
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "3",
        "--set",
        "m=10",
        "--out-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(10) == Some("3") && l.split(',').nth(5) == Some("10")));
}

#[test]
fn exit_codes() {
    let mut args = vec!["localize-passive"];
    args.extend(["--n1", "4", "--n2", "4", "--k1", "5", "--k2", "1", "--mu", "1"]);
    assert_eq!(run(&args).status.code(), Some(2));
    assert_eq!(run(&["bounds", "--which", "nope", "--grid", "n=8;k=2"]).status.code(), Some(2));
    assert_eq!(run(&["detect", "--n1", "8"]).status.code(), Some(2));

    let missing = Path::new("/nonexistent/cfg");
    assert_eq!(
        run(&["sweep", "--config", missing.to_str().unwrap(), "--out-csv", "/tmp/x.csv"])
            .status
            .code(),
        Some(3)
    );

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "mode = passive\nsizes = 8:2\nsnr_grid = 1\ntrials = 2\n").unwrap();
    let out = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out-csv", "/nonexistent/dir/out.csv"]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(&cfg, "mode = sideways\n").unwrap();
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-csv",
        dir.path().join("o.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
