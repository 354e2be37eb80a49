//! End-to-end checks of the `bpmf` binary: flags, exit codes, outputs.

use std::process::Command;

fn bpmf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bpmf"))
}

#[test]
fn help_exits_zero() {
    let out = bpmf().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--train", "--format", "--policy", "--peers", "--resume", "--checkpoint-every"] {
        assert!(text.contains(flag), "help is missing {flag}");
    }
}

#[test]
fn smoke_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpmf()
        .args([
            "--train",
            "fixture:100x80",
            "--k",
            "4",
            "--iterations",
            "2",
            "--burnin",
            "1",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3, "header plus one row per iteration");
    assert!(lines[0].starts_with("iteration,phase_u_ms,phase_v_ms,rmse_sample,rmse_avg"));
    let last: Vec<&str> = lines[2].split(',').collect();
    let rmse: f64 = last[3].parse().unwrap();
    assert!(rmse.is_finite() && rmse > 0.0);

    assert!(dir.path().join("predictions.csv").exists());
    assert!(dir.path().join("plan.txt").exists());
    assert!(dir.path().join("config.txt").exists());
    assert!(dir.path().join("run.log").exists());
    assert!(dir.path().join("checkpoint_node0.bin").exists());
}

#[test]
fn env_var_overrides_flag_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpmf()
        .env("BPMF_ITERATIONS", "3")
        .env("BPMF_BURNIN", "1")
        .env("BPMF_K", "4")
        .args(["--train", "fixture:100x80", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4, "three iterations from the environment");
}

#[test]
fn config_error_exit_code() {
    let out = bpmf()
        .args(["--train", "fixture:100x80", "--test-fraction", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn data_error_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpmf()
        .args(["--train", "/nonexistent/ratings.mtx", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn csv_pipeline_with_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ratings.csv");
    // 12 users × 8 movies grid with external ids starting at 100/500
    let mut body = String::from("userId,movieId,rating,timestamp\n");
    for u in 0..12 {
        for m in 0..8 {
            body.push_str(&format!("{},{},{},0\n", 100 + u, 500 + m, 1 + (u + m) % 5));
        }
    }
    std::fs::write(&data, body).unwrap();

    let out_dir = dir.path().join("out");
    let out = bpmf()
        .args(["--train"])
        .arg(&data)
        .args(["--format", "csv", "--k", "3", "--iterations", "2", "--burnin", "1", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // sidecars map external ids densely
    let users = std::fs::read_to_string(out_dir.join("ids.users.csv")).unwrap();
    assert!(users.starts_with("external,internal\n100,0\n101,1\n"));
    // predictions reported in external ids
    let preds = std::fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    let second_line = preds.lines().nth(1).unwrap();
    let uid: u64 = second_line.split(',').next().unwrap().parse().unwrap();
    assert!((100..112).contains(&uid));
}

#[test]
fn two_process_tcp_matches_single() {
    // claim two free ports, then release them for the node processes
    let ports: Vec<u16> = (0..2)
        .map(|_| {
            std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
        })
        .collect();
    let peers = format!("127.0.0.1:{},127.0.0.1:{}", ports[0], ports[1]);
    let dir = tempfile::tempdir().unwrap();

    let single_out = dir.path().join("single");
    let ok = bpmf()
        .args(["--train", "fixture:100x80", "--k", "5", "--iterations", "5", "--burnin", "1",
               "--workers", "2", "--out"])
        .arg(&single_out)
        .status()
        .unwrap();
    assert!(ok.success());

    let mut children = Vec::new();
    for node in 0..2 {
        let out = dir.path().join(format!("tcp{node}"));
        children.push(
            bpmf()
                .args(["--train", "fixture:100x80", "--k", "5", "--iterations", "5",
                       "--burnin", "1", "--workers", "2", "--nodes", "2", "--backend", "tcp",
                       "--node-id", &node.to_string(), "--peers", &peers, "--out"])
                .arg(&out)
                .spawn()
                .unwrap(),
        );
    }
    for mut child in children {
        assert!(child.wait().unwrap().success());
    }

    // identical RMSE columns across single-node and both TCP processes
    let rmse_cols = |path: std::path::PathBuf| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let c: Vec<&str> = l.split(',').collect();
                format!("{},{},{}", c[0], c[3], c[4])
            })
            .collect()
    };
    let reference = rmse_cols(single_out.join("metrics.csv"));
    assert_eq!(rmse_cols(dir.path().join("tcp0/metrics.csv")), reference);
    assert_eq!(rmse_cols(dir.path().join("tcp1/metrics_node1.csv")), reference);
}
