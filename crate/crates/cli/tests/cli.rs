use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tmac::io::{load_mask, load_tensor, save_mask, save_tensor};
use tmac::synth::{generate, Family, SynthSpec};
use tmac::tensor::DenseTensor;

fn tmac_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmac"))
        .args(args)
        .output()
        .expect("failed to launch binary")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is not a JSON object")
}

fn example_tensor() -> DenseTensor {
    DenseTensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap()
}

#[test]
fn unfold_writes_expected_csv() {
    let dir = tempfile::tempdir().unwrap();
    let tensor_path = dir.path().join("t.tnsr");
    save_tensor(&tensor_path, &example_tensor()).unwrap();

    for (mode, expected) in [
        ("1", "1,3,5,7\n2,4,6,8\n"),
        ("2", "1,2,5,6\n3,4,7,8\n"),
        ("3", "1,2,3,4\n5,6,7,8\n"),
    ] {
        let out_path = dir.path().join(format!("m{mode}.csv"));
        let out = tmac_bin(&[
            "unfold",
            tensor_path.to_str().unwrap(),
            mode,
            "-o",
            out_path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        assert_eq!(fs::read_to_string(&out_path).unwrap(), expected);
    }
}

#[test]
fn unfold_rejects_bad_mode_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let tensor_path = dir.path().join("t.tnsr");
    save_tensor(&tensor_path, &example_tensor()).unwrap();
    let out = tmac_bin(&[
        "unfold",
        tensor_path.to_str().unwrap(),
        "5",
        "-o",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_full_sampling_lists_every_index() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("inst");
    let out = tmac_bin(&[
        "synth",
        prefix.to_str().unwrap(),
        "--dims",
        "3,4,2",
        "--rank",
        "2",
        "--sr",
        "1.0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = load_mask(prefix.with_extension("mask")).unwrap();
    assert_eq!(mask.indices, (1..=24).collect::<Vec<_>>());
    let report = stdout_json(&out);
    assert_eq!(report["observed"], 24);
    assert_eq!(report["total"], 24);
}

#[test]
fn synth_spec_file_and_numerical_rank() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    fs::write(
        &spec_path,
        r#"{"dims":[12,10,8],"rank":3,"family":"gaussian","sr":0.5,"sigma":0,"seed":7}"#,
    )
    .unwrap();
    let prefix = dir.path().join("inst");
    let out = tmac_bin(&[
        "synth",
        prefix.to_str().unwrap(),
        "--spec",
        spec_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let truth = load_tensor(dir.path().join("inst.truth.tnsr")).unwrap();
    for mode in 1..=3 {
        let m = truth.unfold(mode).unwrap();
        let tol = tmac::linalg::numerical_rank_tol(m.nrows(), m.ncols(), 1e-12);
        let svd = tmac::linalg::compact_svd(&m, tol).unwrap();
        assert_eq!(svd.rank(), 3, "mode {mode}");
    }
}

#[test]
fn synth_without_enough_flags_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmac_bin(&["synth", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_instance(dir: &Path, sr: f64, seed: u64) -> (String, String, String) {
    let (truth, obs) = generate(&SynthSpec {
        dims: vec![8, 7, 6],
        core_rank: 2,
        family: Family::Gaussian,
        sr,
        noise_sigma: 0.0,
        seed,
    })
    .unwrap();
    let truth_path = dir.join("truth.tnsr");
    let obs_path = dir.join("obs.tnsr");
    let mask_path = dir.join("obs.mask");
    save_tensor(&truth_path, &truth).unwrap();
    save_tensor(&obs_path, &obs.to_dense()).unwrap();
    save_mask(&mask_path, obs.dims(), obs.indices()).unwrap();
    (
        obs_path.to_string_lossy().into_owned(),
        mask_path.to_string_lossy().into_owned(),
        truth_path.to_string_lossy().into_owned(),
    )
}

#[test]
fn complete_with_full_mask_returns_input_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, mask_path, truth_path) = write_instance(dir.path(), 1.0, 3);
    let out_path = dir.path().join("done.tnsr");
    let out = tmac_bin(&[
        "complete",
        &obs_path,
        &mask_path,
        "-o",
        out_path.to_str().unwrap(),
        "--truth",
        &truth_path,
        "--rank",
        "1",
        "--max-iters",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let completed = load_tensor(&out_path).unwrap();
    let input = load_tensor(&obs_path).unwrap();
    assert_eq!(completed.values(), input.values());
    let report = stdout_json(&out);
    assert_eq!(report["relerr"].as_f64().unwrap(), 0.0);
}

#[test]
fn complete_recovers_sampled_instance_with_growing_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, mask_path, truth_path) = write_instance(dir.path(), 0.7, 4);
    let out_path = dir.path().join("done.tnsr");
    let out = tmac_bin(&[
        "complete",
        &obs_path,
        &mask_path,
        "-o",
        out_path.to_str().unwrap(),
        "--truth",
        &truth_path,
        "--tol",
        "1e-5",
        "--scheme",
        "inc",
        "--rank",
        "1",
        "--dr",
        "1",
        "--rmax",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert!(report["relerr"].as_f64().unwrap() <= 1e-2);
    let ranks: Vec<u64> = report["final_ranks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert!(ranks.iter().all(|&r| (1..=4).contains(&r)));
    assert_eq!(report["stop_reason"].as_str().unwrap().is_empty(), false);
}

#[test]
fn complete_missing_mask_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, _, _) = write_instance(dir.path(), 1.0, 5);
    let missing = dir.path().join("nope.mask");
    let out = tmac_bin(&[
        "complete",
        &obs_path,
        missing.to_str().unwrap(),
        "-o",
        dir.path().join("out.tnsr").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.mask"), "stderr: {stderr}");
}

#[test]
fn complete_dimension_mismatch_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, _, _) = write_instance(dir.path(), 1.0, 6);
    let other_mask = dir.path().join("other.mask");
    save_mask(&other_mask, &[4, 4], &[1, 2]).unwrap();
    let out = tmac_bin(&[
        "complete",
        &obs_path,
        other_mask.to_str().unwrap(),
        "-o",
        dir.path().join("out.tnsr").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn garbage_tensor_file_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tnsr");
    fs::write(&bad, b"not a tensor").unwrap();
    let out = tmac_bin(&[
        "unfold",
        bad.to_str().unwrap(),
        "1",
        "-o",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overflowing_problem_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let total = 4 * 4 * 4;
    let t = DenseTensor::new(vec![4, 4, 4], vec![1e308; total]).unwrap();
    let tensor_path = dir.path().join("big.tnsr");
    save_tensor(&tensor_path, &t).unwrap();
    let mask_path = dir.path().join("big.mask");
    save_mask(&mask_path, &[4, 4, 4], &(1..=total).collect::<Vec<_>>()).unwrap();
    let out = tmac_bin(&[
        "complete",
        tensor_path.to_str().unwrap(),
        mask_path.to_str().unwrap(),
        "-o",
        dir.path().join("out.tnsr").to_str().unwrap(),
        "--rank",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"solvr":{"tol":0.1}}"#).unwrap();
    let (obs_path, mask_path, _) = write_instance(dir.path(), 1.0, 7);
    let out = tmac_bin(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "complete",
        &obs_path,
        &mask_path,
        "-o",
        dir.path().join("out.tnsr").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_config_section_drives_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"solver":{"ranks":[2,2,2],"tol":1e-6,"max_iters":400}}"#,
    )
    .unwrap();
    let (obs_path, mask_path, truth_path) = write_instance(dir.path(), 0.7, 8);
    let out_path = dir.path().join("out.tnsr");
    let out = tmac_bin(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "complete",
        &obs_path,
        &mask_path,
        "-o",
        out_path.to_str().unwrap(),
        "--truth",
        &truth_path,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["final_ranks"], serde_json::json!([2, 2, 2]));
    assert!(report["relerr"].as_f64().unwrap() <= 1e-2);
}

#[test]
fn phase_writes_per_method_grids_with_shared_axes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("phase.json");
    fs::write(
        &cfg_path,
        r#"{"phase":{"grid":{"dims":[8,8,8],"ranks":[2],"srs":[1.0],"trials":2,"max_iters":100},
            "methods":["tmac-fix","matcomp"]}}"#,
    )
    .unwrap();
    let prefix = dir.path().join("grid");
    let out = tmac_bin(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "5",
        "phase",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fix_csv = fs::read_to_string(dir.path().join("grid.tmac-fix.csv")).unwrap();
    let mat_csv = fs::read_to_string(dir.path().join("grid.matcomp.csv")).unwrap();
    for text in [&fix_csv, &mat_csv] {
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,rank,sr,trials,successes,success_rate,mean_relerr,mean_time_s"
        );
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(&fields[1..3], ["2", "1"]);
        assert_eq!(fields[5], "1", "fully observed cell should always succeed");
    }
    let pgm = fs::read_to_string(dir.path().join("grid.tmac-fix.pgm")).unwrap();
    assert_eq!(pgm, "P2\n1 1\n255\n255\n");
    let report = stdout_json(&out);
    assert_eq!(report["success_cells"]["tmac-fix"], 1);
}
