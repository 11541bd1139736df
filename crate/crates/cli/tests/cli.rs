use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name)
}

fn loadpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadpipe")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn transform_matches_golden_and_writes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.ir");
    let plan = dir.path().join("plan.json");
    let o = loadpipe(&[
        "transform",
        golden("two_level.in.ir").to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--emit-plan",
        plan.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&out).unwrap(), fs::read(golden("two_level.out.ir")).unwrap());
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(plan).unwrap()).unwrap();
    let names: Vec<&str> = plan["buffers"].as_array().unwrap().iter().map(|b| b["buffer"].as_str().unwrap()).collect();
    assert!(names.contains(&"A_shared") && names.contains(&"A_reg"), "{names:?}");
}

#[test]
fn hintless_program_comes_back_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(golden("single_level.in.ir")).unwrap().replace(" stages 3", "");
    let path = dir.path().join("plain.ir");
    fs::write(&path, &src).unwrap();
    let t = loadpipe(&["transform", path.to_str().unwrap()]);
    let f = loadpipe(&["fmt", path.to_str().unwrap()]);
    assert_eq!(code(&t), 0);
    assert_eq!(t.stdout, f.stdout);
}

#[test]
fn compute_produced_hint_is_an_analysis_failure() {
    let dir = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(golden("single_level.in.ir")).unwrap().replace(
        "copy_async A_shared[mi, ki] <- A[mo * 4 + mi, ko * 4 + ki];",
        "A_shared[mi, ki] = inc(A[mo * 4 + mi, ko * 4 + ki]) flops 1;",
    );
    let path = dir.path().join("bad.ir");
    fs::write(&path, src).unwrap();
    let o = loadpipe(&["transform", path.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("NotAsyncProducer"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn parse_and_validation_errors_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let syntax = dir.path().join("syntax.ir");
    fs::write(&syntax, "buffer A global f16[4;\n").unwrap();
    assert_eq!(code(&loadpipe(&["fmt", syntax.to_str().unwrap()])), 2);
    let invalid = dir.path().join("invalid.ir");
    fs::write(&invalid, "buffer A global f16[4];\nA[i] = inc(A[0]) flops 1;\n").unwrap();
    assert_eq!(code(&loadpipe(&["validate", invalid.to_str().unwrap()])), 3);
    assert_eq!(code(&loadpipe(&["fmt", dir.path().join("missing.ir").to_str().unwrap()])), 6);
    let ok = loadpipe(&["validate", golden("two_level.out.ir").to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
}

#[test]
fn verify_accepts_the_pass_and_catches_a_mutation() {
    let input = golden("single_level.in.ir");
    let o = loadpipe(&["verify", input.to_str().unwrap(), "--trials", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = tempfile::tempdir().unwrap();
    let mutated = fs::read_to_string(golden("single_level.out.ir"))
        .unwrap()
        .replace("A[mo * 4 + mi, ki + 4]", "A[mo * 4 + mi, ki + 8]");
    let path = dir.path().join("mutated.ir");
    fs::write(&path, mutated).unwrap();
    let o = loadpipe(&["verify", input.to_str().unwrap(), "--against", path.to_str().unwrap()]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("C["), "{}", stderr(&o));
    let o = loadpipe(&["verify", input.to_str().unwrap(), "--trials", "0"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn run_reads_json_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let ir = dir.path().join("double.ir");
    fs::write(&ir, "buffer X global i32[3];\nbuffer Y global i32[3];\nfor i seq 0..3 {\n  Y[i] = add(X[i], X[i]) flops 1;\n}\n")
        .unwrap();
    let inputs = dir.path().join("in.json");
    fs::write(&inputs, r#"{"X": [1, -2, 5]}"#).unwrap();
    let o = loadpipe(&["run", ir.to_str().unwrap(), "--inputs", inputs.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["Y"], serde_json::json!([2, -4, 10]));
    fs::write(&inputs, r#"{"X": [1]}"#).unwrap();
    assert_eq!(code(&loadpipe(&["run", ir.to_str().unwrap(), "--inputs", inputs.to_str().unwrap()])), 6);
}

const PARAMS: &str = r#"{"tile_m":128,"tile_n":128,"tile_k":32,"reg_tile_m":32,"reg_tile_n":32,"reg_tile_k":16,
    "n_smem_pipe_stage":3,"n_reg_pipe_stage":2,"n_warp_per_threadblk":4}"#;

#[test]
fn predict_prints_json_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("p.json");
    fs::write(&params, PARAMS).unwrap();
    let p = params.to_str().unwrap();
    let o = loadpipe(&["predict", "--workload", "2048x2048x2048", "--params", p, "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let f = |k: &str| b[k].as_f64().unwrap();
    assert_eq!(f("t_threadblk"), f("t_init") + f("t_main_loop") + f("t_epilogue"));
    let both = loadpipe(&["predict", "--workload", "2048x2048x2048", "--params", p]);
    let text = String::from_utf8(both.stdout).unwrap();
    assert!(text.contains("\"t_kernel\"") && text.lines().any(|l| l.starts_with("t_kernel ")), "{text}");
    fs::write(&params, PARAMS.replace("\"n_smem_pipe_stage\":3", "\"n_smem_pipe_stage\":400")).unwrap();
    assert_eq!(code(&loadpipe(&["predict", "--workload", "2048x2048x2048", "--params", p])), 4);
}

#[test]
fn simulate_reports_makespan_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    fs::write(&cfg, r#"{"t_load":0,"t_use":10,"n_loop":8,"n_pipe":1,"n_mplx":1}"#).unwrap();
    let trace = dir.path().join("t.csv");
    let o = loadpipe(&["simulate", cfg.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), r#"{"makespan":80.0}"#);
    let csv = fs::read_to_string(trace).unwrap();
    assert_eq!(csv.lines().next(), Some("time,worker,kind,iter"));
    assert_eq!(csv.lines().count(), 1 + 8 * 4);
    fs::write(
        &cfg,
        r#"{"outer":{"t_load":100,"t_use":0,"n_loop":4,"n_pipe":2,"n_mplx":1},
            "inner":{"t_load":0,"t_use":5,"n_loop":4,"n_pipe":2,"n_mplx":1}}"#,
    )
    .unwrap();
    assert_eq!(code(&loadpipe(&["simulate", cfg.to_str().unwrap()])), 0);
    fs::write(&cfg, r#"{"t_load":-1,"t_use":10,"n_loop":8,"n_pipe":1,"n_mplx":1}"#).unwrap();
    assert_eq!(code(&loadpipe(&["simulate", cfg.to_str().unwrap()])), 6);
}

fn small_space(dir: &Path) -> PathBuf {
    let path = dir.join("space.json");
    fs::write(
        &path,
        r#"{"workload":{"m":512,"n":512,"k":512},"tile_m":[64,128],"tile_n":[64,128],"tile_k":[16,32],
            "reg_tile_m":[16,32],"reg_tile_n":[32],"reg_tile_k":[8,16],"n_smem_pipe_stage":[2,3],
            "n_reg_pipe_stage":[2],"n_warp_per_threadblk":[2,4]}"#,
    )
    .unwrap();
    path
}

#[test]
fn tune_writes_report_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let space = small_space(dir.path());
    let csv = dir.path().join("c.csv");
    let o = loadpipe(&[
        "tune",
        "--method",
        "assisted",
        "--budget",
        "16",
        "--seed",
        "3",
        "--space",
        space.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["method"], "assisted");
    assert_eq!(r["trials"].as_array().unwrap().len(), 16);
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next(), Some("method,seed,k,best_cost,normalized"));
    assert_eq!(text.lines().count(), 17);
    assert_eq!(code(&loadpipe(&["tune", "--method", "xgboost"])), 2);
    assert_eq!(code(&loadpipe(&["tune", "--method", "grid", "--budget", "0", "--space", space.to_str().unwrap()])), 6);
}

#[test]
fn bench_model_rejects_an_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.json");
    fs::write(&grid, r#"{"n_loop":[]}"#).unwrap();
    assert_eq!(code(&loadpipe(&["bench-model", "--grid", grid.to_str().unwrap()])), 6);
    fs::write(&grid, r#"{"n_loop":[32],"ratios":[0.5,4],"n_pipe":[2],"n_mplx":[1]}"#).unwrap();
    let o = loadpipe(&["bench-model", "--grid", grid.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines().skip(1) {
        let err: f64 = line.split(',').nth(7).unwrap().parse().unwrap();
        assert!(err <= 0.10, "{line}");
    }
}

#[test]
fn schedule_lowers_and_reports_rule() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.txt");
    let s = script.to_str().unwrap();
    fs::write(&script, "cache_read A shared A_shared\ntile C ko=2 ki=4\npipeline A_shared 3\n").unwrap();
    let o = loadpipe(&["schedule", "--workload", "8x8x8", "--script", s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().contains("buffer A_shared shared f16[8, 4] stages 3;"));
    fs::write(&script, "cache_read A_pre shared A_shared\ntile C ko=2 ki=4\ninline A_pre\npipeline A_shared 2\n").unwrap();
    let o = loadpipe(&["schedule", "--workload", "8x8x8", "--pre-op", "inc", "--script", s]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("NotAsyncProducer"));
    fs::write(&script, "frobnicate C\n").unwrap();
    assert_eq!(code(&loadpipe(&["schedule", "--workload", "8x8x8", "--script", s])), 2);
}
