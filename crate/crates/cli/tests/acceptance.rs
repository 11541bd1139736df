//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use loadpipe::corpus::corpus;
use loadpipe::interp::{check_equivalence, random_inputs};
use loadpipe::ir::{print_program, validate};
use loadpipe::perf::{is_compute_bound, pipeline_latency, predict, HardwareSpec};
use loadpipe::pipeline::transform;
use loadpipe::schedule::{parse_script, ProducerKind};
use loadpipe::sim::{simulate_stats, simulate_two_level_with, InnerPipelining, SimConfig};
use loadpipe::tuner::{enumerate_space, DesignSpace, MeasureConfig, Method, Study, TuneConfig};
use loadpipe::{parse_program, Rule, ScheduleError, ScheduleState, WorkloadDesc};

type Outcome = Result<String, String>;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus_equivalence() -> Outcome {
    let start = Instant::now();
    let entries = corpus();
    let mut failures = Vec::new();
    for e in &entries {
        let t = match transform(&e.program) {
            Ok(t) => t,
            Err(err) => {
                failures.push(format!("{}: {err}", e.name));
                continue;
            }
        };
        for seed in 0..5 {
            match check_equivalence(&e.program, &t, &random_inputs(&e.program, seed)) {
                Ok(r) if r.equal => {}
                Ok(r) => failures.push(format!("{} seed {seed}: {:?}", e.name, r.divergence)),
                Err(err) => failures.push(format!("{} seed {seed}: {err}", e.name)),
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(failures.is_empty(), || format!("{} divergences, first: {}", failures.len(), failures[0]))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{} programs x 5 seeds equal in {:.1}s", entries.len(), elapsed.as_secs_f64()))
}

fn golden_structure() -> Outcome {
    let dir = golden_dir();
    let read = |f: &str| fs::read_to_string(dir.join(f)).map_err(|e| format!("{f}: {e}"));
    let input = parse_program(&read("two_level.in.ir")?).map_err(|e| e.to_string())?;
    let out = print_program(&transform(&input).map_err(|e| e.to_string())?);
    ensure(out == read("two_level.out.ir")?, || "output differs from the golden file".into())?;
    let features = [
        ("expanded buffer", "buffer A_shared shared f16[3, 4, 4];"),
        ("+2 shift and mod-3 slot", "A_shared[(ko + 2) % 3, mi, ki]"),
        ("mod-extent producer wrap", "(ko + 2) % 8 * 4 + ki"),
        ("prologue chunk 0", "copy_async A_shared[0, mi, ki] <- A[mo * 4 + mi, ki];"),
        ("prologue chunk 1", "copy_async A_shared[1, mi, ki] <- A[mo * 4 + mi, ki + 4];"),
    ];
    for (what, text) in features {
        ensure(out.contains(text), || format!("missing {what}: {text}"))?;
    }
    // Sync order inside the outer loop body, restricted to A_shared.
    let body = out.split("for ko seq").nth(1).ok_or("no ko loop")?;
    let order: Vec<&str> = body
        .lines()
        .map(str::trim)
        .filter(|l| l.ends_with(" A_shared;"))
        .map(|l| l.split(' ').next().unwrap())
        .take(4)
        .collect();
    ensure(order == ["producer_acquire", "producer_commit", "consumer_wait", "consumer_release"], || {
        format!("sync order {order:?}")
    })?;
    Ok("byte-identical, all structural features present".into())
}

fn eligibility_rules() -> Outcome {
    let w = WorkloadDesc::gemm(8, 8, 8);
    let run = |state: ScheduleState, script: &str| state.apply_all(&parse_script(script).unwrap());
    let rule_of = |r: Result<ScheduleState, ScheduleError>| match r {
        Err(ScheduleError::Ineligible { report, state }) => Ok((report.failed_rule, *state)),
        other => Err(format!("expected an eligibility failure, got {other:?}")),
    };

    let s = run(ScheduleState::gemm(&w, Some("inc")), "cache_read A_pre shared A_shared\ntile C ko=2 ki=4\ninline A_pre")
        .map_err(|e| e.to_string())?;
    let (rule, _) = rule_of(s.mark_pipeline("A_shared", 2))?;
    ensure(rule == Some(Rule::NotAsyncProducer), || format!("compute-produced: {rule:?}"))?;

    let s = run(ScheduleState::stencil(4, 4), "cache_read X shared\ntile Y io=2 ii=2").map_err(|e| e.to_string())?;
    let (rule, _) = rule_of(s.mark_pipeline("X_buf", 2))?;
    ensure(rule == Some(Rule::NoSequentialLoop), || format!("no sequential loop: {rule:?}"))?;

    let s = run(
        ScheduleState::gemm(&w, None),
        "cache_read A shared A_shared\ncache_read B shared B_shared at kj\ntile C ko=2 kj=2 ki=2\npipeline A_shared 2",
    )
    .map_err(|e| e.to_string())?;
    let (rule, refused) = rule_of(s.mark_pipeline("B_shared", 2))?;
    ensure(rule == Some(Rule::SyncPositionConflict), || format!("sync conflict: {rule:?}"))?;
    for b in ["A_shared", "B_shared"] {
        let n = refused.node(b).ok_or(format!("{b} missing"))?;
        ensure(n.refused && n.stages.is_none(), || format!("{b} not refused"))?;
    }

    // Inline before pipeline makes the buffer compute-produced; after, it stays pipelined.
    let early = run(
        ScheduleState::gemm(&w, Some("inc")),
        "cache_read A_pre shared A_shared\ntile C ko=2 ki=4\ninline A_pre\npipeline A_shared 3",
    );
    ensure(matches!(early, Err(ScheduleError::Ineligible { .. })), || format!("inline then pipeline: {early:?}"))?;
    let late = run(
        ScheduleState::gemm(&w, Some("inc")),
        "cache_read A_pre shared A_shared\ntile C ko=2 ki=4\npipeline A_shared 3\ninline A_pre",
    )
    .map_err(|e| format!("pipeline then inline: {e}"))?;
    let buf = late.node("A_shared").ok_or("A_shared missing")?;
    ensure(buf.producer == ProducerKind::AsyncCopyFrom("A".into()) && buf.stages == Some(3), || format!("{buf:?}"))?;
    ensure(late.check_eligibility("A_shared").eligible, || "inlined buffer lost eligibility".into())?;
    let p = late.lower(&w).map_err(|e| e.to_string())?;
    ensure(validate(&p).is_empty(), || "lowered program invalid".into())?;
    let text = print_program(&p);
    ensure(text.contains("inc(A_shared[m, ki])"), || "pre-op not fused into compute".into())?;
    let backwards = run(ScheduleState::gemm(&w, None), "cache_read A shared A_shared\ntile C ko=2 ki=4\npipeline A_shared 2\ntile C ko=2 ki=4");
    ensure(backwards.is_err(), || "tile after pipeline accepted".into())?;
    Ok("three rejections and inline-after-pipeline rewrite demonstrated".into())
}

fn model_identities() -> Outcome {
    let hw = HardwareSpec::desk();
    let space = DesignSpace::example();
    let points = enumerate_space(&space, &hw).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in points.choose_multiple(&mut rng, 1000) {
        let b = predict(&space.workload, p, &hw).map_err(|e| e.to_string())?;
        ensure(b.t_threadblk == b.t_init + b.t_main_loop + b.t_epilogue, || format!("t_threadblk identity at {p:?}"))?;
        ensure(b.t_kernel == b.t_threadblk * b.n_threadblk_batch as f64, || format!("t_kernel identity at {p:?}"))?;
    }
    for n_pipe in 1..=4u64 {
        for n_mplx in 1..=4u64 {
            let t_use = 10.0;
            let edge = (n_pipe * n_mplx - 1) as f64 * t_use;
            let at = pipeline_latency(edge, t_use, 64, n_pipe, n_mplx);
            let above = pipeline_latency(edge + 1e-6, t_use, 64, n_pipe, n_mplx);
            ensure(is_compute_bound(edge, t_use, n_pipe, n_mplx) && at == 640.0, || format!("boundary {n_pipe}/{n_mplx}"))?;
            ensure(!is_compute_bound(edge + 1e-6, t_use, n_pipe, n_mplx), || format!("above {n_pipe}/{n_mplx}"))?;
            ensure(above == (edge + 1e-6 + t_use) * 64.0 / n_pipe as f64, || format!("case 2 {n_pipe}/{n_mplx}"))?;
        }
    }
    Ok("1000 points exact, boundary inclusive".into())
}

const RATIOS: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

fn oracle_agreement() -> Outcome {
    let t_use = 10.0;
    let (mut total, mut within, mut regime) = (0usize, 0usize, 0usize);
    let mut worst = (0.0f64, String::new());
    for n_loop in [32u64, 64, 128] {
        for r in RATIOS {
            for n_pipe in 1..=4u64 {
                for n_mplx in 1..=4u64 {
                    let c = SimConfig { t_load: r * t_use, t_use, n_loop, n_pipe, n_mplx };
                    let sim = simulate_stats(&c);
                    let model = pipeline_latency(c.t_load, t_use, n_loop, n_pipe, n_mplx);
                    let err = (model - sim.makespan).abs() / sim.makespan;
                    total += 1;
                    within += usize::from(err <= 0.10);
                    if err > worst.0 {
                        worst = (err, format!("{c:?}"));
                    }
                    let sim_compute_bound = sim.idle_fraction() <= 0.02;
                    regime += usize::from(sim_compute_bound == is_compute_bound(c.t_load, t_use, n_pipe, n_mplx));
                }
            }
        }
    }
    let detail = format!(
        "{within}/{total} within 10% (worst {:.1}% at {}), regime agrees on {regime}/{total}",
        worst.0 * 100.0,
        worst.1
    );
    if within == total && regime as f64 >= 0.95 * total as f64 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn multilevel_benefit() -> Outcome {
    let t_use = 10.0;
    let (mut total, mut strict, mut worse) = (0usize, 0usize, Vec::new());
    let (mut excess, mut single_worker_worse) = (0.0f64, 0usize);
    for f in [2u64, 4, 8] {
        for r_outer in RATIOS {
            for r_inner in RATIOS {
                for s in 1..=4u64 {
                    for t in 1..=4u64 {
                        for n_mplx in 1..=4u64 {
                            let outer = SimConfig { t_load: r_outer * f as f64 * t_use, t_use: 0.0, n_loop: 32, n_pipe: s, n_mplx };
                            let inner = SimConfig { t_load: r_inner * t_use, t_use, n_loop: f, n_pipe: t, n_mplx: 1 };
                            let fused = simulate_two_level_with(&outer, &inner, InnerPipelining::Fused);
                            let restart = simulate_two_level_with(&outer, &inner, InnerPipelining::Restart);
                            total += 1;
                            if fused.makespan > restart.makespan + 1e-9 {
                                excess = excess.max(fused.makespan / restart.makespan - 1.0);
                                single_worker_worse += usize::from(n_mplx == 1);
                                worse.push(format!("{outer:?} {inner:?}: {} > {}", fused.makespan, restart.makespan));
                            } else if fused.makespan < restart.makespan - 1e-9 && fused.idle_fraction() > 0.02 {
                                strict += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let detail = format!(
        "fused slower on {}/{total} ({single_worker_worse} with one worker, worst by {:.1}%), strictly faster on {strict} load-bound points",
        worse.len(),
        excess * 100.0
    );
    if worse.is_empty() && strict > 0 {
        Ok(detail)
    } else {
        Err(format!("{detail}; first: {}", worse.first().map_or("", String::as_str)))
    }
}

fn tuning_study() -> Outcome {
    let start = Instant::now();
    let study = Study::new(DesignSpace::example(), HardwareSpec::desk(), MeasureConfig::default(), TuneConfig::default())
        .map_err(|e| e.to_string())?;
    let mean = |m: Method, k: usize| -> Result<f64, String> {
        let mut sum = 0.0;
        for seed in 0..10 {
            sum += study.tune(m, 50, seed).map_err(|e| e.to_string())?.normalized_at(k);
        }
        Ok(sum / 10.0)
    };
    let assisted = mean(Method::ModelAssisted, 50)?;
    let surrogate = mean(Method::Surrogate, 50)?;
    let analytical = mean(Method::AnalyticalOnly, 10)?;
    let grid = mean(Method::Grid, 10)?;
    let elapsed = start.elapsed();
    let detail = format!(
        "{} points; assisted@50 {assisted:.4}, surrogate@50 {surrogate:.4}, analytical@10 {analytical:.4}, grid@10 {grid:.4} in {:.1}s",
        study.points.len(),
        elapsed.as_secs_f64()
    );
    let ok = study.points.len() >= 2000
        && assisted >= 0.95
        && assisted >= surrogate
        && analytical >= grid
        && elapsed < Duration::from_secs(600);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs the binary in a fresh directory and returns stdout, stderr, exit
/// code and every file it wrote.
fn cli_run(args: &[&str], fixtures: &[(&str, String)]) -> Result<(Vec<u8>, Vec<u8>, Option<i32>, Vec<(String, Vec<u8>)>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (name, text) in fixtures {
        fs::write(dir.path().join(name), text).map_err(|e| e.to_string())?;
    }
    let out = Command::new(env!("CARGO_BIN_EXE_loadpipe"))
        .args(args)
        .current_dir(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for entry in fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        files.push((name, fs::read(entry.path()).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok((out.stdout, out.stderr, out.status.code(), files))
}

fn cli_determinism() -> Outcome {
    let golden = |f: &str| fs::read_to_string(golden_dir().join(f)).unwrap();
    let two = ("in.ir", golden("two_level.in.ir"));
    let params = (
        "p.json",
        r#"{"tile_m":128,"tile_n":128,"tile_k":32,"reg_tile_m":32,"reg_tile_n":32,"reg_tile_k":16,
            "n_smem_pipe_stage":3,"n_reg_pipe_stage":2,"n_warp_per_threadblk":4}"#
            .to_string(),
    );
    let sim = ("s.json", r#"{"t_load":35,"t_use":10,"n_loop":32,"n_pipe":2,"n_mplx":2}"#.to_string());
    let script = ("s.txt", "cache_read A shared A_shared\ncache_read A_shared register A_reg\ntile C ko=8 ki=4\npipeline A_shared 3\npipeline A_reg 2\n".to_string());
    let grid = ("g.json", r#"{"n_loop":[32,64],"top_k":[1,10]}"#.to_string());
    let cases: Vec<(&str, Vec<&str>, Vec<(&str, String)>)> = vec![
        ("fmt", vec!["fmt", "in.ir", "-o", "out.ir"], vec![two.clone()]),
        ("validate", vec!["validate", "in.ir"], vec![two.clone()]),
        ("schedule", vec!["schedule", "--workload", "8x8x32", "--script", "s.txt"], vec![script]),
        ("transform", vec!["transform", "in.ir", "-o", "out.ir", "--emit-plan", "plan.json"], vec![two.clone()]),
        ("run", vec!["run", "in.ir", "--inputs", "random:7", "--seed", "3", "--trace", "t.jsonl"], vec![two.clone()]),
        ("verify", vec!["verify", "in.ir", "--seed", "9", "--trials", "3"], vec![two]),
        ("predict", vec!["predict", "--workload", "2048x2048x2048", "--params", "p.json"], vec![params]),
        ("simulate", vec!["simulate", "s.json", "--trace", "t.csv"], vec![sim]),
        ("tune", vec!["tune", "--method", "assisted", "--budget", "20", "--seed", "5", "-o", "r.json", "--csv", "c.csv"], vec![]),
        ("bench-model", vec!["bench-model", "--grid", "g.json", "-o", "a.csv", "--topk-out", "k.csv"], vec![grid]),
    ];
    for (name, args, fixtures) in &cases {
        let first = cli_run(args, fixtures)?;
        ensure(first.2 == Some(0), || format!("{name} failed: {}", String::from_utf8_lossy(&first.1)))?;
        let second = cli_run(args, fixtures)?;
        ensure(first == second, || format!("{name} output differs between runs"))?;
    }
    Ok(format!("{} subcommands byte-identical across reruns", cases.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("transformation correctness", corpus_equivalence),
        ("golden structure", golden_structure),
        ("eligibility rules", eligibility_rules),
        ("model identities", model_identities),
        ("oracle agreement", oracle_agreement),
        ("multi-level benefit", multilevel_benefit),
        ("tuning study", tuning_study),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} ({name}): PASS {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
