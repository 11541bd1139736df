//! `loadpipe`: command-line driver.
//!
//! Exit codes: 0 ok, 2 parse error, 3 invalid program, 4 analysis or
//! schedule rejection, 5 execution or equivalence failure, 6 config or I/O.

mod bench_model;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use loadpipe::interp::{self, random_inputs, InterpError, Tensors};
use loadpipe::ir::{parse_program, print_program, validate, ParseError, Program};
use loadpipe::perf::{predict, HardwareSpec, ScheduleParams};
use loadpipe::pipeline::{transform_with_plan, PipelineError};
use loadpipe::schedule::{parse_script, ScheduleError, ScheduleState};
use loadpipe::sim::{simulate_pipeline, simulate_two_level_with, InnerPipelining, SimConfig};
use loadpipe::tuner::{DesignSpace, MeasureConfig, Method, Study, TuneConfig};
use loadpipe::{check_equivalence, ExecMode, WorkloadDesc};

/// An error plus the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, err: e.into() })
    }
}

fn fail(code: u8, err: anyhow::Error) -> Failure {
    Failure { code, err }
}

const PARSE: u8 = 2;
const INVALID: u8 = 3;
const ANALYSIS: u8 = 4;
const EXEC: u8 = 5;
const CONFIG: u8 = 6;

#[derive(Parser)]
#[command(name = "loadpipe", version, about = "Multi-stage, multi-level load/compute pipelining toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse an IR file and print it in canonical form.
    Fmt {
        ir: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check an IR file and list every problem found.
    Validate { ir: PathBuf },
    /// Apply a schedule script to a GEMM (or stencil) and print the lowered IR.
    Schedule {
        /// `MxNxK`, optionally `xB` for a batch count.
        #[arg(long, conflicts_with = "stencil")]
        workload: Option<String>,
        /// `HxW` two-dimensional stencil instead of a GEMM.
        #[arg(long)]
        stencil: Option<String>,
        /// Elementwise op applied to `A` before the GEMM (creates `A_pre`).
        #[arg(long)]
        pre_op: Option<String>,
        #[arg(long)]
        script: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the pipelining pass.
    Transform {
        ir: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write the analysis result as JSON.
        #[arg(long)]
        emit_plan: Option<PathBuf>,
    },
    /// Execute a program and print its outputs as JSON.
    Run {
        ir: PathBuf,
        /// JSON object of flat arrays keyed by input name, or `random:<seed>`.
        #[arg(long, default_value = "random:0")]
        inputs: String,
        /// Seed for the contents of uninitialised local buffers.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Strict)]
        mode: Mode,
        /// Write the pipeline-counter trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Transform a program and check it against the original on random inputs.
    Verify {
        ir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        trials: u64,
        /// Compare against this program instead of the transformed one.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Evaluate the latency model for one schedule.
    Predict {
        /// `MxNxK[xB]` or a JSON workload file.
        #[arg(long)]
        workload: String,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        hw: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Run the pipeline simulator on a JSON configuration.
    Simulate {
        config: PathBuf,
        /// Event trace as CSV (single-level configurations only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Search a design space with one strategy.
    Tune {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long, default_value_t = 50)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Design space JSON; the built-in 2048³ space when omitted.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        hw: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0.1)]
        contention: f64,
        /// Report JSON (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Best-in-k curve as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare the latency model against the simulator and rank quality
    /// against simulated ground truth.
    BenchModel {
        /// Grid JSON; the built-in grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Model-vs-simulator CSV (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Best-in-top-k CSV.
        #[arg(long)]
        topk_out: Option<PathBuf>,
        #[arg(long)]
        hw: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strict,
    Stale,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
    Both,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_name(s).ok_or_else(|| format!("unknown method `{s}` (grid, surrogate, analytical, assisted)"))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).code(CONFIG)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = read(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).code(CONFIG)
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).code(CONFIG),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout").code(CONFIG),
    }
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    let text = read(path)?;
    parse_program(&text).map_err(|e| {
        let code = match e {
            ParseError::Syntax { .. } => PARSE,
            ParseError::Invalid(_) => INVALID,
        };
        fail(code, anyhow!(e).context(path.display().to_string()))
    })
}

fn hardware(path: Option<&Path>) -> Result<HardwareSpec, Failure> {
    let hw = match path {
        Some(p) => read_json(p)?,
        None => HardwareSpec::desk(),
    };
    hw.validate().code(CONFIG)?;
    Ok(hw)
}

fn parse_dims(s: &str) -> Option<Vec<u64>> {
    s.split('x').map(|d| d.trim().parse().ok()).collect()
}

fn workload(s: &str) -> Result<WorkloadDesc, Failure> {
    let w = match parse_dims(s).as_deref() {
        Some(&[m, n, k]) => WorkloadDesc::gemm(m, n, k),
        Some(&[m, n, k, b]) => WorkloadDesc::gemm(m, n, k).batched(b),
        _ => read_json(Path::new(s))?,
    };
    if !w.is_valid() {
        return Err(fail(CONFIG, anyhow!("workload dimensions must be positive")));
    }
    Ok(w)
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match e {
        PipelineError::Invalid(_) => INVALID,
        _ => ANALYSIS,
    };
    let err = match e.rule() {
        Some(rule) => anyhow!(e).context(format!("rule {rule}")),
        None => anyhow!(e),
    };
    fail(code, err)
}

fn interp_failure(e: InterpError) -> Failure {
    let code = match e {
        InterpError::Invalid(_) => INVALID,
        InterpError::UnboundInput(_) | InterpError::UnknownInput(_) | InterpError::ShapeMismatch { .. } => CONFIG,
        _ => EXEC,
    };
    fail(code, anyhow!(e))
}

fn cmd_fmt(ir: &Path, out: Option<&Path>) -> CmdResult {
    let p = load_program(ir)?;
    emit(out, &print_program(&p))
}

fn cmd_validate(ir: &Path) -> CmdResult {
    let text = read(ir)?;
    let p = match parse_program(&text) {
        Ok(p) => p,
        Err(ParseError::Invalid(diags)) => {
            let mut msg = String::new();
            for d in &diags {
                let _ = writeln!(msg, "{d}");
            }
            return Err(fail(INVALID, anyhow!("{} problem(s):\n{}", diags.len(), msg.trim_end())));
        }
        Err(e) => return Err(fail(PARSE, anyhow!(e))),
    };
    let diags = validate(&p);
    if diags.is_empty() {
        emit(None, "ok\n")
    } else {
        let list: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        Err(fail(INVALID, anyhow!("{} problem(s):\n{}", diags.len(), list.join("\n"))))
    }
}

fn cmd_schedule(
    wl: Option<&str>,
    stencil: Option<&str>,
    pre_op: Option<&str>,
    script: &Path,
    out: Option<&Path>,
) -> CmdResult {
    let prims = parse_script(&read(script)?).map_err(|e| fail(PARSE, anyhow!(e).context(script.display().to_string())))?;
    let (state, w) = match (wl, stencil) {
        (_, Some(s)) => match parse_dims(s).as_deref() {
            Some(&[h, w]) => (ScheduleState::stencil(h as i64, w as i64), WorkloadDesc::gemm(h, w, 1)),
            _ => return Err(fail(CONFIG, anyhow!("stencil size must be HxW, got `{s}`"))),
        },
        (Some(s), None) => {
            let w = workload(s)?;
            (ScheduleState::gemm(&w, pre_op), w)
        }
        (None, None) => return Err(fail(CONFIG, anyhow!("one of --workload or --stencil is required"))),
    };
    // Eligibility failures already name the rule in their message.
    let schedule_failure = |e: ScheduleError| fail(ANALYSIS, anyhow!(e));
    let state = state.apply_all(&prims).map_err(schedule_failure)?;
    let program = state.lower(&w).map_err(schedule_failure)?;
    emit(out, &print_program(&program))
}

fn cmd_transform(ir: &Path, out: Option<&Path>, emit_plan: Option<&Path>) -> CmdResult {
    let p = load_program(ir)?;
    let (t, plan) = transform_with_plan(&p).map_err(pipeline_failure)?;
    if let Some(path) = emit_plan {
        let json = serde_json::to_string_pretty(&plan).context("serializing plan").code(CONFIG)?;
        emit(Some(path), &(json + "\n"))?;
    }
    emit(out, &print_program(&t))
}

fn load_inputs(source: &str, p: &Program) -> Result<Tensors, Failure> {
    match source.strip_prefix("random:") {
        Some(seed) => {
            let seed = seed.parse().with_context(|| format!("bad seed in `{source}`")).code(CONFIG)?;
            Ok(random_inputs(p, seed))
        }
        None => read_json(Path::new(source)),
    }
}

fn cmd_run(ir: &Path, inputs: &str, seed: u64, mode: Mode, trace: Option<&Path>) -> CmdResult {
    let p = load_program(ir)?;
    let inputs = load_inputs(inputs, &p)?;
    let mode = match mode {
        Mode::Strict => ExecMode::Strict,
        Mode::Stale => ExecMode::StaleRead,
    };
    let (outputs, tr) = interp::run(&p, &inputs, mode, seed).map_err(interp_failure)?;
    if let Some(path) = trace {
        emit(Some(path), &tr.to_json_lines())?;
    }
    let outputs: Tensors = outputs.into_iter().filter(|(k, _)| p.outputs().iter().any(|b| &b.name == k)).collect();
    let json = serde_json::to_string(&outputs).context("serializing outputs").code(CONFIG)?;
    emit(None, &(json + "\n"))
}

fn cmd_verify(ir: &Path, seed: u64, trials: u64, against: Option<&Path>) -> CmdResult {
    let p = load_program(ir)?;
    let t = match against {
        Some(path) => load_program(path)?,
        None => loadpipe::transform(&p).map_err(pipeline_failure)?,
    };
    if trials == 0 {
        log::warn!("no trials requested; nothing was checked");
    }
    for i in 0..trials {
        let inputs = random_inputs(&p, seed.wrapping_add(i));
        let eq = check_equivalence(&p, &t, &inputs).map_err(|e| fail(EXEC, anyhow!(e)))?;
        if let Some(d) = eq.divergence {
            return Err(fail(
                EXEC,
                anyhow!(
                    "trial {i} (input seed {}): {}{:?} is {} in the original and {} in the candidate",
                    seed.wrapping_add(i),
                    d.buffer,
                    d.index,
                    d.left,
                    d.right
                ),
            ));
        }
    }
    emit(None, &format!("equivalent on {trials} trial(s)\n"))
}

fn cmd_predict(wl: &str, params: &Path, hw: Option<&Path>, format: Format) -> CmdResult {
    let w = workload(wl)?;
    let p: ScheduleParams = read_json(params)?;
    let hw = hardware(hw)?;
    let b = predict(&w, &p, &hw).map_err(|e| fail(ANALYSIS, anyhow!(e)))?;
    let mut text = String::new();
    if format != Format::Table {
        text += &serde_json::to_string_pretty(&b).context("serializing breakdown").code(CONFIG)?;
        text.push('\n');
    }
    if format == Format::Both {
        text.push('\n');
    }
    if format != Format::Json {
        text += &b.table();
    }
    emit(None, &text)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SimInput {
    TwoLevel {
        outer: SimConfig,
        inner: SimConfig,
        #[serde(default = "fused")]
        mode: InnerPipelining,
    },
    Single(SimConfig),
}

fn fused() -> InnerPipelining {
    InnerPipelining::Fused
}

fn cmd_simulate(config: &Path, trace: Option<&Path>) -> CmdResult {
    let input: SimInput = read_json(config)?;
    let check = |c: &SimConfig| {
        if c.is_valid() {
            Ok(())
        } else {
            Err(fail(CONFIG, anyhow!("invalid simulator config: times must be finite and nonnegative, counts at least 1")))
        }
    };
    let makespan = match input {
        SimInput::Single(c) => {
            check(&c)?;
            let (m, tr) = simulate_pipeline(&c);
            if let Some(path) = trace {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["time", "worker", "kind", "iter"]).code(CONFIG)?;
                for e in &tr.events {
                    let kind = serde_json::to_value(e.kind).code(CONFIG)?;
                    let kind = kind.as_str().unwrap_or_default().to_string();
                    w.write_record([e.time.to_string(), e.worker.to_string(), kind, e.iteration.to_string()])
                        .code(CONFIG)?;
                }
                let bytes = w.into_inner().map_err(|e| fail(CONFIG, anyhow!(e.to_string())))?;
                emit(Some(path), &String::from_utf8_lossy(&bytes))?;
            }
            m
        }
        SimInput::TwoLevel { outer, inner, mode } => {
            check(&outer)?;
            check(&inner)?;
            if trace.is_some() {
                log::warn!("traces are only recorded for single-level configurations");
            }
            simulate_two_level_with(&outer, &inner, mode).makespan
        }
    };
    emit(None, &format!("{{\"makespan\":{}}}\n", serde_json::to_string(&makespan).code(CONFIG)?))
}

#[allow(clippy::too_many_arguments)]
fn cmd_tune(
    method: Method,
    budget: usize,
    seed: u64,
    space: Option<&Path>,
    hw: Option<&Path>,
    noise_sigma: f64,
    contention: f64,
    out: Option<&Path>,
    csv_out: Option<&Path>,
) -> CmdResult {
    let space = match space {
        Some(p) => read_json(p)?,
        None => DesignSpace::example(),
    };
    let hw = hardware(hw)?;
    if !(noise_sigma >= 0.0 && contention >= 0.0) {
        return Err(fail(CONFIG, anyhow!("noise and contention must be nonnegative")));
    }
    let measure = MeasureConfig { contention_factor: contention, noise_sigma };
    let study = Study::new(space, hw, measure, TuneConfig::default()).code(CONFIG)?;
    let report = study.tune(method, budget, seed).code(CONFIG)?;
    if let Some(path) = csv_out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "seed", "k", "best_cost", "normalized"]).code(CONFIG)?;
        for ((k, best), norm) in report.best_in_k.iter().zip(&report.normalized_to_exhaustive) {
            w.write_record([method.name().to_string(), seed.to_string(), k.to_string(), best.to_string(), norm.to_string()])
                .code(CONFIG)?;
        }
        let bytes = w.into_inner().map_err(|e| fail(CONFIG, anyhow!(e.to_string())))?;
        emit(Some(path), &String::from_utf8_lossy(&bytes))?;
    }
    let json = serde_json::to_string_pretty(&report).context("serializing report").code(CONFIG)?;
    emit(out, &(json + "\n"))
}

fn cmd_bench_model(grid: Option<&Path>, out: Option<&Path>, topk_out: Option<&Path>, hw: Option<&Path>) -> CmdResult {
    let grid: bench_model::Grid = match grid {
        Some(p) => read_json(p)?,
        None => bench_model::Grid::default(),
    };
    grid.check().code(CONFIG)?;
    let hw = hardware(hw)?;
    let rows = bench_model::agreement(&grid);
    let max_err = rows.iter().filter(|r| r.n_loop >= 32).map(|r| r.rel_err).fold(0.0, f64::max);
    log::info!("{} grid points, max relative error {:.4} for n_loop >= 32", rows.len(), max_err);
    emit(out, &bench_model::to_csv(&rows).code(CONFIG)?)?;
    if let Some(path) = topk_out {
        let rows = bench_model::top_k(&grid, &hw).code(CONFIG)?;
        emit(Some(path), &bench_model::to_csv(&rows).code(CONFIG)?)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.cmd {
        Cmd::Fmt { ir, out } => cmd_fmt(&ir, out.as_deref()),
        Cmd::Validate { ir } => cmd_validate(&ir),
        Cmd::Schedule { workload, stencil, pre_op, script, out } => {
            cmd_schedule(workload.as_deref(), stencil.as_deref(), pre_op.as_deref(), &script, out.as_deref())
        }
        Cmd::Transform { ir, out, emit_plan } => cmd_transform(&ir, out.as_deref(), emit_plan.as_deref()),
        Cmd::Run { ir, inputs, seed, mode, trace } => cmd_run(&ir, &inputs, seed, mode, trace.as_deref()),
        Cmd::Verify { ir, seed, trials, against } => cmd_verify(&ir, seed, trials, against.as_deref()),
        Cmd::Predict { workload, params, hw, format } => cmd_predict(&workload, &params, hw.as_deref(), format),
        Cmd::Simulate { config, trace } => cmd_simulate(&config, trace.as_deref()),
        Cmd::Tune { method, budget, seed, space, hw, noise_sigma, contention, out, csv } => cmd_tune(
            method,
            budget,
            seed,
            space.as_deref(),
            hw.as_deref(),
            noise_sigma,
            contention,
            out.as_deref(),
            csv.as_deref(),
        ),
        Cmd::BenchModel { grid, out, topk_out, hw } => {
            cmd_bench_model(grid.as_deref(), out.as_deref(), topk_out.as_deref(), hw.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
