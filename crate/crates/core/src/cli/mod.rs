//! Command-line orchestration: validate → partition → normal form → evolve → fit.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

pub use config::{
    parse_config, parse_config_str, EvolutionConfig, ExperimentConfig, InitialState, OutputConfig, ParamsConfig, System,
    Validated, MIN_INNER_CUTOFF,
};

use crate::clusters::{load_or_build, verify_partition, Partition, PartitionDump, PartitionStats, VerificationReport};
use crate::dynamics::{evolve, evolve_blocks, fit_growth, Evolution, FnHamiltonian, GrowthFit, SampledHamiltonian, StateVector};
use crate::error::{Error, Result};
use crate::normal_form::{run_normal_form, NFOptions, NFResult, NFStepRecord};
use crate::weyl::{laplacian_matrix, quantize};

/// Version of the JSON report layouts.
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_PARSE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "torus-nf", version, about = "Normal-form workbench for Schrödinger operators on flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the parameters and print the derived exponent δ*.
    Validate(Common),
    /// Build the resonant partition and its verification report.
    Partition(Common),
    /// Run the normal-form iteration and store the per-step reports.
    NormalForm(Common),
    /// Integrate the configured system and write the norm trace.
    Evolve(Common),
    /// Integrate and fit growth exponents for every recorded σ.
    Fit(Common),
    /// Every stage in sequence, plus a combined report.
    All(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output.dir` of the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for random initial data, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Parse(String),
    Validation(Vec<String>),
    Numerical { stage: &'static str, error: Error },
}

impl Failure {
    fn numerical(stage: &'static str) -> impl FnOnce(Error) -> Failure {
        move |error| Failure::Numerical { stage, error }
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (stage, common) = match &cli.command {
        Command::Validate(c) => (Stage::Validate, c),
        Command::Partition(c) => (Stage::Partition, c),
        Command::NormalForm(c) => (Stage::NormalForm, c),
        Command::Evolve(c) => (Stage::Evolve, c),
        Command::Fit(c) => (Stage::Fit, c),
        Command::All(c) => (Stage::All, c),
    };
    if let Some(n) = common.threads {
        // the global pool can only be set once per process; later calls keep the first
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut out_dir = None;
    match execute(stage, common, &mut out_dir) {
        Ok(()) => 0,
        Err(Failure::Parse(msg)) => {
            eprintln!("error: {msg}");
            EXIT_PARSE
        }
        Err(Failure::Validation(errs)) => {
            eprintln!("validation failed:");
            for e in &errs {
                eprintln!("  - {e}");
            }
            EXIT_VALIDATION
        }
        Err(Failure::Numerical { stage, error }) => {
            let diag = json!({
                "schema_version": SCHEMA_VERSION,
                "stage": stage,
                "kind": error.kind(),
                "message": error.to_string(),
            });
            eprintln!("{diag}");
            if let Some(dir) = out_dir {
                let _ = write_json(&dir.join("diagnostic.json"), &diag);
            }
            EXIT_NUMERICAL
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Validate,
    Partition,
    NormalForm,
    Evolve,
    Fit,
    All,
}

#[derive(Serialize)]
struct PartitionFile<'a> {
    schema_version: u32,
    cache_hit: bool,
    partition: PartitionDump,
    verification: &'a VerificationReport,
}

#[derive(Serialize)]
struct NormalFormFile<'a> {
    schema_version: u32,
    params: &'a crate::resonance::NFParams,
    grid: &'a crate::normal_form::TimeGrid,
    records: &'a [NFStepRecord],
}

#[derive(Serialize)]
struct RunReport<'a> {
    schema_version: u32,
    seed: u64,
    delta_star: f64,
    modes: usize,
    partition: &'a PartitionStats,
    verification: &'a VerificationReport,
    normal_form: &'a [NFStepRecord],
    system: System,
    fits: &'a [GrowthFit],
}

fn execute(stage: Stage, common: &Common, out_dir: &mut Option<PathBuf>) -> std::result::Result<(), Failure> {
    let cfg = parse_config(&common.config).map_err(Failure::Parse)?;
    let v = cfg.validate().map_err(Failure::Validation)?;
    if stage == Stage::Validate {
        let report = json!({
            "valid": true,
            "delta_star": round12(v.params.delta_star()),
            "modes": v.modes.len(),
            "inner_cutoff": v.modes.inner_cutoff(cfg.buffer),
        });
        println!("δ* = {}", round12(v.params.delta_star()));
        println!("{report}");
        return Ok(());
    }
    let dir = common.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Parse(format!("{}: {e}", dir.display())))?;
    *out_dir = Some(dir.clone());
    let seed = common.seed.unwrap_or(match cfg.evolution.initial {
        InitialState::Random { seed, .. } => seed,
        InitialState::PlaneWave { .. } => 0,
    });
    let mut timings = serde_json::Map::new();
    let mut clock = |name: &str, start: Instant| {
        timings.insert(name.to_string(), json!(start.elapsed().as_secs_f64()));
    };

    let need_partition = matches!(stage, Stage::Partition | Stage::All)
        || (matches!(stage, Stage::Evolve | Stage::Fit) && cfg.evolution.system == System::NormalForm);
    let partition = if need_partition {
        let start = Instant::now();
        let (part, report) = partition_stage(&v, &dir).map_err(Failure::numerical("partition"))?;
        clock("partition", start);
        Some((part, report))
    } else {
        None
    };

    let need_nf = matches!(stage, Stage::NormalForm | Stage::All)
        || (matches!(stage, Stage::Evolve | Stage::Fit) && cfg.evolution.system != System::Full);
    let nf = if need_nf {
        let start = Instant::now();
        let nf = normal_form_stage(&v, &dir).map_err(Failure::numerical("normal-form"))?;
        clock("normal_form", start);
        Some(nf)
    } else {
        None
    };

    let mut fits = Vec::new();
    if matches!(stage, Stage::Evolve | Stage::Fit | Stage::All) {
        let start = Instant::now();
        let run = evolve_stage(&v, seed, nf.as_ref(), partition.as_ref().map(|p| &p.0))
            .map_err(Failure::numerical("evolve"))?;
        write_trace(&dir.join("trace.csv"), &run).map_err(Failure::numerical("evolve"))?;
        clock("evolve", start);
        if stage != Stage::Evolve {
            let start = Instant::now();
            for &s in &cfg.evolution.sigmas {
                fits.push(fit_growth(&run.trace, s, cfg.evolution.fit_window).map_err(Failure::numerical("fit"))?);
            }
            write_json(&dir.join("fit.json"), &fits).map_err(Failure::numerical("fit"))?;
            clock("fit", start);
        }
    }

    if stage == Stage::All {
        let (part, verification) = partition.as_ref().expect("partition stage ran");
        let nf = nf.as_ref().expect("normal-form stage ran");
        let report = RunReport {
            schema_version: SCHEMA_VERSION,
            seed,
            delta_star: v.params.delta_star(),
            modes: v.modes.len(),
            partition: &part.stats,
            verification,
            normal_form: &nf.records,
            system: cfg.evolution.system,
            fits: &fits,
        };
        write_json(&dir.join("report.json"), &report).map_err(Failure::numerical("report"))?;
    }
    // wall-clock times live apart from the reports, which stay reproducible
    write_json(&dir.join("timings.json"), &timings).map_err(Failure::numerical("report"))?;
    Ok(())
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

fn sigmas_with_two(sigmas: &[f64]) -> Vec<f64> {
    let mut s = sigmas.to_vec();
    if !s.contains(&2.0) {
        s.push(2.0);
    }
    s
}

fn partition_stage(v: &Validated, dir: &Path) -> Result<(Partition, VerificationReport)> {
    let cache = v.config.output.partition_cache.clone().unwrap_or_else(|| dir.join("partition.cache"));
    let (part, hit) = load_or_build(&cache, &v.modes, &v.params)?;
    let report = verify_partition(&part, &v.params, &v.metric, &sigmas_with_two(&v.config.evolution.sigmas));
    let file = PartitionFile { schema_version: SCHEMA_VERSION, cache_hit: hit, partition: part.to_json(), verification: &report };
    write_json(&dir.join("partition.json"), &file)?;
    Ok((part, report))
}

fn normal_form_stage(v: &Validated, dir: &Path) -> Result<NFResult> {
    let cfg = &v.config;
    let opts = NFOptions { quadrature_nodes: cfg.quadrature_nodes, buffer: cfg.buffer, track_conjugator: true };
    let nf = run_normal_form(&cfg.potential, &v.params, &v.modes, &cfg.grid, cfg.depth, &opts)?;
    let file = NormalFormFile { schema_version: SCHEMA_VERSION, params: &v.params, grid: &cfg.grid, records: &nf.records };
    write_json(&dir.join("normal_form.json"), &file)?;
    // Z^(N) then R^(N), sample by sample
    let mut w = BufWriter::new(File::create(dir.join("normal_form.bin"))?);
    for (z, r) in nf.z.iter().zip(&nf.r) {
        z.write_binary(&mut w)?;
        r.write_binary(&mut w)?;
    }
    w.flush()?;
    Ok(nf)
}

fn initial_state(v: &Validated, seed: u64) -> Result<StateVector> {
    match &v.config.evolution.initial {
        InitialState::PlaneWave { xi } => StateVector::plane_wave(v.modes.clone(), xi),
        InitialState::Random { decay, .. } => Ok(StateVector::random(v.modes.clone(), seed, *decay)),
    }
}

fn evolve_stage(v: &Validated, seed: u64, nf: Option<&NFResult>, part: Option<&Partition>) -> Result<Evolution> {
    let e = &v.config.evolution;
    let psi0 = initial_state(v, seed)?;
    match e.system {
        System::Full => {
            let lap = laplacian_matrix(&v.modes);
            let spec = &v.config.potential;
            let ham = FnHamiltonian(|t: f64| Ok(lap.add(&quantize(spec, t, &v.modes))));
            evolve(&ham, &psi0, e.s, e.t_end, e.h, &e.sigmas)
        }
        System::NormalForm => {
            let (nf, part) = (nf.expect("normal form computed"), part.expect("partition computed"));
            Ok(evolve_blocks(nf, part, &psi0, e.s, e.t_end, e.h, &e.sigmas)?.evolution)
        }
        System::Conjugated => {
            let nf = nf.expect("normal form computed");
            let u = nf.u.as_ref().expect("conjugator tracked");
            let phi0 = psi0.apply(&u[nf.sample_at(e.s)?])?;
            evolve(&SampledHamiltonian::conjugated(nf), &phi0, e.s, e.t_end, e.h, &e.sigmas)
        }
    }
}

fn write_trace(path: &Path, run: &Evolution) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    run.trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
