//! `urelu` command-line interface.
//!
//! Every command reads one JSON config (`--config`), applies `--set` and the
//! dedicated flags on top, and prints its results as `key=value` lines.
//! Failures print a single `error: stage=... message` line; a missing input
//! file exits with code 2, any other failure with code 1.

pub mod config;
pub mod pipeline;

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::boucwen::BoucWenParams;
use crate::dataset::{load_csv, save_csv, write_columns, TimeSeriesData};
use crate::error::Error;
use crate::pwl::{enumerate_regions, total_cells};
use crate::urelu::UReluNet;
use config::{PipelineConfig, SignalSpec};
use pipeline::{evaluate_net, fit_model, free_run_metrics, generate_records, Stage, StageError, StageResult};

#[derive(Debug, Parser)]
#[command(name = "urelu", version, about = "UReLU network system identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline config (JSON)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Top-level random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override any config key, e.g. `--set net.q=8`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the Bouc-Wen oscillator and write CSV records
    Datagen {
        #[command(flatten)]
        common: Common,
        /// Bouc-Wen parameter file
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit a network to the training record
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Free-run a model on validation records and report the error
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        validation: Vec<PathBuf>,
    },
    /// Free-run a model on an input record and write the simulated output
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV whose u column drives the model; its first y values seed it
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Export the linear regions of a model as JSON lines
    Regions {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        /// Write regions here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> StageResult<PipelineConfig> {
    let mut cfg = PipelineConfig::load(common.config.as_deref(), &common.set).stage("config")?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_kv(out: &mut impl Write, key: &str, value: impl std::fmt::Display) -> StageResult<()> {
    writeln!(out, "{key}={value}").map_err(|e| Error::io("<stdout>", e)).stage("output")
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn write_json(path: &Path, value: &impl Serialize, stage: &'static str) -> StageResult<()> {
    let s = serde_json::to_string_pretty(value).map_err(Error::from).stage(stage)?;
    ensure_parent(path).stage(stage)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e)).stage(stage)
}

fn ensure_parent(path: &Path) -> crate::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn cmd_datagen(common: &Common, params: Option<PathBuf>, out_dir: Option<PathBuf>) -> StageResult<()> {
    let cfg = load_config(common)?;
    let params_path = params
        .or(cfg.datagen.params.clone())
        .ok_or_else(|| Error::invalid("datagen needs a parameter file (--params or datagen.params)"))
        .stage("datagen")?;
    let params = BoucWenParams::load(&params_path).stage("datagen")?;
    let out_dir = out_dir.unwrap_or_else(|| cfg.paths.out_dir.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e)).stage("datagen")?;

    let records = generate_records(&params, &cfg.datagen, cfg.seed).stage("simulate")?;
    let fs_out = cfg.datagen.fs_sim / cfg.datagen.factor as f64;
    let mut meta_records = Vec::new();
    let mut stdout = io::stdout().lock();
    for rec in &records {
        let file = out_dir.join(format!("{}.csv", rec.spec.name));
        save_csv(&file, &rec.data).stage("datagen")?;
        print_kv(&mut stdout, &format!("{}.path", rec.spec.name), file.display())?;
        print_kv(&mut stdout, &format!("{}.samples", rec.spec.name), rec.data.len())?;
        meta_records.push(json!({
            "name": rec.spec.name,
            "file": file.file_name().map(|f| f.to_string_lossy().into_owned()),
            "n_samples": rec.data.len(),
            "periods": rec.spec.periods,
            "signal": rec.spec.signal,
            "seed": matches!(rec.spec.signal, SignalSpec::Multisine { .. }).then_some(rec.seed),
        }));
    }
    let meta = json!({
        "seed": cfg.seed,
        "fs_sim": cfg.datagen.fs_sim,
        "fs": fs_out,
        "factor": cfg.datagen.factor,
        "filter": {
            "design": "butterworth_lowpass",
            "order": 8,
            "cutoff_hz": 0.8 * fs_out / 2.0,
            "zero_phase": true,
        },
        "integrator": cfg.datagen.integrator,
        "params": params,
        "records": meta_records,
    });
    let meta_path = out_dir.join("datagen.json");
    write_json(&meta_path, &meta, "datagen")?;
    print_kv(&mut stdout, "metadata", meta_path.display())?;
    print_kv(&mut stdout, "fs", fs_out)
}

fn cmd_fit(common: &Common, train: Option<PathBuf>, model: Option<PathBuf>, report: Option<PathBuf>) -> StageResult<()> {
    let cfg = load_config(common)?;
    let train_path = train.unwrap_or_else(|| cfg.paths.train.clone());
    let model_path = model.unwrap_or_else(|| cfg.paths.model.clone());
    let report_path = report.unwrap_or_else(|| cfg.paths.report.clone());
    let data = load_csv(&train_path, cfg.sample_rate).stage("load")?;

    let fit = fit_model(&cfg, &data)?;
    ensure_parent(&model_path).stage("save")?;
    fit.net.save(&model_path).stage("save")?;
    write_json(&report_path, &fit.report, "save")?;
    if let Some(h) = &cfg.paths.history {
        ensure_parent(h).stage("save")?;
        fit.report.write_history_csv(h).stage("save")?;
    }

    let mut out = io::stdout().lock();
    print_kv(&mut out, "model", model_path.display())?;
    print_kv(&mut out, "report", report_path.display())?;
    print_kv(&mut out, "m", fit.net.m())?;
    print_kv(&mut out, "n", fit.net.n())?;
    print_kv(&mut out, "q", fit.net.q())?;
    print_kv(&mut out, "param_count", fit.net.param_count())?;
    print_kv(&mut out, "poly_terms", fit.poly.terms().len())?;
    print_kv(&mut out, "poly_err_sum", fit.frols_err_sum)?;
    print_kv(&mut out, "cpd_rel_error", fit.init.cpd_rel_error)?;
    print_kv(&mut out, "iterations", fit.report.iterations)?;
    print_kv(&mut out, "accepted", fit.report.accepted)?;
    print_kv(&mut out, "rejected", fit.report.rejected)?;
    print_kv(&mut out, "status", serde_json::to_value(fit.report.status).map_err(Error::from).stage("output")?.as_str().unwrap_or("?"))?;
    print_kv(&mut out, "train_rmse", fit.report.final_rmse)?;
    print_kv(&mut out, "train_rmse_db", opt(fit.report.final_rmse_db))
}

fn cmd_eval(common: &Common, model: Option<PathBuf>, validation: Vec<PathBuf>) -> StageResult<()> {
    let cfg = load_config(common)?;
    let model_path = model.unwrap_or_else(|| cfg.paths.model.clone());
    let files = if validation.is_empty() { cfg.paths.validation.clone() } else { validation };
    let net = UReluNet::load(&model_path).stage("load")?;
    let mut out = io::stdout().lock();
    let mut records = Vec::new();
    for file in &files {
        let data = load_csv(file, cfg.sample_rate).stage("load")?;
        let name = file.file_stem().map_or_else(|| file.display().to_string(), |s| s.to_string_lossy().into_owned());
        let rec = evaluate_net(&net, &name, &data).stage("eval")?;
        let p = |k: &str| format!("{name}.{k}");
        print_kv(&mut out, &p("n_s"), rec.metrics.n_s)?;
        print_kv(&mut out, &p("rmse"), opt(rec.metrics.rmse))?;
        print_kv(&mut out, &p("rmse_db"), opt(rec.metrics.rmse_db))?;
        print_kv(&mut out, &p("diverged"), rec.metrics.diverged)?;
        if let Some(i) = rec.metrics.divergence_index {
            print_kv(&mut out, &p("divergence_index"), i)?;
        }
        print_kv(&mut out, &p("cond_u"), rec.cond_u)?;
        print_kv(&mut out, &p("cond_x"), rec.cond_x)?;
        records.push(rec);
    }
    if let Some(path) = &cfg.paths.metrics {
        write_json(path, &records, "save")?;
        print_kv(&mut out, "metrics", path.display())?;
    }
    Ok(())
}

fn cmd_simulate(common: &Common, model: Option<PathBuf>, input: PathBuf, output: PathBuf) -> StageResult<()> {
    let cfg = load_config(common)?;
    let model_path = model.unwrap_or_else(|| cfg.paths.model.clone());
    let net = UReluNet::load(&model_path).stage("load")?;
    let data: TimeSeriesData = load_csv(&input, cfg.sample_rate).stage("load")?;
    let spec = net
        .regressor_spec()
        .ok_or_else(|| Error::invalid("model file has no regressor_spec"))
        .stage("simulate")?;
    let m = free_run_metrics(&net, &data, spec).stage("simulate")?;
    let mut out = io::stdout().lock();
    if !m.diverged {
        ensure_parent(&output).stage("save")?;
        write_columns(&output, ("u", "y_sim"), data.u(), &m.y_sim).stage("save")?;
        print_kv(&mut out, "output", output.display())?;
    }
    print_kv(&mut out, "samples", data.len())?;
    print_kv(&mut out, "diverged", m.diverged)?;
    if let Some(i) = m.divergence_index {
        print_kv(&mut out, "divergence_index", i)?;
    }
    print_kv(&mut out, "rmse", opt(m.rmse))?;
    print_kv(&mut out, "rmse_db", opt(m.rmse_db))
}

fn cmd_regions(common: &Common, model: Option<PathBuf>, limit: Option<usize>, out: Option<PathBuf>) -> StageResult<()> {
    let cfg = load_config(common)?;
    let model_path = model.unwrap_or_else(|| cfg.paths.model.clone());
    let net = UReluNet::load(&model_path).stage("load")?;
    let limit = limit.unwrap_or(cfg.regions.limit);
    let total = total_cells(net.n(), net.q());
    let header = json!({
        "total_cells": u64::try_from(total).unwrap_or(u64::MAX),
        "limit": limit,
        "truncated": total > limit as u128,
        "m": net.m(),
        "n": net.n(),
        "q": net.q(),
    });

    let mut sink: Box<dyn Write> = match &out {
        Some(p) => {
            ensure_parent(p).stage("save")?;
            Box::new(BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e)).stage("save")?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(sink, "{header}").map_err(|e| Error::io("<regions>", e)).stage("output")?;
    let mut regions = enumerate_regions(&net, limit);
    for r in regions.by_ref() {
        let line = serde_json::to_string(&r).map_err(Error::from).stage("regions")?;
        writeln!(sink, "{line}").map_err(|e| Error::io("<regions>", e)).stage("output")?;
    }
    sink.flush().map_err(|e| Error::io("<regions>", e)).stage("output")?;
    drop(sink);
    if let Some(p) = &out {
        let mut o = io::stdout().lock();
        print_kv(&mut o, "regions", p.display())?;
        print_kv(&mut o, "emitted", regions.emitted())?;
        print_kv(&mut o, "total_cells", total)?;
        print_kv(&mut o, "truncated", regions.truncated())?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> StageResult<()> {
    match cli.command {
        Command::Datagen { common, params, out_dir } => cmd_datagen(&common, params, out_dir),
        Command::Fit {
            common,
            train,
            model,
            report,
        } => cmd_fit(&common, train, model, report),
        Command::Eval {
            common,
            model,
            validation,
        } => cmd_eval(&common, model, validation),
        Command::Simulate {
            common,
            model,
            input,
            output,
        } => cmd_simulate(&common, model, input, output),
        Command::Regions {
            common,
            model,
            limit,
            out,
        } => cmd_regions(&common, model, limit, out),
    }
}

/// Exit code for a failed command.
pub fn exit_code(err: &StageError) -> ExitCode {
    match &err.source {
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            exit_code(&e)
        }
    }
}
