use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use shedlab_core::analysis::{
    fit_exponential, iou, kept_block_l0_pmf, shed_attribution, DEFAULT_PMF_CUTOFF,
};
use shedlab_core::block::{BlockPartition, PartitionTensor};
use shedlab_core::dataset::{Dataset, SyntheticBlobs};
use shedlab_core::harness::{momentum_sweep, run_experiment, RunOutcome, ShedSummary};
use shedlab_core::io::{
    parse_config, read_trace, write_trace, Granularity, MaskSnapshot, WeightFile,
};
use shedlab_core::Error;

/// Gradual magnitude pruning experiments and shedding analysis.
#[derive(Parser)]
#[command(name = "shedlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes trace.csv, mask.snap and weights.bin.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the same experiment once per momentum value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated momentum values, e.g. `0,0.9`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        momenta: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Analyze(Analyze),
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Subcommand)]
enum Analyze {
    /// Intersection over union of two snapshots' kept sets.
    Iou {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Shed attribution for a trace, optionally with an exponential fit.
    Trace {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        fit_exp: bool,
    },
    /// L0 distribution of the kept blocks in a block snapshot.
    Blockpmf {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PMF_CUTOFF)]
        cutoff: f64,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write the default synthetic blobs as train.csv and eval.csv.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn write_outcome(out: &Path, suffix: &str, outcome: &RunOutcome) -> Result<()> {
    write_trace(&out.join(format!("trace{suffix}.csv")), &outcome.trace)?;
    outcome
        .mask
        .write(&out.join(format!("mask{suffix}.snap")))?;
    WeightFile::from_params(&outcome.params).write(&out.join(format!("weights{suffix}.bin")))?;
    Ok(())
}

fn run(config: &Path, out: &Path) -> Result<String> {
    let cfg = parse_config(config)?;
    create_dir(out)?;
    match run_experiment(&cfg) {
        Ok(outcome) => {
            write_outcome(out, "", &outcome)?;
            let last = outcome.trace.rows.last().expect("trace has an initial row");
            Ok(format!(
                "rows={} final_keep={} explicit_cum={} shed_cum={}\n",
                outcome.trace.rows.len(),
                last.actual_keep,
                last.explicit_cum,
                last.shed_cum
            ))
        }
        Err(Error::Diverged { step, trace }) => {
            write_trace(&out.join("trace.csv"), &trace)?;
            bail!("loss became non-finite at step {step}; partial trace written");
        }
        Err(e) => Err(e.into()),
    }
}

fn sweep(config: &Path, momenta: &[f64], out: &Path) -> Result<String> {
    let cfg = parse_config(config)?;
    create_dir(out)?;
    let results = momentum_sweep(&cfg, momenta)?;
    let mut summary = String::from("momentum,final_keep,explicit_cum,shed_cum,cascade_ratio\n");
    for (mu, outcome) in &results {
        write_outcome(out, &format!("_mu_{mu}"), outcome)?;
        let s = ShedSummary::from_trace(*mu, &outcome.trace).expect("trace has an initial row");
        writeln!(
            summary,
            "{},{},{},{},{}",
            s.momentum, s.final_keep, s.explicit_cum, s.shed_cum, s.cascade_ratio
        )?;
    }
    fs::write(out.join("summary.csv"), &summary)
        .with_context(|| format!("cannot write {}", out.join("summary.csv").display()))?;
    Ok(summary)
}

fn analyze_trace(input: &Path, fit_exp: bool) -> Result<String> {
    let trace = read_trace(input)?;
    let attribution = shed_attribution(&trace)?;
    let last = trace.rows.last().expect("attribution checked for rows");
    let mut out = String::from("explicit_cum,shed_cum,cascade_ratio\n");
    writeln!(
        out,
        "{},{},{}",
        last.explicit_cum, last.shed_cum, attribution.cascade_ratio
    )?;
    if fit_exp {
        let fit = fit_exponential(&trace)?;
        out.push_str("asymptote,tau,initial,residual_norm,r_squared\n");
        writeln!(
            out,
            "{},{},{},{},{}",
            fit.asymptote, fit.tau, fit.initial, fit.residual_norm, fit.r_squared
        )?;
    }
    Ok(out)
}

fn blockpmf(weights: &Path, snapshot: &Path, cutoff: f64) -> Result<String> {
    if !(cutoff >= 0.0 && cutoff.is_finite()) {
        bail!("cutoff must be finite and >= 0, got {cutoff}");
    }
    let snap = MaskSnapshot::read(snapshot)?;
    if snap.granularity != Granularity::Block {
        bail!(
            "{} is a weight-level snapshot; a block snapshot is required",
            snapshot.display()
        );
    }
    let file = WeightFile::read(weights)?;
    let params = file.to_params(|name| snap.tensors.iter().any(|t| t.name == name))?;
    let tensors = snap
        .tensors
        .iter()
        .map(|t| {
            let param_index = params
                .index_of(&t.name)
                .with_context(|| format!("weights have no tensor `{}`", t.name))?;
            Ok(PartitionTensor {
                name: t.name.clone(),
                param_index,
                shape: params.get(param_index).value.shape().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let partition = BlockPartition::from_shapes(tensors)?;
    let kept: Vec<bool> = snap.flat().collect();
    let pmf = kept_block_l0_pmf(&params, &partition, &kept, cutoff)?;
    let mut out = String::from("l0,probability\n");
    for (l0, p) in pmf.iter().enumerate() {
        writeln!(out, "{l0},{p}")?;
    }
    Ok(out)
}

fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let dims = data.sample_shape().iter().product::<usize>();
    let mut text = String::from("label");
    for d in 0..dims {
        write!(text, ",x{d}")?;
    }
    text.push('\n');
    for (row, label) in data.inputs.data().chunks(dims).zip(&data.labels) {
        write!(text, "{label}")?;
        for v in row {
            write!(text, ",{v}")?;
        }
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn synth(seed: u64, out: &Path) -> Result<String> {
    let (train, eval) = SyntheticBlobs {
        seed,
        ..SyntheticBlobs::default()
    }
    .generate()?;
    create_dir(out)?;
    write_dataset_csv(&out.join("train.csv"), &train)?;
    write_dataset_csv(&out.join("eval.csv"), &eval)?;
    Ok(format!("train={} eval={}\n", train.len(), eval.len()))
}

fn dispatch(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run { config, out } => run(&config, &out),
        Command::Sweep {
            config,
            momenta,
            out,
        } => sweep(&config, &momenta, &out),
        Command::Analyze(Analyze::Iou { a, b }) => {
            let v = iou(&MaskSnapshot::read(&a)?, &MaskSnapshot::read(&b)?)?;
            Ok(format!("{v:?}\n"))
        }
        Command::Analyze(Analyze::Trace { input, fit_exp }) => analyze_trace(&input, fit_exp),
        Command::Analyze(Analyze::Blockpmf {
            weights,
            snapshot,
            cutoff,
        }) => blockpmf(&weights, &snapshot, cutoff),
        Command::Dataset(DatasetCommand::Synth { seed, out }) => synth(seed, &out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
