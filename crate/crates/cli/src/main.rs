//! `hydra`: batch evaluation harness for the action-critique loop.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hydra_core::bench::PopeSubset;
use hydra_core::harness::{self, parse_epsilon, DefendSpec, RunSpec, BUDGET_LOG};
use hydra_core::report::{BenchKind, MetricBlock, RunReport};
use hydra_core::{DefenseKind, TaskKind};

const SUITE_ENV: &str = "HYDRA_SUITE";

#[derive(Debug, Parser)]
#[command(name = "hydra", version, about = "Evaluate the action-critique loop on hallucination benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the loop over a benchmark and write a JSON report.
    Run(RunArgs),
    /// Recompute metrics from a report and compare with the embedded block.
    Rescore {
        report: PathBuf,
    },
    /// Materialize defended copies of every image in a directory.
    Defend(DefendArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long)]
    task: TaskKind,
    #[arg(long)]
    bench: BenchKind,
    /// POPE subset (random, popular, adversarial).
    #[arg(long)]
    subset: Option<PopeSubset>,
    /// Overrides the suite config's defense.
    #[arg(long)]
    defense: Option<DefenseKind>,
    /// Suite config JSON; the HYDRA_SUITE environment variable takes precedence.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the suite config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// POPE: images to sample (6 questions each); AMBER: entries to sample.
    #[arg(long)]
    sample: Option<usize>,
    /// Label ingested images as adversarial inputs.
    #[arg(long)]
    attacked: bool,
}

#[derive(Debug, clap::Args)]
struct DefendArgs {
    #[arg(long)]
    defense: DefenseKind,
    /// Perturbation budget as p/q, e.g. 16/255.
    #[arg(long, value_parser = parse_epsilon)]
    verify_epsilon: Option<hydra_core::defense::Epsilon>,
    /// Clean originals to check input budgets against (matched by file name).
    #[arg(long)]
    originals: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

fn print_metrics(block: &MetricBlock) {
    match block {
        MetricBlock::Pope(s) => println!("pope: accuracy {:.1} f1 {:.1} yes_ratio {:.1}", s.accuracy, s.f1, s.yes_ratio),
        MetricBlock::Mme(s) => println!("mme: acc {:.1} acc_plus {:.1} total {:.1}", s.acc, s.acc_plus, s.total),
        MetricBlock::Amber(s) => println!(
            "amber: chair {:.1} cover {:.1} hal {:.1} cog {:.1}",
            s.chair, s.cover, s.hal, s.cog
        ),
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let suite = match std::env::var_os(SUITE_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => match args.suite {
            Some(p) => p,
            None => bail!("no suite config: pass --suite or set {SUITE_ENV}"),
        },
    };
    let spec = RunSpec {
        task: args.task,
        bench: args.bench,
        subset: args.subset,
        defense: args.defense,
        suite,
        data: args.data,
        seed: args.seed,
        workers: args.workers,
        sample: args.sample,
        attacked: args.attacked,
    };
    let report = harness::run(&spec)?;
    report
        .write_atomic(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let degraded = report.records.iter().filter(|r| r.degraded).count();
    println!("{} items written to {}", report.records.len(), args.out.display());
    if degraded > 0 {
        println!("{degraded} item(s) answered without usable evidence");
    }
    print_metrics(&report.metrics);
    Ok(ExitCode::SUCCESS)
}

fn rescore(path: PathBuf) -> Result<ExitCode> {
    let report = RunReport::load(&path)?;
    let block = report.rescore()?;
    println!("metrics match");
    print_metrics(&block);
    Ok(ExitCode::SUCCESS)
}

fn defend(args: DefendArgs) -> Result<ExitCode> {
    if args.defense == DefenseKind::None {
        bail!("defend needs --defense jpeg or featsq");
    }
    let summary = harness::defend(&DefendSpec {
        defense: args.defense,
        input: args.input,
        output: args.output.clone(),
        verify_epsilon: args.verify_epsilon,
        originals: args.originals,
    })?;
    println!("{} image(s) written to {}", summary.written.len(), args.output.display());
    for (file, reason) in &summary.failed {
        eprintln!("skipped {file}: {reason}");
    }
    let over: Vec<_> = summary.budget.iter().filter(|b| !b.outcome.passed()).collect();
    if args.verify_epsilon.is_some() {
        println!(
            "budget: {} pass, {} fail (log: {})",
            summary.budget.len() - over.len(),
            over.len(),
            args.output.join(BUDGET_LOG).display()
        );
    }
    for b in &over {
        let d = b.outcome.max_delta();
        eprintln!("over budget {}: max delta {}/{}", b.file, d.numer(), d.denom());
    }
    Ok(if summary.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Rescore { report } => rescore(report),
        Command::Defend(args) => defend(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
