//! The `acai` command line. Exit codes: 0 success, 1 input or configuration
//! error, 2 training or runtime failure.

use std::ffi::OsString;
use std::path::PathBuf;

use acai_core::harness::code_name;
use acai_core::interventions::InterventionKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, output_root};
use crate::pipeline::{Run, Stage};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "acai", version, about = "Discover sensitive latent factors and evaluate invariance interventions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the dataset and its splits.
    Datagen(RunArgs),
    /// Train the InfoGAN (or bind the oracle generator).
    TrainGan(RunArgs),
    /// Train the baseline classifier.
    TrainBaseline(RunArgs),
    /// Rank latent codes by the baseline's accuracy gap.
    Scan(RunArgs),
    /// Train intervention models: one (kind, code) pair, or the whole grid.
    Intervene {
        #[command(flatten)]
        run: RunArgs,
        /// DA, AA or SC.
        #[arg(long, requires = "code")]
        kind: Option<String>,
        /// Code index (0-based).
        #[arg(long, requires = "kind")]
        code: Option<usize>,
    },
    /// Evaluate all settings and write the report.
    Evaluate(RunArgs),
    /// Run the ACAI grid selection and print the chosen pair.
    Acai(RunArgs),
    /// Regenerate tables and figures of a finished run.
    Report {
        /// Run directory.
        #[arg(long)]
        from: PathBuf,
    },
    /// Every stage end to end.
    RunAll(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (JSON). Defaults apply to anything left out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory. Defaults to `$ACAI_OUTPUT_ROOT/<name>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted override, e.g. `--set classifier.epochs=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl RunArgs {
    pub fn open(&self) -> Result<Run> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        let config = load_config(self.config.as_deref(), &overrides)?;
        let dir = match &self.out {
            Some(d) => d.clone(),
            None => output_root(None).join(format!("{}-seed{}", config.name, config.seed)),
        };
        Run::open(&dir, config)
    }
}

fn until(args: &RunArgs, stage: Stage) -> Result<Run> {
    let run = args.open()?;
    run.run_until(stage)?;
    Ok(run)
}

fn print_report_location(run: &Run) {
    println!("report: {}", run.report_dir().join("report.md").display());
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Datagen(a) => {
            let run = until(&a, Stage::Datagen)?;
            println!("dataset: {}", run.dir.join("data").display());
        }
        Command::TrainGan(a) => {
            let run = until(&a, Stage::Generator)?;
            println!("generator: {}", run.dir.join("generator").display());
        }
        Command::TrainBaseline(a) => {
            let run = until(&a, Stage::Baseline)?;
            println!("baseline: {}", run.dir.join("baseline").display());
        }
        Command::Scan(a) => {
            let run = a.open()?;
            let data = run.data()?;
            let gen = run.generator(&data)?;
            let base = run.baseline(&data)?;
            for (rank, r) in run.scan(&data, &gen, &base)?.iter().enumerate() {
                println!("{:>2}. {:<4} Acc_gap {:6.2}  Acc {:6.2}", rank + 1, code_name(r.code), r.bundle.acc_gap, r.bundle.acc);
            }
        }
        Command::Intervene { run: a, kind, code } => {
            let run = a.open()?;
            let data = run.data()?;
            let gen = run.generator(&data)?;
            let jobs = match (kind, code) {
                (Some(k), Some(c)) => {
                    let d_c = gen.meta().d_c;
                    if c >= d_c {
                        return Err(Error::input(format!("--code {c} outside [0, {d_c})")));
                    }
                    vec![(InterventionKind::parse(&k)?, c)]
                }
                _ => {
                    let base = run.baseline(&data)?;
                    let ranking = run.scan(&data, &gen, &base)?;
                    run.jobs(&ranking)
                }
            };
            run.interventions(&data, &gen, &jobs)?;
            for (k, c) in jobs {
                println!("trained {}", k.label(c));
            }
        }
        Command::Evaluate(a) | Command::RunAll(a) => {
            let run = until(&a, Stage::Report)?;
            print_report_location(&run);
        }
        Command::Acai(a) => {
            let run = a.open()?;
            if !run.config.stages.acai {
                return Err(Error::input("ACAI is disabled in this config (stages.acai = false)"));
            }
            let report = run.run_until(Stage::Report)?.expect("report stage returns a report");
            if let Some(sel) = &report.acai {
                println!("selected {} — {}", sel.label(), sel.criterion);
                for g in &sel.grid {
                    println!("  {:<6} val Acc {:6.2}  Acc_gap {:6.2}  CAI_0.5 {:6.2}", g.kind.label(g.code), g.acc, g.acc_gap, g.cai_05);
                }
            }
            print_report_location(&run);
        }
        Command::Report { from } => {
            let run = Run::from_dir(&from)?;
            run.regenerate_report()?;
            print_report_location(&run);
        }
    }
    Ok(())
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
