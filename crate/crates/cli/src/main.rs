use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedweight_cli::compare::compare;
use fedweight_cli::error::{CliError, EXIT_OK};
use fedweight_cli::presets;
use fedweight_cli::run::{execute, write_bundle};
use fedweight_cli::spec::{ExperimentSpec, Overrides};

#[derive(Parser)]
#[command(name = "fedweight", version, about = "Federated learning with adaptive aggregation weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment spec.
    Run {
        /// Spec file.
        spec: Option<PathBuf>,
        /// Built-in spec instead of a file.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Aggregation strategy, e.g. `fedsoftbetter(T=0.2)`.
        #[arg(long)]
        strategy: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several strategies on the same setup.
    Compare {
        /// One spec combined with `--strategy`, or several specs.
        specs: Vec<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Repeat once per strategy.
        #[arg(long = "strategy")]
        strategies: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// List built-in specs.
    Presets {
        /// Print this preset's TOML.
        name: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    repeats: Option<usize>,
    /// Base seed; repeat k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Accuracy threshold for rounds-to-threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, env = "FEDWEIGHT_OUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn overrides(&self, strategy: Option<String>) -> Overrides {
        Overrides {
            repeats: self.repeats,
            strategy,
            base_seed: self.seed,
            rounds: self.rounds,
            threshold: self.threshold,
            out_dir: self.out.clone(),
        }
    }
}

fn load(spec: Option<&PathBuf>, preset: Option<&str>) -> Result<ExperimentSpec, CliError> {
    match (spec, preset) {
        (Some(p), None) => ExperimentSpec::load(p),
        (None, Some(n)) => presets::preset(n),
        _ => Err(CliError::config("give a spec file or --preset")),
    }
}

fn real_main(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { spec, preset, strategy, common } => {
            let spec = load(spec.as_ref(), preset.as_deref())?;
            let exp = execute(spec, &common.overrides(strategy), common.workers)?;
            let written = write_bundle(&exp)?;
            print!("{}", summary_text(&exp));
            println!("wrote {} files to {}", written.len(), exp.spec.output.dir.display());
            if let Some(t) = &exp.theory {
                for c in &t.report.checks {
                    println!("check {:<20} {}", c.name, if c.pass { "pass" } else { "FAIL" });
                }
                for s in &t.skipped {
                    println!("check {:<20} skipped: {}", s.name, s.reason);
                }
            }
            Ok(exp.exit_code())
        }
        Command::Compare { specs, preset, strategies, common } => {
            let loaded: Vec<ExperimentSpec> = if strategies.is_empty() {
                specs.iter().map(|p| ExperimentSpec::load(p)).collect::<Result<_, _>>()?
            } else {
                if specs.len() > 1 {
                    return Err(CliError::config("--strategy takes a single spec"));
                }
                let base = load(specs.first(), preset.as_deref())?;
                strategies
                    .iter()
                    .map(|s| {
                        let mut x = base.clone();
                        x.strategy = s.clone();
                        x
                    })
                    .collect()
            };
            let cmp = compare(loaded, &common.overrides(None), common.workers)?;
            print!("{}", cmp.table());
            println!("wrote {}", cmp.out_dir.join("comparison.csv").display());
            Ok(cmp.experiments.iter().map(|e| e.exit_code()).max().unwrap_or(EXIT_OK))
        }
        Command::Presets { name } => {
            match name {
                Some(n) => print!("{}", presets::preset(&n)?.to_toml()),
                None => presets::names().for_each(|n| println!("{n}")),
            }
            Ok(EXIT_OK)
        }
    }
}

fn summary_text(exp: &fedweight_cli::Experiment) -> String {
    let s = &exp.summary;
    let mut out = format!("{} [{}] over {} seed(s)\n", s.name, s.strategy, s.seeds.len());
    if let Some(r) = &s.rounds_to_threshold {
        if let Some(st) = r.stat {
            out += &format!(
                "  rounds to {:.0}%: {:.2} ± {:.2} ({} not reached)\n",
                r.threshold * 100.0,
                st.mean,
                st.ci_half_width.unwrap_or(f64::NAN),
                r.not_reached
            );
        }
    }
    if let Some(a) = s.final_accuracy {
        out += &format!("  final accuracy: {:.4} ± {:.4}\n", a.mean, a.ci_half_width.unwrap_or(f64::NAN));
    }
    if let Some(l) = s.final_loss {
        out += &format!("  final loss: {:.6} ± {:.6}\n", l.mean, l.ci_half_width.unwrap_or(f64::NAN));
    }
    if !s.diverged_seeds.is_empty() {
        out += &format!("  diverged seeds: {:?}\n", s.diverged_seeds);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
