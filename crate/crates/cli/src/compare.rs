//! Side-by-side runs of specs that differ only in strategy.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::CliError;
use crate::output::write_atomic;
use crate::run::{execute, write_bundle, Experiment, Stat};
use crate::spec::{ExperimentSpec, Overrides};

#[derive(Debug, Clone)]
pub struct Comparison {
    pub out_dir: PathBuf,
    pub experiments: Vec<Experiment>,
}

fn without_strategy(spec: &ExperimentSpec) -> ExperimentSpec {
    let mut s = spec.clone();
    s.strategy = String::new();
    s.name = String::new();
    s.output.dir = PathBuf::new();
    s
}

/// Every spec must match the first apart from name, strategy and output dir.
pub fn check_comparable(specs: &[ExperimentSpec]) -> Result<(), CliError> {
    if specs.len() < 2 {
        return Err(CliError::config("compare needs at least two strategies"));
    }
    let base = without_strategy(&specs[0]);
    for s in &specs[1..] {
        if without_strategy(s) != base {
            return Err(CliError::config(format!(
                "spec `{}` differs from `{}` in more than the strategy",
                s.name, specs[0].name
            )));
        }
    }
    Ok(())
}

fn slug(strategy: &str) -> String {
    strategy.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Run each spec into `<out>/<strategy-slug>` and return the results.
pub fn compare(
    specs: Vec<ExperimentSpec>,
    overrides: &Overrides,
    workers: Option<usize>,
) -> Result<Comparison, CliError> {
    let mut specs = specs;
    for s in &mut specs {
        let mut o = overrides.clone();
        o.strategy = None;
        o.out_dir = None;
        o.apply(s);
    }
    check_comparable(&specs)?;
    let out_dir = overrides.out_dir.clone().unwrap_or_else(|| specs[0].output.dir.clone());
    let mut experiments = Vec::with_capacity(specs.len());
    for mut s in specs {
        s.output.dir = out_dir.join(slug(&s.strategy));
        let exp = execute(s, &Overrides::default(), workers)?;
        write_bundle(&exp)?;
        experiments.push(exp);
    }
    let cmp = Comparison { out_dir, experiments };
    write_atomic(&cmp.out_dir.join("comparison.csv"), &cmp.csv()?)?;
    write_atomic(&cmp.out_dir.join("comparison.txt"), cmp.table().as_bytes())?;
    Ok(cmp)
}

fn cells(s: Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [s.mean.to_string(), s.ci_half_width.map(|c| c.to_string()).unwrap_or_default()],
        None => [String::new(), String::new()],
    }
}

impl Comparison {
    pub fn csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::internal(e.to_string());
        w.write_record([
            "strategy",
            "runs",
            "rounds_to_threshold_mean",
            "rounds_to_threshold_ci",
            "not_reached",
            "final_accuracy_mean",
            "final_accuracy_ci",
            "final_loss_mean",
            "final_loss_ci",
            "diverged",
        ])
        .map_err(err)?;
        for e in &self.experiments {
            let s = &e.summary;
            let r = s.rounds_to_threshold.as_ref();
            let [rm, rc] = cells(r.and_then(|r| r.stat));
            let [am, ac] = cells(s.final_accuracy);
            let [lm, lc] = cells(s.final_loss);
            w.write_record([
                s.strategy.clone(),
                s.seeds.len().to_string(),
                rm,
                rc,
                r.map(|r| r.not_reached.to_string()).unwrap_or_default(),
                am,
                ac,
                lm,
                lc,
                s.diverged_seeds.len().to_string(),
            ])
            .map_err(err)?;
        }
        w.into_inner().map_err(|e| CliError::internal(e.to_string()))
    }

    pub fn table(&self) -> String {
        let fmt = |s: Option<Stat>| match s {
            Some(Stat { mean, ci_half_width: Some(c), .. }) => format!("{mean:.4} ± {c:.4}"),
            Some(Stat { mean, .. }) => format!("{mean:.4}"),
            None => "-".into(),
        };
        let width = self.experiments.iter().map(|e| e.summary.strategy.len()).max().unwrap_or(8).max(8);
        let mut out = format!(
            "{:<width$}  {:>20}  {:>11}  {:>20}  {:>20}\n",
            "strategy", "rounds to threshold", "not reached", "final accuracy", "final loss"
        );
        for e in &self.experiments {
            let s = &e.summary;
            let r = s.rounds_to_threshold.as_ref();
            let _ = writeln!(
                out,
                "{:<width$}  {:>20}  {:>11}  {:>20}  {:>20}",
                s.strategy,
                fmt(r.and_then(|r| r.stat)),
                r.map(|r| r.not_reached.to_string()).unwrap_or_else(|| "-".into()),
                fmt(s.final_accuracy),
                fmt(s.final_loss),
            );
        }
        out
    }
}
