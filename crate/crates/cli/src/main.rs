use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use otune::harness::{self, Scenario, ScenarioRun, Summary};
use otune::policy::{Params, HAND_TUNED_GAINS};

#[derive(Parser)]
#[command(
    name = "otune",
    version,
    about = "Online controller-gain tuning along a single trajectory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Per-step CSV for every roster member, plus the summary.
    Csv,
    /// Summary JSON only.
    Summary,
}

#[derive(clap::Args)]
struct Output {
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Summary)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Runs every roster member of a scenario.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        output: Output,
        /// Also write a plot-ready series keeping every Nth step.
        #[arg(long)]
        series: Option<usize>,
    },
    /// Total DiffTune cost per episode length.
    Sweep {
        scenario: PathBuf,
        /// Episode lengths in steps; defaults to the scenario's sweep list.
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Runs the derivative and sensitivity oracle suites.
    Check {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Tunes the quadrotor expert gains with M-GAPS on the figure-8.
    TuneExpert {
        /// Scenario providing the trajectory and plant; the default figure-8
        /// when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 1000.0)]
        eta: f64,
        #[arg(long, default_value_t = 5000)]
        laps: usize,
    },
}

const FIGURE8: &str = r#"
name = "figure8"
platform = "quad"
[[roster]]
name = "Expert"
theta0 = "expert"
optimizer = { kind = "fixed" }
"#;

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn run(path: &Path, output: &Output, series: Option<usize>) -> Result<bool> {
    let s = load(path, output.seed)?;
    let run = harness::run_scenario(&s)?;
    std::fs::create_dir_all(&output.out_dir)
        .with_context(|| format!("creating {}", output.out_dir.display()))?;
    if output.format == Format::Csv {
        for log in &run.logs {
            let file = output
                .out_dir
                .join(format!("{}_{}.csv", s.name, slug(&log.name)));
            harness::write_csv(log, s.platform, &file)?;
        }
    }
    if let Some(every) = series {
        if every == 0 {
            bail!("--series must be at least 1");
        }
        for log in &run.logs {
            let file = output
                .out_dir
                .join(format!("{}_{}_series.csv", s.name, slug(&log.name)));
            harness::write_series(log, s.platform, every, &file)?;
        }
    }
    let summary = Summary::new(&s, &run);
    harness::write_summary(
        &summary,
        &output.out_dir.join(format!("{}_summary.json", s.name)),
    )?;
    print_run(&summary);
    Ok(!run.any_diverged())
}

fn print_run(summary: &Summary) {
    println!(
        "{:<12} {:>12} {:>12} {:>12}  status",
        "member", "total", "tracking", "regret"
    );
    for m in &summary.members {
        let regret = m
            .quasi_regret_final
            .map_or("-".to_owned(), |r| format!("{r:.4e}"));
        let status = m.diverged.as_deref().unwrap_or("ok");
        println!(
            "{:<12} {:>12.4e} {:>12.4e} {:>12}  {}",
            m.name, m.total_cost, m.tracking_cost, regret, status
        );
    }
}

fn sweep(path: &Path, lengths: &[usize], output: &Output) -> Result<bool> {
    let s = load(path, output.seed)?;
    let lengths = if lengths.is_empty() {
        s.sweep.clone()
    } else {
        lengths.to_vec()
    };
    if lengths.is_empty() {
        bail!("no episode lengths given and the scenario has no sweep list");
    }
    let rows = harness::episode_sweep(&s, &lengths)?;
    std::fs::create_dir_all(&output.out_dir)
        .with_context(|| format!("creating {}", output.out_dir.display()))?;
    let run = ScenarioRun {
        logs: Vec::new(),
        sweep: rows.clone(),
    };
    let summary = Summary::new(&s, &run);
    harness::write_summary(
        &summary,
        &output.out_dir.join(format!("{}_sweep.json", s.name)),
    )?;
    if output.format == Format::Csv {
        let file = output.out_dir.join(format!("{}_sweep.csv", s.name));
        let mut text = String::from("horizon[steps],total_cost[1]\n");
        for (h, c) in &rows {
            text.push_str(&format!("{h},{c}\n"));
        }
        std::fs::write(&file, text).with_context(|| format!("writing {}", file.display()))?;
    }
    let lap = s.steps_per_lap();
    println!("{:>8} {:>8} {:>12}", "H", "laps", "total");
    for (h, c) in &rows {
        println!("{h:>8} {:>8.3} {c:>12.4e}", *h as f64 / lap as f64);
    }
    Ok(rows.iter().all(|(_, c)| c.is_finite()))
}

fn check(seed: u64) -> Result<bool> {
    let reports = otune::checks::run_all(seed)?;
    for r in &reports {
        println!("{r}");
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn tune_expert(path: Option<&Path>, eta: f64, laps: usize) -> Result<bool> {
    let s = match path {
        Some(p) => Scenario::load(p)?,
        None => Scenario::from_toml(FIGURE8)?,
    };
    let theta0: Vec<f64> = Params::from_gains(&HAND_TUNED_GAINS)
        .0
        .iter()
        .copied()
        .collect();
    let r = harness::tune_expert(&s, &theta0, eta, laps)?;
    println!("last lap cost: {:.6e}", r.last_lap_cost);
    println!("theta: {:?}", r.theta);
    Ok(r.theta.iter().all(|t| t.is_finite()))
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        match c {
            '*' => out.push_str("_star"),
            c if c.is_ascii_alphanumeric() => out.push(c.to_ascii_lowercase()),
            _ => out.push('_'),
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            output,
            series,
        } => run(scenario, output, *series),
        Command::Sweep {
            scenario,
            lengths,
            output,
        } => sweep(scenario, lengths, output),
        Command::Check { seed } => check(*seed),
        Command::TuneExpert {
            scenario,
            eta,
            laps,
        } => tune_expert(scenario.as_deref(), *eta, *laps),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
