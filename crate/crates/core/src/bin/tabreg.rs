//! Command-line front end: run loss sweeps and state-action-specific runs
//! from TOML configs, check the discount/weighted-average policy
//! equivalence, tabulate eps* and implied prior magnitudes, run the
//! regularized Q-learner, and dump environments as JSON.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tabreg::config::{FileConfig, QlearnMode};
use tabreg::environments::{make_river_swim, RiverSwimParams};
use tabreg::error::{Error, Result};
use tabreg::estimation::{
    counts_from_slice, mle_estimate, uniform_tensor, DirichletPrior, TransitionCounts,
};
use tabreg::experiments::{
    derive_seed, export_results, export_traces, ExportFormat, LossRecord, SweepOutput,
};
use tabreg::mdp::{value_iteration, DEFAULT_VI_MAX_ITERS, DEFAULT_VI_TOL};
use tabreg::model_free::{q_learning_baseline, q_learning_regularized, BaselineMode, QLearnConfig};
use tabreg::regularizers::{
    discount_to_eps, eps_grid_with_step, eps_star_posterior_sampled, eps_star_uniform,
    eps_to_discount, implied_prior_magnitude, run_theorem_trials, theorem_trial,
};

/// Env var naming the default output directory for result files.
const OUT_DIR_VAR: &str = "TABREG_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "tabreg",
    version,
    about = "Tabular MDP regularization toolkit: sweeps, eps* tables, equivalence checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the RNG seed from configs (makes any subcommand fully
    /// deterministic under the given value).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bound the rayon thread pool; output is identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn as_export(self) -> ExportFormat {
        match self {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output file (default: <command>.<format> under $TABREG_OUT_DIR or the
    /// working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl OutputArgs {
    fn resolve(&self, default_stem: &str) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => {
                let name = format!("{default_stem}.{}", self.format.extension());
                match std::env::var_os(OUT_DIR_VAR) {
                    Some(dir) => Path::new(&dir).join(name),
                    None => PathBuf::from(name),
                }
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the loss-by-regularization-strength sweep from a config file.
    /// State-action-specific methods in the config are appended as single
    /// loss distributions.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run only the state-action-specific methods from a config file.
    StateSpecific {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Randomized check of the lowered-discount / weighted-average policy
    /// equivalence, plus a per-state value/action table for River Swim.
    TheoremCheck {
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Weight used for the illustration table.
        #[arg(long, default_value_t = 0.3)]
        eps: f64,
    },
    /// Tabulate eps* per (s, a) from a counts file
    /// (CSV with header: s,a,s_next,count).
    EpsStar {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, value_enum, default_value = "mle")]
        plugin: Plugin,
        #[arg(long, default_value_t = 100)]
        n_samples: usize,
        #[arg(long, default_value_t = 0.01)]
        eps_step: f64,
    },
    /// Tabulate the uniform-prior magnitudes implied by a planning discount,
    /// or emit the magnitude-vs-discount curve.
    ImpliedPrior {
        #[arg(long)]
        gamma: f64,
        /// Planning discount (table mode).
        #[arg(long)]
        gamma_p: Option<f64>,
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Emit the curve of alpha_i against gamma_p for fixed N and c.
        #[arg(long, default_value_t = false)]
        curve: bool,
        #[arg(long, default_value_t = 10)]
        n_states: usize,
        /// Observations per row for curve mode.
        #[arg(long, default_value_t = 20)]
        count: u64,
    },
    /// Run Q-learning (regularized or baseline) from a config file and write
    /// per-episode reward traces.
    Qlearn {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Build the configured environment and dump it as JSON.
    EnvDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Plugin {
    Mle,
    Posterior,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep { config, output } => cmd_sweep(&config, &output, cli.seed, false),
        Command::StateSpecific { config, output } => cmd_sweep(&config, &output, cli.seed, true),
        Command::TheoremCheck { trials, eps } => {
            cmd_theorem_check(trials as usize, cli.seed.unwrap_or(0), eps)
        }
        Command::EpsStar {
            counts,
            plugin,
            n_samples,
            eps_step,
        } => cmd_eps_star(&counts, plugin, n_samples, eps_step, cli.seed.unwrap_or(0)),
        Command::ImpliedPrior {
            gamma,
            gamma_p,
            counts,
            curve,
            n_states,
            count,
        } => cmd_implied_prior(gamma, gamma_p, counts.as_deref(), curve, n_states, count),
        Command::Qlearn { config, output } => cmd_qlearn(&config, &output, cli.seed),
        Command::EnvDump { config, out } => cmd_env_dump(&config, out.as_deref()),
    }
}

fn cmd_sweep(
    config_path: &Path,
    output: &OutputArgs,
    seed: Option<u64>,
    state_specific_only: bool,
) -> Result<ExitCode> {
    let file = FileConfig::load(config_path)?;
    let cfg = file.to_sweep_config(seed)?;
    let has_swept = cfg.methods.iter().any(|m| !m.is_state_specific());
    let has_sas = cfg.methods.iter().any(|m| m.is_state_specific());
    if state_specific_only && !has_sas {
        return Err(Error::Config(
            "config lists no state-action-specific method".into(),
        ));
    }

    let mut records: Vec<LossRecord> = Vec::new();
    let mut summaries = Vec::new();
    if !state_specific_only && has_swept {
        let SweepOutput { records: r, summary } = tabreg::experiments::run_sweep(&cfg)?;
        records.extend(r);
        summaries.extend(summary);
    }
    if has_sas {
        let SweepOutput { records: r, summary } = tabreg::experiments::run_state_specific(&cfg)?;
        records.extend(r);
        summaries.extend(summary);
    }

    let default_stem = if state_specific_only {
        "state_specific"
    } else {
        "sweep"
    };
    let path = output.resolve(default_stem);
    export_results(&records, Some(&cfg), &path, output.format.as_export())?;
    println!("wrote {} records to {}", records.len(), path.display());
    println!(
        "{:<22} {:>6} {:>12} {:>12} {:>5}",
        "method", "eps", "mean_loss", "std_error", "n"
    );
    for row in &summaries {
        println!(
            "{:<22} {:>6} {:>12.6} {:>12.6} {:>5}",
            row.method,
            row.param_value
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".into()),
            row.mean_loss,
            row.std_error,
            row.n
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_theorem_check(trials: usize, seed: u64, eps: f64) -> Result<ExitCode> {
    let report = run_theorem_trials(trials, seed)?;
    for (i, t) in report.trials.iter().enumerate() {
        println!(
            "trial {:>4}: N={:<2} |A|={} gamma={:.3} eps={:.3} t_reg={:<22} decisive={:<2} {}",
            i,
            t.n_states,
            t.n_actions,
            t.gamma,
            t.eps,
            t.t_reg_kind.label(),
            t.decisive_states,
            if t.pass { "pass" } else { "FAIL" }
        );
    }
    let passed = report.trials.iter().filter(|t| t.pass).count();
    println!("{passed}/{} trials passed", report.trials.len());

    // Illustration table: same optimal policy, different values. The
    // uniform regularizer gives a nonzero additive constant, so the two
    // value columns visibly differ (the zeros matrix would make them equal).
    let mdp = make_river_swim(&RiverSwimParams::default(), 0.99)?;
    let outcome = theorem_trial(&mdp, eps, &uniform_tensor(6, 2))?;
    println!();
    println!(
        "river swim at eps = {eps}: planning discount {:.4} vs uniform-matrix average at gamma 0.99",
        eps_to_discount(0.99, eps)
    );
    println!(
        "{:<6} {:>14} {:>8} {:>14} {:>8}",
        "state", "V_discount", "action", "V_weighted", "action"
    );
    let arrow = |a: usize| if a == 0 { "left" } else { "right" };
    for s in 0..6 {
        println!(
            "{:<6} {:>14.6} {:>8} {:>14.6} {:>8}",
            s,
            outcome.lowered.values.get(s),
            arrow(outcome.lowered.policy.action(s)),
            outcome.averaged.values.get(s),
            arrow(outcome.averaged.policy.action(s)),
        );
    }

    if let Some((summary, outcome, mdp)) = &report.counterexample {
        eprintln!("counterexample: {summary:?}");
        eprintln!("MDP rewards: {:?}", mdp.rewards());
        eprintln!("MDP transitions: {:?}", mdp.transitions());
        eprintln!(
            "policy (lowered discount): {:?}",
            outcome.lowered.policy.actions()
        );
        eprintln!(
            "policy (weighted average): {:?}",
            outcome.averaged.policy.actions()
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

/// Reads a counts file with header `s,a,s_next,count`; dimensions are
/// inferred from the largest indices present.
fn read_counts_file(path: &Path) -> Result<TransitionCounts> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Config(format!("cannot read counts file {}: {e}", path.display()))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["s", "a", "s_next", "count"];
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Config(format!(
            "{}: expected header s,a,s_next,count, got '{}'",
            path.display(),
            got.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let parse = |field: usize, name: &str| -> Result<u64> {
            record
                .get(field)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{} row {}: missing column {name}",
                        path.display(),
                        i + 2
                    ))
                })?
                .trim()
                .parse::<u64>()
                .map_err(|e| {
                    Error::Config(format!("{} row {}: bad {name}: {e}", path.display(), i + 2))
                })
        };
        rows.push((
            parse(0, "s")? as usize,
            parse(1, "a")? as usize,
            parse(2, "s_next")? as usize,
            parse(3, "count")?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "{}: counts file has no data rows",
            path.display()
        )));
    }
    let n = rows.iter().map(|r| r.0.max(r.2)).max().unwrap() + 1;
    let a = rows.iter().map(|r| r.1).max().unwrap() + 1;
    counts_from_slice(n, a, &rows)
}

fn cmd_eps_star(
    counts_path: &Path,
    plugin: Plugin,
    n_samples: usize,
    eps_step: f64,
    seed: u64,
) -> Result<ExitCode> {
    let counts = read_counts_file(counts_path)?;
    let n = counts.n_states();
    let a = counts.n_actions();
    let mle = mle_estimate(&counts);
    let field = match plugin {
        Plugin::Mle => eps_star_uniform(&mle.probs, &counts),
        Plugin::Posterior => {
            let prior = DirichletPrior::uniform(n, a, 1.0)?;
            let grid = eps_grid_with_step(eps_step)?;
            eps_star_posterior_sampled(&counts, &prior, n_samples, &grid, seed)?
        }
    };
    println!("{:<4} {:<4} {:>8} {:>12} {:>10}", "s", "a", "c", "K", "eps_star");
    for s in 0..n {
        for k in 0..a {
            let c = counts.row_total(s, k);
            let row = mle.probs.slice(ndarray::s![s, k, ..]);
            let k_value = if c == 0 {
                "-".to_string()
            } else {
                let num: f64 = row.iter().map(|t| t * (1.0 - t)).sum();
                let den: f64 = row
                    .iter()
                    .map(|t| (1.0 / n as f64 - t) * (1.0 / n as f64 - t))
                    .sum();
                if den <= 1e-15 {
                    "inf".to_string()
                } else {
                    format!("{:.6}", num / den)
                }
            };
            println!(
                "{:<4} {:<4} {:>8} {:>12} {:>10.6}",
                s,
                k,
                c,
                k_value,
                field.get(s, k)
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_implied_prior(
    gamma: f64,
    gamma_p: Option<f64>,
    counts_path: Option<&Path>,
    curve: bool,
    n_states: usize,
    count: u64,
) -> Result<ExitCode> {
    if curve {
        // Magnitude-vs-planning-discount curve for one row with `count`
        // observations over `n_states` successor states.
        if n_states == 0 {
            return Err(Error::InvalidParameter("n_states must be >= 1".into()));
        }
        let mut counts = TransitionCounts::zeros(n_states, 1);
        counts.add(0, 0, 0, count);
        println!("{:>10} {:>14} {:>14}", "gamma_p", "sum_alpha", "alpha_i");
        let steps = 99;
        for i in 1..=steps {
            let gp = gamma * i as f64 / steps as f64;
            let prior = implied_prior_magnitude(gamma, gp, &counts)?;
            let magnitude = prior.row_magnitude(0, 0);
            println!(
                "{:>10.4} {:>14.6} {:>14.6}",
                gp,
                magnitude,
                magnitude / n_states as f64
            );
        }
        return Ok(ExitCode::SUCCESS);
    }

    let gamma_p = gamma_p.ok_or_else(|| {
        Error::InvalidParameter("--gamma-p is required unless --curve is given".into())
    })?;
    let counts_path = counts_path.ok_or_else(|| {
        Error::InvalidParameter("--counts is required unless --curve is given".into())
    })?;
    let counts = read_counts_file(counts_path)?;
    let prior = implied_prior_magnitude(gamma, gamma_p, &counts)?;
    let eps = discount_to_eps(gamma, gamma_p)?;
    println!("eps = (gamma - gamma_p) / gamma = {eps:.6}");
    println!(
        "{:<4} {:<4} {:>8} {:>14} {:>14}",
        "s", "a", "c", "sum_alpha", "alpha_i"
    );
    let n = counts.n_states();
    for s in 0..n {
        for k in 0..counts.n_actions() {
            let m = prior.row_magnitude(s, k);
            println!(
                "{:<4} {:<4} {:>8} {:>14.6} {:>14.6}",
                s,
                k,
                counts.row_total(s, k),
                m,
                m / n as f64
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_qlearn(config_path: &Path, output: &OutputArgs, seed: Option<u64>) -> Result<ExitCode> {
    let file = FileConfig::load(config_path)?;
    let (base_cfg, mode, n_runs) = file.to_qlearn(seed)?;
    let env = file.env.build()?;
    let method = match mode {
        QlearnMode::Regularized => "qlearn_regularized",
        QlearnMode::Baseline(BaselineMode::Standard) => "qlearn_standard",
        QlearnMode::Baseline(BaselineMode::ConstantProb(_)) => "qlearn_constant_prob",
    };
    let mut records = Vec::new();
    for run in 0..n_runs as u64 {
        let cfg = QLearnConfig {
            seed: derive_seed(base_cfg.seed, 17, run),
            ..base_cfg.clone()
        };
        let result = match mode {
            QlearnMode::Regularized => q_learning_regularized(&env, &cfg)?,
            QlearnMode::Baseline(b) => q_learning_baseline(&env, &cfg, b)?,
        };
        for (episode, reward) in result.episode_rewards.iter().enumerate() {
            records.push(LossRecord {
                env: file.env.id().to_string(),
                method: method.to_string(),
                param_name: "episode".to_string(),
                param_value: Some(episode as f64),
                replicate: run,
                loss: *reward,
            });
        }
        if run == 0 {
            println!("run 0 greedy policy: {:?}", result.greedy().actions());
            println!(
                "run 0 real steps: {}, simulated updates: {}",
                result.real_steps, result.sim_steps
            );
        }
    }
    let path = output.resolve("qlearn");
    export_traces(&records, &path)?;
    println!("wrote {} trace rows to {}", records.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct DumpedMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

fn cmd_env_dump(config_path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let file = FileConfig::load(config_path)?;
    let mdp = file.env.build()?;
    let n = mdp.n_states();
    let a = mdp.n_actions();
    let dump = DumpedMdp {
        n_states: n,
        n_actions: a,
        gamma: mdp.gamma(),
        rewards: (0..n)
            .map(|s| (0..a).map(|k| mdp.rewards()[[s, k]]).collect())
            .collect(),
        transitions: (0..n)
            .map(|s| (0..a).map(|k| mdp.transition_row(s, k).to_vec()).collect())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&dump)
        .map_err(|e| Error::Config(format!("serializing environment: {e}")))?;
    match out {
        Some(path) => {
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
            println!("wrote {} ({} states, {} actions)", path.display(), n, a);
        }
        None => println!("{text}"),
    }
    let vi = value_iteration(&mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITERS)?;
    eprintln!("{}: optimal policy {:?}", file.env.id(), vi.policy.actions());
    Ok(ExitCode::SUCCESS)
}
