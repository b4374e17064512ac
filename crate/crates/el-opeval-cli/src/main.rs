//! Command-line front end for empirical-likelihood off-policy evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use el_opeval::experiments::{comparison_run, coverage_run, ComparisonConfig, CoverageConfig};
use el_opeval::io::{self, EvalSummary, IoError, PriorConfig, RunConfig, SolverDiagnostics};
use el_opeval::posterior::{build_posterior, hpd_interval, prob_diff, prob_region, PriorSpec,
    RegionQuery};
use el_opeval::sim::{build_logged_dataset, generate_log, learn_policy, mc_true_value,
    BanditEnvironment, Policy, Recipe, SimStreams};
use el_opeval::subsupport::{sub_support, Mode};
use el_opeval::{is_estimate, mele, snis_estimate, wilks_interval, BoxSupport, LoggedDataset};

#[derive(Parser)]
#[command(name = "el-opeval", version, about = "Empirical-likelihood off-policy evaluation")]
struct Cli {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to EL_OPEVAL_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Weighted,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompareMode {
    Joint,
    Diff,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoveragePreset {
    Paper,
    Quick,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "weighted")]
    format: DataFormat,
    /// Per-policy support bounds, e.g. "0:10" or "0:10,0:10".
    #[arg(long)]
    bounds: Option<String>,
    /// Interval levels alpha, comma separated.
    #[arg(long)]
    alpha: Option<String>,
    /// Posterior grid points.
    #[arg(long)]
    grid: Option<usize>,
    /// flat | beta:a,b | table:<csv>
    #[arg(long)]
    prior: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "joint")]
    mode: CompareMode,
    #[arg(long)]
    format: Option<DataFormat>,
    #[arg(long)]
    bounds: Option<String>,
    #[arg(long)]
    margins: Option<String>,
    /// Also report relative-improvement probabilities.
    #[arg(long)]
    relative: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Evaluation-log size.
    #[arg(long)]
    n: usize,
    /// baseline | new | oracle | custom:m,s,kprime
    #[arg(long)]
    policy: String,
    /// Training-log size (defaults to the recipe's size).
    #[arg(long)]
    train_n: Option<usize>,
    /// Monte Carlo draws for the true value.
    #[arg(long, default_value_t = 1_000_000)]
    mc_draws: usize,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long, value_enum, default_value = "quick")]
    preset: CoveragePreset,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated evaluation-log sizes.
    #[arg(long)]
    sizes: Option<String>,
}

#[derive(Args)]
struct CompareExperimentArgs {
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    sizes: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Single-policy inference from a logged dataset.
    Eval(EvalArgs),
    /// Two-policy comparison probabilities.
    Compare(CompareArgs),
    /// Generate a synthetic log, export it, and report the true value.
    Simulate(SimulateArgs),
    /// Interval coverage/width study.
    Coverage(CoverageArgs),
    /// Joint-vs-difference comparison study.
    CompareExperiment(CompareExperimentArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| format!("bad {what} entry {t:?}")))
        .collect()
}

fn parse_bounds(text: &str) -> Result<Vec<(f64, f64)>, String> {
    text.split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once(':')
                .ok_or_else(|| format!("bound {pair:?} must be lo:hi"))?;
            Ok((
                lo.trim().parse().map_err(|_| format!("bad bound {pair:?}"))?,
                hi.trim().parse().map_err(|_| format!("bad bound {pair:?}"))?,
            ))
        })
        .collect()
}

fn parse_prior(text: &str) -> Result<PriorConfig, String> {
    if text == "flat" {
        return Ok(PriorConfig::Flat);
    }
    if let Some(rest) = text.strip_prefix("beta:") {
        let parts: Vec<f64> = parse_list(rest, "beta parameter")?;
        if parts.len() != 2 {
            return Err("beta prior needs exactly a,b".into());
        }
        return Ok(PriorConfig::Beta { a: parts[0], b: parts[1] });
    }
    if let Some(path) = text.strip_prefix("table:") {
        return Ok(PriorConfig::Table { path: path.to_string() });
    }
    Err(format!("unknown prior {text:?}"))
}

fn prior_spec(config: &PriorConfig, dims: usize) -> Result<PriorSpec, String> {
    Ok(match config {
        PriorConfig::Flat => PriorSpec::Flat,
        PriorConfig::Beta { a, b } => PriorSpec::BetaProduct(vec![(*a, *b); dims]),
        PriorConfig::Table { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("prior table: {e}"))?;
            let mut grid = Vec::new();
            let mut values = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if i == 0 || line.trim().is_empty() {
                    continue;
                }
                let (g, v) = line
                    .split_once(',')
                    .ok_or_else(|| format!("prior table line {}: need value,density", i + 1))?;
                grid.push(g.trim().parse().map_err(|_| format!("prior table line {}", i + 1))?);
                values.push(v.trim().parse().map_err(|_| format!("prior table line {}", i + 1))?);
            }
            PriorSpec::Tabulated { grid, values }
        }
    })
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_json_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = Some(threads);
    } else if config.threads.is_none() {
        if let Ok(v) = std::env::var("EL_OPEVAL_THREADS") {
            config.threads = Some(v.parse().map_err(|_| "bad EL_OPEVAL_THREADS")?);
        }
    }
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.display().to_string());
    }
    config.validate().map_err(|e| e.to_string())?;
    if let Some(t) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(config)
}

fn outdir(config: &RunConfig) -> PathBuf {
    PathBuf::from(config.out_dir.clone().unwrap_or_else(|| ".".into()))
}

fn ingest(
    path: &Path,
    format: DataFormat,
    bounds: Option<Vec<(f64, f64)>>,
) -> Result<LoggedDataset, IoError> {
    match format {
        DataFormat::Weighted => {
            let bounds = bounds.ok_or_else(|| {
                IoError::ConfigMismatch("weighted data needs --bounds or config bounds".into())
            })?;
            io::ingest_weighted_csv(path, BoxSupport::new(bounds)?)
        }
        DataFormat::Raw => io::ingest_raw_csv(path, bounds),
    }
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn run(cli: Cli) -> Result<(), String> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Eval(args) => eval_cmd(args, &mut config),
        Command::Compare(args) => compare_cmd(args, &mut config),
        Command::Simulate(args) => simulate_cmd(args, &config),
        Command::Coverage(args) => coverage_cmd(args, &config),
        Command::CompareExperiment(args) => compare_experiment_cmd(args, &config),
    }
}

fn eval_cmd(args: &EvalArgs, config: &mut RunConfig) -> Result<(), String> {
    if let Some(b) = &args.bounds {
        config.bounds = Some(parse_bounds(b)?);
    }
    if let Some(a) = &args.alpha {
        config.alphas = parse_list(a, "alpha")?;
    }
    if let Some(g) = args.grid {
        config.grid_1d = g;
    }
    if let Some(p) = &args.prior {
        config.prior = parse_prior(p)?;
    }
    let ds = ingest(&args.data, args.format, config.bounds.clone()).map_err(|e| e.to_string())?;
    if ds.policy_count() != 1 {
        return Err("eval needs a single-policy dataset; use `compare` for two".into());
    }
    let err = |e: &dyn std::fmt::Display| e.to_string();

    let m = mele(&ds).map_err(|e| err(&e))?;
    let prior = prior_spec(&config.prior, 1)?;
    let post = build_posterior(&ds, Mode::Value, &prior, config.grid_1d).map_err(|e| err(&e))?;
    let ss = sub_support(&ds, Mode::Value, config.sub_support_quantile).map_err(|e| err(&e))?;
    let wilks_90 = wilks_interval(&ds, 0.10).map_err(|e| err(&e))?;
    let wilks_95 = wilks_interval(&ds, 0.05).map_err(|e| err(&e))?;

    let summary = EvalSummary {
        mele_lo: m.value_box[0].0,
        mele_hi: m.value_box[0].1,
        is: is_estimate(&ds)[0],
        snis: snis_estimate(&ds).map_err(|e| err(&e))?[0],
        hpd_90: hpd_interval(&post, 0.10),
        hpd_95: hpd_interval(&post, 0.05),
        wilks_90: (wilks_90.lo, wilks_90.hi),
        wilks_95: (wilks_95.lo, wilks_95.hi),
        sub_support: ss.intervals.clone(),
        probabilities: None,
        seed: config.seed,
        config: config.clone(),
        solver_diagnostics: SolverDiagnostics {
            max_loglik: m.max_loglik.value(),
            residual_mass: m.residual_mass,
            mele_unique: m.is_unique(),
        },
        timestamp: timestamp(),
    };
    let dir = outdir(config);
    io::emit_summary(&summary, &dir).map_err(|e| err(&e))?;
    io::posterior_csv(&post, &dir.join("posterior.csv")).map_err(|e| err(&e))?;
    let density: Vec<(f64, f64)> = (0..post.axes[0].cells)
        .map(|i| (post.axes[0].center(i), post.cell_mass[i]))
        .collect();
    io::svg_line_chart(&[("posterior", density)], "Posterior density", &dir.join("posterior.svg"))
        .map_err(|e| err(&e))?;
    println!("wrote {}", dir.join("summary.json").display());
    Ok(())
}

fn compare_cmd(args: &CompareArgs, config: &mut RunConfig) -> Result<(), String> {
    if let Some(b) = &args.bounds {
        config.bounds = Some(parse_bounds(b)?);
    }
    if let Some(m) = &args.margins {
        config.margins = parse_list(m, "margin")?;
    }
    let format = args.format.unwrap_or(DataFormat::Weighted);
    let ds = ingest(&args.data, format, config.bounds.clone()).map_err(|e| e.to_string())?;
    if ds.policy_count() != 2 {
        return Err("compare needs a two-policy dataset".into());
    }
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let dir = outdir(config);
    std::fs::create_dir_all(&dir).map_err(|e| err(&e))?;

    let mut probs = serde_json::Map::new();
    let post = match args.mode {
        CompareMode::Joint => {
            let prior = prior_spec(&config.prior, 2)?;
            let post =
                build_posterior(&ds, Mode::Value, &prior, config.grid_2d).map_err(|e| err(&e))?;
            for &margin in &config.margins {
                let p = prob_region(&post, &RegionQuery::Absolute(margin)).map_err(|e| err(&e))?;
                probs.insert(format!("absolute_{margin}"), p.into());
                if args.relative {
                    let p =
                        prob_region(&post, &RegionQuery::Relative(margin)).map_err(|e| err(&e))?;
                    probs.insert(format!("relative_{margin}"), p.into());
                }
            }
            post
        }
        CompareMode::Diff => {
            let prior = prior_spec(&config.prior, 1)?;
            let post =
                build_posterior(&ds, Mode::Diff, &prior, config.grid_1d).map_err(|e| err(&e))?;
            for &margin in &config.margins {
                probs.insert(format!("diff_{margin}"), prob_diff(&post, margin).into());
            }
            post
        }
    };
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(probs))
        .map_err(|e| err(&e))?;
    std::fs::write(dir.join("probabilities.json"), text + "\n").map_err(|e| err(&e))?;
    io::posterior_csv(&post, &dir.join("posterior.csv")).map_err(|e| err(&e))?;
    println!("wrote {}", dir.join("probabilities.json").display());
    Ok(())
}

fn parse_policy(
    text: &str,
    train_n: Option<usize>,
    env: &BanditEnvironment,
    seed: u64,
) -> Result<(Policy, String), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    match text {
        "oracle" => Ok((Policy::Oracle, "oracle".into())),
        "baseline" | "new" => {
            let recipe = if text == "baseline" { Recipe::Baseline } else { Recipe::New };
            let n = train_n.unwrap_or_else(|| recipe.train_size());
            let (m, s, kp) = recipe.hyperparameters();
            let log = generate_log(env, n, &mut SimStreams::new(seed));
            let lp = learn_policy(&log, m, s, kp).map_err(|e| err(&e))?;
            Ok((Policy::Learned(lp), text.to_string()))
        }
        other => {
            let rest = other
                .strip_prefix("custom:")
                .ok_or_else(|| format!("unknown policy {other:?}"))?;
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err("custom policy needs m,s,kprime".into());
            }
            let m: f64 = parts[0].trim().parse().map_err(|_| "bad m")?;
            let s: f64 = parts[1].trim().parse().map_err(|_| "bad s")?;
            let kp: usize = parts[2].trim().parse().map_err(|_| "bad kprime")?;
            let n = train_n.unwrap_or(1024);
            let log = generate_log(env, n, &mut SimStreams::new(seed));
            let lp = learn_policy(&log, m, s, kp).map_err(|e| err(&e))?;
            Ok((Policy::Learned(lp), other.to_string()))
        }
    }
}

fn simulate_cmd(args: &SimulateArgs, config: &RunConfig) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let env = BanditEnvironment::new(config.env_k, config.env_d, config.env_beta0, config.env_beta1);
    let train_seed = config.seed.wrapping_add(1);
    let (policy, name) = parse_policy(&args.policy, args.train_n, &env, train_seed)?;
    let log = generate_log(&env, args.n, &mut SimStreams::new(config.seed));
    let ds = build_logged_dataset(&log, std::slice::from_ref(&policy), &env).map_err(|e| err(&e))?;
    let true_value = mc_true_value(&policy, &env, args.mc_draws, config.seed.wrapping_add(2));

    let dir = outdir(config);
    std::fs::create_dir_all(&dir).map_err(|e| err(&e))?;
    io::export_weighted_csv(&ds, &dir.join("data.csv")).map_err(|e| err(&e))?;
    let doc = serde_json::json!({
        "policy": name,
        "n": args.n,
        "train_n": args.train_n,
        "mc_draws": args.mc_draws,
        "true_value": true_value,
        "seed": config.seed,
        "bounds": ds.support().bounds(),
    });
    std::fs::write(
        dir.join("simulate.json"),
        serde_json::to_string_pretty(&doc).map_err(|e| err(&e))? + "\n",
    )
    .map_err(|e| err(&e))?;
    println!("true_value {true_value}");
    println!("wrote {}", dir.join("data.csv").display());
    Ok(())
}

fn coverage_cmd(args: &CoverageArgs, config: &RunConfig) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let mut cov = match args.preset {
        CoveragePreset::Paper => CoverageConfig::preset_paper(Recipe::New, config.seed),
        CoveragePreset::Quick => CoverageConfig::preset_quick(Recipe::New, config.seed),
    };
    if let Some(r) = args.replicates {
        cov.replicates = r;
    }
    if let Some(s) = &args.sizes {
        cov.sizes = parse_list(s, "size")?;
    }
    let report = coverage_run(&cov).map_err(|e| err(&e))?;
    let dir = outdir(config);
    std::fs::create_dir_all(&dir).map_err(|e| err(&e))?;
    io::coverage_csv(&report, &dir.join("coverage.csv")).map_err(|e| err(&e))?;
    let mut series = Vec::new();
    for method in [el_opeval::IntervalMethod::Wilks, el_opeval::IntervalMethod::Hpd] {
        let pts: Vec<(f64, f64)> = report
            .cells
            .iter()
            .filter(|c| c.method == method && c.level == cov.levels[0])
            .map(|c| (c.n as f64, c.coverage))
            .collect();
        series.push((if method == el_opeval::IntervalMethod::Wilks { "wilks" } else { "hpd" }, pts));
    }
    io::svg_line_chart(&series, "Coverage vs n", &dir.join("coverage.svg")).map_err(|e| err(&e))?;
    println!("wrote {}", dir.join("coverage.csv").display());
    Ok(())
}

fn compare_experiment_cmd(args: &CompareExperimentArgs, config: &RunConfig) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let mut cmp = ComparisonConfig { seed: config.seed, margins: config.margins.clone(), ..ComparisonConfig::default() };
    if let Some(r) = args.replicates {
        cmp.replicates = r;
    }
    if let Some(s) = &args.sizes {
        cmp.sizes = parse_list(s, "size")?;
    }
    let report = comparison_run(&cmp).map_err(|e| err(&e))?;
    let dir = outdir(config);
    std::fs::create_dir_all(&dir).map_err(|e| err(&e))?;
    io::comparison_csv(&report, &dir.join("comparison.csv")).map_err(|e| err(&e))?;
    let mut series = Vec::new();
    for (mode, name) in el_opeval::experiments::COMPARISON_MODES.iter().zip([
        "joint_absolute",
        "joint_relative",
        "diff",
    ]) {
        let pts: Vec<(f64, f64)> = report
            .cells
            .iter()
            .filter(|c| c.mode == *mode && c.n == cmp.sizes[0])
            .map(|c| (c.margin, c.mean_prob))
            .collect();
        series.push((name, pts));
    }
    io::svg_line_chart(&series, "Probability vs margin", &dir.join("comparison.svg"))
        .map_err(|e| err(&e))?;
    println!("wrote {}", dir.join("comparison.csv").display());
    Ok(())
}
