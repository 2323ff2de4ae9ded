use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use rerand::asymptotics::{
    adjustment_helps, decompose_gamma, gains_estimated, gains_sampling, law_params, min_variance_gamma,
    sampling_distribution_gamma, GainReport, Role, Scenario,
};
use rerand::design::{Assignment, DesignKind, DesignSpec, RemSampler, DEFAULT_MAX_ATTEMPTS};
use rerand::dists::{chi2_quantile, v_constant};
use rerand::estimators::{fixed_fit, lin_fit, TrialData};
use rerand::inference::{confidence_interval, estimated_distribution, Method};
use rerand::simlab::{
    reproduce_sec81, reproduce_table1, run_monte_carlo, DesignConfig, EstimatorSpec, ModelSpec, ScenarioConfig,
    Sec81Row,
};
use rerand::{summarize, Error, FinitePopulation, Result};

/// Rerandomization design, covariate adjustment and inference.
#[derive(Parser)]
#[command(name = "rerand", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one allocation by complete randomization or rerandomization.
    Design(DesignArgs),
    /// Estimate the effect from one experiment and report an interval.
    Analyze(AnalyzeArgs),
    /// Population-level asymptotic quantities and gains.
    Asymptotics(AsymptoticsArgs),
    /// Run a Monte Carlo scenario.
    Simulate(SimulateArgs),
    /// Reproduce the standard-error table for the two-covariate example.
    SeTable(SeTableArgs),
    /// Interval length and coverage over a grid of sample sizes.
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct Threshold {
    /// Rerandomization threshold `a` on the Mahalanobis distance.
    #[arg(long, conflicts_with = "threshold_quantile")]
    threshold: Option<f64>,
    /// Set `a` to this quantile level of chi-square with K degrees of freedom.
    #[arg(long)]
    threshold_quantile: Option<f64>,
}

impl Threshold {
    fn resolve(&self, k: usize) -> Result<Option<f64>> {
        match (self.threshold, self.threshold_quantile) {
            (Some(a), _) if a > 0.0 => Ok(Some(a)),
            (Some(a), _) => Err(Error::InvalidArgument(format!("threshold {a} must be positive"))),
            (None, Some(p)) => Ok(Some(chi2_quantile(k.max(1), p)?)),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Args)]
struct DesignArgs {
    /// CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated design covariate columns.
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    #[arg(long)]
    n1: usize,
    #[command(flatten)]
    threshold: Threshold,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: u64,
    /// Where to write the allocation CSV (`unit,z`).
    #[arg(long, default_value = "assignment.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeEstimator {
    Diff,
    Lin,
    Custom,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    /// 0/1 treatment column.
    #[arg(long)]
    treat: String,
    #[arg(long, value_delimiter = ',')]
    w_cols: Vec<String>,
    /// Design covariates; with a threshold the interval uses the design.
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    #[arg(long, value_enum, default_value = "lin")]
    estimator: AnalyzeEstimator,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta1: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta0: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    threshold: Threshold,
}

#[derive(Args)]
struct AsymptoticsArgs {
    /// Population CSV with columns y1, y0, x1..xK, w1..wJ.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    j: usize,
    #[arg(long, default_value_t = 0.5)]
    r1: f64,
    #[command(flatten)]
    threshold: Threshold,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON scenario file; the remaining flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "example1")]
    model: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    rho: f64,
    #[arg(long, default_value = "rem")]
    design: String,
    #[command(flatten)]
    threshold: Threshold,
    #[arg(long, default_value_t = 0.5)]
    r1: f64,
    #[arg(long, value_delimiter = ',', default_value = "diff,lin")]
    estimators: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    knows_design: bool,
    /// Directory for `report.json` and one histogram CSV per estimator.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeTableArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,300,1000")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Columns of a numeric CSV keyed by header name.
struct Table {
    headers: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Format(format!("row {}, column {:?}: {field:?} is not a number", line + 1, headers[c]))
                })?;
                columns[c].push(v);
            }
        }
        Ok(Self { headers, columns })
    }

    fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Format(format!("no column named {name:?}")))
    }

    fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let cols = names.iter().map(|s| self.column(s)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.rows(), cols.len(), |i, j| cols[j][i]))
    }
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn finite(a: f64) -> Value {
    if a.is_finite() {
        json!(a)
    } else {
        Value::Null
    }
}

fn design(args: &DesignArgs) -> Result<()> {
    let t = Table::read(&args.data)?;
    let x = t.matrix(&args.x_cols)?;
    let n = t.rows();
    let spec = match args.threshold.resolve(x.ncols())? {
        Some(a) => DesignSpec::rem(args.n1, a),
        None => DesignSpec::cre(args.n1),
    }
    .with_max_attempts(args.max_attempts);
    let sampler = RemSampler::new(&x, &spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (z, attempts) = sampler.draw(&mut rng)?;
    let mut out = String::from("unit,z\n");
    for i in 0..n {
        out.push_str(&format!("{},{}\n", i + 1, z.is_treated(i) as u8));
    }
    fs::write(&args.out, out)?;
    print_json(&json!({
        "M": sampler.statistic(&z),
        "attempts": attempts,
        "a": finite(spec.threshold()),
        "seed": args.seed,
        "n": n,
        "n1": args.n1,
        "assignment": args.out.display().to_string(),
    }))
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let t = Table::read(&args.data)?;
    let y = DVector::from_column_slice(t.column(&args.outcome)?);
    let z = t
        .column(&args.treat)?
        .iter()
        .map(|&v| match v {
            1.0 => Ok(true),
            0.0 => Ok(false),
            v => Err(Error::Format(format!("treatment column holds {v}, expected 0 or 1"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    let w = t.matrix(&args.w_cols)?;
    let x = (!args.x_cols.is_empty()).then(|| t.matrix(&args.x_cols)).transpose()?;
    let k = x.as_ref().map_or(0, |x| x.ncols());
    let a = args.threshold.resolve(k)?;
    let knows = x.is_some() && a.is_some();
    let d = TrialData::new(y, Assignment::new(z), w, x)?;
    let fit = match args.estimator {
        AnalyzeEstimator::Lin => lin_fit(&d)?,
        AnalyzeEstimator::Diff => {
            let zero = DVector::zeros(d.j());
            fixed_fit(&d, &zero, &zero)?
        }
        AnalyzeEstimator::Custom => {
            fixed_fit(&d, &DVector::from_vec(args.beta1.clone()), &DVector::from_vec(args.beta0.clone()))?
        }
    };
    let method = if knows { Method::FullKnowledge } else { Method::NoKnowledge };
    let dist = estimated_distribution(&fit, knows, k, a.unwrap_or(f64::INFINITY))?;
    let ci = confidence_interval(fit.tau_hat, &dist, d.n(), args.alpha, method)?;
    print_json(&json!({
        "tau_hat": fit.tau_hat,
        "beta1_hat": fit.beta1_hat,
        "beta0_hat": fit.beta0_hat,
        "v_hat": fit.v_hat,
        "v_hw": fit.v_hw,
        "r2_hat_x": fit.r2_hat_x,
        "ci": ci,
        "method": method,
    }))
}

fn gain_json(g: Result<GainReport>, alpha: f64) -> Result<Value> {
    match g {
        Ok(g) => Ok(json!({
            "pct_var_reduction": g.pct_var_reduction,
            "pct_qr_reduction": g.pct_qr_reduction(alpha)?,
            "monotone_in": g.monotone_in,
        })),
        Err(Error::Precondition(why)) => Ok(json!({ "unavailable": why })),
        Err(e) => Err(e),
    }
}

fn asymptotics(args: &AsymptoticsArgs) -> Result<()> {
    let pop = FinitePopulation::from_csv(&args.data, args.k, args.j)?;
    let a = args.threshold.resolve(pop.k())?.unwrap_or(f64::INFINITY);
    let s = summarize(&pop, args.r1)?;
    let n1 = (args.r1 * pop.n() as f64).round() as usize;
    let spec = DesignSpec::rem(n1, a);
    let (lk, la) = law_params(pop.k(), a);
    let law = |g: &DVector<f64>| -> Result<Value> {
        let d = sampling_distribution_gamma(&pop, &spec, g)?;
        let (eps2, l2) = decompose_gamma(&s, g);
        Ok(json!({
            "gamma": g.as_slice(),
            "variance": d.variance(),
            "r2_x": d.r2,
            "quantile_range": d.quantile_range(args.alpha)?,
            "eps_coef2": eps2,
            "l_coef2": l2,
        }))
    };
    let zero = DVector::zeros(pop.j());
    let mut gains = serde_json::Map::new();
    for (name, scenario) in [("analyzer_richer", Scenario::AnalyzerRicher), ("designer_richer", Scenario::DesignerRicher)] {
        for (rname, role) in [("analyzer", Role::Analyzer), ("designer", Role::Designer)] {
            let g = gains_sampling(&pop, args.r1, lk, la, scenario, role);
            gains.insert(format!("sampling_{name}_{rname}"), gain_json(g, args.alpha)?);
        }
    }
    for (name, knows) in [("full_knowledge", true), ("no_knowledge", false)] {
        let g = gains_estimated(&pop, args.r1, lk, la, knows, Role::Analyzer);
        gains.insert(format!("estimated_{name}_analyzer"), gain_json(g, args.alpha)?);
    }
    print_json(&json!({
        "n": pop.n(),
        "k": pop.k(),
        "j": pop.j(),
        "r1": args.r1,
        "a": finite(a),
        "v_ka": v_constant(lk, la),
        "tau": s.tau,
        "s2_tau": s.s2_tau,
        "v_tautau": s.v_tautau,
        "r2_tau_x": s.r2_tau_x,
        "r2_tau_w": s.r2_tau_w,
        "r2_proj": s.r2_proj,
        "r2_res": s.r2_res,
        "rho2_x_minus_w": s.rho2_x_minus_w,
        "s2_tau_minus_w": s.s2_tau_minus_w,
        "w_spans_x": pop.w_spans_x(),
        "x_spans_w": pop.x_spans_w(),
        "adjustment_helps": adjustment_helps(&pop, args.r1)?,
        "unadjusted": law(&zero)?,
        "gamma_tilde": law(&s.gamma_tilde)?,
        "min_variance": law(&min_variance_gamma(&pop, args.r1, lk, la)?)?,
        "gains": gains,
    }))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => ScenarioConfig::from_json(&fs::read_to_string(path)?)?,
        None => {
            if args.model != "example1" {
                return Err(Error::InvalidArgument(format!(
                    "model {:?} needs a config file (only example1 has flags)",
                    args.model
                )));
            }
            let kind = match args.design.as_str() {
                "cre" => DesignKind::Cre,
                "rem" => DesignKind::Rem,
                other => return Err(Error::InvalidArgument(format!("unknown design {other:?}"))),
            };
            let (threshold, threshold_quantile) = match (kind, args.threshold.threshold, args.threshold.threshold_quantile) {
                (DesignKind::Rem, None, None) => (None, Some(0.001)),
                (_, t, q) => (t, q),
            };
            let cfg = ScenarioConfig {
                model: ModelSpec::Example1 { n: args.n, rho: args.rho },
                design: DesignConfig {
                    kind,
                    r1: args.r1,
                    threshold,
                    threshold_quantile,
                    max_attempts: DEFAULT_MAX_ATTEMPTS,
                },
                estimators: args.estimators.iter().map(|s| EstimatorSpec::parse(s)).collect::<Result<_>>()?,
                reps: args.reps,
                alpha: args.alpha,
                master_seed: args.seed,
                knows_design: args.knows_design,
            };
            cfg.validate()?;
            cfg
        }
    };
    let report = run_monte_carlo(&cfg)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), &text)?;
        for s in &report.estimators {
            fs::write(dir.join(format!("histogram_{}.csv", s.estimator.name())), s.histogram.to_csv())?;
        }
    }
    println!("{text}");
    Ok(())
}

fn se_table(args: &SeTableArgs) -> Result<()> {
    let t = reproduce_table1(args.n, args.reps, args.seed)?;
    if args.json {
        print_json(&serde_json::to_value(&t)?)
    } else {
        println!("{t}");
        Ok(())
    }
}

fn coverage(args: &CoverageArgs) -> Result<()> {
    let rows = reproduce_sec81(&args.n_grid, args.reps, args.seed)?;
    let mut out = format!("{}\n", Sec81Row::csv_header());
    for r in &rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    match &args.out {
        Some(p) => fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Design(a) => design(a),
        Command::Analyze(a) => analyze(a),
        Command::Asymptotics(a) => asymptotics(a),
        Command::Simulate(a) => simulate(a),
        Command::SeTable(a) => se_table(a),
        Command::Coverage(a) => coverage(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::RejectionCap { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
