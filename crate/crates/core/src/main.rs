use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hetprobit::cli;
use hetprobit::config::{dgp_from_settings, study_from_settings, RunConfig, Settings};
use hetprobit::Result;

const CONFIG_HELP: &str = "\
Config files hold one `key = value` per line; `#` starts a comment.
Keys: data, out, seed, alpha, length_scale, iterations, burn_in, thin,
normalized_column, level, points, points_file, g_indices, group_by, n,
theta, alphas, replications. Command-line flags override the file.

Outputs of fit and predict (in --out, a directory):
  draws.csv        iteration, theta.<name>..., log_likelihood, g.<i>..., g_star.<k>...
  summary.csv      key,value with n, normalized_column, alpha, length_scale,
                   iterations, burn_in, thin, seed, retained, level,
                   theta.<name>.{median,lower,upper,mean,sd,ess},
                   predictive.<k>.{probability,decision}
  diagnostics.csv  parameter, mean, sd, ess, lag1_autocorrelation
  predictions.csv  point, covariates, probability, decision,
                   probability_lower, probability_upper (predict only)

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.";

#[derive(Parser)]
#[command(name = "hetprobit", version, about = "Binary choice under median independence via heteroskedastic probit", after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Matérn smoothness
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    length_scale: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Covariate whose coefficient is fixed to 1 (default: last covariate)
    #[arg(long)]
    normalized_column: Option<String>,
    /// Output directory (fit, predict) or file (simulate, replicate-study)
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("seed", self.seed.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("length_scale", self.length_scale.map(|v| v.to_string())),
            ("iterations", self.iterations.map(|v| v.to_string())),
            ("burn_in", self.burn_in.map(|v| v.to_string())),
            ("thin", self.thin.map(|v| v.to_string())),
            ("normalized_column", self.normalized_column.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ]
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Data CSV with a `y` column
    #[arg(long)]
    data: Option<PathBuf>,
    /// Credible level of intervals
    #[arg(long)]
    level: Option<f64>,
    /// 1-based observations whose g draws go to draws.csv, comma-separated
    #[arg(long)]
    g_indices: Option<String>,
    /// Discrete covariates; g is fitted separately per combination of values
    #[arg(long)]
    group_by: Option<String>,
}

impl FitArgs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        let mut v = self.common.pairs();
        v.push(("data", self.data.as_ref().map(|p| p.display().to_string())));
        v.push(("level", self.level.map(|x| x.to_string())));
        v.push(("g_indices", self.g_indices.clone()));
        v.push(("group_by", self.group_by.clone()));
        v
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior and write draws, summary and diagnostics
    Fit(FitArgs),
    /// Fit with prediction points and report predictive probabilities and decisions
    Predict {
        #[command(flatten)]
        fit: FitArgs,
        /// Inline points in data column order, e.g. "0.5,1.2;1,0"
        #[arg(long)]
        points: Option<String>,
        /// CSV of points with a header naming the covariates
        #[arg(long)]
        points_file: Option<PathBuf>,
    },
    /// Write a dataset from the simulation design (header y,x1,x2)
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Coefficient on x2
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo study: MSE, coverage and length of the interval for theta
    ReplicateStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated smoothness values
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        level: Option<f64>,
        /// Quick tier: n = 100, 50 replications, 4000/2000 iterations, alpha 1.5
        #[arg(long)]
        fast: bool,
        /// Report progress on stderr
        #[arg(long)]
        verbose: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => {
            let settings = Settings::layered(args.common.config.as_deref(), &args.pairs())?;
            let config = RunConfig::from_settings(&settings)?;
            let out = cli::fit(&config)?;
            print!("{}", cli::render_summary(&out, config.level));
        }
        Command::Predict {
            fit,
            points,
            points_file,
        } => {
            let mut pairs = fit.pairs();
            pairs.push(("points", points));
            pairs.push(("points_file", points_file.map(|p| p.display().to_string())));
            let settings = Settings::layered(fit.common.config.as_deref(), &pairs)?;
            let config = RunConfig::from_settings(&settings)?;
            if config.prediction_points.is_none() {
                return Err(hetprobit::Error::Validation(
                    "predict needs --points or --points-file".into(),
                ));
            }
            let out = cli::fit(&config)?;
            print!("{}", cli::render_summary(&out, config.level));
        }
        Command::Simulate {
            config,
            n,
            theta,
            seed,
            out,
        } => {
            let pairs = [
                ("n", n.map(|v| v.to_string())),
                ("theta", theta.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
                ("out", out.map(|p| p.display().to_string())),
            ];
            let settings = Settings::layered(config.as_deref(), &pairs)?;
            let (spec, path) = dgp_from_settings(&settings)?;
            cli::simulate(&spec, &path)?;
        }
        Command::ReplicateStudy {
            common,
            n,
            alphas,
            replications,
            theta,
            level,
            fast,
            verbose,
        } => {
            let mut pairs = common.pairs();
            pairs.push(("n", n.map(|v| v.to_string())));
            pairs.push(("alphas", alphas));
            pairs.push(("replications", replications.map(|v| v.to_string())));
            pairs.push(("theta", theta.map(|v| v.to_string())));
            pairs.push(("level", level.map(|v| v.to_string())));
            let settings = Settings::layered(common.config.as_deref(), &pairs)?;
            let (config, path) = study_from_settings(&settings, fast)?;
            let result = cli::replicate_study(&config, &path, verbose)?;
            print!("{}", cli::render_study(&result));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
