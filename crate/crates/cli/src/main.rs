use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;
mod io;
mod model_file;
mod query;

/// Grassmann distribution for categorical and ordinal data.
#[derive(Debug, Parser)]
#[command(name = "grasscat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a structured Grassmann model by maximum likelihood.
    Fit(FitArgs),
    /// Mean, covariance and correlation of the dummy variables.
    Moments(ModelOut),
    /// Joint, marginal or conditional probability of record patterns.
    Prob(ProbArgs),
    /// Exact samples by enumeration of the allowed states.
    Sample(SampleArgs),
    /// Latent factor analysis.
    #[command(subcommand)]
    Fa(FaCommand),
    /// Mixed continuous/binary model queries.
    #[command(subcommand)]
    Mixed(MixedCommand),
    /// Cross-check a model against brute-force enumeration.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Lint a schema and optionally a data file.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Positivity {
    Auto,
    Dominance,
    Enumeration,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Data CSV with one integer column per variable.
    #[arg(long)]
    pub data: PathBuf,
    /// Auxiliary dimension, or `sweep` to pick the smallest one whose NLL is
    /// within --saturation-tol of the best over 0..=q.
    #[arg(long, default_value = "sweep")]
    pub latent_aux: String,
    /// NLL slack, in nats, for the sweep.
    #[arg(long, default_value_t = 1.0)]
    pub saturation_tol: f64,
    /// Random initializations per fit; the lowest NLL wins.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Seed for the initializations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration limit per optimization.
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Gradient tolerance on the per-observation NLL.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// How nonnegativity of the probabilities is enforced.
    #[arg(long, value_enum, default_value = "auto")]
    pub positivity: Positivity,
    /// Pseudo-count given to every allowed state in enumeration mode.
    #[arg(long, default_value_t = grasscat::fit::BARRIER_KAPPA)]
    pub barrier_kappa: f64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit report JSON (stdout when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Model correlation CSV (defaults to `<out stem>.correlation.csv`).
    #[arg(long)]
    pub correlation: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelOut {
    /// Model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbArgs {
    /// Model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Pattern such as `Edu>=3` or `Age=2,Sex=1`.
    #[arg(long)]
    pub query: String,
    /// Conditioning pattern.
    #[arg(long, default_value = "")]
    pub given: String,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Number of rows to draw.
    #[arg(long)]
    pub n: usize,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FaDataArgs {
    /// Schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Data CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Real-valued data columns forming the continuous block.
    #[arg(long, value_delimiter = ',')]
    pub continuous: Vec<String>,
    /// Random initializations per fit; the lowest NLL wins.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Seed for the initializations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration limit per optimization.
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Gradient tolerance on the per-observation NLL.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Drop the equal-norm constraint on combined loading vectors.
    #[arg(long)]
    pub no_equal_norm: bool,
}

#[derive(Debug, Subcommand)]
pub enum FaCommand {
    /// Fit with a fixed latent dimension or pick it by BIC.
    Fit {
        #[command(flatten)]
        data: FaDataArgs,
        /// Number of latent dimensions.
        #[arg(long, conflicts_with = "bic_range", required_unless_present = "bic_range")]
        latent_dim: Option<usize>,
        /// Inclusive range such as `0..3`.
        #[arg(long)]
        bic_range: Option<String>,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Report JSON (stdout when omitted).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// BIC table over a range of latent dimensions.
    Bic {
        #[command(flatten)]
        data: FaDataArgs,
        /// Inclusive range such as `0..3`.
        #[arg(long)]
        bic_range: String,
        /// Also write the selected model.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report JSON (stdout when omitted).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Factor scores, combined loadings and an SVG biplot.
    Biplot {
        /// Factor model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Data CSV the scores are computed for.
        #[arg(long)]
        data: PathBuf,
        /// Biplot SVG to write.
        #[arg(long)]
        out_svg: PathBuf,
        /// Scores CSV: one row per distinct record.
        #[arg(long)]
        out_scores: PathBuf,
        /// Combined loading vectors CSV.
        #[arg(long)]
        out_loadings: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum MixedCommand {
    /// Densities at a point. Indices not listed as given or marginalized
    /// are the free ones.
    Eval {
        /// Mixed model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Full continuous vector, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        /// Full binary vector, comma separated 0/1.
        #[arg(long, value_delimiter = ',')]
        y: Vec<u8>,
        /// Continuous indices conditioned on.
        #[arg(long, value_delimiter = ',')]
        given_x: Vec<usize>,
        /// Binary indices conditioned on.
        #[arg(long, value_delimiter = ',')]
        given_y: Vec<usize>,
        /// Continuous indices integrated out.
        #[arg(long, value_delimiter = ',')]
        marg_x: Vec<usize>,
        /// Binary indices summed out.
        #[arg(long, value_delimiter = ',')]
        marg_y: Vec<usize>,
        /// Output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Compare closed forms with enumeration; exit 2 above --tol.
    Check {
        /// Model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Largest tolerated discrepancy.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Data CSV to check against the schema.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Real-valued columns allowed in the data.
    #[arg(long, value_delimiter = ',')]
    pub continuous: Vec<String>,
}

const EXIT_USAGE: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Moments(a) => commands::moments(&a),
        Command::Prob(a) => commands::prob(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Fa(c) => commands::fa(&c),
        Command::Mixed(c) => commands::mixed(&c),
        Command::Oracle(c) => commands::oracle(&c),
        Command::Validate(a) => commands::validate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
