//! `lfcoal`: simulate, sample, score and fit linear-fractional coalescent
//! point process trees.

mod output;
mod validate;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lfcoal::inference::{
    fit_with, loglik_surface_with, per_tree_loglik, write_surface_csv, Conditioning, FitOptions,
    GridMap, ObservationSet, Scheme,
};
use lfcoal::model::{coalescent_pmf, coalescent_tail, thinned_pmf, thinned_tail};
use lfcoal::sim::{
    bernoulli_mask, coalescent_depths_of, simulate_forward_bgw, subsample_depths, uniform_mask,
    CppSampler, ForwardOutcome, SimError,
};
use lfcoal::tree::{write_depth_seqs, write_newick_file, TreeFormat};
use lfcoal::{stream_rng, DepthSeq, LfParams};
use rayon::prelude::*;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lfcoal", version, about = "Linear-fractional coalescent point process toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for Monte-Carlo replicates and grid evaluations.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Clone, Copy)]
struct ModelArgs {
    /// Geometric parameter of the offspring law.
    #[arg(long)]
    p: f64,
    /// Probability of at least one child.
    #[arg(long)]
    r: f64,
}

#[derive(Args)]
struct InputArgs {
    /// Tree file, JSON-lines or Newick.
    #[arg(long = "in")]
    input: PathBuf,
    /// Input format; sniffed from the content when absent.
    #[arg(long, value_enum)]
    format: Option<FileFormat>,
}

#[derive(Args)]
struct SchemeArgs {
    /// Observation scheme: full, bernoulli:<y> or uniform.
    #[arg(long, default_value = "full", value_parser = parse_obs_scheme)]
    scheme: Scheme,
    #[arg(long, value_enum, default_value = "on-tip-count")]
    conditioning: CondArg,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate CPP(T) trees as JSON-lines records.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Tree height in generations.
        #[arg(long = "T")]
        height: u64,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Draw i.i.d. coalescent times, or grow a forward branching process
        /// conditioned on survival.
        #[arg(long, value_enum, default_value = "cpp")]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Subsample the tips of every input tree.
    Sample {
        /// bernoulli:<y> or uniform:<k>.
        #[arg(long, value_parser = parse_sample_scheme)]
        scheme: SampleScheme,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-tree log-likelihoods as CSV.
    Likelihood {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum-likelihood estimate of (p, r).
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Grid points per axis of the coarse search.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        /// Simplex diameter at which refinement stops.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-likelihood on a rectangular (p, r) grid as CSV.
    Surface {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        /// lo:hi
        #[arg(long, default_value = "0:1", value_parser = parse_range)]
        p_range: (f64, f64),
        /// lo:hi
        #[arg(long, default_value = "0:1", value_parser = parse_range)]
        r_range: (f64, f64),
        /// Points per axis, either N or NPxNR.
        #[arg(long, default_value = "21", value_parser = parse_steps)]
        steps: (usize, usize),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle checks and adjudication reports.
    Validate {
        #[arg(long, value_enum, default_value = "all")]
        suite: validate::Suite,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 0.8)]
        r: f64,
        /// Monte-Carlo replicates of the randomized checks.
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON-lines report; the text report always goes to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the coalescent-time law, or its Bernoulli-thinned version.
    EmitDist {
        #[command(flatten)]
        model: ModelArgs,
        /// Sampling probability; the unthinned law when absent.
        #[arg(long)]
        y: Option<f64>,
        /// Largest n tabulated.
        #[arg(long, default_value_t = 20)]
        n_max: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert between JSON-lines and Newick.
    Convert {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        to: FileFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Cpp,
    Forward,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Jsonl,
    Newick,
}

impl From<FileFormat> for TreeFormat {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Jsonl => TreeFormat::JsonLines,
            FileFormat::Newick => TreeFormat::Newick,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CondArg {
    OnTipCount,
    Unconditioned,
}

impl From<CondArg> for Conditioning {
    fn from(c: CondArg) -> Self {
        match c {
            CondArg::OnTipCount => Conditioning::OnTipCount,
            CondArg::Unconditioned => Conditioning::Unconditioned,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum SampleScheme {
    Bernoulli(f64),
    Uniform(usize),
}

fn parse_probability(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(y) if y > 0.0 && y <= 1.0 => Ok(y),
        _ => Err(format!("'{s}' is not a probability in (0, 1]")),
    }
}

fn parse_sample_scheme(s: &str) -> Result<SampleScheme, String> {
    match s.split_once(':') {
        Some(("bernoulli", y)) => parse_probability(y).map(SampleScheme::Bernoulli),
        Some(("uniform", k)) => match k.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(SampleScheme::Uniform(k)),
            _ => Err(format!("'{k}' is not a positive sample size")),
        },
        _ => Err("expected bernoulli:<y> or uniform:<k>".into()),
    }
}

fn parse_obs_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "full" => Ok(Scheme::Full),
        "uniform" => Ok(Scheme::Uniform),
        _ => match s.split_once(':') {
            Some(("bernoulli", y)) => parse_probability(y).map(Scheme::Bernoulli),
            _ => Err("expected full, bernoulli:<y> or uniform".into()),
        },
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let bad = || format!("'{s}' is not a range lo:hi within [0, 1]");
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b) = (a.parse::<f64>().map_err(|_| bad())?, b.parse::<f64>().map_err(|_| bad())?);
    if 0.0 <= a && a <= b && b <= 1.0 {
        Ok((a, b))
    } else {
        Err(bad())
    }
}

fn parse_steps(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("'{s}' is not N or NPxNR with positive counts");
    let (a, b) = match s.split_once('x') {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    match (a.parse::<usize>(), b.parse::<usize>()) {
        (Ok(a), Ok(b)) if a > 0 && b > 0 => Ok((a, b)),
        _ => Err(bad()),
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage { message: String, remedy: String },
    Compute(String),
}

impl CliError {
    pub fn io(target: &str, e: io::Error) -> Self {
        CliError::Compute(format!("writing {target}: {e}"))
    }

    fn compute(e: impl std::fmt::Display) -> Self {
        CliError::Compute(e.to_string())
    }
}

/// Parameters for simulation: `0 < p < r <= 1`.
fn supercritical(m: ModelArgs) -> Result<LfParams, CliError> {
    LfParams::supercritical(m.p, m.r).map_err(|e| CliError::Usage {
        message: e.to_string(),
        remedy: "choose 0 < p < r <= 1".into(),
    })
}

fn valid(m: ModelArgs) -> Result<LfParams, CliError> {
    LfParams::new(m.p, m.r).map_err(|e| CliError::Usage {
        message: e.to_string(),
        remedy: "choose 0 < p < 1, 0 <= r <= 1 and p != r".into(),
    })
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        eprintln!("seed: {seed} (pass --seed {seed} to reproduce)");
        seed
    })
}

/// Grid evaluations on a rayon pool; output order follows the input.
struct Pool<'a>(&'a rayon::ThreadPool);

impl GridMap for Pool<'_> {
    fn map(&self, points: &[LfParams], f: &(dyn Fn(&LfParams) -> f64 + Sync)) -> Vec<f64> {
        self.0.install(|| points.par_iter().map(f).collect())
    }
}

fn observations(input: &InputArgs, scheme: &SchemeArgs) -> Result<ObservationSet, CliError> {
    let trees = output::read_input(&input.input, input.format.map(Into::into))?;
    Ok(ObservationSet::new(scheme.scheme, trees)
        .map_err(CliError::compute)?
        .with_conditioning(scheme.conditioning.into()))
}

fn write_trees(out: Option<&Path>, trees: &[DepthSeq]) -> Result<(), CliError> {
    output::emit(out, |w| write_depth_seqs(w, trees))
}

fn simulate_one(
    params: &LfParams,
    sampler: &CppSampler,
    height: u64,
    method: Method,
    seed: u64,
    rep: usize,
) -> Result<DepthSeq, SimError> {
    let mut rng = stream_rng(seed, rep as u64);
    match method {
        Method::Cpp => Ok(sampler.simulate(&mut rng)),
        Method::Forward => loop {
            if let ForwardOutcome::Survived(g) = simulate_forward_bgw(params, height, &mut rng)? {
                return Ok(coalescent_depths_of(&g));
            }
        },
    }
}

fn sample_one(seq: &DepthSeq, scheme: SampleScheme, seed: u64, index: usize) -> Result<Option<DepthSeq>, SimError> {
    let mut rng = stream_rng(seed, index as u64);
    let n = seq.tip_count();
    let mask = match scheme {
        SampleScheme::Bernoulli(y) => bernoulli_mask(n, y, &mut rng)?,
        SampleScheme::Uniform(k) if k > n => return Ok(None),
        SampleScheme::Uniform(k) => uniform_mask(n, k, &mut rng)?,
    };
    if mask.count() == 0 {
        return Ok(None);
    }
    subsample_depths(seq, &mask).map(Some)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage {
            message: "--threads must be at least 1".into(),
            remedy: "pass --threads 1 or more".into(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(CliError::compute)?;
    match cli.command {
        Command::Simulate { model, height, reps, seed, method, out } => {
            let params = supercritical(model)?;
            if height == 0 {
                return Err(CliError::Usage {
                    message: "--T must be at least 1".into(),
                    remedy: "pass a positive tree height".into(),
                });
            }
            let seed = resolve_seed(seed);
            let sampler = CppSampler::new(&params, height).map_err(CliError::compute)?;
            let trees = pool
                .install(|| {
                    (0..reps)
                        .into_par_iter()
                        .map(|i| simulate_one(&params, &sampler, height, method, seed, i))
                        .collect::<Result<Vec<_>, _>>()
                })
                .map_err(CliError::compute)?;
            write_trees(out.as_deref(), &trees)
        }
        Command::Sample { scheme, input, seed, out } => {
            let trees = output::read_input(&input.input, input.format.map(Into::into))?;
            let seed = resolve_seed(seed);
            let sampled = pool
                .install(|| {
                    trees
                        .par_iter()
                        .enumerate()
                        .map(|(i, seq)| sample_one(seq, scheme, seed, i))
                        .collect::<Result<Vec<_>, _>>()
                })
                .map_err(CliError::compute)?;
            let skipped = sampled.iter().filter(|s| s.is_none()).count();
            if skipped > 0 {
                eprintln!("{skipped} tree(s) left no sampled tip and were dropped");
            }
            let kept: Vec<DepthSeq> = sampled.into_iter().flatten().collect();
            write_trees(out.as_deref(), &kept)
        }
        Command::Likelihood { model, input, scheme, out } => {
            let params = valid(model)?;
            let obs = observations(&input, &scheme)?;
            let values = per_tree_loglik(&params, &obs).map_err(CliError::compute)?;
            output::emit(out.as_deref(), |w| {
                writeln!(w, "tree,loglik")?;
                for (i, v) in values.iter().enumerate() {
                    writeln!(w, "{},{:.16e}", i + 1, v)?;
                }
                Ok(())
            })
        }
        Command::Fit { input, scheme, grid, max_iter, tol, out } => {
            let obs = observations(&input, &scheme)?;
            let options = FitOptions { grid, max_iter, tol };
            let result = fit_with(&obs, &options, &Pool(&pool)).map_err(CliError::compute)?;
            let record = serde_json::json!({
                "scheme": obs.scheme(),
                "conditioning": obs.conditioning(),
                "trees": obs.trees().len(),
                "options": options,
                "result": result,
            });
            output::emit(out.as_deref(), |w| {
                writeln!(w, "{}", serde_json::json!({"format": "lfcoal-fit", "version": 1}))?;
                writeln!(w, "{record}")
            })
        }
        Command::Surface { input, scheme, p_range, r_range, steps, out } => {
            let obs = observations(&input, &scheme)?;
            let points = loglik_surface_with(&obs, p_range, r_range, steps, &Pool(&pool))
                .map_err(CliError::compute)?;
            output::emit(out.as_deref(), |w| write_surface_csv(w, &points))
        }
        Command::Validate { suite, p, r, reps, seed, out } => {
            let params = supercritical(ModelArgs { p, r })?;
            let seed = resolve_seed(seed);
            let outcomes = validate::run(suite, &params, reps, seed, &pool)?;
            let mut stdout = io::stdout().lock();
            for o in &outcomes {
                for line in &o.lines {
                    writeln!(stdout, "{line}").map_err(|e| CliError::io("standard output", e))?;
                }
                writeln!(stdout, "[{}] {}", if o.pass { "PASS" } else { "FAIL" }, o.name)
                    .map_err(|e| CliError::io("standard output", e))?;
            }
            drop(stdout);
            if let Some(path) = out.as_deref() {
                output::emit(Some(path), |w| {
                    writeln!(w, "{}", serde_json::json!({"format": "lfcoal-validate", "version": 1}))?;
                    for o in &outcomes {
                        serde_json::to_writer(&mut *w, o)?;
                        writeln!(w)?;
                    }
                    Ok(())
                })?;
            }
            match outcomes.iter().all(|o| o.pass) {
                true => Ok(()),
                false => Err(CliError::Compute("one or more validation checks failed".into())),
            }
        }
        Command::EmitDist { model, y, n_max, out } => {
            let params = valid(model)?;
            if let Some(y) = y {
                parse_probability(&y.to_string()).map_err(|message| CliError::Usage {
                    message,
                    remedy: "pass --y in (0, 1]".into(),
                })?;
            }
            let row = |n: u64| match y {
                None => (coalescent_pmf(&params, n), coalescent_tail(&params, n)),
                Some(y) => (thinned_pmf(&params, y, n), thinned_tail(&params, y, n)),
            };
            output::emit(out.as_deref(), |w| {
                writeln!(w, "n,pmf,tail")?;
                for n in 0..=n_max {
                    let (pmf, tail) = row(n);
                    writeln!(w, "{n},{pmf:.16e},{tail:.16e}")?;
                }
                Ok(())
            })
        }
        Command::Convert { input, to, out } => {
            let trees = output::read_input(&input.input, input.format.map(Into::into))?;
            match to {
                FileFormat::Jsonl => write_trees(out.as_deref(), &trees),
                FileFormat::Newick => output::emit(out.as_deref(), |w| write_newick_file(w, &trees)),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.use_stderr() {
                true => ExitCode::from(1),
                false => ExitCode::SUCCESS,
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage { message, remedy }) => {
            eprintln!("error: {message}\n  {remedy}");
            ExitCode::from(1)
        }
        Err(CliError::Compute(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
