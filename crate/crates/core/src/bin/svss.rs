//! Command-line front end: `approx-bench`, `train`, `predict`, `synth`.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage, 3 data or file error,
//! 4 numerical failure, 5 dense size cap exceeded.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use svss::bench::{run_approx_bench, BenchConfig, Policy, WeightInit};
use svss::data::{
    load_csv, provenance_comments, split, split_indices, standardize, synth_sm, write_csv, Dataset, InputLayout,
    RawTable, Standardizer, TargetColumn,
};
use svss::inference::{Checkpoint, DataSource, InitStrategy, Mode, TrainConfig, Trainer};
use svss::regression::{exact_predict, metrics, ssgp_predict, ssgp_predict_averaged, write_predictions, Predictive};
use svss::sampling::{allocate, draw_sample, Allocation, VarianceFactor, DEFAULT_MAX_PAIRS};
use svss::{Error, Result, SmParams, SplitRng};

#[derive(Parser)]
#[command(name = "svss", version, about = "Spectral mixture kernel learning with sampled spectral points")]
struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, env = "SVSS_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relative Frobenius error of the feature-map gram under each allocation policy.
    ///
    /// Constraints: every M must be at least Q; rates lie in (0, 1] and only
    /// affect the ws policy; --data replaces the default grid of --n points.
    ApproxBench(BenchArgs),
    /// Fit kernel parameters and write a checkpoint plus a per-iteration trace.
    ///
    /// --ws and --ng require --mode svss.
    Train(TrainArgs),
    /// Predict with a checkpoint and print the metrics line "rmse mnll".
    Predict(PredictArgs),
    /// Draw a dataset from a known one-dimensional SM kernel.
    ///
    /// --w, --mu and --sigma must list the same number of components.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Target column: zero-based index, header name, or "last".
    #[arg(long, default_value = "last")]
    target_col: TargetColumn,
    /// The CSV has no header line.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    q: usize,
    #[arg(long, value_delimiter = ',', default_value = "20,60")]
    m_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "equal,weight,ws")]
    policies: Vec<Policy>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    rate_list: Vec<f64>,
    /// uniform0-20 or uniform0.99-1.01.
    #[arg(long, default_value = "uniform0-20")]
    weight_init: WeightInit,
    /// Variance factor of the ws policy: exact or published.
    #[arg(long, default_value = "exact")]
    ws_variance: VarianceFactor,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_PAIRS)]
    max_pairs: usize,
    /// Use the (standardized) inputs of this CSV instead of the grid.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    data_args: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ss,
    SsRp,
    Svss,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Ss => Mode::Ss,
            ModeArg::SsRp => Mode::SsRp,
            ModeArg::Svss => Mode::Svss,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    data_args: DataArgs,
    #[arg(long, value_enum, default_value = "svss")]
    mode: ModeArg,
    #[arg(long)]
    ws: bool,
    /// Variance factor of the Ws allocation: exact or published.
    #[arg(long, default_value = "exact")]
    ws_variance: VarianceFactor,
    #[arg(long)]
    ng: bool,
    #[arg(long, default_value_t = 4)]
    q: usize,
    #[arg(long, default_value_t = 60)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pair_rate: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_PAIRS)]
    max_pairs: usize,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial parameters: spectral (fitted to the data's periodogram) or uniform.
    #[arg(long, default_value = "spectral")]
    init: InitStrategy,
    /// Hold out part of --data: train on this fraction, evaluate on the rest.
    #[arg(long)]
    split: Option<f64>,
    /// Seed of the train/test shuffle (defaults to --seed).
    #[arg(long)]
    split_seed: Option<u64>,
    /// Separate evaluation CSV (same columns as --data) for the rmse_test trace column.
    #[arg(long, conflicts_with = "split")]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    #[arg(long)]
    out_trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    Ssgp,
    Exact,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test CSV; defaults to the held-out split recorded in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    data_args: DataArgs,
    /// Training CSV; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ssgp")]
    engine: Engine,
    /// Spectral samples averaged by the ssgp engine.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report predictions and metrics in raw target units instead of standardized units.
    #[arg(long)]
    raw_units: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Grid,
    Uniform,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    w: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    mu: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    sigma: Vec<f64>,
    /// Observation noise standard deviation.
    #[arg(long)]
    noise: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "grid")]
    layout: LayoutArg,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    range: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let result = match cli.command {
        Command::ApproxBench(a) => cmd_approx_bench(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.into(), source: e }
}

fn load(path: &Path, args: &DataArgs) -> Result<RawTable> {
    let table = load_csv(path, &args.target_col, !args.no_header)?;
    if table.rejected_rows > 0 {
        eprintln!(
            "warning: {} rows of {} contained NaN or infinite values and were skipped",
            table.rejected_rows,
            path.display()
        );
    }
    Ok(table)
}

fn warn_all(ds: &Dataset) {
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_approx_bench(a: BenchArgs) -> Result<()> {
    let x = match &a.data {
        Some(p) => {
            let ds = standardize(&load(p, &a.data_args)?, p.display().to_string())?;
            warn_all(&ds);
            ds.x
        }
        None => BenchConfig::grid(a.n),
    };
    let cfg = BenchConfig {
        x,
        q: a.q,
        m_list: a.m_list,
        policies: a.policies,
        rate_list: a.rate_list,
        weight_init: a.weight_init,
        ws_factor: a.ws_variance,
        trials: a.trials,
        seed: a.seed,
        max_pairs: Some(a.max_pairs),
    };
    let rows = run_approx_bench(&cfg)?;
    let mut out = create(&a.out)?;
    let io = io_err(&a.out);
    writeln!(out, "policy,M,Q,rate,trial,rel_error,wall_ms").map_err(&io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.policy as u8, r.m, r.q, r.rate, r.trial, r.rel_error, r.wall_ms
        )
        .map_err(&io)?;
    }
    out.flush().map_err(&io)?;
    eprintln!("policy codes: 0 = equal, 1 = weight, 2 = ws");
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let raw = load(&a.data, &a.data_args)?;
    let split_seed = a.split_seed.unwrap_or(a.seed);
    let (train, test) = match a.split {
        Some(f) => {
            let (tr, te) = split(&raw, f, split_seed)?;
            (tr, Some(te))
        }
        None => (standardize(&raw, a.data.display().to_string())?, None),
    };
    warn_all(&train);
    let test = match (&a.eval_data, test) {
        (Some(p), _) => {
            let t = load(p, &a.data_args)?;
            Some(train.standardizer.apply(&t, p.display().to_string()))
        }
        (None, t) => t,
    };

    let config = TrainConfig {
        mode: a.mode.into(),
        use_ws: a.ws,
        ws_factor: a.ws_variance,
        use_ng: a.ng,
        mc_samples: a.mc_samples,
        pair_rate: a.pair_rate,
        max_pairs: Some(a.max_pairs),
        iterations: a.iters,
        step_size: a.step,
        seed: a.seed,
        m: a.m,
        q: a.q,
        init: a.init,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&train.x, &train.y, config.clone())?;
    let mut eval_rng = SplitRng::new(a.seed).split(4);
    let mut trace = match &a.out_trace {
        Some(p) => {
            let mut w = create(p)?;
            let header = if test.is_some() {
                "iter,objective,kl,rmse_test,wall_ms"
            } else {
                "iter,objective,kl,wall_ms"
            };
            writeln!(w, "{header}").map_err(io_err(p))?;
            Some((w, p.clone()))
        }
        None => None,
    };
    for _ in 0..a.iters {
        let row = trainer.step()?;
        let rmse = match &test {
            Some(t) => {
                let params = trainer.params();
                let sample = draw_sample(&params, &trainer.state().allocation, &mut eval_rng)?;
                let pred = ssgp_predict(&params, &sample, &train.x, &train.y, &t.x)?;
                Some(metrics(&pred, &t.y)?.0)
            }
            None => None,
        };
        if let Some((w, p)) = &mut trace {
            let rmse = rmse.map_or(String::new(), |r| format!("{r},"));
            writeln!(w, "{},{},{},{rmse}{}", row.iter, row.objective, row.kl, row.wall_ms).map_err(io_err(p))?;
        }
    }
    if let Some((mut w, p)) = trace {
        w.flush().map_err(io_err(&p))?;
    }

    let ckpt = Checkpoint {
        config,
        iterations: trainer.state().iteration,
        params: trainer.params(),
        prior: trainer.prior().clone(),
        allocation: trainer.state().allocation.counts.clone(),
        standardizer: Some(train.standardizer.clone()),
        data: Some(DataSource {
            path: a.data.display().to_string(),
            target: a.data_args.target_col.to_string(),
            header: !a.data_args.no_header,
            split_fraction: a.split,
            split_seed: a.split.map(|_| split_seed),
        }),
    };
    ckpt.save(&a.out_checkpoint)
}

/// Training rows (and held-out rows, if the checkpoint recorded a split), standardized.
fn checkpoint_data(ckpt: &Checkpoint, override_path: Option<&PathBuf>) -> Result<(Dataset, Option<Dataset>)> {
    let src = ckpt
        .data
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("no training data recorded; pass --train-data".into()))?;
    let path = override_path.cloned().unwrap_or_else(|| PathBuf::from(&src.path));
    let target: TargetColumn = src.target.parse()?;
    let raw = load_csv(&path, &target, src.header)?;
    let st = ckpt
        .standardizer
        .clone()
        .ok_or_else(|| Error::Checkpoint("no standardizer recorded".into()))?;
    match (src.split_fraction, src.split_seed) {
        (Some(f), Some(seed)) => {
            let (tr, te) = split_indices(raw.len(), f, seed)?;
            let pick = |rows: &[usize]| RawTable {
                x: DMatrix::from_fn(rows.len(), raw.x.ncols(), |i, j| raw.x[(rows[i], j)]),
                y: DVector::from_fn(rows.len(), |i, _| raw.y[rows[i]]),
                feature_names: raw.feature_names.clone(),
                target_name: raw.target_name.clone(),
                rejected_rows: 0,
            };
            Ok((st.apply(&pick(&tr), "train"), Some(st.apply(&pick(&te), "test"))))
        }
        _ => Ok((st.apply(&raw, "train"), None)),
    }
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (train, held_out) = checkpoint_data(&ckpt, a.train_data.as_ref())?;
    let st: &Standardizer = &train.standardizer;
    let test = match &a.data {
        Some(p) => st.apply(&load(p, &a.data_args)?, p.display().to_string()),
        None => held_out.ok_or_else(|| Error::Config("no --data given and the checkpoint has no held-out split".into()))?,
    };
    if test.x.ncols() != ckpt.params.dims() {
        return Err(Error::Checkpoint(format!(
            "test data has {} inputs, checkpoint expects {}",
            test.x.ncols(),
            ckpt.params.dims()
        )));
    }
    let params: &SmParams = &ckpt.params;
    let mut pred = match a.engine {
        Engine::Exact => exact_predict(params, &train.x, &train.y, &test.x)?,
        Engine::Ssgp => {
            let counts = &ckpt.allocation;
            let total: usize = counts.iter().sum();
            let ratios: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
            let alloc: Allocation = allocate(&ratios, total)?;
            debug_assert_eq!(&alloc.counts, counts);
            let mut rng = SplitRng::new(a.seed);
            if a.samples <= 1 {
                let s = draw_sample(params, &alloc, &mut rng)?;
                ssgp_predict(params, &s, &train.x, &train.y, &test.x)?
            } else {
                ssgp_predict_averaged(params, &alloc, a.samples, &mut rng, &train.x, &train.y, &test.x)?
            }
        }
    };
    let mut y = test.y.clone();
    if a.raw_units {
        let s2 = st.y_std * st.y_std;
        pred = Predictive {
            mean: st.restore_y(&pred.mean),
            variance: pred.variance * s2,
            log_density: None,
        };
        y = st.restore_y(&y);
    }
    pred.score(&y)?;
    write_predictions(&a.out, &pred, Some(&y))?;
    let (rmse, mnll) = metrics(&pred, &y)?;
    println!("{rmse} {mnll}");
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let q = a.q.unwrap_or(a.w.len());
    if a.w.len() != q || a.mu.len() != q || a.sigma.len() != q {
        return Err(Error::Config(format!(
            "inconsistent component counts: q = {q}, {} weights, {} means, {} scales",
            a.w.len(),
            a.mu.len(),
            a.sigma.len()
        )));
    }
    let [lo, hi] = a.range[..] else {
        return Err(Error::Config("--range takes two values lo,hi".into()));
    };
    let params = SmParams::one_dim(&a.w, &a.mu, &a.sigma, a.noise * a.noise)
        .map_err(|e| Error::Config(e.to_string()))?;
    let layout = match a.layout {
        LayoutArg::Grid => InputLayout::Grid,
        LayoutArg::Uniform => InputLayout::Uniform,
    };
    let table = synth_sm(&params, a.n, (lo, hi), layout, a.seed)?;
    write_csv(&a.out, &table, &provenance_comments(&params, a.seed))
}
