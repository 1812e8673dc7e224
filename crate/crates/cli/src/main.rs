use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use reglearn::error::{Error, Result};
use reglearn::forward::GridImage;
use reglearn::nnet::{gradient_check, Mode, Network, Tensor, GRADCHECK_FLOOR};
use reglearn::pipeline::{
    evaluate_stage, generate_stage, predict_parameters, read_tensor, thread_pool, train_stage, write_tensor,
    ArtifactPaths, EvaluationReport, Experiment, ExperimentConfig, Model, Summary, METHODS,
};
use reglearn::regparam::{estimate_noise_level_2d, k_dp, relative_noise_level};
use reglearn::rng::RngStream;
use reglearn::solvers::rrgmres;

/// Learn regularization parameters from data and compare them with classical
/// parameter-choice rules.
#[derive(Parser, Debug)]
#[command(name = "reglearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses the available parallelism.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Artifact directory (overrides the config's output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Override the number of training samples.
    #[arg(long, global = true)]
    train_samples: Option<usize>,
    /// Override the number of validation samples.
    #[arg(long, global = true)]
    val_samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate and label the training and validation sets.
    Generate,
    /// Train the network and baselines on the training set.
    Train,
    /// Evaluate every parameter choice on the validation set.
    Evaluate,
    /// Predict the parameter for one observation and reconstruct.
    Solve {
        /// Observation as a binary tensor file.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the reconstruction (default: <out>/solve/reconstruction.bin).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare backpropagated gradients of the configured network with
    /// central differences.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        coordinates: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Print the summary tables of an evaluation report.
    Report {
        /// Report directory (default: <out>/report).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `reglearn --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(common: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required".into()))?;
    if !path.exists() {
        return Err(Failure::Usage(format!("config file {} does not exist", path.display())));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(j) = common.train_samples {
        cfg.train_samples = j;
    }
    if let Some(j) = common.val_samples {
        cfg.val_samples = j;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    let paths = ArtifactPaths::new(cfg.output_dir());
    let pool = thread_pool(cli.common.threads)?;
    info!("experiment {} ({}), config hash {}", cfg.name, cfg.problem.kind(), cfg.hash());
    match &cli.command {
        Command::Generate => {
            generate_stage(&cfg, &paths, &pool)?;
            info!("datasets written under {}", paths.root.display());
        }
        Command::Train => {
            let model = train_stage(&cfg, &paths, &pool)?;
            if let Some(l) = model.baselines.oed_lambda {
                info!("λ_oed = {l:.6e}");
            }
            info!("model written to {}", paths.model().display());
        }
        Command::Evaluate => {
            let report = evaluate_stage(&cfg, &paths, &pool)?;
            info!("report written to {}", paths.report().display());
            if !cli.common.quiet {
                print_summary(&report.summary);
            }
        }
        Command::Solve { input, output } => {
            let out = output.clone().unwrap_or_else(|| paths.root.join("solve").join("reconstruction.bin"));
            solve(&cfg, &paths, input, &out)?;
        }
        Command::Gradcheck {
            coordinates,
            eps,
            tolerance,
        } => gradcheck(&cfg, *coordinates, *eps, *tolerance)?,
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or_else(|| paths.report());
            let report = EvaluationReport::read(&dir)?;
            print_summary(&report.summary);
        }
    }
    Ok(())
}

fn solve(cfg: &ExperimentConfig, paths: &ArtifactPaths, input: &Path, output: &Path) -> Result<()> {
    let model = Model::load(&paths.model())?;
    model.check_config(cfg)?;
    let (shape, b) = read_tensor(input)?;
    let want: usize = cfg.problem.input_shape().iter().product();
    if b.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "observation of shape {shape:?} has {} values, the model expects {want}",
            b.len()
        )));
    }
    let experiment = Experiment::build(&cfg.problem)?;
    let p = predict_parameters(cfg, &model, &[&b])?[0];
    let x = match &experiment {
        Experiment::Diffusion {
            op, side, safety, k_max, ..
        } => {
            let history = rrgmres(op, &b, *k_max, None)?;
            let k = (p.k as usize).clamp(1, history.len());
            println!("k_dnn {k}");
            let level = relative_noise_level(&b, estimate_noise_level_2d(&GridImage::new(*side, *side, b.clone())?)?)?;
            let dp = k_dp(&history, &b, level, *safety)?;
            println!("k_dp {}{}", dp.value, if dp.dp_failed { " (no iterate met the threshold)" } else { "" });
            history.iterates[k - 1].clone()
        }
        _ => {
            println!("lambda_dnn {:.16e}", p.lambda);
            if p.gamma.is_finite() {
                println!("gamma_dnn {:.16e}", p.gamma);
            }
            if p.lambda_elm.is_finite() {
                println!("lambda_elm {:.16e}", p.lambda_elm);
            }
            experiment.reconstruct(&b, p.lambda)?
        }
    };
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let out_shape = match cfg.problem.input_shape().as_slice() {
        [n] if *n == x.len() => vec![x.len()],
        _ => {
            let side = (x.len() as f64).sqrt().round() as usize;
            if side * side == x.len() {
                vec![side, side]
            } else {
                vec![x.len()]
            }
        }
    };
    write_tensor(output, &out_shape, &x)?;
    info!("reconstruction written to {}", output.display());
    Ok(())
}

fn gradcheck(cfg: &ExperimentConfig, coordinates: usize, eps: f64, tolerance: f64) -> Result<()> {
    let net = Network::new(cfg.network.clone())?;
    let mut stream = RngStream::new(cfg.seed).substream(7);
    let theta = net.init_params(&mut stream.substream(0));
    let mut buffers = net.initial_buffers();
    for v in buffers.iter_mut() {
        *v = 0.5 + stream.uniform(0.0, 1.0);
    }
    let mut shape = vec![3];
    shape.extend(&cfg.network.input_shape);
    let data: Vec<f64> = (0..shape.iter().product::<usize>()).map(|_| stream.normal(0.0, 1.0)).collect();
    let input = Tensor::new(shape, data)?;
    let mut worst: f64 = 0.0;
    for mode in [Mode::Train, Mode::Eval] {
        let r = gradient_check(&net, &theta, &buffers, &input, mode, coordinates, eps, cfg.seed)?;
        println!(
            "{mode:?}: max relative error {:.3e} over {} coordinates (worst {}, floor {GRADCHECK_FLOOR:e})",
            r.max_relative_error, r.coordinates_checked, r.worst_coordinate
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("parameters {}, max relative error {worst:.3e}", net.param_count());
    if worst >= tolerance {
        return Err(Error::InvalidArgument(format!(
            "gradient check failed: {worst:.3e} >= {tolerance:e}"
        )));
    }
    Ok(())
}

fn print_summary(s: &Summary) {
    println!("experiment {} ({} samples, {} failed, config {})", s.experiment, s.samples, s.failed, &s.config_hash[..12]);
    println!(
        "{:<6} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "method", "count", "param_med", "l2_mean", "l2_median", "l2_q25", "l2_q75", "l1_median"
    );
    for name in METHODS {
        if let Some(m) = s.methods.get(name) {
            println!(
                "{:<6} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                name, m.err_l2.count, m.param.median, m.err_l2.mean, m.err_l2.median, m.err_l2.q25, m.err_l2.q75, m.err_l1.median
            );
        }
    }
    println!("oracle suboptimal on {} samples; DP failures {}", s.oracle_suboptimal, s.dp_failures);
    if let Some(r) = s.gamma_pearson {
        println!("gamma: Pearson correlation {r:.4}");
    }
    if let Some(st) = &s.stopping {
        println!(
            "stopping: median |k_dnn - k_opt| {}, share within 10% of optimal error {:.3}, median k_dp - k_opt {}",
            st.median_abs_dnn_minus_opt,
            st.frac_dnn_within_factor,
            st.median_dp_minus_opt.map_or("n/a".to_string(), |v| v.to_string())
        );
    }
}
