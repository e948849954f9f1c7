use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use robust_boost::attack::{attack_point, min_radius_estimate, AttackConfig};
use robust_boost::certify::{certify_multiclass, evaluate, evaluate_multiclass, RobustnessReport};
use robust_boost::dataset::{
    load_dataset, prepare_task, ClassSpec, DataFormat, LoadOptions, Normalization, PrepareOptions, PreparedTask,
    Split,
};
use robust_boost::loss::LossKind;
use robust_boost::model_io::{export_report, load_model, save_model, SweepRow};
use robust_boost::train::{default_rounds, train, TrainConfig, TrainMode};
use robust_boost::{Model, ModelKind, Task};

#[derive(Parser, Debug)]
#[command(name = "robust-boost", version, about = "Robust boosted stumps and trees under l-inf perturbations")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "ROBUST_BOOST_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write it as JSON.
    Train(TrainArgs),
    /// Print a certificate for every test point.
    Certify(EvalArgs),
    /// Run the cube attack on every test point.
    Attack(AttackArgs),
    /// Compute TE / LRTE / URTE (and exact RTE) and write CSV reports.
    Eval(EvalArgs),
    /// Evaluate a model over several radii and write sweep.csv.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Training data (csv or libsvm, optionally gzipped).
    #[arg(long)]
    data: PathBuf,
    /// Separate test file; otherwise --test-frac of --data is held out.
    #[arg(long)]
    test: Option<PathBuf>,
    /// csv or libsvm; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<DataFormat>,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Feature count for libsvm files.
    #[arg(long)]
    n_features: Option<usize>,
    /// Class mapped to +1; defaults to the largest class id.
    #[arg(long, conflicts_with = "one_vs_all")]
    positive_class: Option<i64>,
    /// One binary task per class.
    #[arg(long)]
    one_vs_all: bool,
    /// `minmax` or `fixed:LO:HI`.
    #[arg(long, default_value = "minmax", value_parser = parse_normalization)]
    normalize: Normalization,
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    /// Seeded subsample of the training file before splitting.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "stumps")]
    model: ModelKind,
    #[arg(long, default_value = "robust_exact")]
    mode: TrainMode,
    #[arg(long)]
    eps: f64,
    /// Defaults to 300 for stumps and trees up to depth 2, 150 up to depth 4,
    /// 75 beyond.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    #[arg(long, default_value_t = 10)]
    min_samples_leaf: usize,
    #[arg(long, default_value_t = 1.0)]
    w_max: f64,
    #[arg(long, default_value_t = 0.2)]
    shrinkage: f64,
    #[arg(long, default_value = "exponential")]
    loss: LossKind,
    /// Skip pruning of robust trees.
    #[arg(long)]
    no_prune: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    eps: f64,
    /// Exact RTE for trees via cell enumeration (small models only).
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Estimate the smallest breaking radius up to --eps instead.
    #[arg(long)]
    radius: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_file: PathBuf,
    /// Comma-separated radii.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    if s == "minmax" {
        return Ok(Normalization::MinMax);
    }
    let parts: Vec<&str> = s.split(':').collect();
    if let ["fixed", lo, hi] = parts[..] {
        let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound '{lo}'"))?;
        let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound '{hi}'"))?;
        if hi > lo {
            return Ok(Normalization::Fixed { lo, hi });
        }
    }
    Err(format!("expected 'minmax' or 'fixed:LO:HI', got '{s}'"))
}

fn load_task(a: &DataArgs, eps: f64) -> Result<PreparedTask> {
    let opts = LoadOptions {
        format: a.format,
        label_column: a.label_column.clone(),
        n_features: a.n_features,
    };
    let mut raw = load_dataset(&a.data, &opts).with_context(|| format!("loading {}", a.data.display()))?;
    if let Some(n) = a.subsample {
        raw = raw.subsample(n, a.seed);
    }
    let test = match &a.test {
        Some(p) => Some(load_dataset(p, &opts).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let classes = if a.one_vs_all {
        ClassSpec::OneVsAll
    } else {
        let c = match a.positive_class {
            Some(c) => c,
            None => *raw.classes().last().context("dataset has no labels")?,
        };
        ClassSpec::Positive(c)
    };
    let popts = PrepareOptions {
        classes,
        eps,
        val_frac: a.val_frac,
        test_frac: a.test_frac,
        seed: a.seed,
        normalization: a.normalize,
    };
    let task = prepare_task(&raw, test.as_ref(), &popts)?;
    info!(
        "data: {} train / {} val / {} test rows, {} features, classes {:?}",
        task.train.len(),
        task.val.len(),
        task.test.len(),
        task.n_features(),
        task.classes
    );
    Ok(task)
}

fn check_model(model: &Model, task: &PreparedTask) -> Result<()> {
    if model.n_features() != task.n_features() {
        bail!(
            "model expects {} features but the data has {}",
            model.n_features(),
            task.n_features()
        );
    }
    Ok(())
}

fn report_for(model: &Model, split: &Split, eps: f64, cfg: &AttackConfig, exact: bool) -> Result<RobustnessReport> {
    Ok(match model.task {
        Task::Binary => evaluate(&model.ensembles[0], &split.x, split.labels(), eps, cfg, exact)?,
        Task::OneVsAll => {
            let mc = model.multiclass().context("malformed one-vs-all model")?;
            evaluate_multiclass(&mc, &split.x, &split.class_ids, eps, cfg, exact)?
        }
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let task = load_task(&a.data, a.eps)?;
    let cfg = TrainConfig {
        model_kind: a.model,
        mode: a.mode,
        eps: a.eps,
        n_rounds: a.rounds.unwrap_or_else(|| default_rounds(a.model, a.max_depth)),
        max_depth: a.max_depth,
        min_samples_leaf: a.min_samples_leaf,
        w_max: a.w_max,
        shrinkage: a.shrinkage,
        loss_kind: a.loss,
        seed: a.data.seed,
        val_frac: a.data.val_frac,
        prune: !a.no_prune,
        tol: 1e-8,
    };
    cfg.validate()?;
    info!("config: {}", serde_json::to_string(&cfg)?);
    let (model, _) = train(&task, &cfg)?;
    save_model(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    info!("model written to {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model_file)?;
    let task = load_task(&a.data, a.eps)?;
    check_model(&model, &task)?;
    info!("eval: eps {}, exact {}, seed {}", a.eps, a.exact, a.data.seed);
    let r = report_for(&model, &task.test, a.eps, &AttackConfig::evaluation(a.data.seed), a.exact)?;
    println!("n      {}", r.n());
    println!("TE     {}", pct(r.te));
    println!("LRTE   {}", pct(r.lrte));
    println!("URTE   {}", pct(r.urte));
    match r.rte_exact {
        Some(v) => println!("RTE    {}", pct(v)),
        None => println!("RTE    n/a"),
    }
    if let Some(dir) = &a.out_dir {
        for p in export_report(&model, Some(&r), None, dir)? {
            info!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn cmd_certify(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model_file)?;
    let task = load_task(&a.data, a.eps)?;
    check_model(&model, &task)?;
    let split = &task.test;
    println!("index,label,margin,robust,exact");
    for i in 0..split.len() {
        let x = split.row(i).to_vec();
        let (margin, robust, exact) = match model.task {
            Task::Binary => {
                let c = model.ensembles[0].certify(&x, split.labels()[i], a.eps)?;
                (c.margin_min, c.robust, c.exact)
            }
            Task::OneVsAll => {
                let mc = model.multiclass().context("malformed one-vs-all model")?;
                let (robust, m) = certify_multiclass(&mc, &x, split.class_ids[i], a.eps)?;
                (m, robust, model.kind() == ModelKind::Stumps)
            }
        };
        println!("{i},{},{margin},{robust},{exact}", split.class_ids[i]);
    }
    Ok(())
}

fn cmd_attack(a: &AttackArgs) -> Result<()> {
    let model = load_model(&a.model_file)?;
    if model.task != Task::Binary {
        bail!("attack supports binary models only");
    }
    let task = load_task(&a.data, a.eps)?;
    check_model(&model, &task)?;
    let cfg = AttackConfig {
        n_iters: a.iters,
        ..AttackConfig::evaluation(a.data.seed)
    };
    cfg.validate()?;
    let e = &model.ensembles[0];
    let split = &task.test;
    if a.radius {
        println!("index,label,radius,success");
    } else {
        println!("index,label,margin,success,queries");
    }
    for i in 0..split.len() {
        let x = split.row(i).to_vec();
        let y = split.labels()[i];
        if a.radius {
            match min_radius_estimate(e, &x, y, a.eps, &cfg) {
                Ok(r) => println!("{i},{},{},{}", split.class_ids[i], r.radius, r.success),
                Err(robust_boost::ModelError::AlreadyMisclassified) => println!("{i},{},0,true", split.class_ids[i]),
                Err(err) => return Err(err.into()),
            }
        } else {
            let r = attack_point(e, &x, y, a.eps, &cfg, i as u64);
            println!("{i},{},{},{},{}", split.class_ids[i], r.margin, r.success, r.queries);
        }
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let model = load_model(&a.model_file)?;
    let task = load_task(&a.data, 0.0)?;
    check_model(&model, &task)?;
    let cfg = AttackConfig::evaluation(a.data.seed);
    let mut rows = Vec::with_capacity(a.eps.len());
    println!("eps,te,lrte,urte,rte_exact");
    for &eps in &a.eps {
        if !(eps >= 0.0) {
            bail!("eps must be non-negative, got {eps}");
        }
        let r = report_for(&model, &task.test, eps, &cfg, a.exact)?;
        let row = SweepRow {
            eps,
            te: r.te,
            lrte: r.lrte,
            urte: r.urte,
            rte_exact: r.rte_exact,
        };
        println!(
            "{},{},{},{},{}",
            row.eps,
            row.te,
            row.lrte,
            row.urte,
            row.rte_exact.map(|v| v.to_string()).unwrap_or_default()
        );
        rows.push(row);
    }
    for p in export_report(&model, None, Some(&rows), &a.out_dir)? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    info!("command: {:?}", cli.command);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
