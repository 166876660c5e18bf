use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ndarray::{concatenate, s, Axis};
use sensorgraph::checkpoint::Checkpoint;
use sensorgraph::data::{load_csv, split_chronological, ProcessDataset, WindowSample};
use sensorgraph::discovery::{discover, export_bundle, rank_by_attention};
use sensorgraph::metrics::MetricsReport;
use sensorgraph::synth::{self, SynthSpec};
use sensorgraph::training::{evaluate, train, write_history, TrainConfig};
use sensorgraph::{benchmark, Error};

use crate::manifest::{config_hash, parent_dir, Run};
use crate::{
    Cli, Command, DiscoverArgs, EvaluateArgs, GenSynthArgs, PredictArgs, SplitName, BenchmarkArgs,
    TrainArgs, TrainFlags,
};

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_NOT_FOUND: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

/// Maps the first library error in the chain onto the exit-code contract.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_INTERNAL;
    };
    match e {
        Error::NotFound(_) => EXIT_NOT_FOUND,
        Error::Io { .. }
        | Error::NonFiniteGradient(_)
        | Error::NonFiniteLoss { .. }
        | Error::ConstantSeries
        | Error::AllExcluded
        | Error::ConstantVariable(_)
        | Error::ZeroNorm(_) => EXIT_INTERNAL,
        _ => EXIT_CONFIG,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("starting the worker pool")?;
    }
    let config = cli.config.as_deref();
    match cli.command {
        Command::GenSynth(args) => {
            if config.is_some() {
                return Err(Error::Config("--config applies to train and benchmark only".into()).into());
            }
            gen_synth(args, cli.seed.unwrap_or(0))
        }
        Command::Train(args) => {
            let cfg = resolve_config(config, &args.flags, cli.seed)?;
            cmd_train(args, cfg)
        }
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Discover(args) => cmd_discover(args),
        Command::Benchmark(args) => {
            let cfg = resolve_config(config, &args.flags, cli.seed)?;
            cmd_benchmark(args, cfg)
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(path: Option<&Path>, flags: &TrainFlags, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(p.to_path_buf()),
                _ => Error::Io { path: p.to_path_buf(), source: e },
            })?;
            TrainConfig::from_json(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    let f = flags.clone();
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = f.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(embed_dim, batch_size, hidden, dropout, learning_rate, window, max_epochs, patience, graph_refresh, symmetric_graph, beta1, beta2, epsilon);
    if f.k.is_some() {
        cfg.k = f.k;
    }
    if f.clip_norm.is_some() {
        cfg.clip_norm = f.clip_norm;
    }
    if let Some(split) = f.split {
        let [a, b, c] = split[..] else {
            return Err(Error::Config(format!("--split takes three fractions, got {}", split.len())).into());
        };
        cfg.split = [a, b, c];
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A tag, or a 1-based column number when no tag matches.
fn resolve_target(ds: &ProcessDataset, target: &str) -> anyhow::Result<usize> {
    match ds.index_of(target) {
        Ok(i) => Ok(i),
        Err(Error::UnknownTag(_)) => match target.parse::<usize>() {
            Ok(n) if (1..=ds.num_variables()).contains(&n) => Ok(n - 1),
            _ => Err(Error::UnknownTag(target.to_string()).into()),
        },
        Err(e) => Err(e.into()),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_file(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn print_report(label: &str, r: &MetricsReport) {
    println!(
        "{label}: NRMSE {:.3}%  R2 {:.4}  NMAE {:.3}%  MAPE {:.3}%  (n = {})",
        r.nrmse, r.r2, r.nmae, r.mape, r.n_samples
    );
}

fn write_report(dir: &Path, name: &str, tag: &str, report: &MetricsReport) -> anyhow::Result<Vec<PathBuf>> {
    let json = dir.join(format!("{name}.json"));
    write_file(&json, &report.to_json()?)?;
    let csv = dir.join(format!("{name}.csv"));
    MetricsReport::write_csv(
        create_file(&csv)?,
        &[(tag.to_string(), "sensorgraph".to_string(), report.clone())],
    )?;
    Ok(vec![json, csv])
}

fn gen_synth(args: GenSynthArgs, seed: u64) -> anyhow::Result<()> {
    let run = Run::start("gen-synth");
    let spec = SynthSpec {
        sensors: args.sensors,
        length: args.length,
        drivers: args.drivers,
        lag: args.lag,
        noise: args.noise,
        nonlinear: args.nonlinear,
        coupling: args.coupling,
        seed,
    };
    let truth = synth::write(&spec, &args.out)?;
    println!(
        "wrote {} ({} x {}), drivers {:?}",
        args.out.display(),
        spec.length,
        spec.sensors + 1,
        truth.driver_tags
    );
    let outputs = vec![args.out.clone(), synth::truth_path(&args.out)];
    run.finish(&parent_dir(&args.out), config_hash(&spec)?, Some(seed), vec![], outputs)?;
    Ok(())
}

fn cmd_train(args: TrainArgs, cfg: TrainConfig) -> anyhow::Result<()> {
    let run = Run::start("train");
    let ds = load_csv(&args.data, None)?;
    let target = resolve_target(&ds, &args.target)?;
    let (outcome, data) = train(&ds, &cfg, target)?;
    create_dir(&args.out)?;
    let ckpt = &outcome.checkpoint;
    let tag = ckpt.target_tag.clone();

    let out = &args.out;
    let checkpoint = out.join("checkpoint.json");
    ckpt.save(&checkpoint)?;
    let history = out.join("history.csv");
    write_history(create_file(&history)?, &outcome.history)?;
    let config = out.join("config.json");
    write_file(&config, &serde_json::to_string_pretty(&cfg)?)?;
    let normalization = out.join("normalization.json");
    write_file(&normalization, &data.stats.to_json()?)?;
    ckpt.model.graph()?.export(out, &ckpt.input_tags())?;

    let eval = evaluate(ckpt, &data.test)?;
    let mut outputs = vec![
        checkpoint,
        history,
        config,
        normalization,
        out.join("graph.json"),
        out.join("similarity.csv"),
    ];
    outputs.extend(write_report(out, "metrics_test", &tag, &eval.report)?);

    println!(
        "trained {tag} for {} epochs (best epoch {}, val MSE {:.6}{})",
        outcome.history.len(),
        ckpt.best_epoch,
        ckpt.best_val_mse,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    print_report("test", &eval.report);
    run.finish(out, config_hash(&cfg)?, Some(cfg.seed), vec![args.data], outputs)?;
    Ok(())
}

fn select_split(ckpt: &Checkpoint, ds: &ProcessDataset, split: SplitName) -> anyhow::Result<Vec<WindowSample>> {
    let windows = ckpt.prepare(ds)?;
    if split == SplitName::All {
        return Ok(windows);
    }
    let (train, val, test) = split_chronological(windows, ckpt.train_config.fractions())?;
    Ok(match split {
        SplitName::Train => train,
        SplitName::Val => val,
        _ => test,
    })
}

fn split_label(split: SplitName) -> &'static str {
    match split {
        SplitName::Train => "train",
        SplitName::Val => "val",
        SplitName::Test => "test",
        SplitName::All => "all",
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let run = Run::start("evaluate");
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_csv(&args.data, None)?;
    let samples = select_split(&ckpt, &ds, args.split)?;
    let eval = evaluate(&ckpt, &samples)?;
    create_dir(&args.out)?;
    let label = split_label(args.split);
    let mut outputs = write_report(&args.out, &format!("metrics_{label}"), &ckpt.target_tag, &eval.report)?;
    let predictions = args.out.join(format!("predictions_{label}.csv"));
    sensorgraph::training::write_predictions(create_file(&predictions)?, &eval.predictions)?;
    outputs.push(predictions);
    print_report(&format!("{} on {label}", ckpt.target_tag), &eval.report);
    let hash = config_hash(&(ckpt.id()?, label))?;
    run.finish(&args.out, hash, None, vec![args.checkpoint, args.data], outputs)?;
    Ok(())
}

/// Windows for prediction; a dataset without the target column gets a
/// placeholder so the checkpoint's layout applies.
fn prediction_windows(ckpt: &Checkpoint, ds: &ProcessDataset) -> anyhow::Result<(Vec<WindowSample>, bool)> {
    let n = ckpt.variable_tags.len();
    if ds.num_variables() + 1 == n && ds.tags() == ckpt.input_tags() {
        let t = ckpt.target;
        let placeholder = ndarray::Array2::<f64>::zeros((ds.len(), 1));
        let values = concatenate(
            Axis(1),
            &[ds.values.slice(s![.., ..t]), placeholder.view(), ds.values.slice(s![.., t..])],
        )?;
        let tags: Vec<&str> = ckpt.variable_tags.iter().map(String::as_str).collect();
        let full = ProcessDataset::from_tags(values, &tags)?;
        return Ok((ckpt.prepare(&full)?, false));
    }
    Ok((ckpt.prepare(ds)?, true))
}

fn cmd_predict(args: PredictArgs) -> anyhow::Result<()> {
    let run = Run::start("predict");
    if args.batch_size == 0 {
        return Err(Error::Config("--batch-size must be at least 1".into()).into());
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_csv(&args.data, None)?;
    let (windows, has_truth) = prediction_windows(&ckpt, &ds)?;

    let mut w = csv::Writer::from_writer(create_file(&args.out)?);
    w.write_record(["t_index", "y_true", "y_hat"])?;
    for chunk in windows.chunks(args.batch_size) {
        for p in sensorgraph::training::predict(&ckpt, chunk)? {
            let y_true = if has_truth { p.y_true.to_string() } else { String::new() };
            w.write_record([p.t_index.to_string(), y_true, p.y_hat.to_string()])?;
        }
    }
    w.flush().with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} predictions to {}", windows.len(), args.out.display());
    let hash = config_hash(&ckpt.id()?)?;
    run.finish(
        &parent_dir(&args.out),
        hash,
        None,
        vec![args.checkpoint, args.data],
        vec![args.out],
    )?;
    Ok(())
}

fn cmd_discover(args: DiscoverArgs) -> anyhow::Result<()> {
    let run = Run::start("discover");
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_csv(&args.data, None)?;
    let samples = select_split(&ckpt, &ds, args.split)?;
    let (bundle, manifest) = discover(&ckpt, &ds, &samples)?;
    create_dir(&args.out)?;
    let files = export_bundle(&bundle, &manifest, &args.out)?;
    let ranked: Vec<&str> = rank_by_attention(&bundle.attention_avg)
        .into_iter()
        .take(5)
        .map(|i| bundle.sensor_tags[i].as_str())
        .collect();
    println!(
        "{}: {} windows; most attended sensors {}",
        manifest.target_tag,
        manifest.n_windows,
        ranked.join(", ")
    );
    let hash = config_hash(&(ckpt.id()?, split_label(args.split)))?;
    run.finish(&args.out, hash, None, vec![args.checkpoint, args.data], files)?;
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs, cfg: TrainConfig) -> anyhow::Result<()> {
    let run = Run::start("benchmark");
    let ds = load_csv(&args.data, None)?;
    let rows = benchmark::run(&ds, &cfg, &args.variables, |row| {
        print_report(&format!("variable {} ({})", row.variable, row.tag), &row.report);
    })?;
    benchmark::write_table(create_file(&args.out)?, &rows)?;
    println!("wrote {}", args.out.display());
    run.finish(
        &parent_dir(&args.out),
        config_hash(&(&cfg, &args.variables))?,
        Some(cfg.seed),
        vec![args.data],
        vec![args.out],
    )?;
    Ok(())
}
