use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use takunet_core::arch::{analyze, derive_channel_config, load_checkpoint, write_checkpoint, ArchConfig, DeriveConstraints, Model};
use takunet_core::data::{index_dataset, BatchIterator, DatasetIndex, FileSource, ImageSource, Split, SyntheticSource};
use takunet_core::eval::{bench_activations, bench_model, evaluate, report, MetricsReport};
use takunet_core::train::fit;

use crate::config::RunConfig;
use crate::output::{emit, write_atomic, AtomicFile};
use crate::{resolve, Cli, Command, Usage};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve(cli)?;
    if matches!(cli.command, Command::Eval | Command::Bench) {
        if let Some(p) = &cli.checkpoint {
            // The checkpoint carries its architecture; the header must describe it.
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            cfg.arch = ArchConfig { precision: cli.precision.unwrap_or(ck.config.precision), ..ck.config };
        }
    }
    eprintln!("{}", header(cli.command, &cfg));
    match cli.command {
        Command::Train => train(cli, &cfg),
        Command::Eval => eval(cli, &cfg),
        Command::Analyze => analyze_cmd(cli, &cfg),
        Command::Bench => bench(cli, &cfg),
        Command::BenchAct => bench_act(cli, &cfg),
        Command::DeriveChannels => derive(cli, &cfg),
        Command::Split => split(cli, &cfg),
    }
}

/// Reproducibility header: tool version, command, seed and config hash.
pub fn header(command: Command, cfg: &RunConfig) -> String {
    serde_json::json!({
        "takunet": VERSION,
        "command": command.name(),
        "seed": cfg.train.seed,
        "config_sha256": cfg.hash(),
    })
    .to_string()
}

enum Data {
    Synthetic(SyntheticSource),
    Files(DatasetIndex),
}

fn need<'a, T>(v: &'a Option<T>, flag: &str, cmd: Command) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Usage(format!("{} needs --{flag}", cmd.name())).into())
}

/// `synthetic:N[:SEED]`, a manifest `.csv`, or a dataset directory.
fn load_data(spec: &str, cfg: &RunConfig) -> Result<Data> {
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let (n, seed) = match rest.split_once(':') {
            Some((n, s)) => (n, s.parse().map_err(|_| Usage(format!("bad synthetic seed in {spec:?}")))?),
            None => (rest, 0),
        };
        let n: usize = n.parse().map_err(|_| Usage(format!("bad synthetic sample count in {spec:?}")))?;
        return Ok(Data::Synthetic(SyntheticSource::new(n, cfg.arch.num_classes, cfg.arch.input_size, seed)));
    }
    let path = Path::new(spec);
    if path.is_file() {
        let f = std::fs::File::open(path).with_context(|| format!("opening {spec}"))?;
        let idx = DatasetIndex::read_manifest(std::io::BufReader::new(f)).with_context(|| format!("reading manifest {spec}"))?;
        return Ok(Data::Files(idx));
    }
    if !path.is_dir() {
        bail!("--data {spec}: no such file or directory");
    }
    let mode = cfg.split.resolve(path)?;
    Ok(Data::Files(index_dataset(path, &mode, cfg.train.seed)?))
}

fn check_classes(idx: &DatasetIndex, arch: &ArchConfig) -> Result<()> {
    if idx.num_classes() != arch.num_classes {
        bail!(
            "dataset has {} classes ({}), config has {}; pass --classes {}",
            idx.num_classes(),
            idx.classes.join(", "),
            arch.num_classes,
            idx.num_classes()
        );
    }
    Ok(())
}

fn write_checkpoint_file(path: &Path, ck: &takunet_core::arch::Checkpoint) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, ck)?;
    write_atomic(path, &bytes)
}

fn metrics_on(model: &mut Model, src: &dyn ImageSource, batch: usize) -> Result<MetricsReport> {
    let idx: Vec<usize> = (0..src.len()).collect();
    let input = model.config().input_size;
    Ok(evaluate(model, BatchIterator::new(src, &idx, batch, input, None)?)?)
}

fn train(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let data = load_data(need(&cli.data, "data", Command::Train)?, cfg)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("takunet-run"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let (train_src, val_src, test_src, classes): (Box<dyn ImageSource>, Option<FileSource>, Option<FileSource>, Vec<String>) =
        match data {
            Data::Synthetic(s) => {
                let names = (0..s.classes).map(|c| format!("class{c}")).collect();
                (Box::new(s), None, None, names)
            }
            Data::Files(idx) => {
                check_classes(&idx, &cfg.arch)?;
                let part = |s: Split| idx.has_split(s).then(|| FileSource::from_index(&idx, &[s]));
                let train = FileSource::from_index(&idx, &[Split::Train]);
                (Box::new(train), part(Split::Val), part(Split::Test), idx.classes.clone())
            }
        };

    let mut log = AtomicFile::create(&out.join("metrics.jsonl"))?;
    let outcome = fit(
        &cfg.arch,
        &cfg.train,
        train_src.as_ref(),
        val_src.as_ref().map(|v| v as &dyn ImageSource),
        !cli.no_timing,
        &mut |e| {
            eprintln!(
                "fold {} epoch {:>3}  lr {:.3e}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_f1 {:.4}",
                e.fold, e.epoch, e.lr, e.train_loss, e.train_acc, e.val_loss, e.val_f1_macro
            );
            log.write_all(e.to_json_line().as_bytes())
                .map_err(|err| takunet_core::Error::Invalid(format!("{err:#}")))
        },
    )?;
    log.commit()?;

    let best = outcome.best();
    write_checkpoint_file(&out.join("model.tkck"), &best.checkpoint)?;
    let mut model = best.checkpoint.to_model(None)?;
    let metrics = match &test_src {
        Some(t) => Some(metrics_on(&mut model, t, cfg.train.batch_size)?),
        None => None,
    };
    let rep = report(&cfg.arch, &analyze(&cfg.arch)?, metrics.as_ref(), None);
    write_atomic(&out.join("report.json"), rep.to_json().as_bytes())?;

    let run = serde_json::json!({
        "header": serde_json::from_str::<serde_json::Value>(&header(Command::Train, cfg))?,
        "classes": classes,
        "best_fold": best.fold,
        "best_epoch": best.best_epoch,
        "best_val_f1_macro": best.best_f1,
        "test_samples": test_src.as_ref().map_or(0, |t| t.len()),
    });
    write_atomic(&out.join("run.json"), format!("{run:#}\n").as_bytes())?;
    write_atomic(&out.join("config.cfg"), cfg.to_kv().as_bytes())?;
    eprintln!(
        "best fold {} epoch {} val_f1_macro {:.4}; artifacts in {}",
        best.fold,
        best.best_epoch,
        best.best_f1,
        out.display()
    );
    Ok(())
}

/// The checkpoint's model when given, otherwise a fresh one from the config.
fn model_for(cli: &Cli, cfg: &RunConfig) -> Result<Model> {
    match &cli.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(ck.to_model(Some(cfg.arch.precision))?)
        }
        None => Ok(Model::new(&cfg.arch, cfg.train.seed)?),
    }
}

fn eval(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    need(&cli.checkpoint, "checkpoint", Command::Eval)?;
    let mut model = model_for(cli, cfg)?;
    let arch = model.config().clone();
    let metrics = match load_data(need(&cli.data, "data", Command::Eval)?, cfg)? {
        Data::Synthetic(s) => metrics_on(&mut model, &s, cfg.train.batch_size)?,
        Data::Files(idx) => {
            check_classes(&idx, &arch)?;
            let splits: &[Split] = if idx.has_split(Split::Test) { &[Split::Test] } else { &[Split::Train, Split::Val, Split::Test] };
            metrics_on(&mut model, &FileSource::from_index(&idx, splits), cfg.train.batch_size)?
        }
    };
    let latency = match cli.iters {
        Some(n) => Some(bench_model(&mut model, cfg.warmup, n)?),
        None => None,
    };
    let rep = report(&arch, &analyze(&arch)?, Some(&metrics), latency.as_ref());
    emit(cli.out.as_deref(), &rep.to_json())
}

fn analyze_cmd(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let rep = report(&cfg.arch, &analyze(&cfg.arch)?, None, None);
    emit(cli.out.as_deref(), &rep.to_json())
}

fn bench(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let mut model = model_for(cli, cfg)?;
    let arch = model.config().clone();
    let lat = bench_model(&mut model, cfg.warmup, cli.iters.unwrap_or(100))?;
    eprintln!(
        "{}: mean {:.3} ms  median {:.3} ms  p95 {:.3} ms  {:.1} fps",
        lat.device, lat.mean_ms, lat.median_ms, lat.p95_ms, lat.fps
    );
    let rep = report(&arch, &analyze(&arch)?, None, Some(&lat));
    emit(cli.out.as_deref(), &rep.to_json())
}

fn bench_act(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let iters = cli.iters.unwrap_or(10);
    let rows = bench_activations(cfg.act_shape, iters, cfg.exact_gelu)?;
    let mut table = format!("{:<4} {:<10} {:>6} {:>12} {:>12}\n", "rank", "activation", "iters", "total_ms", "per_iter_ms");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(table, "{:<4} {:<10} {:>6} {:>12.3} {:>12.4}", i + 1, r.activation, r.iters, r.total_ms, r.per_iter_ms);
    }
    print!("{table}");
    if let Some(out) = &cli.out {
        let json = serde_json::json!({ "shape": [cfg.act_shape.0, cfg.act_shape.1], "rows": rows });
        write_atomic(out, format!("{json:#}\n").as_bytes())?;
    }
    Ok(())
}

fn derive(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let c = DeriveConstraints {
        stem_channels: cfg.arch.stem_channels,
        stage_depths: cfg.arch.stage_depths,
        num_classes: cfg.arch.num_classes,
        ..Default::default()
    };
    let rep = derive_channel_config(&c)?;
    let mut text = rep.render()?;
    let best = rep.best();
    let _ = writeln!(text, "within 5%: {}", rep.within(0.05));
    let _ = writeln!(text, "delta {} - {} = {}", best.params, best.params_fewer_classes, best.params - best.params_fewer_classes);
    let _ = write!(text, "# chosen config\n{}", best.config.to_kv());
    emit(cli.out.as_deref(), &text)
}

fn split(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let spec = need(&cli.data, "data", Command::Split)?;
    let out = need(&cli.out, "out", Command::Split)?;
    let idx = match load_data(spec, cfg)? {
        Data::Files(idx) => idx,
        Data::Synthetic(_) => bail!("split needs a dataset directory, not {spec}"),
    };
    let mut bytes = Vec::new();
    idx.write_manifest(&mut bytes)?;
    write_atomic(out, &bytes)?;
    let mut table = format!("{:<24} {:>7} {:>7} {:>7}\n", "class", "train", "val", "test");
    for (name, [tr, va, te]) in idx.classes.iter().zip(idx.counts()) {
        let _ = writeln!(table, "{name:<24} {tr:>7} {va:>7} {te:>7}");
    }
    let [tr, va, te] = idx.split_totals();
    let _ = writeln!(table, "{:<24} {tr:>7} {va:>7} {te:>7}", "total");
    print!("{table}");
    Ok(())
}
