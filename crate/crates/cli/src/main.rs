//! `mew` — dataset generation, training, evaluation, ablation, and
//! frequency analysis for the MEW-UNet reference implementation.

use clap::{Args, Parser, Subcommand};
use mew_core::data::{self, DataConfig};
use mew_core::mew::{BranchMask, GeneratorMode};
use mew_core::model::{Model, ModelConfig};
use mew_core::rng::Rng;
use mew_core::spectral::{count_crossings, CurveMode};
use mew_core::train::{self, TrainConfig};
use mew_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "mew", about = "Multi-axis external-weights U-Net toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic frequency-texture dataset.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Branch-mask / weight-source ablation grid over several seeds.
    Ablate(AblateArgs),
    /// Region signal-strength curves and their crossing counts.
    AnalyzeFreq(AnalyzeFreqArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated branches to enable: dw,hw,cw,ch
    #[arg(long)]
    mask: Option<String>,
    /// Spectral weight source: generated | raw
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
}

#[derive(Args)]
struct AnalyzeFreqArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RunConfig {
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    data: DataConfig,
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_generator(s: &str) -> Result<GeneratorMode> {
    match s {
        "generated" => Ok(GeneratorMode::Generated),
        "raw" => Ok(GeneratorMode::Raw),
        other => Err(Error::Config(format!(
            "unknown generator mode {other} (expected generated|raw)"
        ))),
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = load_run_config(args.config.as_deref())?.data;
    let (train_ds, test_ds) = data::generate_dataset(&cfg, args.seed)?;
    data::save_dataset(&args.out, "train", &train_ds)?;
    data::save_dataset(&args.out, "test", &test_ds)?;
    let manifest = serde_json::json!({
        "seed": args.seed,
        "config": cfg,
        "n_train": train_ds.samples.len(),
        "n_test": test_ds.samples.len(),
    });
    std::fs::write(
        args.out.join("index.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "wrote {} train / {} test samples to {}",
        train_ds.samples.len(),
        test_ds.samples.len(),
        args.out.display()
    );
    Ok(())
}

fn prepare_model_config(
    mut cfg: RunConfig,
    train_ds: &data::Dataset,
    mask: Option<&str>,
    generator: Option<&str>,
) -> Result<RunConfig> {
    cfg.model.in_channels = train_ds.channels;
    cfg.model.n_classes = if train_ds.n_fg_classes == 1 {
        1
    } else {
        train_ds.n_fg_classes + 1
    };
    cfg.model.input_size = (train_ds.height, train_ds.width);
    if let Some(m) = mask {
        cfg.model.branch_mask = BranchMask::parse(m)
            .map_err(|e| Error::Config(format!("bad mask list {m:?}: {e}")))?;
    }
    if let Some(g) = generator {
        cfg.model.generator_mode = parse_generator(g)?;
    }
    Ok(cfg)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let train_ds = data::load_dataset(&args.data, "train")?;
    let test_ds = data::load_dataset(&args.data, "test")?;
    let mut cfg = prepare_model_config(
        load_run_config(args.config.as_deref())?,
        &train_ds,
        args.mask.as_deref(),
        args.generator.as_deref(),
    )?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    std::fs::create_dir_all(&args.out)?;
    let mut rng = Rng::derive(cfg.train.seed, &[0x0de1]);
    let mut model = Model::build(cfg.model.clone(), &mut rng)?;
    eprintln!(
        "training {} params for {} epochs",
        model.param_count(),
        cfg.train.epochs
    );
    let report = train::train(&mut model, &train_ds, &test_ds, &cfg.train, Some(&args.out))?;
    let manifest = serde_json::json!({
        "config": cfg,
        "param_count": model.param_count(),
        "best_dsc": report.best_dsc,
        "best_epoch": report.best_epoch,
        "final": report.final_eval,
    });
    std::fs::write(
        args.out.join("run.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "done: best DSC {:.4} (epoch {}), final mIoU {:.4}",
        report.best_dsc, report.best_epoch, report.final_eval.mean_iou
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let test_ds = data::load_dataset(&args.data, "test")?;
    let (model, _, _) = Model::load(&args.checkpoint)?;
    let report = train::evaluate_model(&model, &test_ds);
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.json"), text)?;
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let train_ds = data::load_dataset(&args.data, "train")?;
    let test_ds = data::load_dataset(&args.data, "test")?;
    let base = load_run_config(args.config.as_deref())?;
    let rows: [(&str, &str); 6] = [
        ("dw", "generated"),
        ("dw,hw", "generated"),
        ("dw,hw,cw", "generated"),
        ("hw,cw,ch", "generated"),
        ("dw,hw,cw,ch", "generated"),
        ("dw,hw,cw,ch", "raw"),
    ];
    std::fs::create_dir_all(&args.out)?;
    let mut csv = std::fs::File::create(args.out.join("ablation.csv"))?;
    writeln!(csv, "# expected: fuller branch sets >= sparser ones (mean mIoU); generated >= raw")?;
    writeln!(csv, "mask,generator,seed,miou,dsc")?;
    let mut means: Vec<(String, String, f64, f64, f64)> = Vec::new();
    for (mask, generator) in rows {
        let mut ious = Vec::new();
        let mut dscs = Vec::new();
        for seed in 0..args.seeds {
            let mut cfg =
                prepare_model_config(base.clone(), &train_ds, Some(mask), Some(generator))?;
            cfg.train.seed = seed;
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            let mut rng = Rng::derive(seed, &[0x0de1]);
            let mut model = Model::build(cfg.model.clone(), &mut rng)?;
            let report = train::train(&mut model, &train_ds, &test_ds, &cfg.train, None)?;
            let m = &report.final_eval;
            eprintln!(
                "[{mask} | {generator} | seed {seed}] mIoU {:.4} DSC {:.4}",
                m.mean_iou, m.mean_dsc
            );
            writeln!(
                csv,
                "\"{mask}\",{generator},{seed},{:.6},{:.6}",
                m.mean_iou, m.mean_dsc
            )?;
            ious.push(m.mean_iou);
            dscs.push(m.mean_dsc);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &[f64]| {
            let mu = mean(v);
            (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64).sqrt()
        };
        means.push((
            mask.to_string(),
            generator.to_string(),
            mean(&ious),
            sd(&ious),
            mean(&dscs),
        ));
    }
    let mut summary = std::fs::File::create(args.out.join("ablation_summary.csv"))?;
    writeln!(summary, "mask,generator,mean_miou,sd_miou,mean_dsc")?;
    for (mask, generator, mu, sd, dsc) in &means {
        writeln!(summary, "\"{mask}\",{generator},{mu:.6},{sd:.6},{dsc:.6}")?;
    }
    println!("ablation grid written to {}", args.out.display());
    Ok(())
}

fn cmd_analyze_freq(args: &AnalyzeFreqArgs) -> Result<()> {
    let train_ds = data::load_dataset(&args.data, "train")?;
    std::fs::create_dir_all(&args.out)?;
    let mut csv = std::fs::File::create(args.out.join("curves.csv"))?;
    writeln!(csv, "region,mode,index,strength")?;
    let mut summary = serde_json::Map::new();
    for (mode, name) in [(CurveMode::Single, "single"), (CurveMode::Multi, "multi")] {
        let (fg, bg) = data::region_curves(&train_ds, mode)?;
        for (i, v) in fg.iter().enumerate() {
            writeln!(csv, "foreground,{name},{i},{v:.8}")?;
        }
        for (i, v) in bg.iter().enumerate() {
            writeln!(csv, "background,{name},{i},{v:.8}")?;
        }
        let thr = data::crossing_threshold(&fg, &bg);
        let crossings = count_crossings(&fg, &bg, thr);
        summary.insert(
            format!("{name}_crossings"),
            serde_json::json!({"count": crossings, "threshold": thr}),
        );
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(summary))?;
    std::fs::write(args.out.join("crossings.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn run() -> Result<()> {
    match &Cli::parse().command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::AnalyzeFreq(a) => cmd_analyze_freq(a),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        };
        std::process::exit(code);
    }
}
