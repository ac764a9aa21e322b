//! `drapenet`: dataset generation, training, evaluation, inference,
//! benchmarking and gradient checks from the command line.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use drapenet::loss::LossWeights;
use drapenet::mesh::obj_write;
use drapenet::model::{Model, Variant};
use drapenet::pipeline::{
    bench, evaluate, generate_dataset, gradient_suite, prepare_all, train, Dataset, DrapeSample, PreparedSample,
    Split, BEST_CHECKPOINT,
};
use drapenet::sim::{generate_body, generate_garment_template};
use drapenet::skinning::dqs;
use drapenet::tensor::load_checkpoint;

use config::*;

#[derive(Parser, Debug)]
#[command(name = "drapenet", version, about = "Garment draping: data generation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file for the command; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the command's randomness (dataset, training, model init or check instances)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model variant: late, global or local
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a dataset of simulated drapes.
    GenData,
    /// Train a model on a generated dataset.
    Train,
    /// Score a checkpoint and the skinning baseline on one split.
    Eval,
    /// Predict the drape of one garment on one posed body.
    Infer,
    /// Time prediction against simulation on identical scenes.
    Bench,
    /// Compare analytic gradients with central finite differences.
    GradCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Infer => "infer",
            Command::Bench => "bench",
            Command::GradCheck => "grad-check",
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: drapenet::Error| e.to_string())
}

impl Cli {
    fn reject(&self, seed: bool, variant: bool) -> Result<()> {
        let name = self.command.name();
        if seed && self.seed.is_some() {
            bail!("--seed has no effect on {name}; remove it");
        }
        if variant && self.variant.is_some() {
            bail!("--variant has no effect on {name}; the variant comes from the checkpoint");
        }
        Ok(())
    }

    fn out_dir(&self, from_config: Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let dir = self.out.clone().or(from_config).unwrap_or_else(|| default.into());
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(dir)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::GenData => gen_data(cli, load(cfg)?),
        Command::Train => train_cmd(cli, load(cfg)?),
        Command::Eval => eval_cmd(cli, load(cfg)?),
        Command::Infer => infer(cli, load(cfg)?),
        Command::Bench => bench_cmd(cli, load(cfg)?),
        Command::GradCheck => grad_check(cli, load(cfg)?),
    }
}

fn require(p: &Option<PathBuf>, what: &str, key: &str) -> Result<PathBuf> {
    let p = p
        .as_ref()
        .ok_or_else(|| anyhow!("no {what} given; set `{key}` in the config file"))?;
    absolute(p)
}

fn load_model(path: &Path) -> Result<Model> {
    let ck = load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    Model::from_checkpoint(ck).with_context(|| format!("checkpoint {} does not match its config", path.display()))
}

fn load_split(data: &Path, split: Split, model: &Model, loss: &LossWeights) -> Result<(Vec<String>, Vec<PreparedSample>)> {
    let ds = Dataset::open(data).with_context(|| format!("cannot open dataset {}", data.display()))?;
    let loaded = ds.load(split)?;
    let ids = loaded.iter().map(|(e, _)| e.file.clone()).collect();
    let samples: Vec<DrapeSample> = loaded.into_iter().map(|(_, s)| s).collect();
    let prepared = prepare_all(&model.config, &samples, loss).with_context(|| {
        format!("{split} samples of {} do not fit the model (check model.condition_dim)", data.display())
    })?;
    Ok((ids, prepared))
}

fn gen_data(cli: &Cli, mut run: GenDataRun) -> Result<()> {
    cli.reject(false, true)?;
    if let Some(s) = cli.seed {
        run.dataset.seed = s;
    }
    run.dataset.validate()?;
    let out = cli.out_dir(run.out.clone(), "data")?;
    let manifest = generate_dataset(&run.dataset, &out)?;
    manifest.validate(&out).context("generated dataset failed validation")?;
    echo(&run, &out)?;
    println!(
        "wrote {} samples ({} dropped) to {}",
        manifest.samples.len(),
        manifest.dropped.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(cli: &Cli, mut run: TrainRun) -> Result<()> {
    if let Some(s) = cli.seed {
        run.train.seed = s;
    }
    run.train.validate()?;
    let data = require(&run.data, "dataset", "data")?;
    run.data = Some(data.clone());
    let model = match &run.init_checkpoint {
        Some(p) => {
            if !run.model.is_empty() || cli.variant.is_some() {
                bail!("init_checkpoint fixes the model; remove [model] and --variant");
            }
            let p = absolute(p)?;
            run.init_checkpoint = Some(p.clone());
            load_model(&p)?
        }
        None => Model::new(resolve_model(&run.model, cli.variant)?, run.train.seed)?,
    };
    run.model = model_table(&model.config)?;
    let out = cli.out_dir(run.out.clone(), "run")?;
    let (_, train_set) = load_split(&data, Split::Train, &model, &run.train.loss)?;
    if train_set.is_empty() {
        bail!("dataset {} has no train samples", data.display());
    }
    let (_, val_set) = load_split(&data, Split::Val, &model, &run.train.loss)?;
    echo(&run, &out)?;
    let outcome = train(model, &train_set, &val_set, &run.train, Some(&out))?;
    load_model(&out.join(BEST_CHECKPOINT)).context("written checkpoint failed to reload")?;
    let path = out.join("train_summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&outcome.summary)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    let s = &outcome.summary;
    println!(
        "{} steps over {} epochs; best validation e_dist {:.6} at epoch {}",
        s.steps, s.epochs, s.best_val_e_dist, s.best_epoch
    );
    Ok(())
}

fn eval_cmd(cli: &Cli, mut run: EvalRun) -> Result<()> {
    cli.reject(true, true)?;
    let data = require(&run.data, "dataset", "data")?;
    let ck = require(&run.checkpoint, "checkpoint", "checkpoint")?;
    run.data = Some(data.clone());
    run.checkpoint = Some(ck.clone());
    let model = load_model(&ck)?;
    let (ids, samples) = load_split(&data, run.split, &model, &Default::default())?;
    if samples.is_empty() {
        bail!("split {} of {} is empty", run.split, data.display());
    }
    let report = evaluate(&model, run.split.name(), &ids, &samples)?;
    let out = cli.out_dir(run.out.clone(), "eval")?;
    report.write(&out)?;
    echo(&run, &out)?;
    println!(
        "{} {} samples: model e_dist {:.6} e_norm {:.4}; baseline e_dist {:.6} e_norm {:.4}",
        run.split,
        report.samples.len(),
        report.model.e_dist,
        report.model.e_norm,
        report.baseline.e_dist,
        report.baseline.e_norm
    );
    Ok(())
}

fn infer(cli: &Cli, mut run: InferRun) -> Result<()> {
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    let model = match &run.checkpoint {
        Some(p) => {
            if !run.model.is_empty() || cli.variant.is_some() {
                bail!("the checkpoint fixes the model; remove [model] and --variant");
            }
            let p = absolute(p)?;
            run.checkpoint = Some(p.clone());
            load_model(&p)?
        }
        None => {
            let m = Model::new(resolve_model(&run.model, cli.variant)?, run.seed)?;
            run.model = model_table(&m.config)?;
            m
        }
    };
    let template = generate_garment_template(&run.garment, run.weight_falloff)?;
    let body = generate_body(&run.shape, &run.pose, &run.tessellation)?;
    let skeleton = body.skeleton.retargeted(&template.rest_joints)?;
    let skinned = dqs(&template.mesh, &skeleton, &template.weights)?;
    let input = model.prepare(&skinned, &body.mesh.vertices, run.condition.clone())?;
    let predicted = model.run(&input)?;
    let out = cli.out_dir(run.out.clone(), "infer")?;
    obj_write(&predicted, out.join("predicted.obj"))?;
    obj_write(&skinned, out.join("skinned.obj"))?;
    obj_write(&body.mesh, out.join("body.obj"))?;
    echo(&run, &out)?;
    println!("wrote predicted.obj, skinned.obj and body.obj to {}", out.display());
    Ok(())
}

fn bench_cmd(cli: &Cli, mut run: BenchRun) -> Result<()> {
    if let Some(s) = cli.seed {
        run.bench.seed = s;
    }
    let model = match &run.checkpoint {
        Some(p) => {
            if !run.model.is_empty() || cli.variant.is_some() {
                bail!("the checkpoint fixes the model; remove [model] and --variant");
            }
            let p = absolute(p)?;
            run.checkpoint = Some(p.clone());
            load_model(&p)?
        }
        None => {
            let m = Model::new(resolve_model(&run.model, cli.variant)?, run.model_seed)?;
            run.model = model_table(&m.config)?;
            m
        }
    };
    let report = bench(&model, &run.bench)?;
    let out = cli.out_dir(run.out.clone(), "bench")?;
    let path = out.join("bench_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    echo(&run, &out)?;
    println!(
        "{} vertices: predict {:.4} s, drape {:.4} s, speedup {:.1}x",
        report.vertex_count, report.predict_median_s, report.drape_median_s, report.speedup
    );
    Ok(())
}

fn grad_check(cli: &Cli, mut run: GradCheckRun) -> Result<()> {
    cli.reject(false, true)?;
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    if run.instances == 0 || !(run.tolerance > 0.0) {
        bail!("instances must be positive and tolerance > 0");
    }
    let rows = gradient_suite(run.instances, run.seed, run.tolerance)?;
    println!("{:<28} {:>9} {:>12}  result", "check", "instances", "max rel err");
    for r in &rows {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        println!("{:<28} {:>9} {:>12.3e}  {verdict}", r.name, r.instances, r.max_rel_err);
    }
    if let Some(dir) = cli.out.clone().or(run.out.clone()) {
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join("grad_check.json");
        std::fs::write(&path, serde_json::to_string_pretty(&rows)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        echo(&run, &dir)?;
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        bail!("{failed} of {} gradient checks exceed relative error {}", rows.len(), run.tolerance);
    }
    Ok(())
}
