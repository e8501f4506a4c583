use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use roomembed::acoustics::generate_rirs;
use roomembed::acoustics::store::{read_store, write_store};
use roomembed::config::AppConfig;
use roomembed::dataset::{build_downstream, build_upstream, scaled_count, Role, SourceCorpus, SplitCounts};
use roomembed::metrics::export_embeddings;
use roomembed::rng::derive_seed;
use roomembed::trainer::{
    evaluate, load_downstream, load_upstream, run_experiment_grid, train_downstream, train_supervised_baseline,
    train_upstream, DataSources, EvalReport, RunDir, RunRecord, CHECKPOINT_FILE, CONFIG_FILE,
};
use roomembed::{DatasetManifest, MaterialTable, RirRecord, Split, Strategy, Task};

use crate::args::{self, Cli, Command};
use crate::summary::{spread, write_histogram};
use crate::UsageError;

/// Where a dataset's RIRs live, stored next to its manifest.
const INPUTS_FILE: &str = "inputs.json";

#[derive(Debug, Serialize, Deserialize)]
struct DatasetInputs {
    rirs: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunInputs {
    data: PathBuf,
    encoder: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => AppConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => AppConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    match cli.command {
        Command::GenRirs(a) => gen_rirs(config, a),
        Command::BuildDataset(a) => build_dataset(config, a),
        Command::TrainUpstream(a) => train_up(config, a),
        Command::TrainDownstream(a) => train_down(config, a),
        Command::Evaluate(a) => eval(config, a),
        Command::ExportEmbeddings(a) => export(config, a),
        Command::Grid(a) => grid(config, a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Creates `dir`, refusing a non-empty one unless `force` is set.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
        return Err(usage(format!("{} already exists; pass --force to overwrite", dir.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

struct Dataset {
    manifest: DatasetManifest,
    rirs: Vec<RirRecord>,
    corpus: SourceCorpus,
}

impl Dataset {
    fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
        let inputs_path = dir.join(INPUTS_FILE);
        let text = fs::read_to_string(&inputs_path).with_context(|| format!("reading {}", inputs_path.display()))?;
        let inputs: DatasetInputs = serde_json::from_str(&text)?;
        let rirs = read_store(&inputs.rirs).with_context(|| format!("reading RIR store {}", inputs.rirs.display()))?;
        let corpus = SourceCorpus::read(dir)?;
        Ok(Self { manifest, rirs, corpus })
    }

    fn sources(&self) -> DataSources<'_> {
        DataSources { manifest: &self.manifest, rirs: &self.rirs, corpus: &self.corpus }
    }

    fn expect_role(&self, role: Role, dir: &Path) -> Result<()> {
        if self.manifest.meta.role != role {
            return Err(usage(format!(
                "{} is a {:?} dataset, this command needs a {role:?} one",
                dir.display(),
                self.manifest.meta.role
            )));
        }
        Ok(())
    }
}

fn gen_rirs(config: AppConfig, a: args::GenRirs) -> Result<()> {
    config.validate()?;
    if a.count_rooms == 0 || a.rirs_per_room == 0 {
        return Err(usage("--count-rooms and --rirs-per-room must be positive"));
    }
    prepare_out(&a.out, a.force)?;
    let table = match &config.acoustics.material_table {
        Some(p) => MaterialTable::load(p)?,
        None => MaterialTable::builtin(),
    };
    log::info!(
        "simulating {} rooms x {} RIRs (seed {})",
        a.count_rooms,
        a.rirs_per_room,
        config.seed
    );
    let start = Instant::now();
    let rirs = generate_rirs(&table, &config.acoustics, a.count_rooms, a.rirs_per_room, config.seed, &a.prefix)?;
    write_store(&a.out, &rirs)?;
    write_json(&a.out.join(CONFIG_FILE), &config)?;

    let rt60: Vec<f64> = rirs.iter().map(|r| r.rt60_s).collect();
    let c50: Vec<f64> = rirs.iter().map(|r| r.c50_db).collect();
    let volume: Vec<f64> = rirs.iter().map(|r| r.volume_m3).collect();
    write_histogram(&a.out.join("rt60_hist.csv"), &rt60)?;
    write_histogram(&a.out.join("c50_hist.csv"), &c50)?;
    write_histogram(&a.out.join("volume_hist.csv"), &volume)?;
    println!("{} RIRs from {} rooms in {:.1}s -> {}", rirs.len(), a.count_rooms, start.elapsed().as_secs_f64(), a.out.display());
    println!("rt60 [s]      min / median / max  {}", spread(&rt60));
    println!("c50 [dB]      min / median / max  {}", spread(&c50));
    println!("volume [m3]   min / median / max  {}", spread(&volume));
    println!(
        "truncated decays {}, clamped C50 {}",
        rirs.iter().filter(|r| r.decay_truncated).count(),
        rirs.iter().filter(|r| r.c50_clamped).count()
    );
    Ok(())
}

fn build_dataset(mut config: AppConfig, a: args::BuildDataset) -> Result<()> {
    if let Some(s) = a.scale {
        config.dataset.scale = s;
    }
    if let Some(s) = a.segment_s {
        config.dataset.segment_s = s;
    }
    config.validate()?;
    let role: Role = a.role.parse()?;
    let rirs = read_store(&a.rirs).with_context(|| format!("reading RIR store {}", a.rirs.display()))?;
    let d = &config.dataset;
    let counts = SplitCounts {
        train: scaled_count(d.downstream_sizes.train, d.scale),
        val: scaled_count(d.downstream_sizes.val, d.scale),
        test: scaled_count(d.downstream_sizes.test, d.scale),
    };
    let corpus = match &a.speech_dir {
        Some(dir) => SourceCorpus::from_wav_dir(dir, d.segment_len(), d.segment_len(), d.downstream_sizes)?,
        None => SourceCorpus::synthetic(counts, d.segment_len(), derive_seed(config.seed, 1), &format!("syn-{}", a.role)),
    };
    let seed = derive_seed(config.seed, 2);
    let manifest = match role {
        Role::Upstream => build_upstream(&rirs, &corpus, d, seed)?,
        Role::Downstream => {
            let exclude = match &a.disjoint_from {
                Some(dir) => DatasetManifest::read(dir)?.room_ids(),
                None => {
                    log::warn!("no --disjoint-from given; room disjointness from the upstream set is not checked");
                    Default::default()
                }
            };
            build_downstream(&rirs, &corpus, d, seed, &exclude)?
        }
    };
    prepare_out(&a.out, a.force)?;
    manifest.write(&a.out)?;
    corpus.write(&a.out)?;
    write_json(&a.out.join(INPUTS_FILE), &DatasetInputs { rirs: absolute(&a.rirs)? })?;
    write_json(&a.out.join(CONFIG_FILE), &config)?;
    let s = manifest.meta.sizes;
    println!(
        "{} dataset: train {} / val {} / test {} entries from {} rooms, {} source segments -> {}",
        a.role,
        s.train,
        s.val,
        s.test,
        manifest.room_ids().len(),
        corpus.len(),
        a.out.display()
    );
    Ok(())
}

fn print_record(rec: &RunRecord) {
    println!(
        "best epoch {} of {} (val loss {:.6}), stopped by {:?}, {:.1}s",
        rec.best_epoch,
        rec.val_losses.len(),
        rec.best_val_loss,
        rec.stop_reason,
        rec.wall_clock_s
    );
    if let Some(p) = &rec.checkpoint {
        println!("checkpoint {}", p.display());
    }
}

fn train_up(mut config: AppConfig, a: args::TrainUpstream) -> Result<()> {
    if let Some(s) = &a.strategy {
        config.train.strategy = s.parse::<Strategy>()?;
    }
    if let Some(t) = a.tau {
        config.train.temperature = t;
    }
    if let Some(e) = a.max_epochs {
        config.train.max_epochs = e;
    }
    config.validate()?;
    let data = Dataset::load(&a.data)?;
    data.expect_role(Role::Upstream, &a.data)?;
    let run = RunDir::create(&a.out, a.force)?;
    run.write_json(CONFIG_FILE, &config)?;
    run.write_json(INPUTS_FILE, &RunInputs { data: absolute(&a.data)?, encoder: None })?;
    println!("train config {}", serde_json::to_string_pretty(&config.train)?);
    let (_, rec) = train_upstream(&data.sources(), &config.model, &config.train, config.seed, Some(&run))?;
    print_record(&rec);
    Ok(())
}

fn train_down(mut config: AppConfig, a: args::TrainDownstream) -> Result<()> {
    if let Some(e) = a.max_epochs {
        config.train.max_epochs = e;
    }
    config.validate()?;
    let task: Task = a.task.parse()?;
    let data = Dataset::load(&a.data)?;
    data.expect_role(Role::Downstream, &a.data)?;
    let run = RunDir::create(&a.out, a.force)?;
    run.write_json(CONFIG_FILE, &config)?;
    let encoder_path = a.encoder.as_deref().map(absolute).transpose()?;
    run.write_json(INPUTS_FILE, &RunInputs { data: absolute(&a.data)?, encoder: encoder_path.clone() })?;
    let sources = data.sources();
    let rec = match encoder_path {
        Some(p) => {
            let encoder = load_upstream(&p).with_context(|| format!("loading encoder {}", p.display()))?.encoder;
            let want = (encoder.input.1, sources.frames());
            if want.0 != want.1 {
                return Err(usage(format!(
                    "encoder expects {} frames, dataset segments give {}",
                    want.0, want.1
                )));
            }
            train_downstream(encoder, &sources, task, &config.train, config.seed, Some(&run))?.1
        }
        None => train_supervised_baseline(&sources, &config.model, task, &config.train, config.seed, Some(&run))?.1,
    };
    print_record(&rec);
    Ok(())
}

fn write_eval_csv(path: &Path, split: Split, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["task", "split", "metric", "value"])?;
    for (name, v) in report.metrics() {
        let value = if v.is_nan() { "undefined".to_owned() } else { v.to_string() };
        w.write_record([report.task().as_str(), split.as_str(), name, &value])?;
    }
    w.flush()?;
    Ok(())
}

fn eval(config: AppConfig, a: args::Evaluate) -> Result<()> {
    config.validate()?;
    let split: Split = a.split.parse()?;
    let ckpt = a.run.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        bail!(usage(format!("{} has no {CHECKPOINT_FILE}", a.run.display())));
    }
    let data_dir = match a.data {
        Some(d) => d,
        None => {
            let p = a.run.join(INPUTS_FILE);
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<RunInputs>(&text)?.data
        }
    };
    let mut model = load_downstream(&ckpt)?;
    let data = Dataset::load(&data_dir)?;
    let report = evaluate(&mut model, &data.sources(), split, config.seed)?;
    println!("task {}  split {}", report.task(), split);
    print!("{report}");
    let out = a.out.unwrap_or_else(|| a.run.join(format!("eval-{split}.csv")));
    write_eval_csv(&out, split, &report)?;
    println!("metrics written to {}", out.display());
    Ok(())
}

fn export(config: AppConfig, a: args::ExportEmbeddings) -> Result<()> {
    config.validate()?;
    let mut model = load_upstream(&a.encoder).with_context(|| format!("loading encoder {}", a.encoder.display()))?;
    let data = Dataset::load(&a.manifest)?;
    let split: Option<Split> = a.split.as_deref().map(str::parse).transpose()?;
    let entries: Vec<_> = data
        .manifest
        .entries
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .cloned()
        .collect();
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let materializer = data.sources().materializer(config.seed)?;
    export_embeddings(&mut model.encoder, &entries, &materializer, &a.out)?;
    println!("{} embeddings written to {}", entries.len(), a.out.display());
    Ok(())
}

fn grid(mut config: AppConfig, a: args::Grid) -> Result<()> {
    if let Some(j) = a.jobs {
        config.grid.jobs = j;
    }
    if let Some(e) = a.max_epochs {
        config.train.max_epochs = e;
    }
    config.validate()?;
    let up = Dataset::load(&a.upstream)?;
    up.expect_role(Role::Upstream, &a.upstream)?;
    let down = Dataset::load(&a.downstream)?;
    down.expect_role(Role::Downstream, &a.downstream)?;
    prepare_out(&a.out, a.force)?;
    write_json(&a.out.join(CONFIG_FILE), &config)?;
    let report = run_experiment_grid(
        &up.sources(),
        &down.sources(),
        &config.model,
        &config.train,
        &config.grid,
        config.seed,
        Some(&a.out),
    )?;
    print!("{}", report.table());
    println!("grid written to {}", a.out.join("grid.csv").display());
    Ok(())
}
