use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use jrrelp_core::config::TrainConfig;
use jrrelp_core::corpus::{
    dataset_to_json, generate_synthetic, parse_dataset, preprocess, Dataset, DatasetFormat, Split,
    SyntheticSpec,
};
use jrrelp_core::embeddings::Checkpoint;
use jrrelp_core::metrics::EvalReport;
use jrrelp_core::trainer::{self, ablate, load_model, vocab_hash, Evaluation, PreparedData};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{emit, ensure_dir, read_bytes, read_text, verify_dir, RunManifest};

pub const TRAIN_FILE: &str = "train.json";
pub const DEV_FILE: &str = "dev.json";
pub const TEST_FILE: &str = "test.json";
pub const SCORES_FILE: &str = "scores.json";
pub const HISTORY_FILE: &str = "history.json";
pub const ABLATION_FILE: &str = "ablation.json";

/// Dev and test scores of a finished training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub architecture: String,
    pub ablation: String,
    pub best_epoch: usize,
    pub dev: Evaluation,
    pub test: Option<Evaluation>,
}

struct Splits {
    train: Dataset,
    dev: Option<Dataset>,
    test: Option<Dataset>,
}

fn read_dataset(path: &Path, split: Split, manifest: &mut RunManifest) -> Result<Dataset, CliError> {
    let bytes = read_bytes(path)?;
    manifest.record_input(path, &bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Core(jrrelp_core::Error::Load(format!("{} is not UTF-8", path.display()))))?;
    Ok(parse_dataset(&text, split)?)
}

/// Read `train.json` and, when present, `dev.json` and `test.json`.
fn load_splits(dir: &Path, manifest: &mut RunManifest) -> Result<Splits, CliError> {
    verify_dir(dir)?;
    let optional = |name: &str, split: Split, m: &mut RunManifest| {
        let path = dir.join(name);
        path.exists().then(|| read_dataset(&path, split, m)).transpose()
    };
    let train = read_dataset(&dir.join(TRAIN_FILE), Split::Train, manifest)?;
    let dev = optional(DEV_FILE, Split::Dev, manifest)?;
    let test = optional(TEST_FILE, Split::Test, manifest)?;
    Ok(Splits { train, dev, test })
}

fn load_config(path: &Path, manifest: &mut RunManifest) -> Result<TrainConfig, CliError> {
    let text = read_text(path)?;
    manifest.record_input(path, text.as_bytes());
    let config = TrainConfig::from_toml(&text)?;
    manifest.seed = Some(config.trainer.seed);
    manifest.config_hash = Some(config.hash());
    Ok(config)
}

fn prepare(config: &TrainConfig, splits: &Splits) -> Result<PreparedData, CliError> {
    Ok(PreparedData::new(&splits.train, splits.dev.as_ref(), splits.test.as_ref(), config)?)
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

pub fn preprocess_cmd(
    input: &Path,
    format: DatasetFormat,
    out: &Path,
    min_count: usize,
    include_negative: bool,
) -> Result<(), CliError> {
    let mut m = RunManifest::new("preprocess");
    let train = match format {
        DatasetFormat::TacredJson => read_dataset(input, Split::Train, &mut m)?,
    };
    let artifacts = preprocess(&train, min_count, include_negative)?;
    ensure_dir(out)?;
    emit(&mut m, out, TRAIN_FILE, &artifacts.dataset)?;
    emit(&mut m, out, "train.typed.json", dataset_to_json(&train.type_substituted()))?;
    emit(&mut m, out, "vocab.json", &artifacts.vocab)?;
    emit(&mut m, out, "answers.json", &artifacts.answers)?;
    let vocab = jrrelp_core::corpus::parse_vocab(&artifacts.vocab)?;
    m.vocab_hash = Some(vocab_hash(&vocab));
    m.finish(out)?;
    println!(
        "{} sentences, {} tokens, {} relations -> {}",
        train.len(),
        vocab.tokens.len(),
        vocab.relations.len(),
        out.display()
    );
    Ok(())
}

pub fn synth_cmd(spec_path: Option<&Path>, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut m = RunManifest::new("synth");
    let spec = match spec_path {
        Some(p) => {
            let text = read_text(p)?;
            m.record_input(p, text.as_bytes());
            SyntheticSpec::from_toml(&text)?
        }
        None => SyntheticSpec::default(),
    };
    m.seed = Some(seed);
    let (train, dev, test) = generate_synthetic(&spec, seed)?;
    ensure_dir(out)?;
    emit(&mut m, out, "spec.toml", spec.to_toml())?;
    emit(&mut m, out, TRAIN_FILE, dataset_to_json(&train))?;
    emit(&mut m, out, DEV_FILE, dataset_to_json(&dev))?;
    emit(&mut m, out, TEST_FILE, dataset_to_json(&test))?;
    m.finish(out)?;
    println!(
        "train {} / dev {} / test {} sentences -> {}",
        train.len(),
        dev.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

pub fn train_cmd(config_path: &Path, data_dir: &Path, out: &Path) -> Result<(), CliError> {
    let mut m = RunManifest::new("train");
    let config = load_config(config_path, &mut m)?;
    let splits = load_splits(data_dir, &mut m)?;
    let data = prepare(&config, &splits)?;
    m.vocab_hash = Some(vocab_hash(&data.vocab));
    ensure_dir(out)?;

    let mut log = Vec::new();
    let result = trainer::train(&config, &data, Some(&mut log));
    // The step log is kept even when training diverges.
    emit(&mut m, out, "steps.jsonl", &log)?;
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            m.finish(out)?;
            return Err(e.into());
        }
    };

    let batch = config.trainer.batch_size;
    let nr = data.no_relation();
    let scores = RunScores {
        architecture: config.model.architecture.as_str().to_string(),
        ablation: config.trainer.ablation.as_str().to_string(),
        best_epoch: outcome.history.best_epoch,
        dev: outcome.model.evaluate(&data.dev, batch, nr)?,
        test: if data.test.is_empty() {
            None
        } else {
            Some(outcome.model.evaluate(&data.test, batch, nr)?)
        },
    };
    emit(&mut m, out, "config.toml", config.to_toml())?;
    emit(&mut m, out, "checkpoint.json", outcome.checkpoint.to_json())?;
    emit(&mut m, out, HISTORY_FILE, pretty(&outcome.history))?;
    emit(&mut m, out, SCORES_FILE, pretty(&scores))?;
    m.finish(out)?;

    let mut rows = vec![("dev", &scores.dev)];
    if let Some(t) = &scores.test {
        rows.push(("test", t));
    }
    print!("{}", score_table(&rows));
    println!("best epoch {} -> {}", scores.best_epoch, out.display());
    Ok(())
}

fn score_table(rows: &[(&str, &Evaluation)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:<6} {:>9} {:>9} {:>9}", "split", "avg", "P", "R", "F1");
    let mut row = |split: &str, avg: &str, r: &EvalReport| {
        let _ = writeln!(
            s,
            "{split:<6} {avg:<6} {:>9.1} {:>9.1} {:>9.1}",
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1
        );
    };
    for (split, e) in rows {
        row(split, "micro", &e.micro);
        row(split, "macro", &e.macro_avg);
    }
    s
}

pub fn eval_cmd(checkpoint_path: &Path, data_dir: &Path, split: Split, json: bool) -> Result<(), CliError> {
    if let Some(parent) = checkpoint_path.parent() {
        verify_dir(parent)?;
    }
    let text = read_text(checkpoint_path)?;
    let checkpoint = Checkpoint::from_json(&text)?;
    let config = TrainConfig::from_toml(&checkpoint.config)?;
    let mut m = RunManifest::new("eval");
    let splits = load_splits(data_dir, &mut m)?;
    let data = prepare(&config, &splits)?;
    let (config, model) = load_model(&checkpoint, &data)?;
    let examples = match split {
        Split::Train => &data.train,
        Split::Dev => &data.dev,
        Split::Test => &data.test,
    };
    if examples.is_empty() {
        return Err(jrrelp_core::Error::Input(format!("data has no {} split", split.as_str())).into());
    }
    let eval = model.evaluate(examples, config.trainer.batch_size, data.no_relation())?;
    if json {
        println!("{}", serde_json::to_string(&eval).expect("evaluation serializes"));
    } else {
        print!("{}", score_table(&[(split.as_str(), &eval)]));
    }
    Ok(())
}

pub fn ablate_cmd(config_path: &Path, data_dir: &Path, seeds: &[u64], out: Option<&Path>) -> Result<(), CliError> {
    let mut m = RunManifest::new("ablate");
    let config = load_config(config_path, &mut m)?;
    m.seed = None;
    let splits = load_splits(data_dir, &mut m)?;
    let data = prepare(&config, &splits)?;
    m.vocab_hash = Some(vocab_hash(&data.vocab));
    let table = ablate(&config, &data, seeds)?;

    let mut grid = String::new();
    let _ = writeln!(grid, "{:<12} {:>6} {:>9} {:>9} {:>9} {:>9}", "arm", "seed", "dev F1", "P", "R", "F1");
    for r in &table.runs {
        match (r.dev_f1, r.test) {
            (Some(d), Some(t)) => {
                let _ = writeln!(
                    grid,
                    "{:<12} {:>6} {:>9.1} {:>9.1} {:>9.1} {:>9.1}",
                    r.arm.as_str(),
                    r.seed,
                    100.0 * d,
                    100.0 * t.precision,
                    100.0 * t.recall,
                    100.0 * t.f1
                );
            }
            _ => {
                let why = r.failure.as_deref().unwrap_or("no scores");
                let _ = writeln!(grid, "{:<12} {:>6} failed: {why}", r.arm.as_str(), r.seed);
            }
        }
    }
    let text = format!("{grid}\nmedian over {} seeds\n{}", seeds.len(), table.render());
    print!("{text}");
    if let Some(out) = out {
        ensure_dir(out)?;
        emit(&mut m, out, "config.toml", config.to_toml())?;
        emit(&mut m, out, ABLATION_FILE, pretty(&table))?;
        emit(&mut m, out, "table.txt", &text)?;
        m.finish(out)?;
    }
    Ok(())
}

pub fn report_cmd(runs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let report = crate::report::collect(runs)?;
    let table = report.render();
    print!("{table}");
    if let Some(out) = out {
        let mut m = RunManifest::new("report");
        for dir in runs {
            for name in [SCORES_FILE, HISTORY_FILE, ABLATION_FILE] {
                let p = dir.join(name);
                if p.exists() {
                    m.record_input(&p, &read_bytes(&p)?);
                }
            }
        }
        ensure_dir(out)?;
        emit(&mut m, out, "table.txt", &table)?;
        emit(&mut m, out, "loss_curves.csv", report.curves_csv())?;
        m.finish(out)?;
    }
    Ok(())
}
