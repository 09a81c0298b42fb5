use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use jrrelp_core::config::TrainConfig;
use jrrelp_core::trainer::{AblationTable, Prf, TrainHistory};

use crate::commands::{RunScores, ABLATION_FILE, HISTORY_FILE, SCORES_FILE};
use crate::error::CliError;
use crate::manifest::{read_text, verify_dir};

/// One table row: a training run, or one arm of an ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub run: String,
    pub model: String,
    pub arm: String,
    /// Split the scores come from.
    pub split: &'static str,
    pub scores: Prf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub run: String,
    pub history: TrainHistory,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<Row>,
    pub curves: Vec<Curve>,
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Core(jrrelp_core::Error::Load(format!("{}: {e}", path.display()))))
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Read train-run and ablation directories in the order given.
pub fn collect(dirs: &[PathBuf]) -> Result<Report, CliError> {
    let mut report = Report::default();
    for dir in dirs {
        verify_dir(dir)?;
        let name = run_name(dir);
        if dir.join(SCORES_FILE).exists() {
            let scores: RunScores = parse(&dir.join(SCORES_FILE))?;
            let (split, eval) = match &scores.test {
                Some(t) => ("test", t),
                None => ("dev", &scores.dev),
            };
            report.rows.push(Row {
                run: name.clone(),
                model: scores.architecture.clone(),
                arm: scores.ablation.clone(),
                split,
                scores: Prf::from(&eval.micro),
            });
            let history = parse(&dir.join(HISTORY_FILE))?;
            report.curves.push(Curve { run: name, history });
        } else if dir.join(ABLATION_FILE).exists() {
            let table: AblationTable = parse(&dir.join(ABLATION_FILE))?;
            let model = TrainConfig::load(&dir.join("config.toml"))?
                .model
                .architecture
                .as_str()
                .to_string();
            for arm in &table.arms {
                if let Some(m) = arm.median {
                    report.rows.push(Row {
                        run: name.clone(),
                        model: model.clone(),
                        arm: format!("{} (median)", arm.arm.as_str()),
                        split: "test",
                        scores: m,
                    });
                }
            }
            for r in &table.runs {
                if let Some(h) = &r.history {
                    report.curves.push(Curve {
                        run: format!("{name}/{}/{}", r.arm.as_str(), r.seed),
                        history: h.clone(),
                    });
                }
            }
        } else {
            return Err(CliError::Core(jrrelp_core::Error::Input(format!(
                "{} holds neither {SCORES_FILE} nor {ABLATION_FILE}",
                dir.display()
            ))));
        }
    }
    Ok(report)
}

impl Report {
    /// Fixed-width comparison table, micro scores as percentages.
    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|r| r.run.len()).max().unwrap_or(0).max(3);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<w$} {:<12} {:<22} {:<5} {:>9} {:>9} {:>9}",
            "run", "model", "objective", "split", "P", "R", "F1"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$} {:<12} {:<22} {:<5} {:>9.1} {:>9.1} {:>9.1}",
                r.run,
                r.model,
                r.arm,
                r.split,
                100.0 * r.scores.precision,
                100.0 * r.scores.recall,
                100.0 * r.scores.f1
            );
        }
        s
    }

    /// Per-epoch losses and dev F1, one row per run and epoch.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("run,epoch,l_re,l_kglp,l_coupling,l_joint,dev_f1,lr\n");
        for c in &self.curves {
            for e in &c.history.epochs {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    c.run, e.epoch, e.loss.l_re, e.loss.l_kglp, e.loss.l_coupling, e.loss.l_joint, e.dev.f1, e.lr
                );
            }
        }
        s
    }
}
