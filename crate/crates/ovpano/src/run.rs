//! The `gen`, `train`, `eval`, `ablate`, `gradcheck` and `report` commands.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ovpano_core::checks::{gradient_suite, ComponentCheck};
use ovpano_core::eval::{evaluate_sample, merge_reports};
use ovpano_core::metrics::{PQReport, Summary};
use ovpano_core::model::{Model, ModelConfig};
use ovpano_core::sample::Sample;
use ovpano_core::train::{ablation_ladder, train, EvalConfig, StepLog, Task, TrainConfig, TrainState};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, load_split, read_manifest, DatasetManifest};
use crate::error::{io_err, Error, Result};
use crate::kv::{self, KvDoc};
use crate::report::{self, ABLATION_FILE, METRICS_FILE, METRICS_HEADER, REPORT_FILE};

pub const LOG_FILE: &str = "train.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.ovc";
pub const CONFIG_FILE: &str = "config.txt";

pub fn build_task(m: &DatasetManifest, model: &ModelConfig) -> Result<Task> {
    Ok(Task::new(m.core.vocab.clone(), m.text_embeddings()?, model)?)
}

pub fn format_log(log: &StepLog) -> String {
    let mut s = format!("step={} epoch={} lr={:?}", log.step, log.epoch, log.lr);
    for (name, v) in &log.components {
        s.push_str(&format!(" {name}={v:?}"));
    }
    s.push_str(&format!(" total={:?}", log.total));
    s
}

/// Parses one log line into `(key, value)` pairs.
pub fn parse_log_line(line: &str) -> Vec<(&str, &str)> {
    line.split_whitespace().filter_map(|kv| kv.split_once('=')).collect()
}

/// Mean total loss of each epoch in a training log.
pub fn epoch_means(log: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(log).map_err(io_err(log))?;
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let pairs = parse_log_line(line);
        let field = |k: &str| pairs.iter().find(|p| p.0 == k).map(|p| p.1);
        let bad = |msg: &str| Error::Parse {
            origin: log.display().to_string(),
            line: i + 1,
            msg: msg.into(),
        };
        let epoch: usize = field("epoch").and_then(|v| v.parse().ok()).ok_or_else(|| bad("no epoch"))?;
        let total: f64 = field("total").and_then(|v| v.parse().ok()).ok_or_else(|| bad("no total"))?;
        if sums.len() <= epoch {
            sums.resize(epoch + 1, (0.0, 0));
        }
        sums[epoch].0 += total;
        sums[epoch].1 += 1;
    }
    Ok(sums.iter().filter(|s| s.1 > 0).map(|s| s.0 / s.1 as f64).collect())
}

/// Drops log lines past `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let Ok(f) = File::open(path) else {
        return Ok(());
    };
    let mut keep = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        let s: Option<u64> = parse_log_line(&line)
            .iter()
            .find(|p| p.0 == "step")
            .and_then(|p| p.1.parse().ok());
        if s.is_some_and(|s| s <= step) {
            keep.push_str(&line);
            keep.push('\n');
        }
    }
    std::fs::write(path, keep).map_err(io_err(path))
}

pub fn gen(cfg: &RunConfig) -> Result<DatasetManifest> {
    dataset::generate(&cfg.data, &cfg.gen_spec()?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains into `out`, resuming from `resume` when given. On divergence the
/// last good state is written to the checkpoint before the error is returned.
pub fn train_into(cfg: &RunConfig, tcfg: &TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let manifest = read_manifest(&cfg.data)?;
    let split = load_split(&cfg.data, &manifest, &manifest.core.train)?;
    let task = build_task(&manifest, &tcfg.model)?;
    let mut run_cfg = cfg.clone();
    run_cfg.train = tcfg.clone();
    run_cfg.seed = Some(tcfg.seed);
    run_cfg.milestones = Some(tcfg.milestones.clone());
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, run_cfg.to_kv().render()).map_err(io_err(&cfg_path))?;

    let log_path = out.join(LOG_FILE);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut state = match resume {
        Some(p) => {
            let ck = Checkpoint::read(p)?;
            ck.check_dataset(&manifest)?;
            if ck.config.render() != run_cfg.training_kv().render() {
                return Err(Error::Usage(format!(
                    "{} was trained with a different configuration",
                    p.display()
                )));
            }
            truncate_log(&log_path, ck.state.step)?;
            ck.state
        }
        None => {
            if log_path.exists() {
                std::fs::remove_file(&log_path).map_err(io_err(&log_path))?;
            }
            TrainState::new(tcfg)?
        }
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut log = BufWriter::new(file);
    let n = split.samples.len() as u64;
    let save = |st: &TrainState| Checkpoint::new(&run_cfg, &manifest, st.clone()).write(&ckpt_path);
    let mut io_failure: Option<Error> = None;
    let halted = || ovpano_core::Error::Contract("training output could not be written".into());
    let result = train(&mut state, tcfg, &task, &split.samples, cfg.max_steps, |l, st| {
        let mut step_io = || -> Result<()> {
            writeln!(log, "{}", format_log(l)).map_err(io_err(&log_path))?;
            if st.step % n == 0 {
                log.flush().map_err(io_err(&log_path))?;
                save(st)?;
            }
            Ok(())
        };
        step_io().map_err(|e| {
            io_failure = Some(e);
            halted()
        })
    });
    log.flush().map_err(io_err(&log_path))?;
    save(&state)?;
    if let Some(e) = io_failure {
        return Err(e);
    }
    result?;
    Ok(TrainOutcome {
        state,
        checkpoint: ckpt_path,
        log: log_path,
    })
}

pub fn train_cmd(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let tcfg = cfg.train_config()?;
    train_into(cfg, &tcfg, &cfg.out, resume)
}

/// Evaluates scenes on up to `threads` threads and merges in scene order.
pub fn evaluate_parallel(model: &Model, task: &Task, samples: &[Sample], eval: &EvalConfig, threads: usize) -> Result<PQReport> {
    let threads = threads.clamp(1, samples.len().max(1));
    if threads == 1 {
        let reports = samples
            .iter()
            .map(|s| evaluate_sample(model, task, s, eval))
            .collect::<ovpano_core::Result<Vec<_>>>()?;
        return Ok(merge_reports(task, reports)?);
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<ovpano_core::Result<Vec<PQReport>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|x| evaluate_sample(model, task, x, eval)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    let mut all = Vec::with_capacity(samples.len());
    for p in parts {
        all.extend(p?);
    }
    Ok(merge_reports(task, all)?)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub eval: PQReport,
    pub train: PQReport,
}

/// Scores a checkpoint on the held-out and the training scenes and writes
/// the report files into `cfg.out`.
pub fn eval_cmd(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalOutcome> {
    let ck = Checkpoint::read(checkpoint)?;
    let manifest = read_manifest(&cfg.data)?;
    ck.check_dataset(&manifest)?;
    let model = &ck.state.model;
    let task = build_task(&manifest, &model.config)?;
    let ecfg = cfg.eval_config();
    let held = load_split(&cfg.data, &manifest, &manifest.core.eval)?;
    let eval = evaluate_parallel(model, &task, &held.samples, &ecfg, cfg.threads)?;
    let seen = load_split(&cfg.data, &manifest, &manifest.core.train)?;
    let train = evaluate_parallel(model, &task, &seen.samples, &ecfg, cfg.threads)?;

    let mut doc = KvDoc::new(REPORT_FILE);
    doc.push("checkpoint", checkpoint.display());
    doc.push("step", ck.state.step);
    doc.push("temperature", kv::float(model.temperature()));
    report::push_summary(&mut doc, "eval", held.samples.len(), &eval.summary());
    report::push_summary(&mut doc, "train", seen.samples.len(), &train.summary());
    let mut tsv = String::from(METRICS_HEADER);
    tsv.push_str(&report::metrics_rows("eval", &eval));
    tsv.push_str(&report::metrics_rows("train", &train));
    write_text(&cfg.out.join(REPORT_FILE), &doc.render())?;
    write_text(&cfg.out.join(METRICS_FILE), &tsv)?;
    Ok(EvalOutcome { eval, train })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Trains and scores every ablation row, writing `ablation.txt` into `cfg.out`.
pub fn ablate_cmd(cfg: &RunConfig, mut progress: impl FnMut(&str, &Summary)) -> Result<Vec<(String, Summary)>> {
    let base = cfg.train_config()?;
    let manifest = read_manifest(&cfg.data)?;
    let held = load_split(&cfg.data, &manifest, &manifest.core.eval)?;
    let mut rows = Vec::new();
    for (i, row) in ablation_ladder(&base, &cfg.eval_config()).into_iter().enumerate() {
        let dir = cfg.out.join("ablation").join(format!("{}-{}", i + 1, row.name.trim_start_matches('+')));
        let outcome = train_into(cfg, &row.train, &dir, None)?;
        let model = &outcome.state.model;
        let task = build_task(&manifest, &model.config)?;
        let r = evaluate_parallel(model, &task, &held.samples, &row.eval, cfg.threads)?;
        let s = r.summary();
        progress(row.name, &s);
        rows.push((row.name.to_string(), s));
    }
    write_text(&cfg.out.join(ABLATION_FILE), &report::ablation_table(&rows))?;
    Ok(rows)
}

pub fn gradcheck_cmd(instances: u64, tol: f64) -> Result<Vec<ComponentCheck>> {
    Ok(gradient_suite(instances, tol)?)
}

/// Renders whatever reports exist in `dir`.
pub fn report_cmd(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut any = false;
    for name in [REPORT_FILE, ABLATION_FILE] {
        let p = dir.join(name);
        if let Ok(text) = std::fs::read_to_string(&p) {
            any = true;
            out.push_str(&format!("== {}\n", p.display()));
            if name == REPORT_FILE {
                let doc = KvDoc::parse(&text, &p.display().to_string())?;
                let width = doc.entries().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in doc.entries() {
                    out.push_str(&format!("{k:<width$}  {v}\n"));
                }
            } else {
                out.push_str(&text);
            }
        }
    }
    if !any {
        return Err(Error::Usage(format!("no reports found in {}", dir.display())));
    }
    Ok(out)
}
