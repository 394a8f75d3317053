//! Pipeline commands. Each writes its artifacts under the output directory
//! and returns a JSON summary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pgu_core::data::{incremental_batches, poison_labels, split_forget, Dataset, FlipMask, SplitMode, Splits};
use pgu_core::eval::{error_rate, mia_build, mia_evaluate, mia_train_attacker, output_entropy, MiaConfig, ReadoutReport, RocCurve};
use pgu_core::nn::{init_model, train_ce, EpochLog, NetworkModel};
use pgu_core::subspace::{accumulate_gram, eigenbasis, GramCache};
use pgu_core::unlearn::{depoison_run, incremental_unlearn, pgu_run, remove_class_rows, UnlearnMode, UnlearnState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::persist::{atomic_write, load_checkpoint, load_gram, read_file, save_checkpoint, save_gram, GramCacheFile, FORMAT_VERSION};

/// Batch size for Gram accumulation; any value gives the same sums.
const GRAM_BATCH: usize = 250;

/// Explicit list of training ids to forget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetManifest {
    pub format_version: u32,
    #[serde(default)]
    pub round: Option<usize>,
    pub ids: Vec<u64>,
}

/// Ground truth of a label-flip poisoning, written by `train`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonManifest {
    pub format_version: u32,
    pub mask: FlipMask,
}

/// Result of a command: files written plus a JSON summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// Inputs shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        let mut config = config;
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = out.unwrap_or_else(|| config.output_dir.clone());
        Context { config, out }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn echo(&self) -> Value {
        serde_json::to_value(&self.config).expect("config serialises")
    }

    /// Splits plus the training set exactly as the model saw it (poisoned
    /// when a poison block is configured).
    fn data(&self) -> Result<(Splits, Dataset, Option<FlipMask>)> {
        let splits = self.config.splits()?;
        match &self.config.poison {
            Some(spec) => {
                let (poisoned, mask) = poison_labels(&splits.train, spec)?;
                Ok((splits, poisoned, Some(mask)))
            }
            None => {
                let train = splits.train.clone();
                Ok((splits, train, None))
            }
        }
    }

    fn fresh_model(&self, data: &Dataset) -> Result<NetworkModel> {
        let specs = self.config.layer_specs(data.shape(), data.num_classes())?;
        Ok(init_model(data.shape(), &specs, self.config.seed)?)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| CliError::corrupt(path, e.to_string()))
}

fn metrics_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,train_error\n");
    for l in logs {
        writeln!(s, "{},{},{}", l.epoch, l.loss, l.train_error).unwrap();
    }
    s
}

fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (f, t) in &curve.points {
        writeln!(s, "{f},{t}").unwrap();
    }
    s
}

fn train_on(ctx: &Context, data: &Dataset, stem: &str) -> Result<(NetworkModel, Vec<PathBuf>, Value)> {
    let mut model = ctx.fresh_model(data)?;
    let start = Instant::now();
    let logs = train_ce(&mut model, data, &ctx.config.train)?;
    let wall = start.elapsed().as_secs_f64();
    let ckpt = ctx.path(&format!("{stem}.pgu"));
    save_checkpoint(&ckpt, &model)?;
    let metrics = ctx.path(&format!("{stem}_metrics.csv"));
    atomic_write(&metrics, metrics_csv(&logs).as_bytes())?;
    let summary = json!({
        "train_size": data.len(),
        "final_loss": logs.last().map(|l| l.loss),
        "final_train_error": logs.last().map(|l| l.train_error),
        "wall_time_s": wall,
    });
    Ok((model, vec![ckpt, metrics], summary))
}

/// Trains on the full (possibly poisoned) training set, then caches the
/// full-data Gram with its eigenbasis.
pub fn cmd_train(ctx: &Context) -> Result<Outcome> {
    let (splits, train, mask) = ctx.data()?;
    let (model, mut files, mut summary) = train_on(ctx, &train, "model")?;
    let cache = accumulate_gram(&model, &train, GRAM_BATCH)?;
    let basis = eigenbasis(&cache)?;
    let gram = ctx.path("gram.pgg");
    save_gram(&gram, &GramCacheFile { cache, basis: Some(basis) })?;
    files.push(gram);
    if let Some(mask) = mask {
        let p = ctx.path("poison.json");
        write_json(&p, &PoisonManifest { format_version: FORMAT_VERSION, mask })?;
        files.push(p);
    }
    summary["err_test"] = json!(error_rate(&model, &splits.test, None)?);
    summary["format_version"] = json!(FORMAT_VERSION);
    summary["config_echo"] = ctx.echo();
    let report = ctx.path("train_report.json");
    write_json(&report, &summary)?;
    files.push(report);
    Ok(Outcome { files, summary })
}

fn load_forget_ids(paths: &[PathBuf]) -> Result<Vec<Vec<u64>>> {
    paths.iter().map(|p| read_json::<ForgetManifest>(p).map(|m| m.ids)).collect()
}

/// Trains from scratch on the clean training set minus every listed
/// forget id: the reference an unlearned model is compared against.
pub fn cmd_retrain(ctx: &Context, forget: &[PathBuf]) -> Result<Outcome> {
    let splits = ctx.config.splits()?;
    let ids: Vec<u64> = load_forget_ids(forget)?.concat();
    let retain = splits.train.without_ids(&ids);
    if retain.is_empty() {
        return Err(CliError::Config("nothing left to train on".into()));
    }
    let (model, mut files, mut summary) = train_on(ctx, &retain, "retrained")?;
    summary["err_test"] = json!(error_rate(&model, &splits.test, None)?);
    summary["format_version"] = json!(FORMAT_VERSION);
    summary["config_echo"] = ctx.echo();
    let report = ctx.path("retrain_report.json");
    write_json(&report, &summary)?;
    files.push(report);
    Ok(Outcome { files, summary })
}

/// Writes forget manifests: one for a single request, or one per round
/// when the config asks for incremental rounds.
pub fn cmd_split(ctx: &Context) -> Result<Outcome> {
    let splits = ctx.config.splits()?;
    let spec = &ctx.config.unlearn.split;
    let batches = match (ctx.config.unlearn.rounds, &spec.mode) {
        (Some(rounds), SplitMode::PerClassRandom { n_per_class }) => {
            incremental_batches(&splits.train, *n_per_class, rounds, spec.seed)?
        }
        _ => vec![split_forget(&splits.train, spec)?.forget],
    };
    let single = batches.len() == 1 && ctx.config.unlearn.rounds.is_none();
    let mut files = Vec::new();
    for (i, ids) in batches.iter().enumerate() {
        let (name, round) = if single { ("forget.json".to_string(), None) } else { (format!("forget_r{}.json", i + 1), Some(i + 1)) };
        let p = ctx.path(&name);
        write_json(&p, &ForgetManifest { format_version: FORMAT_VERSION, round, ids: ids.clone() })?;
        files.push(p);
    }
    let summary = json!({ "manifests": files, "sizes": batches.iter().map(Vec::len).collect::<Vec<_>>() });
    Ok(Outcome { files, summary })
}

fn history_csv(rounds: &[UnlearnState]) -> String {
    let mut s = String::from("round,epoch,loss,acc_forget,acc_val\n");
    for st in rounds {
        for h in &st.history {
            writeln!(s, "{},{},{},{},{}", st.round, h.epoch, h.loss, h.acc_forget, h.acc_val).unwrap();
        }
    }
    s
}

fn load_model_and_gram(ctx: &Context, checkpoint: Option<&Path>, gram: Option<&Path>) -> Result<(NetworkModel, GramCache)> {
    let model = load_checkpoint(checkpoint.unwrap_or(&ctx.path("model.pgu")))?;
    let cache = load_gram(gram.unwrap_or(&ctx.path("gram.pgg")))?.cache;
    cache.check_model(&model)?;
    Ok((model, cache))
}

/// Runs PGU for one or more sequential forget manifests. Retain samples are
/// never read: the forget set is selected by id and the rest is dropped.
pub fn cmd_unlearn(ctx: &Context, checkpoint: Option<&Path>, gram: Option<&Path>, forget: &[PathBuf]) -> Result<Outcome> {
    let (model, full) = load_model_and_gram(ctx, checkpoint, gram)?;
    let forget_paths = if forget.is_empty() { vec![ctx.path("forget.json")] } else { forget.to_vec() };
    let batches = load_forget_ids(&forget_paths)?;
    let (splits, train, _) = ctx.data()?;
    let forget_sets = batches.iter().map(|ids| train.select_ids(ids)).collect::<pgu_core::Result<Vec<_>>>()?;
    drop(train);
    let cfg = &ctx.config.unlearn.params;

    let mut states: Vec<UnlearnState> = Vec::new();
    let mut rounds = Vec::new();
    let mut files = Vec::new();
    let start = Instant::now();
    for (i, f) in forget_sets.iter().enumerate() {
        let t = Instant::now();
        let st = match states.last() {
            None => pgu_run(&model, f, &full, &splits.val, cfg)?,
            Some(prev) => incremental_unlearn(prev, f, &splits.val, cfg)?,
        };
        let wall = t.elapsed().as_secs_f64();
        if forget_sets.len() > 1 {
            let p = ctx.path(&format!("unlearned_r{}.pgu", i + 1));
            save_checkpoint(&p, &st.model)?;
            files.push(p);
        }
        rounds.push(json!({
            "round": st.round,
            "forget_size": f.len(),
            "epochs": st.history.len(),
            "stopped_at": st.stopped_at,
            "ranks": st.projector.ranks(),
            "wall_time_s": wall,
            "err_forget": error_rate(&st.model, f, None)?,
        }));
        states.push(st);
    }
    let wall = start.elapsed().as_secs_f64();
    let last = states.last().expect("at least one round");
    let ckpt = ctx.path("unlearned.pgu");
    save_checkpoint(&ckpt, &last.model)?;
    files.push(ckpt);
    let removed = ctx.config.removed_classes();
    if cfg.mode == UnlearnMode::ClassRemoval && !removed.is_empty() {
        let (pruned, _) = remove_class_rows(&last.model, &removed)?;
        let p = ctx.path("unlearned_pruned.pgu");
        save_checkpoint(&p, &pruned)?;
        files.push(p);
    }
    let hist = ctx.path("history.csv");
    atomic_write(&hist, history_csv(&states).as_bytes())?;
    files.push(hist);
    let summary = json!({
        "format_version": FORMAT_VERSION,
        "rounds": rounds,
        "err_test": error_rate(&last.model, &splits.test, None)?,
        "wall_time_s": wall,
        "config_echo": ctx.echo(),
    });
    let report = ctx.path("unlearn_report.json");
    write_json(&report, &summary)?;
    files.push(report);
    Ok(Outcome { files, summary })
}

/// Depoisons a model trained on poisoned labels, using the flip manifest
/// written by `train` as the forget set.
pub fn cmd_depoison(ctx: &Context, checkpoint: Option<&Path>, gram: Option<&Path>, forget: Option<&Path>) -> Result<Outcome> {
    let (model, full) = load_model_and_gram(ctx, checkpoint, gram)?;
    let manifest: PoisonManifest = read_json(forget.unwrap_or(&ctx.path("poison.json")))?;
    let (splits, train, _) = ctx.data()?;
    let f = train.select_ids(&manifest.mask.flipped_ids)?;
    let start = Instant::now();
    let st = depoison_run(&model, &f, &full, &splits.val, &ctx.config.unlearn.params)?;
    let wall = start.elapsed().as_secs_f64();
    let ckpt = ctx.path("depoisoned.pgu");
    save_checkpoint(&ckpt, &st.model)?;
    let hist = ctx.path("depoison_history.csv");
    atomic_write(&hist, history_csv(std::slice::from_ref(&st)).as_bytes())?;
    let truth = f.with_labels(manifest.mask.true_labels.clone())?;
    let summary = json!({
        "format_version": FORMAT_VERSION,
        "epochs": st.history.len(),
        "stopped_at": st.stopped_at,
        "err_test_before": error_rate(&model, &splits.test, None)?,
        "err_test_after": error_rate(&st.model, &splits.test, None)?,
        "err_flipped_true_labels_after": error_rate(&st.model, &truth, None)?,
        "wall_time_s": wall,
        "config_echo": ctx.echo(),
    });
    let report = ctx.path("depoison_report.json");
    write_json(&report, &summary)?;
    Ok(Outcome { files: vec![ckpt, hist, report], summary })
}

/// Relabels `data` for a model whose output rows for `removed` were
/// deleted; otherwise returns it unchanged.
fn align_labels(model: &NetworkModel, data: &Dataset, removed: &BTreeSet<usize>) -> Result<Dataset> {
    let c = data.num_classes();
    if model.num_classes() == c {
        return Ok(data.clone());
    }
    if removed.is_empty() || model.num_classes() + removed.len() != c {
        return Err(CliError::Config(format!("model has {} outputs, dataset {c} classes", model.num_classes())));
    }
    let mut next = 0;
    let mapping: Vec<Option<usize>> = (0..c)
        .map(|k| {
            (!removed.contains(&k)).then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    Ok(data.remap_labels(&mapping)?)
}

/// Readout report for a checkpoint. `exclude` overrides the classes
/// dropped for the retain-test error (default: the config's removed
/// classes).
pub fn cmd_eval(ctx: &Context, checkpoint: Option<&Path>, forget: &[PathBuf], exclude: Option<BTreeSet<usize>>) -> Result<Outcome> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("unlearned.pgu"));
    let model = load_checkpoint(&path)?;
    let start = Instant::now();
    let (splits, train, _) = ctx.data()?;
    let ids: Vec<u64> = load_forget_ids(forget)?.concat();
    let removed = exclude.unwrap_or_else(|| ctx.config.removed_classes());
    let forget_set = (!ids.is_empty()).then(|| train.select_ids(&ids)).transpose()?;
    let retain = train.without_ids(&ids);

    let pruned = model.num_classes() < train.num_classes();
    let err = |d: &Dataset, excl: Option<&BTreeSet<usize>>| -> Result<Option<f64>> {
        let d = align_labels(&model, d, &removed)?;
        if d.is_empty() {
            return Ok(None);
        }
        Ok(Some(error_rate(&model, &d, if pruned { None } else { excl })?))
    };
    let entropy_forget = match &forget_set {
        Some(f) => output_entropy(&model, f)?,
        None => Vec::new(),
    };
    let report = ReadoutReport {
        err_retain: err(&retain, None)?,
        err_forget: match &forget_set {
            Some(f) if !pruned => Some(error_rate(&model, f, None)?),
            _ => None,
        },
        err_test: if pruned { None } else { Some(error_rate(&model, &splits.test, None)?) },
        err_retain_test: if removed.is_empty() { None } else { err(&splits.test, Some(&removed))? },
        entropy_forget,
        wall_time_s: start.elapsed().as_secs_f64(),
        config_echo: ctx.echo(),
    };
    let rp = ctx.path("eval_report.json");
    write_json(&rp, &json!({ "format_version": FORMAT_VERSION, "checkpoint": path, "report": report }))?;
    let mut csv = String::from("value\n");
    for h in &report.entropy_forget {
        writeln!(csv, "{h}").unwrap();
    }
    let ep = ctx.path("entropy.csv");
    atomic_write(&ep, csv.as_bytes())?;
    let summary = serde_json::to_value(&report).expect("report serialises");
    Ok(Outcome { files: vec![rp, ep], summary })
}

/// Shadow-model membership inference: control (trained on D_f) versus
/// target (trained on D_f, then unlearned) curves.
pub fn cmd_mia(ctx: &Context, forget: Option<&Path>) -> Result<Outcome> {
    let block = ctx.config.mia.as_ref().ok_or_else(|| CliError::Config("config has no mia block".into()))?;
    let mia = MiaConfig {
        k_pos: block.k,
        k_neg: block.k,
        groups: block.groups,
        seed: block.seed,
        drop_classes: ctx.config.removed_classes(),
    };
    mia.validate().map_err(|e| CliError::Resource(e.to_string()))?;
    let ids = read_json::<ForgetManifest>(forget.unwrap_or(&ctx.path("forget.json")))?.ids;
    let (splits, train, _) = ctx.data()?;
    let specs = ctx.config.layer_specs(train.shape(), train.num_classes())?;
    let start = Instant::now();
    let build = mia_build(&train, &ids, &specs, &ctx.config.train, &mia)?;
    let scorer = mia_train_attacker(&build.train, &build.val)?;
    let forget_set = train.select_ids(&ids)?;
    let unlearned = build
        .positive_test_models
        .iter()
        .map(|m| {
            let full = accumulate_gram(m, &train, GRAM_BATCH)?;
            Ok(pgu_run(m, &forget_set, &full, &splits.val, &ctx.config.unlearn.params)?.model)
        })
        .collect::<Result<Vec<_>>>()?;
    let ev = mia_evaluate(&scorer, &build.positive_test_models, &unlearned, &build.negative_test_models, &forget_set, &mia.drop_classes)?;
    let wall = start.elapsed().as_secs_f64();

    let mut files = Vec::new();
    for (name, curve) in [("roc_control.csv", &ev.control.curve), ("roc_target.csv", &ev.target.curve)] {
        let p = ctx.path(name);
        atomic_write(&p, roc_csv(curve).as_bytes())?;
        files.push(p);
    }
    let roc = ctx.path("roc.json");
    write_json(&roc, &json!({ "control": ev.control.curve, "target": ev.target.curve }))?;
    files.push(roc);
    let summary = json!({
        "format_version": FORMAT_VERSION,
        "control_auc": ev.control.curve.auc,
        "target_auc": ev.target.curve.auc,
        "attacker": { "l2": scorer.l2, "epochs": scorer.epochs, "val_f1": scorer.val_f1, "threshold": scorer.threshold },
        "wall_time_s": wall,
        "config_echo": ctx.echo(),
    });
    let auc = ctx.path("auc.json");
    write_json(&auc, &summary)?;
    files.push(auc);
    Ok(Outcome { files, summary })
}
