//! Round-robin multi-task training, evaluation and the task ablation grid.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HdExample, PosExample, TnExample};
use crate::decoder::mask_logits;
use crate::decoder::RuleLogits;
use crate::encoder::{ContextualEncoder, PreparedText, TrunkConfig};
use crate::error::{Error, Result};
use crate::heads::{HomographLexicon, HomographSite};
use crate::metrics::{
    corpus_wer, hd_accuracy, line_accuracy, EvalReport, HdPrediction, KEY_HD_MACRO, KEY_HD_MICRO, KEY_POS_ACC,
    KEY_TN_LINE_ACC, KEY_TN_TOKEN_ACC, KEY_TN_WER,
};
use crate::model::{argmax, homograph_site, ModelConfig, MultiTaskModel, Task};
use crate::nn::layers::update_running_stats;
use crate::nn::optim::{AdamW, AdamWConfig, StepDecay};
use crate::nn::{Graph, Reduction, Var};
use crate::rules::Ruleset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub iterations: usize,
    pub task_cycle: Vec<Task>,
    pub seed: u64,
    /// Validation and checkpoint cadence in steps; 0 disables it.
    pub validate_every: usize,
    pub beam_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 128,
            decay_factor: 0.2,
            decay_every: 16_000,
            iterations: 3_000,
            task_cycle: Task::ALL.to_vec(),
            seed: 0,
            validate_every: 500,
            beam_width: crate::decoder::DEFAULT_BEAM_WIDTH,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.task_cycle.is_empty() {
            return bad("task_cycle is empty");
        }
        if self.beam_width == 0 {
            return bad("beam_width must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.lr,
            factor: self.decay_factor,
            every: self.decay_every,
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW::new(AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        })
    }
}

/// A TN sentence with its gold rule at every application start token and
/// `None` on covered tails.
#[derive(Debug, Clone)]
pub struct TnItem {
    pub text: PreparedText,
    pub targets: Vec<Option<usize>>,
    pub mask: Array2<bool>,
    pub reference: String,
}

#[derive(Debug, Clone)]
pub struct PosItem {
    pub text: PreparedText,
    /// Tag index per word; untagged words are skipped by the loss.
    pub targets: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct HdItem {
    pub text: PreparedText,
    pub site: HomographSite,
    pub homograph: String,
    pub label: usize,
    pub gold: String,
}

/// Encoded examples for every task. Preparation depends only on the
/// frozen encoder and its tap layers, so one set can feed many models.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub tn: Vec<TnItem>,
    pub pos: Vec<PosItem>,
    pub hd: Vec<HdItem>,
}

impl TaskData {
    pub fn prepare(
        encoder: &dyn ContextualEncoder,
        trunk: &TrunkConfig,
        rules: &Ruleset,
        lexicon: &HomographLexicon,
        tn: &[TnExample],
        pos: &[PosExample],
        hd: &[HdExample],
    ) -> Result<TaskData> {
        let mut out = TaskData::default();
        for (i, ex) in tn.iter().enumerate() {
            let text = PreparedText::new(&ex.text, encoder, trunk)?;
            let n = text.seq.len();
            let mut targets = vec![None; n];
            for &(start, rule) in &ex.rules {
                if start >= n || rule >= rules.len() {
                    return Err(Error::Data(format!("tn example {i}: rule ({start}, {rule}) out of range")));
                }
                targets[start] = Some(rule);
            }
            let mask = rules.applicability_mask(&text.seq);
            out.tn.push(TnItem {
                text,
                targets,
                mask,
                reference: ex.normalization.clone(),
            });
        }
        for (i, ex) in pos.iter().enumerate() {
            let text = PreparedText::new(&ex.text(), encoder, trunk)?;
            if text.seq.word_count() != ex.tags.len() {
                return Err(Error::Data(format!(
                    "pos example {i}: {} words but {} tags",
                    text.seq.word_count(),
                    ex.tags.len()
                )));
            }
            let targets = ex.tags.iter().map(|t| t.map(|t| t.index())).collect();
            out.pos.push(PosItem { text, targets });
        }
        for (i, ex) in hd.iter().enumerate() {
            let label = lexicon.label_index(&ex.homograph, &ex.label).ok_or_else(|| {
                Error::Data(format!("hd example {i}: {}/{} not in the lexicon", ex.homograph, ex.label))
            })?;
            let text = PreparedText::new(&ex.sentence, encoder, trunk)?;
            let site = homograph_site(&text, ex.span.clone())?;
            out.hd.push(HdItem {
                text,
                site,
                homograph: ex.homograph.clone(),
                label,
                gold: ex.label.clone(),
            });
        }
        Ok(out)
    }

    pub fn for_model(model: &MultiTaskModel, tn: &[TnExample], pos: &[PosExample], hd: &[HdExample]) -> Result<TaskData> {
        TaskData::prepare(
            model.encoder.as_ref(),
            &model.config.trunk,
            &model.rules,
            &model.lexicon,
            tn,
            pos,
            hd,
        )
    }

    pub fn len(&self, task: Task) -> usize {
        match task {
            Task::Tn => self.tn.len(),
            Task::Pos => self.pos.len(),
            Task::Hd => self.hd.len(),
        }
    }

    pub fn batch(&self, task: Task, idx: &[usize]) -> TaskBatch<'_> {
        match task {
            Task::Tn => TaskBatch::Tn(idx.iter().map(|&i| &self.tn[i]).collect()),
            Task::Pos => TaskBatch::Pos(idx.iter().map(|&i| &self.pos[i]).collect()),
            Task::Hd => TaskBatch::Hd(idx.iter().map(|&i| &self.hd[i]).collect()),
        }
    }
}

/// One minibatch of a single task.
#[derive(Debug, Clone)]
pub enum TaskBatch<'a> {
    Tn(Vec<&'a TnItem>),
    Pos(Vec<&'a PosItem>),
    Hd(Vec<&'a HdItem>),
}

impl TaskBatch<'_> {
    pub fn task(&self) -> Task {
        match self {
            TaskBatch::Tn(_) => Task::Tn,
            TaskBatch::Pos(_) => Task::Pos,
            TaskBatch::Hd(_) => Task::Hd,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskBatch::Tn(b) => b.len(),
            TaskBatch::Pos(b) => b.len(),
            TaskBatch::Hd(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean cross-entropy over the batch's labeled positions.
pub fn task_loss(model: &MultiTaskModel, g: &mut Graph<'_>, batch: &TaskBatch<'_>) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let missing = || Error::Model(format!("model has no {} head", batch.task()));
    match batch {
        TaskBatch::Tn(items) => {
            let head = model.tn.as_ref().ok_or_else(missing)?;
            let texts: Vec<&PreparedText> = items.iter().map(|i| &i.text).collect();
            let (e, layout) = model.trunk.forward(g, &texts);
            let logits = head.forward(g, e);
            let rows = layout.tokens.last().map_or(0, |r| r.end);
            let r = model.rules.len();
            let mut mask = Array2::from_elem((rows, r), false);
            let mut targets = Vec::with_capacity(rows);
            for (item, span) in items.iter().zip(&layout.tokens) {
                mask.slice_mut(ndarray::s![span.clone(), ..]).assign(&item.mask);
                for (t, &gold) in item.targets.iter().enumerate() {
                    if let Some(gold) = gold {
                        if !item.mask[[t, gold]] {
                            return Err(Error::Data(format!(
                                "gold rule {} is not applicable at token {t} of {:?}",
                                model.rules.get(gold).map_or("?", |r| r.name.as_str()),
                                item.text.text
                            )));
                        }
                    }
                }
                targets.extend_from_slice(&item.targets);
            }
            Ok(g.cross_entropy(logits, targets, Some(&mask), Reduction::Mean))
        }
        TaskBatch::Pos(items) => {
            let head = model.pos.as_ref().ok_or_else(missing)?;
            let texts: Vec<&PreparedText> = items.iter().map(|i| &i.text).collect();
            let (e, layout) = model.trunk.forward(g, &texts);
            let words = crate::heads::word_segments(&texts, &layout.tokens);
            let logits = head.forward(g, e, words);
            let targets: Vec<Option<usize>> = items.iter().flat_map(|i| i.targets.iter().copied()).collect();
            if targets.iter().all(Option::is_none) {
                return Err(Error::Data("pos batch has no tagged words".into()));
            }
            Ok(g.cross_entropy(logits, targets, None, Reduction::Mean))
        }
        TaskBatch::Hd(items) => {
            let head = model.hd.as_ref().ok_or_else(missing)?;
            let texts: Vec<&PreparedText> = items.iter().map(|i| &i.text).collect();
            let (e, layout) = model.trunk.forward(g, &texts);
            let refs: Vec<(&PreparedText, &HomographSite, &str)> =
                items.iter().map(|i| (&i.text, &i.site, i.homograph.as_str())).collect();
            let offsets: Vec<usize> = layout.tokens.iter().map(|r| r.start).collect();
            let queries = model.hd_queries(&refs, &offsets);
            let logits = head.forward(g, e, &queries)?;
            let mut total: Option<Var> = None;
            for (l, item) in logits.into_iter().zip(items) {
                let ce = g.cross_entropy(l, vec![Some(item.label)], None, Reduction::Sum);
                total = Some(match total {
                    None => ce,
                    Some(t) => g.add(t, ce),
                });
            }
            let total = total.expect("non-empty batch");
            Ok(g.scale(total, 1.0 / items.len() as f64))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
    pub lr: f64,
}

/// One optimizer update on a single-task batch. Only the trunk and that
/// task's head receive gradients; the frozen encoder is never touched.
pub fn train_step(
    model: &mut MultiTaskModel,
    optimizer: &mut AdamW,
    batch: &TaskBatch<'_>,
    step: usize,
    schedule: &StepDecay,
    seed: u64,
) -> Result<StepRecord> {
    let lr = schedule.lr(step);
    let task = batch.task();
    let graph_seed = seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let (loss, grads, stats) = {
        let mut g = Graph::new(&model.store, true, graph_seed);
        let loss = task_loss(model, &mut g, batch)?;
        let value = g.value(loss)[[0, 0]];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                task: task.to_string(),
                lr,
            });
        }
        let grads = g.backward(loss);
        (value, grads, g.take_batch_stats())
    };
    optimizer.step(&mut model.store, &grads, lr);
    update_running_stats(&mut model.store, &stats);
    Ok(StepRecord { step, task, loss, lr })
}

/// Per-task epoch order, reshuffled every time it runs out. The last batch
/// of an epoch may be short.
#[derive(Debug, Clone)]
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Sampler {
        let mut s = Sampler {
            order: (0..n).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

/// Owns the optimizer state and the task cycle position.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub schedule: StepDecay,
    pub step: usize,
    pub steps_per_task: BTreeMap<Task, usize>,
    samplers: BTreeMap<Task, Sampler>,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &MultiTaskModel, data: &TaskData) -> Result<Trainer> {
        config.validate()?;
        let mut samplers = BTreeMap::new();
        for (k, &t) in config.task_cycle.iter().enumerate() {
            if !model.has_task(t) {
                return Err(Error::Config(format!("task {t} is in the cycle but the model has no {t} head")));
            }
            if data.len(t) == 0 {
                return Err(Error::Data(format!("no training data for task {t}")));
            }
            samplers.insert(t, Sampler::new(data.len(t), config.seed.wrapping_add(1 + k as u64)));
        }
        Ok(Trainer {
            optimizer: config.optimizer(),
            schedule: config.schedule(),
            step: 0,
            steps_per_task: config.task_cycle.iter().map(|&t| (t, 0)).collect(),
            samplers,
            config,
        })
    }

    pub fn next_task(&self) -> Task {
        self.config.task_cycle[self.step % self.config.task_cycle.len()]
    }

    /// Runs the next step of the cycle.
    pub fn step(&mut self, model: &mut MultiTaskModel, data: &TaskData) -> Result<StepRecord> {
        let task = self.next_task();
        let idx = self.samplers.get_mut(&task).expect("sampler").next(self.config.batch_size);
        let batch = data.batch(task, &idx);
        let rec = train_step(model, &mut self.optimizer, &batch, self.step, &self.schedule, self.config.seed)?;
        self.step += 1;
        *self.steps_per_task.get_mut(&task).expect("task") += 1;
        Ok(rec)
    }
}

pub type EarlyStop<'a> = Box<dyn FnMut(usize, &EvalReport) -> bool + 'a>;

/// Optional side channels of the training loop.
#[derive(Default)]
pub struct LoopHooks<'a> {
    pub validation: Option<&'a TaskData>,
    /// Receives one JSON line per step.
    pub history: Option<&'a mut dyn Write>,
    /// `best.ckpt` and `last.ckpt` go here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Called after each validation; returning true ends training.
    pub early_stop: Option<EarlyStop<'a>>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub history: Vec<StepRecord>,
    pub steps_per_task: BTreeMap<Task, usize>,
    pub validations: Vec<(usize, EvalReport)>,
    pub best: Option<(usize, f64)>,
    pub stopped_early: bool,
}

pub fn train_loop(
    model: &mut MultiTaskModel,
    data: &TaskData,
    cfg: &TrainConfig,
    mut hooks: LoopHooks<'_>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), model, data)?;
    let mut out = TrainOutcome::default();
    if let Some(dir) = &hooks.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while trainer.step < cfg.iterations {
        let rec = trainer.step(model, data)?;
        if let Some(w) = hooks.history.as_mut() {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Model(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io("history", e))?;
        }
        out.history.push(rec);
        let done = trainer.step == cfg.iterations;
        let due = cfg.validate_every > 0 && trainer.step % cfg.validate_every == 0;
        if let (Some(val), true) = (hooks.validation, due || done) {
            let report = evaluate(model, val, cfg.beam_width)?;
            if let Some(score) = report.selection_score() {
                if out.best.is_none_or(|(_, b)| score > b) {
                    out.best = Some((trainer.step, score));
                    if let Some(dir) = &hooks.checkpoint_dir {
                        model.save(&dir.join("best.ckpt"))?;
                    }
                }
            }
            let stop = hooks.early_stop.as_mut().is_some_and(|f| f(trainer.step, &report));
            out.validations.push((trainer.step, report));
            if stop && !done {
                out.stopped_early = true;
                break;
            }
        }
    }
    if let Some(dir) = &hooks.checkpoint_dir {
        model.save(&dir.join("last.ckpt"))?;
        if out.best.is_none() {
            model.save(&dir.join("best.ckpt"))?;
        }
    }
    out.steps_per_task = trainer.steps_per_task;
    Ok(out)
}

const EVAL_CHUNK: usize = 32;

/// Metrics for every task the model has and the data covers.
pub fn evaluate(model: &MultiTaskModel, data: &TaskData, beam_width: usize) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    if model.has_task(Task::Tn) && !data.tn.is_empty() {
        let (mut hits, mut labeled) = (0usize, 0usize);
        let mut preds = Vec::with_capacity(data.tn.len());
        for chunk in data.tn.chunks(EVAL_CHUNK) {
            let texts: Vec<&PreparedText> = chunk.iter().map(|i| &i.text).collect();
            for (item, logits) in chunk.iter().zip(model.rule_logits(&texts)?) {
                let masked = mask_logits(&RuleLogits::new(logits.clone()), &item.mask)?;
                for (t, gold) in item.targets.iter().enumerate() {
                    if let Some(gold) = gold {
                        labeled += 1;
                        hits += usize::from(argmax(masked.values.row(t).iter().copied()) == *gold);
                    }
                }
                preds.push(model.decode(&item.text, logits, beam_width)?.0);
            }
        }
        let refs: Vec<String> = data.tn.iter().map(|i| i.reference.clone()).collect();
        report.set(KEY_TN_LINE_ACC, line_accuracy(&preds, &refs)?);
        report.set(KEY_TN_WER, corpus_wer(&preds, &refs)?);
        if labeled > 0 {
            report.set(KEY_TN_TOKEN_ACC, hits as f64 / labeled as f64);
        }
        report.count("tn", data.tn.len());
    }
    if model.has_task(Task::Pos) && !data.pos.is_empty() {
        let (mut hits, mut labeled) = (0usize, 0usize);
        for chunk in data.pos.chunks(EVAL_CHUNK) {
            let texts: Vec<&PreparedText> = chunk.iter().map(|i| &i.text).collect();
            for (item, tags) in chunk.iter().zip(model.tag_prepared(&texts)?) {
                for (gold, tag) in item.targets.iter().zip(tags) {
                    if let Some(gold) = gold {
                        labeled += 1;
                        hits += usize::from(tag.index() == *gold);
                    }
                }
            }
        }
        if labeled > 0 {
            report.set(KEY_POS_ACC, hits as f64 / labeled as f64);
            report.count("pos", labeled);
        }
    }
    if model.has_task(Task::Hd) && !data.hd.is_empty() {
        let mut preds = Vec::with_capacity(data.hd.len());
        for chunk in data.hd.chunks(EVAL_CHUNK) {
            let refs: Vec<(&PreparedText, &HomographSite, &str)> =
                chunk.iter().map(|i| (&i.text, &i.site, i.homograph.as_str())).collect();
            for (item, logits) in chunk.iter().zip(model.hd_logits(&refs)?) {
                let labels = model.lexicon.labels(&item.homograph).expect("validated homograph");
                preds.push(HdPrediction {
                    homograph: item.homograph.clone(),
                    gold: item.gold.clone(),
                    predicted: labels[argmax(logits)].clone(),
                });
            }
        }
        let (micro, macro_) = hd_accuracy(&preds)?;
        report.set(KEY_HD_MICRO, micro);
        report.set(KEY_HD_MACRO, macro_);
        report.count("hd", preds.len());
    }
    Ok(report)
}

/// The seven non-empty task subsets in table order: all three tasks, the
/// pairs, then the single tasks.
pub fn all_subsets() -> Vec<Vec<Task>> {
    use Task::*;
    vec![
        vec![Tn, Pos, Hd],
        vec![Tn, Pos],
        vec![Tn, Hd],
        vec![Pos, Hd],
        vec![Tn],
        vec![Pos],
        vec![Hd],
    ]
}

pub fn subset_label(tasks: &[Task]) -> String {
    let names: Vec<&str> = tasks
        .iter()
        .map(|t| match t {
            Task::Tn => "TN",
            Task::Pos => "POS",
            Task::Hd => "HD",
        })
        .collect();
    match tasks.len() {
        3 => format!("Proposed ({})", names.join(" + ")),
        1 => format!("{} only", names[0]),
        _ => names.join(" + "),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub tasks: Vec<Task>,
    pub iterations: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const COLUMNS: [(&'static str, &'static str); 5] = [
        ("TN Line Acc", KEY_TN_LINE_ACC),
        ("TN WER", KEY_TN_WER),
        ("POS Acc", KEY_POS_ACC),
        ("HD Micro", KEY_HD_MICRO),
        ("HD Macro", KEY_HD_MACRO),
    ];

    /// Percent with two decimals, `--` for tasks the row was not trained on.
    pub fn cell(row: &AblationRow, key: &str) -> String {
        let task = if key.starts_with("tn.") {
            Task::Tn
        } else if key.starts_with("pos.") {
            Task::Pos
        } else {
            Task::Hd
        };
        match row.report.get(key) {
            Some(v) if row.tasks.contains(&task) => format!("{:.2}", v * 100.0),
            _ => "--".into(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("model\titerations");
        for (_, key) in Self::COLUMNS {
            s.push('\t');
            s.push_str(key);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{}\t{}", subset_label(&r.tasks), r.iterations));
            for (_, key) in Self::COLUMNS {
                s.push('\t');
                s.push_str(&Self::cell(r, key));
            }
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.rows.iter().map(|r| subset_label(&r.tasks)).collect();
        let w0 = labels.iter().map(String::len).max().unwrap_or(5).max(5);
        write!(f, "{:<w0$}", "Model")?;
        for (name, _) in Self::COLUMNS {
            write!(f, " | {name:>11}")?;
        }
        writeln!(f)?;
        writeln!(f, "{}", "-".repeat(w0 + Self::COLUMNS.len() * 14))?;
        for (r, label) in self.rows.iter().zip(&labels) {
            write!(f, "{label:<w0$}")?;
            for (_, key) in Self::COLUMNS {
                write!(f, " | {:>11}", Self::cell(r, key))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Trains one model per subset for `per_task_iters × |subset|` steps and
/// evaluates each on `eval`. Examples are encoded once and shared.
pub fn ablation_grid(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    rules: &Ruleset,
    lexicon: &HomographLexicon,
    train: (&[TnExample], &[PosExample], &[HdExample]),
    eval: (&[TnExample], &[PosExample], &[HdExample]),
    subsets: &[Vec<Task>],
    per_task_iters: usize,
) -> Result<AblationTable> {
    if subsets.is_empty() || subsets.iter().any(Vec::is_empty) {
        return Err(Error::Config("ablation subsets must be non-empty".into()));
    }
    let encoder = crate::encoder::DeskEncoder::new(base.encoder.clone())?;
    let prep = |d: (&[TnExample], &[PosExample], &[HdExample])| {
        TaskData::prepare(&encoder, &base.trunk, rules, lexicon, d.0, d.1, d.2)
    };
    let train_data = prep(train)?;
    let eval_data = prep(eval)?;
    let mut table = AblationTable::default();
    for subset in subsets {
        let tasks: Vec<Task> = Task::ALL.into_iter().filter(|t| subset.contains(t)).collect();
        let mut cfg = base.clone();
        cfg.tasks = tasks.clone();
        let mut model = MultiTaskModel::new(cfg, rules.clone(), lexicon.clone())?;
        let mut tc = train_cfg.clone();
        tc.task_cycle = tasks.clone();
        tc.iterations = per_task_iters * tasks.len();
        tc.validate_every = 0;
        train_loop(&mut model, &train_data, &tc, LoopHooks::default())?;
        let report = evaluate(&model, &eval_data, tc.beam_width)?;
        table.rows.push(AblationRow {
            tasks,
            iterations: tc.iterations,
            report,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthSpec};
    use crate::model::toy_config;

    fn setup() -> (MultiTaskModel, TaskData) {
        let rules = Ruleset::builtin();
        let spec = SynthSpec {
            tn: 6,
            pos: 6,
            hd_homographs: 2,
            hd_per_label: 2,
        };
        let corpus = synth_corpus(&spec, 5, &rules).unwrap();
        let model = MultiTaskModel::new(toy_config(2), rules, corpus.lexicon.clone()).unwrap();
        let data = TaskData::for_model(&model, &corpus.tn, &corpus.pos, &corpus.hd).unwrap();
        (model, data)
    }

    #[test]
    fn nine_iterations_three_per_task() {
        let (mut model, data) = setup();
        let cfg = TrainConfig {
            iterations: 9,
            batch_size: 4,
            validate_every: 0,
            ..TrainConfig::default()
        };
        let out = train_loop(&mut model, &data, &cfg, LoopHooks::default()).unwrap();
        assert!(out.steps_per_task.values().all(|&n| n == 3));
        let order: Vec<Task> = out.history.iter().map(|r| r.task).collect();
        assert_eq!(&order[..4], &[Task::Tn, Task::Pos, Task::Hd, Task::Tn]);
    }

    #[test]
    fn masked_gold_is_rejected() {
        let (model, mut data) = setup();
        let item = &mut data.tn[0];
        let t = item.targets.iter().position(Option::is_some).unwrap();
        let bad = (0..model.rules.len()).find(|&r| !item.mask[[t, r]]).unwrap();
        item.targets[t] = Some(bad);
        let mut g = Graph::new(&model.store, true, 0);
        let batch = data.batch(Task::Tn, &[0]);
        assert!(matches!(task_loss(&model, &mut g, &batch), Err(Error::Data(_))));
    }

    #[test]
    fn schedule_and_config_checks() {
        let cfg = TrainConfig::default();
        let s = cfg.schedule();
        assert!((s.lr(16_000) - 1e-4).abs() < 1e-18);
        assert!((s.lr(32_000) - 2e-5).abs() < 1e-18);
        assert!(TrainConfig { decay_factor: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn sampler_reshuffles_and_covers() {
        let mut s = Sampler::new(5, 1);
        let mut a = s.next(3);
        a.extend(s.next(3));
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next(3).len(), 3);
    }

    #[test]
    fn table_layout() {
        let mut rep = EvalReport::default();
        rep.set(KEY_TN_LINE_ACC, 0.5);
        rep.set(KEY_HD_MICRO, 1.0);
        let table = AblationTable {
            rows: vec![AblationRow {
                tasks: vec![Task::Tn],
                iterations: 10,
                report: rep,
            }],
        };
        let tsv = table.to_tsv();
        assert!(tsv.contains("TN only\t10\t50.00\t--\t--\t--\t--"), "{tsv}");
        assert_eq!(all_subsets().len(), 7);
        assert_eq!(subset_label(&Task::ALL), "Proposed (TN + POS + HD)");
    }
}
