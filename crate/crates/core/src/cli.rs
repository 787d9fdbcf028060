//! Command-line front end. Every subcommand reads lines from `--in` (or
//! stdin) and writes lines to `--out` (or stdout).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_corpus_dir, load_hd, stratified_split, synth_corpus, validate_balance, write_hd, SynthSpec,
};
use crate::decoder::DEFAULT_BEAM_WIDTH;
use crate::error::{Error, Result};
use crate::manifest::{Dataset, DatasetPaths, TrainManifest};
use crate::model::{MultiTaskModel, Task};
use crate::rules::Ruleset;
use crate::training::{ablation_grid, all_subsets, evaluate, train_loop, LoopHooks, TaskData};

#[derive(Debug, Parser)]
#[command(name = "ttsfront", version, about = "Multi-task TTS front end: text normalization, POS tagging, homograph disambiguation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize text into its spoken form, one line per input line.
    Normalize(InferArgs),
    /// Tag every word of each line with a part of speech.
    Tag(InferArgs),
    /// Pick a pronunciation for each homograph occurrence.
    ///
    /// Input rows are `sentence<TAB>start<TAB>end` with char offsets, or a
    /// full homograph TSV with its header line.
    Homograph(InferArgs),
    /// Train a model from a training manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print its report.
    Eval(EvalArgs),
    /// Train one model per task subset and print the results table.
    Ablate(AblateArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
}

#[derive(Debug, Args)]
pub struct Io {
    /// Input file; stdin when absent.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long = "out", value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Ruleset manifest the checkpoint must match; the built-in one when absent.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    pub beam_width: usize,
    #[command(flatten)]
    pub io: Io,
    /// Text to process instead of reading input lines.
    pub text: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (TOML).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated task subset, e.g. `tn,hd`.
    #[arg(long)]
    pub tasks: Option<String>,
    /// Final report destination; stdout when absent.
    #[arg(long = "out", value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Training manifest whose test split (or valid split) is evaluated.
    #[arg(long, value_name = "FILE", required_unless_present = "input")]
    pub manifest: Option<PathBuf>,
    /// Corpus directory with `tn.jsonl`, `pos.jsonl` and `hd.tsv`.
    #[arg(long = "in", value_name = "DIR")]
    pub input: Option<PathBuf>,
    #[arg(long = "out", value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    pub beam_width: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict the grid to subsets of these tasks.
    #[arg(long)]
    pub tasks: Option<String>,
    /// Steps per task in each subset; the manifest's value when absent.
    #[arg(long)]
    pub per_task_iters: Option<usize>,
    /// Emit tab-separated values instead of the aligned table.
    #[arg(long)]
    pub tsv: bool,
    #[arg(long = "out", value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Report per-class counts of a homograph TSV; exits 3 when unbalanced.
    ValidateBalance(Io),
    /// Stratified train/test split of a homograph TSV into `--out` (a directory).
    Split {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic corpus directory to `--out`.
    Synth {
        #[arg(long = "out", value_name = "DIR")]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        tn: usize,
        #[arg(long, default_value_t = 50)]
        pos: usize,
        #[arg(long, default_value_t = 4)]
        homographs: usize,
        #[arg(long, default_value_t = 10)]
        per_label: usize,
    },
}

fn read_input(path: Option<&Path>) -> Result<String> {
    let mut s = String::new();
    match path {
        Some(p) => {
            File::open(p)
                .and_then(|f| BufReader::new(f).read_to_string(&mut s))
                .map_err(|e| Error::io(p, e))?;
        }
        None => {
            std::io::stdin().read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
        }
    }
    Ok(s)
}

fn input_lines(args: &InferArgs) -> Result<Vec<String>> {
    if !args.text.is_empty() {
        if args.io.input.is_some() {
            return Err(Error::Config("give either --in or inline text, not both".into()));
        }
        return Ok(vec![args.text.join(" ")]);
    }
    Ok(read_input(args.io.input.as_deref())?.lines().map(str::to_string).collect())
}

/// Output sink: the `--out` file or the caller's writer.
fn sink<'a>(path: Option<&Path>, fallback: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))),
        None => Ok(Box::new(fallback)),
    }
}

fn emit(w: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    let name = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(name, e))
}

fn load_model(checkpoint: &Path, manifest: Option<&Path>) -> Result<MultiTaskModel> {
    if !checkpoint.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let rules = match manifest {
        Some(p) => Ruleset::load(p)?,
        None => Ruleset::builtin(),
    };
    MultiTaskModel::load(checkpoint, rules)
}

fn apply_overrides(m: &mut TrainManifest, seed: Option<u64>, tasks: Option<&str>) -> Result<()> {
    if let Some(s) = seed {
        m.set_seed(s);
    }
    if let Some(t) = tasks {
        m.set_tasks(Task::parse_list(t)?)?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, stdout),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                emit(stdout, None, &e.render().to_string())
            }
            _ => Err(Error::Config(e.render().to_string().trim_end().to_string())),
        },
    }
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Normalize(a) => cmd_normalize(&a, stdout),
        Command::Tag(a) => cmd_tag(&a, stdout),
        Command::Homograph(a) => cmd_homograph(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Eval(a) => cmd_eval(&a, stdout),
        Command::Ablate(a) => cmd_ablate(&a, stdout),
        Command::Data(d) => cmd_data(d, stdout),
    }
}

fn cmd_normalize(a: &InferArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.beam_width == 0 {
        return Err(Error::Config("--beam-width must be positive".into()));
    }
    let model = load_model(&a.checkpoint, a.manifest.as_deref())?;
    let lines = input_lines(a)?;
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let out = model.normalize_lines(&refs, a.beam_width)?;
    let mut text = String::new();
    for l in out {
        text.push_str(&l);
        text.push('\n');
    }
    let mut w = sink(a.io.output.as_deref(), stdout)?;
    emit(&mut w, a.io.output.as_deref(), &text)
}

fn cmd_tag(a: &InferArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.checkpoint, a.manifest.as_deref())?;
    let lines = input_lines(a)?;
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let mut text = String::new();
    for pairs in model.tag_lines(&refs)? {
        let cells: Vec<String> = pairs.iter().map(|(w, t)| format!("{w}/{t}")).collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    let mut w = sink(a.io.output.as_deref(), stdout)?;
    emit(&mut w, a.io.output.as_deref(), &text)
}

/// `(sentence, start, end)` rows, accepting the dataset TSV as well.
fn homograph_rows(text: &str) -> Vec<std::result::Result<(String, usize, usize), String>> {
    let mut lines = text.lines().peekable();
    let full = lines.peek().is_some_and(|l| *l == crate::data::HD_HEADER);
    if full {
        lines.next();
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            let (s, a, b) = match (full, cols.as_slice()) {
                (true, [_, _, s, a, b]) | (false, [s, a, b]) => (*s, *a, *b),
                _ => return Err(format!("expected {} tab-separated columns", if full { 5 } else { 3 })),
            };
            let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad offset {x:?}"));
            Ok((s.to_string(), num(a)?, num(b)?))
        })
        .collect()
}

fn cmd_homograph(a: &InferArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.checkpoint, a.manifest.as_deref())?;
    if !a.text.is_empty() {
        return Err(Error::Config("homograph reads rows from --in or stdin".into()));
    }
    let input = read_input(a.io.input.as_deref())?;
    let mut text = String::new();
    let mut failures = 0usize;
    for row in homograph_rows(&input) {
        let result = row.map_err(Error::Data).and_then(|(s, start, end)| model.homograph(&s, start..end));
        match result {
            Ok(label) => text.push_str(&label),
            Err(e) => {
                failures += 1;
                text.push_str(&format!("error\t{e}"));
            }
        }
        text.push('\n');
    }
    let mut w = sink(a.io.output.as_deref(), stdout)?;
    emit(&mut w, a.io.output.as_deref(), &text)?;
    if failures > 0 {
        return Err(Error::Data(format!("{failures} row(s) could not be disambiguated")));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut m = TrainManifest::load(&a.manifest)?;
    apply_overrides(&mut m, a.seed, a.tasks.as_deref())?;
    m.validate()?;
    let rules = m.rules()?;
    let data = m.load_data(&rules)?;
    let mut model = MultiTaskModel::new(m.model.clone(), rules, data.lexicon.clone())?;
    let (tn, pos, hd) = data.train.parts();
    let train = TaskData::for_model(&model, tn, pos, hd)?;
    let valid_set = if data.valid.is_empty() { None } else { Some(&data.valid) };
    let valid = valid_set
        .map(|d| TaskData::for_model(&model, &d.tn, &d.pos, &d.hd))
        .transpose()?;

    let dir = &m.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    std::fs::write(dir.join("manifest.toml"), m.to_toml()?).map_err(|e| Error::io(dir, e))?;
    let history_path = dir.join("history.jsonl");
    let mut history = BufWriter::new(File::create(&history_path).map_err(|e| Error::io(&history_path, e))?);
    let outcome = train_loop(
        &mut model,
        &train,
        &m.train,
        LoopHooks {
            validation: valid.as_ref(),
            history: Some(&mut history),
            checkpoint_dir: Some(dir.clone()),
            early_stop: None,
        },
    )?;
    history.flush().map_err(|e| Error::io(&history_path, e))?;

    // Report with the selected checkpoint on held-out data where it exists.
    let best = MultiTaskModel::load(&dir.join("best.ckpt"), model.rules.clone())?;
    let report_set = Some(data.eval_set()).filter(|d| !d.is_empty());
    let mut text = format!(
        "steps\t{}\n{}",
        outcome.history.len(),
        outcome
            .steps_per_task
            .iter()
            .map(|(t, n)| format!("steps.{t}\t{n}\n"))
            .collect::<String>()
    );
    if let Some(set) = &report_set {
        let d = TaskData::for_model(&best, &set.tn, &set.pos, &set.hd)?;
        let report = evaluate(&best, &d, m.train.beam_width)?;
        std::fs::write(dir.join("eval.txt"), report.to_string()).map_err(|e| Error::io(dir, e))?;
        text.push_str(&report.to_string());
    }
    let mut w = sink(a.output.as_deref(), stdout)?;
    emit(&mut w, a.output.as_deref(), &text)
}

fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.checkpoint, None)?;
    let set: Dataset = match (&a.input, &a.manifest) {
        (Some(dir), _) => {
            if !dir.is_dir() {
                return Err(Error::Config(format!("{} is not a corpus directory", dir.display())));
            }
            DatasetPaths::from_dir(dir).load(&model.rules)?
        }
        (None, Some(p)) => {
            let m = TrainManifest::load(p)?;
            if m.data.test.is_empty() && m.data.valid.is_empty() {
                return Err(Error::Config("manifest has neither a test nor a valid split".into()));
            }
            // Per task: the test split, else the valid split.
            let test = m.data.test.load(&model.rules)?;
            let valid = m.data.valid.load(&model.rules)?;
            Dataset {
                tn: if test.tn.is_empty() { valid.tn } else { test.tn },
                pos: if test.pos.is_empty() { valid.pos } else { test.pos },
                hd: if test.hd.is_empty() { valid.hd } else { test.hd },
            }
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    // Tasks without a head are not evaluated.
    let keep = |t: Task| model.has_task(t);
    let tn = if keep(Task::Tn) { &set.tn[..] } else { &[] };
    let pos = if keep(Task::Pos) { &set.pos[..] } else { &[] };
    let hd = if keep(Task::Hd) { &set.hd[..] } else { &[] };
    crate::data::check_hd_lexicon(hd, &model.lexicon)?;
    let data = TaskData::for_model(&model, tn, pos, hd)?;
    let report = evaluate(&model, &data, a.beam_width)?;
    let mut w = sink(a.output.as_deref(), stdout)?;
    emit(&mut w, a.output.as_deref(), &report.to_string())
}

fn cmd_ablate(a: &AblateArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut m = TrainManifest::load(&a.manifest)?;
    apply_overrides(&mut m, a.seed, None)?;
    m.set_tasks(Task::ALL.to_vec())?;
    let allowed = match &a.tasks {
        Some(t) => Task::parse_list(t)?,
        None => Task::ALL.to_vec(),
    };
    let subsets: Vec<Vec<Task>> = all_subsets()
        .into_iter()
        .filter(|s| s.iter().all(|t| allowed.contains(t)))
        .collect();
    let iters = a.per_task_iters.unwrap_or(m.ablate.per_task_iters);
    if iters == 0 {
        return Err(Error::Config("per_task_iters must be positive".into()));
    }
    m.validate()?;
    let rules = m.rules()?;
    let data = m.load_data(&rules)?;
    let eval = data.eval_set();
    let table = ablation_grid(
        &m.model,
        &m.train,
        &rules,
        &data.lexicon,
        data.train.parts(),
        eval.parts(),
        &subsets,
        iters,
    )?;
    let text = if a.tsv { table.to_tsv() } else { table.to_string() };
    let mut w = sink(a.output.as_deref(), stdout)?;
    emit(&mut w, a.output.as_deref(), &text)
}

fn hd_input(io: &Io) -> Result<PathBuf> {
    io.input
        .clone()
        .ok_or_else(|| Error::Config("--in is required (a homograph TSV)".into()))
}

fn cmd_data(cmd: DataCommand, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        DataCommand::ValidateBalance(io) => {
            let examples = load_hd(&hd_input(&io)?)?;
            let report = validate_balance(&examples);
            let mut w = sink(io.output.as_deref(), stdout)?;
            emit(&mut w, io.output.as_deref(), &report.summary())?;
            if !report.is_balanced {
                return Err(Error::Data(format!("{} homograph(s) unbalanced", report.violations.len())));
            }
            Ok(())
        }
        DataCommand::Split { io, fraction, seed } => {
            let examples = load_hd(&hd_input(&io)?)?;
            let dir = io
                .output
                .ok_or_else(|| Error::Config("--out is required (a directory)".into()))?;
            let (train, test) = stratified_split(&examples, fraction, seed)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_hd(&dir.join("train.tsv"), &train)?;
            write_hd(&dir.join("test.tsv"), &test)?;
            emit(stdout, None, &format!("train\t{}\ntest\t{}\n", train.len(), test.len()))
        }
        DataCommand::Synth {
            output,
            seed,
            tn,
            pos,
            homographs,
            per_label,
        } => {
            let spec = SynthSpec {
                tn,
                pos,
                hd_homographs: homographs,
                hd_per_label: per_label,
            };
            let rules = Ruleset::builtin();
            let corpus = synth_corpus(&spec, seed, &rules)?;
            corpus.write_dir(&output)?;
            // Reload to prove the files satisfy the loaders.
            let back = load_corpus_dir(&output, &rules)?;
            emit(
                stdout,
                None,
                &format!("tn\t{}\npos\t{}\nhd\t{}\nhomographs\t{}\n", back.tn.len(), back.pos.len(), back.hd.len(), back.lexicon.len()),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homograph_rows_accept_both_layouts() {
        let short = homograph_rows("I read it\t2\t6\n\nbad row\n");
        assert_eq!(short[0], Ok(("I read it".to_string(), 2, 6)));
        assert!(short[1].is_err());
        let full = format!("{}\nread\tread_past\tI read it\t2\t6\n", crate::data::HD_HEADER);
        assert_eq!(homograph_rows(&full), vec![Ok(("I read it".to_string(), 2, 6))]);
    }

    #[test]
    fn unknown_flags_are_config_errors() {
        let mut out = Vec::new();
        let err = run(["ttsfront", "normalize", "--bogus"], &mut out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = run(["ttsfront", "normalize", "--checkpoint", "/no/such.ckpt", "hi"], &mut out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
