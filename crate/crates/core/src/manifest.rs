//! Training manifest: one TOML file naming the model and training configs,
//! dataset paths, task subset and seed. Relative paths resolve against the
//! manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    check_hd_lexicon, lexicon_from_examples, load_hd, load_pos, load_tn, HdExample, PosExample, TnExample,
};
use crate::error::{Error, Result};
use crate::heads::HomographLexicon;
use crate::model::{ModelConfig, Task};
use crate::rules::Ruleset;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPaths {
    pub tn: Option<PathBuf>,
    pub pos: Option<PathBuf>,
    pub hd: Option<PathBuf>,
}

impl DatasetPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.tn, &mut self.pos, &mut self.hd].into_iter().flatten() {
            *p = base.join(&*p);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tn.is_none() && self.pos.is_none() && self.hd.is_none()
    }

    /// A corpus directory in the layout `data synth` writes.
    pub fn from_dir(dir: &Path) -> DatasetPaths {
        use crate::data::SynthCorpus as C;
        let some = |f: &str| Some(dir.join(f)).filter(|p| p.exists());
        DatasetPaths {
            tn: some(C::TN_FILE),
            pos: some(C::POS_FILE),
            hd: some(C::HD_FILE),
        }
    }

    pub fn load(&self, rules: &Ruleset) -> Result<Dataset> {
        Ok(Dataset {
            tn: self.tn.as_deref().map(|p| load_tn(p, rules)).transpose()?.unwrap_or_default(),
            pos: self.pos.as_deref().map(load_pos).transpose()?.unwrap_or_default(),
            hd: self.hd.as_deref().map(load_hd).transpose()?.unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: DatasetPaths,
    pub valid: DatasetPaths,
    pub test: DatasetPaths,
    /// Homograph lexicon; derived from every HD split when absent.
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub per_task_iters: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { per_task_iters: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainManifest {
    pub seed: u64,
    pub tasks: Vec<Task>,
    /// Checkpoints and `history.jsonl` are written here.
    pub output_dir: PathBuf,
    /// Ruleset manifest; the built-in one when absent.
    pub ruleset: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub ablate: AblateSection,
}

impl Default for TrainManifest {
    fn default() -> Self {
        TrainManifest {
            seed: 0,
            tasks: Task::ALL.to_vec(),
            output_dir: PathBuf::from("run"),
            ruleset: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

/// Examples of every task for one split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub tn: Vec<TnExample>,
    pub pos: Vec<PosExample>,
    pub hd: Vec<HdExample>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.tn.is_empty() && self.pos.is_empty() && self.hd.is_empty()
    }

    pub fn parts(&self) -> (&[TnExample], &[PosExample], &[HdExample]) {
        (&self.tn, &self.pos, &self.hd)
    }
}

impl TrainManifest {
    pub fn parse(text: &str, base: &Path) -> Result<TrainManifest> {
        let mut m: TrainManifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("training manifest: {e}")))?;
        m.output_dir = base.join(&m.output_dir);
        m.ruleset = m.ruleset.map(|p| base.join(p));
        m.data.lexicon = m.data.lexicon.map(|p| base.join(p));
        m.data.train.resolve(base);
        m.data.valid.resolve(base);
        m.data.test.resolve(base);
        m.set_tasks(m.tasks.clone())?;
        m.set_seed(m.seed);
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<TrainManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainManifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The subset is stored in cycle order and propagated to the model
    /// config and the training cycle.
    pub fn set_tasks(&mut self, tasks: Vec<Task>) -> Result<()> {
        let tasks: Vec<Task> = Task::ALL.into_iter().filter(|t| tasks.contains(t)).collect();
        if tasks.is_empty() {
            return Err(Error::Config("manifest selects no tasks".into()));
        }
        self.model.tasks = tasks.clone();
        self.train.task_cycle = tasks.clone();
        self.tasks = tasks;
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.trunk.seed = seed;
        self.train.seed = seed;
    }

    pub fn rules(&self) -> Result<Ruleset> {
        match &self.ruleset {
            Some(p) => Ruleset::load(p),
            None => Ok(Ruleset::builtin()),
        }
    }

    /// Checks configs and that every selected task has training data.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        for &t in &self.tasks {
            let present = match t {
                Task::Tn => self.data.train.tn.is_some(),
                Task::Pos => self.data.train.pos.is_some(),
                Task::Hd => self.data.train.hd.is_some(),
            };
            if !present {
                return Err(Error::Config(format!("task {t} selected but data.train.{t} is not set")));
            }
        }
        Ok(())
    }

    /// Loads every split and the lexicon.
    pub fn load_data(&self, rules: &Ruleset) -> Result<LoadedData> {
        let train = self.data.train.load(rules)?;
        let valid = self.data.valid.load(rules)?;
        let test = self.data.test.load(rules)?;
        let lexicon = match &self.data.lexicon {
            Some(p) => HomographLexicon::load(p)?,
            None => {
                let all: Vec<HdExample> = [&train.hd, &valid.hd, &test.hd].into_iter().flatten().cloned().collect();
                if all.is_empty() {
                    HomographLexicon::new()
                } else {
                    lexicon_from_examples(&all)?
                }
            }
        };
        for split in [&train, &valid, &test] {
            check_hd_lexicon(&split.hd, &lexicon)?;
        }
        Ok(LoadedData {
            train,
            valid,
            test,
            lexicon,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub lexicon: HomographLexicon,
}

impl LoadedData {
    /// Held-out examples per task: the test split, else valid, else train.
    pub fn eval_set(&self) -> Dataset {
        let splits = [&self.test, &self.valid, &self.train];
        let pick = |f: fn(&Dataset) -> bool| splits.into_iter().find(|d| f(d)).unwrap_or(&self.train);
        Dataset {
            tn: pick(|d| !d.tn.is_empty()).tn.clone(),
            pos: pick(|d| !d.pos.is_empty()).pos.clone(),
            hd: pick(|d| !d.hd.is_empty()).hd.clone(),
        }
    }
}
