use std::path::{Path, PathBuf};

use tinylm::embeddings::{extract_embeddings, EmbeddingMatrix};
use tinylm::models::{load_checkpoint, Family, LanguageModel};
use tinylm::preprocess::TokenizedUtterance;
use tinylm::scoring::TokenScorer;
use tinylm::tokenizer::Vocabulary;

use crate::manifest::{model_tag, parse_model_tag, DatasetSpec, Manifest};
use crate::{CliError, Select};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Resolved manifest plus global flags.
pub struct Context {
    pub manifest: Manifest,
    pub out: PathBuf,
    pub jobs: usize,
    pub float32: bool,
}

pub enum AnyModel {
    F64(LanguageModel<f64>),
    F32(LanguageModel<f32>),
}

impl AnyModel {
    pub fn scorer(&self) -> &dyn TokenScorer {
        match self {
            AnyModel::F64(m) => m,
            AnyModel::F32(m) => m,
        }
    }

    pub fn embeddings(&self, vocab: &Vocabulary, words: &[String]) -> Result<EmbeddingMatrix, CliError> {
        Ok(match self {
            AnyModel::F64(m) => extract_embeddings(m, vocab, words)?,
            AnyModel::F32(m) => extract_embeddings(m, vocab, words)?,
        })
    }
}

/// One evaluated model: a checkpoint or a fresh initialization.
pub struct ModelRef<'a> {
    pub dataset: &'a DatasetSpec,
    pub family: Family,
    pub layers: usize,
    pub untrained: bool,
}

impl ModelRef<'_> {
    pub fn tag(&self) -> String {
        model_tag(self.family, self.layers)
    }

    pub fn state(&self) -> &'static str {
        if self.untrained {
            "untrained"
        } else {
            "trained"
        }
    }
}

impl Context {
    pub fn new(manifest: Manifest, jobs: usize, float32: bool) -> Result<Self, CliError> {
        if jobs == 0 {
            return Err(CliError::user("--jobs must be at least 1"));
        }
        Ok(Context {
            out: manifest.output.clone(),
            manifest,
            jobs,
            float32,
        })
    }

    pub fn seed(&self) -> u64 {
        self.manifest.seed
    }

    pub fn datasets(&self, sel: &Select) -> Result<Vec<&DatasetSpec>, CliError> {
        match &sel.dataset {
            Some(name) => Ok(vec![self.manifest.dataset(name)?]),
            None => Ok(self.manifest.datasets.iter().collect()),
        }
    }

    pub fn models(&self, sel: &Select) -> Result<Vec<(Family, usize)>, CliError> {
        match &sel.model {
            Some(tag) => Ok(vec![parse_model_tag(tag)?]),
            None => Ok(self.manifest.models.clone()),
        }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    pub fn data_dir(&self, dataset: &str) -> PathBuf {
        self.path("data").join(dataset)
    }

    fn require(&self, path: &Path, producer: &str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::user(format!(
                "{} not found; run `tinylm {producer}` first",
                path.display()
            )))
        }
    }

    pub fn read_split(&self, dataset: &str, split: &str) -> Result<Vec<TokenizedUtterance>, CliError> {
        let path = self.data_dir(dataset).join(format!("{split}.txt"));
        self.require(&path, "preprocess")?;
        let text = tinylm::io::read_to_string(&path)?;
        Ok(text.lines().map(TokenizedUtterance::from_line).collect())
    }

    pub fn vocab(&self, dataset: &str) -> Result<Vocabulary, CliError> {
        let path = self.data_dir(dataset).join("vocab.txt");
        self.require(&path, "preprocess")?;
        Ok(Vocabulary::load(&path)?)
    }

    pub fn encoded(&self, dataset: &str, split: &str, vocab: &Vocabulary) -> Result<Vec<Vec<u32>>, CliError> {
        Ok(self.read_split(dataset, split)?.iter().map(|u| vocab.encode(u)).collect())
    }

    pub fn checkpoint_path(&self, dataset: &str, tag: &str) -> PathBuf {
        self.path("models")
            .join(dataset)
            .join(format!("{tag}-s{}.ckpt", self.seed()))
    }

    /// File stem shared by a model's per-run evaluation outputs.
    pub fn stem(&self, m: &ModelRef) -> String {
        let base = format!("{}_{}-s{}", m.dataset.name, m.tag(), self.seed());
        if m.untrained {
            base + "-untrained"
        } else {
            base
        }
    }

    pub fn load_model(&self, m: &ModelRef, vocab: &Vocabulary) -> Result<AnyModel, CliError> {
        let model = if m.untrained {
            let cfg = self.manifest.model_config(m.family, m.layers, vocab.len())?;
            if self.float32 {
                AnyModel::F32(LanguageModel::build(cfg, self.seed())?)
            } else {
                AnyModel::F64(LanguageModel::build(cfg, self.seed())?)
            }
        } else {
            let path = self.checkpoint_path(&m.dataset.name, &m.tag());
            self.require(&path, "train")?;
            if self.float32 {
                AnyModel::F32(load_checkpoint(&path)?.0)
            } else {
                AnyModel::F64(load_checkpoint(&path)?.0)
            }
        };
        let v = model.scorer().vocab_size();
        if v != vocab.len() {
            return Err(CliError::user(format!(
                "model for {} has {v} output words but the vocabulary has {}; retrain after preprocessing",
                m.dataset.name,
                vocab.len()
            )));
        }
        Ok(model)
    }
}
