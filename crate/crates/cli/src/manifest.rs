//! Experiment manifest: a `key = value` file naming datasets, models, settings
//! and evaluation inputs. Relative paths resolve against the manifest's directory.
//!
//! ```text
//! dataset = demo corpus.txt
//! dataset = adam transcripts/ chat
//! models = lstm-1, causal-2, masked-2
//! output = out
//! seed = 0
//! d_model = 64
//! d_ffn = 256
//! learning_rate = 1e-3
//! grid.learning_rate = 1e-4, 1e-3
//! zorro_templates = templates.txt
//! pos_lexicon = lexicon.txt
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use tinylm::corpus::{child_speaker, Format, Speaker};
use tinylm::embeddings::TsneConfig;
use tinylm::kv::KeyValues;
use tinylm::models::{Family, ModelConfig, ARCHITECTURES};
use tinylm::preprocess::{PreprocessConfig, SplitFractions};
use tinylm::trainer::{SearchSpace, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    /// `None` picks the format per file from its extension.
    pub format: Option<Format>,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    pub kv: KeyValues,
    pub datasets: Vec<DatasetSpec>,
    pub models: Vec<(Family, usize)>,
    pub output: PathBuf,
    pub seed: u64,
    pub zorro_templates: Option<PathBuf>,
    pub pos_lexicon: Option<PathBuf>,
    pub syntactic_categories: Option<PathBuf>,
    pub semantic_categories: Option<PathBuf>,
}

pub fn parse_model_tag(tag: &str) -> Result<(Family, usize), CliError> {
    let (fam, layers) = tag
        .split_once('-')
        .ok_or_else(|| CliError::user(format!("model {tag:?} is not of the form family-layers")))?;
    let family = match fam {
        "lstm" => Family::Lstm,
        "causal" => Family::CausalTransformer,
        "masked" => Family::MaskedTransformer,
        _ => return Err(CliError::user(format!("unknown model family {fam:?}"))),
    };
    let layers: usize = layers
        .parse()
        .map_err(|_| CliError::user(format!("bad layer count in {tag:?}")))?;
    if !ARCHITECTURES.contains(&(family, layers)) {
        return Err(CliError::user(format!("{tag} is not one of the six architectures")));
    }
    Ok((family, layers))
}

pub fn model_tag(family: Family, layers: usize) -> String {
    format!("{}-{layers}", family.tag())
}

/// `LSTM (1-layer)` style row label.
pub fn model_label(family: Family, layers: usize) -> String {
    format!("{} ({layers}-layer)", family.display_name())
}

impl Manifest {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::user(format!("manifest not found: {}", path.display())));
        }
        let text = tinylm::io::read_to_string(path)?;
        let kv = KeyValues::parse(&text, &path.display().to_string())?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                dir.join(p)
            }
        };

        let mut datasets = Vec::new();
        for (value, line) in kv.get_all("dataset") {
            let parts: Vec<&str> = value.split_whitespace().collect();
            let format = match parts.get(2).copied() {
                None => None,
                Some("chat") => Some(Format::Chat),
                Some("plain") => Some(Format::Plain),
                Some(other) => {
                    return Err(CliError::user(format!(
                        "{}:{line}: unknown format {other:?} (chat or plain)",
                        path.display()
                    )))
                }
            };
            if parts.len() < 2 || parts.len() > 3 {
                return Err(CliError::user(format!(
                    "{}:{line}: expected `dataset = name path [format]`",
                    path.display()
                )));
            }
            if datasets.iter().any(|d: &DatasetSpec| d.name == parts[0]) {
                return Err(CliError::user(format!("dataset {:?} is declared twice", parts[0])));
            }
            datasets.push(DatasetSpec {
                name: parts[0].to_string(),
                path: resolve(parts[1]),
                format,
            });
        }
        if datasets.is_empty() {
            return Err(CliError::user(format!("{}: no `dataset = name path` entries", path.display())));
        }

        let tags: Vec<String> = kv.list_or(
            "models",
            &ARCHITECTURES.iter().map(|&(f, l)| model_tag(f, l)).collect::<Vec<_>>(),
        )?;
        let models = tags.iter().map(|t| parse_model_tag(t)).collect::<Result<Vec<_>, _>>()?;

        let opt_path = |key: &str| kv.get(key).map(resolve);
        let m = Manifest {
            path: path.to_path_buf(),
            output: out.map(Path::to_path_buf).unwrap_or_else(|| resolve(kv.get("output").unwrap_or("out"))),
            seed: match seed {
                Some(s) => s,
                None => kv.get_or("seed", 0u64)?,
            },
            zorro_templates: opt_path("zorro_templates"),
            pos_lexicon: opt_path("pos_lexicon"),
            syntactic_categories: opt_path("syntactic_categories"),
            semantic_categories: opt_path("semantic_categories"),
            kv,
            datasets,
            models,
        };
        m.check_inputs()?;
        Ok(m)
    }

    fn check_inputs(&self) -> Result<(), CliError> {
        let inputs = self.datasets.iter().map(|d| &d.path).chain(
            [
                &self.zorro_templates,
                &self.pos_lexicon,
                &self.syntactic_categories,
                &self.semantic_categories,
            ]
            .into_iter()
            .flatten(),
        );
        for p in inputs {
            if !p.exists() {
                return Err(CliError::user(format!("input not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetSpec, CliError> {
        self.datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| CliError::user(format!("no dataset named {name:?} in the manifest")))
    }

    pub fn excluded_speakers(&self) -> Result<HashSet<Speaker>, CliError> {
        match self.kv.get("exclude_speakers") {
            None => Ok(child_speaker()),
            Some(list) => list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<Speaker>().map_err(CliError::from))
                .collect(),
        }
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig, CliError> {
        let d = PreprocessConfig::default();
        let f: Vec<f64> = self
            .kv
            .list_or("split", &[d.fractions.train, d.fractions.val, d.fractions.test])?;
        if f.len() != 3 {
            return Err(CliError::user("split needs three fractions: train, val, test"));
        }
        Ok(PreprocessConfig {
            min_count: self.kv.get_or("min_count", d.min_count)?,
            min_words: self.kv.get_or("min_words", d.min_words)?,
            fractions: SplitFractions {
                train: f[0],
                val: f[1],
                test: f[2],
            },
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig::default().with_kv(&self.kv)?;
        c.seed = self.seed;
        Ok(c)
    }

    /// Architecture for `vocab_size`, with any width overrides applied.
    pub fn model_config(&self, family: Family, layers: usize, vocab_size: usize) -> Result<ModelConfig, CliError> {
        let train = self.train_config()?;
        let std = ModelConfig::standard(family, layers, vocab_size)?;
        let mut c = std.clone().with_width(
            self.kv.get_or("d_model", std.d_model)?,
            self.kv.get_or("d_ffn", std.d_ffn)?,
            if family.is_transformer() { train.n_heads } else { std.n_heads },
        )?;
        c.max_len = self.kv.get_or("max_len", std.max_len)?;
        c.init_std = self.kv.get_or("init_std", std.init_std)?;
        c.dropout = train.dropout;
        c.validate()?;
        Ok(c)
    }

    /// Grid axes from `grid.*` keys; unspecified axes use the default grid.
    pub fn search_space(&self) -> Result<SearchSpace, CliError> {
        let mut text = String::new();
        for key in self.kv.keys() {
            if let Some(axis) = key.strip_prefix("grid.") {
                text.push_str(&format!("{axis} = {}\n", self.kv.get(key).unwrap_or_default()));
            }
        }
        let grid = KeyValues::parse(&text, self.kv.source())?;
        Ok(SearchSpace::standard().with_kv(&grid)?)
    }

    pub fn tsne_config(&self) -> Result<TsneConfig, CliError> {
        Ok(TsneConfig {
            seed: self.seed,
            ..TsneConfig::default().with_kv(&self.kv)?
        })
    }
}
