use rayon::prelude::*;

use super::{train_run, TrainConfig};
use crate::autodiff::Float;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::models::ModelConfig;
use crate::rng::derive_seed;
use crate::table::Table;

/// Hyperparameter grid. Every combination is one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub weight_decays: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub n_heads: Vec<usize>,
}

impl SearchSpace {
    /// The default tuning grid.
    pub fn standard() -> Self {
        SearchSpace {
            learning_rates: vec![1e-4, 3e-4, 1e-3, 3e-3],
            batch_sizes: vec![8, 16, 32],
            weight_decays: vec![0.01, 0.05, 0.1, 0.15, 0.24],
            dropouts: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            n_heads: vec![8, 16, 32],
        }
    }

    /// A one-point grid around `cfg`.
    pub fn singleton(cfg: &TrainConfig) -> Self {
        SearchSpace {
            learning_rates: vec![cfg.learning_rate],
            batch_sizes: vec![cfg.batch_size],
            weight_decays: vec![cfg.weight_decay],
            dropouts: vec![cfg.dropout],
            n_heads: vec![cfg.n_heads],
        }
    }

    /// Lists given in `kv` replace the corresponding axes of `self`.
    pub fn with_kv(&self, kv: &KeyValues) -> Result<Self> {
        let s = SearchSpace {
            learning_rates: kv.list_or("learning_rate", &self.learning_rates)?,
            batch_sizes: kv.list_or("batch_size", &self.batch_sizes)?,
            weight_decays: kv.list_or("weight_decay", &self.weight_decays)?,
            dropouts: kv.list_or("dropout", &self.dropouts)?,
            n_heads: kv.list_or("n_heads", &self.n_heads)?,
        };
        if s.learning_rates.is_empty()
            || s.batch_sizes.is_empty()
            || s.weight_decays.is_empty()
            || s.dropouts.is_empty()
            || s.n_heads.is_empty()
        {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        Ok(s)
    }

    /// Grid points in lexicographic axis order. Head counts collapse to the first
    /// value for models without attention.
    pub fn points(&self, template: &TrainConfig, uses_heads: bool) -> Vec<TrainConfig> {
        let heads: &[usize] = if uses_heads {
            &self.n_heads
        } else {
            &self.n_heads[..1.min(self.n_heads.len())]
        };
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &batch_size in &self.batch_sizes {
                for &weight_decay in &self.weight_decays {
                    for &dropout in &self.dropouts {
                        for &n_heads in heads {
                            out.push(TrainConfig {
                                learning_rate,
                                batch_size,
                                weight_decay,
                                dropout,
                                n_heads,
                                ..template.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One (configuration, seed) run of a search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchRow {
    pub config: TrainConfig,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub rows: Vec<SearchRow>,
    /// Every configuration with its seed-averaged validation perplexity.
    pub per_config: Vec<(TrainConfig, f64)>,
    pub best: TrainConfig,
    pub best_mean_perplexity: f64,
}

/// Trains every grid point under `n_seeds` derived seeds on up to `jobs` worker
/// threads and selects the configuration with the lowest mean validation
/// perplexity (earliest grid point on ties). Results do not depend on `jobs`.
pub fn grid_search<T: Float>(
    space: &SearchSpace,
    base: &ModelConfig,
    train: &[Vec<u32>],
    val: &[Vec<u32>],
    template: &TrainConfig,
    n_seeds: usize,
    jobs: usize,
) -> Result<SearchResult> {
    if n_seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let points = space.points(template, base.family.is_transformer());
    let tasks: Vec<TrainConfig> = points
        .iter()
        .flat_map(|p| {
            (0..n_seeds).map(move |k| TrainConfig {
                seed: derive_seed(template.seed, k as u64),
                ..p.clone()
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows: Vec<SearchRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|cfg| {
                let r = train_run::<T>(base, train, val, cfg)?;
                Ok(SearchRow {
                    config: cfg.clone(),
                    best_val_loss: r.best_val_loss,
                    best_epoch: r.best_epoch,
                    wall_time: r.wall_time,
                })
            })
            .collect::<Result<_>>()
    })?;
    let per_config: Vec<(TrainConfig, f64)> = points
        .iter()
        .zip(rows.chunks(n_seeds))
        .map(|(p, runs)| {
            let mean = runs.iter().map(|r| r.best_val_loss.exp()).sum::<f64>() / runs.len() as f64;
            (p.clone(), mean)
        })
        .collect();
    let (best, best_mean_perplexity) = per_config
        .iter()
        .fold(None::<&(TrainConfig, f64)>, |acc, cur| match acc {
            Some(a) if a.1 <= cur.1 => Some(a),
            _ => Some(cur),
        })
        .cloned()
        .ok_or_else(|| Error::Config("empty search space".into()))?;
    Ok(SearchResult {
        rows,
        per_config,
        best,
        best_mean_perplexity,
    })
}

/// Columns identifying a ledger row; later writes replace earlier ones.
pub const LEDGER_KEY: [&str; 8] = [
    "dataset",
    "model",
    "learning_rate",
    "batch_size",
    "weight_decay",
    "dropout",
    "n_heads",
    "seed",
];

fn key_cells(dataset: &str, model: &str, c: &TrainConfig) -> Vec<String> {
    vec![
        dataset.to_string(),
        model.to_string(),
        c.learning_rate.to_string(),
        c.batch_size.to_string(),
        c.weight_decay.to_string(),
        c.dropout.to_string(),
        c.n_heads.to_string(),
        c.seed.to_string(),
    ]
}

/// Deterministic run outcomes, one row per (configuration, seed).
pub fn ledger_table(dataset: &str, model: &str, rows: &[SearchRow]) -> Table {
    let mut t = Table::new(LEDGER_KEY.iter().copied().chain(["best_val_loss", "best_epoch"]));
    for r in rows {
        let mut cells = key_cells(dataset, model, &r.config);
        cells.extend([r.best_val_loss.to_string(), r.best_epoch.to_string()]);
        t.push(cells);
    }
    t
}

/// Wall-clock seconds per run, keyed like [`ledger_table`].
pub fn timing_table(dataset: &str, model: &str, rows: &[SearchRow]) -> Table {
    let mut t = Table::new(LEDGER_KEY.iter().copied().chain(["wall_time"]));
    for r in rows {
        let mut cells = key_cells(dataset, model, &r.config);
        cells.push(format!("{:.3}", r.wall_time));
        t.push(cells);
    }
    t
}

/// Upserts `new` into `existing` by [`LEDGER_KEY`], keeping first-seen row order.
pub fn merge_ledger(existing: Option<Table>, new: Table) -> Result<Table> {
    let Some(mut merged) = existing else {
        return Ok(new);
    };
    merged.upsert(new, LEDGER_KEY.len())?;
    Ok(merged)
}
