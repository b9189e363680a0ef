use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use tinylm::autodiff::Float;
use tinylm::cloze::{evaluate_clozes, extract_clozes, dump_table, CandidateMode, Candidates, PosLexicon, MAX_CANDIDATES};
use tinylm::corpus::{exclude_speakers, read_transcript, Format, RawUtterance, Speaker};
use tinylm::embeddings::{
    agglomerative_cluster, cosine_distances, dendrogram_svg, dendrogram_table, intra_inter, scatter_svg, scatter_table,
    select_category_words, tsne, CategoryFile, LabeledPoint, Linkage, DEFAULT_SEMANTIC, DEFAULT_SYNTACTIC, TOP_K,
};
use tinylm::kv::KeyValues;
use tinylm::models::{encode_checkpoint, meta_path, CheckpointMeta, ModelConfig};
use tinylm::preprocess::{compute_stats, count_frequencies, prepare, stats_csv, stats_display, DatasetStats, TokenizedUtterance};
use tinylm::scoring::perplexity;
use tinylm::synth;
use tinylm::table::Table;
use tinylm::trainer::{
    grid_search, ledger_table, timing_table, train_run, EpochRecord, SearchResult, SearchRow, TrainConfig, LEDGER_KEY,
};
use tinylm::zorro::{evaluate_suite, instantiate_suite, intersect_vocab, parse_templates, suite_from_tsv, suite_to_tsv, PAIRS_PER_TEST};

use crate::context::{Context, ModelRef, SPLITS};
use crate::manifest::{model_label, model_tag, DatasetSpec};
use crate::outputs::Outputs;
use crate::report::stats_from_table;
use crate::{CliError, EvalSelect, Select};

pub const LEDGER: &str = "ledger.csv";
pub const TIMINGS: &str = "timings.csv";
pub const STATS: &str = "stats.csv";
pub const PERPLEXITY: &str = "perplexity.csv";
pub const ZORRO: &str = "zorro.csv";
pub const CLOZE: &str = "cloze.csv";
pub const EMBEDDINGS: &str = "embeddings.csv";

/// Leading columns of every evaluation ledger.
const EVAL_KEY: [&str; 4] = ["dataset", "model", "seed", "state"];

fn eval_table(extra: &[&str]) -> Table {
    Table::new(EVAL_KEY.iter().chain(extra).copied())
}

fn eval_cells(ctx: &Context, m: &ModelRef) -> Vec<String> {
    vec![m.dataset.name.clone(), m.tag(), ctx.seed().to_string(), m.state().to_string()]
}

fn concat(tables: Vec<Table>) -> Option<Table> {
    let mut it = tables.into_iter();
    let mut first = it.next()?;
    for t in it {
        first.rows.extend(t.rows);
    }
    Some(first)
}

fn lines(split: &[TokenizedUtterance]) -> String {
    split.iter().map(|u| u.to_line() + "\n").collect()
}

fn transcript_files(ds: &DatasetSpec) -> Result<Vec<PathBuf>, CliError> {
    if !ds.path.is_dir() {
        return Ok(vec![ds.path.clone()]);
    }
    let entries = std::fs::read_dir(&ds.path).map_err(|e| CliError::user(format!("{}: {e}", ds.path.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::user(format!("no transcript files in {}", ds.path.display())));
    }
    Ok(files)
}

fn read_dataset(ds: &DatasetSpec, excluded: &HashSet<Speaker>) -> Result<Vec<RawUtterance>, CliError> {
    let mut utterances = Vec::new();
    for f in transcript_files(ds)? {
        let format = ds.format.unwrap_or_else(|| Format::from_path(&f));
        let t = read_transcript(&f, format)?;
        utterances.extend(exclude_speakers(&t, excluded));
    }
    Ok(utterances)
}

fn write_stats(ctx: &Context, out: &mut Outputs, rows: &[DatasetStats]) -> Result<(), CliError> {
    let merged = out.upsert(&ctx.path(STATS), stats_csv(rows), 2)?;
    let all = stats_from_table(&merged)?;
    out.write(&ctx.path("stats.txt"), stats_display(&all).to_aligned().as_bytes())
}

pub fn preprocess(ctx: &Context, sel: &Select) -> Result<(), CliError> {
    let cfg = ctx.manifest.preprocess_config()?;
    let excluded = ctx.manifest.excluded_speakers()?;
    let mut out = Outputs::new();
    let mut rows = Vec::new();
    for ds in ctx.datasets(sel)? {
        let utterances = read_dataset(ds, &excluded)?;
        log::info!("{}: {} utterances after speaker exclusion", ds.name, utterances.len());
        let p = prepare(&utterances, &cfg)?;
        let dir = ctx.data_dir(&ds.name);
        for (name, split) in SPLITS.iter().zip([&p.split.train, &p.split.val, &p.split.test]) {
            out.write(&dir.join(format!("{name}.txt")), lines(split).as_bytes())?;
        }
        out.write(&dir.join("vocab.txt"), p.vocab.to_text().as_bytes())?;
        log::info!(
            "{}: {} / {} / {} utterances, vocabulary {}",
            ds.name,
            p.split.train.len(),
            p.split.val.len(),
            p.split.test.len(),
            p.vocab.len()
        );
        rows.push(DatasetStats {
            dataset: ds.name.clone(),
            train: compute_stats(&p.split.train, &p.vocab),
            val: compute_stats(&p.split.val, &p.vocab),
        });
    }
    write_stats(ctx, &mut out, &rows)?;
    out.commit();
    Ok(())
}

pub fn stats(ctx: &Context, sel: &Select) -> Result<(), CliError> {
    let mut out = Outputs::new();
    let mut rows = Vec::new();
    for ds in ctx.datasets(sel)? {
        let vocab = ctx.vocab(&ds.name)?;
        rows.push(DatasetStats {
            dataset: ds.name.clone(),
            train: compute_stats(&ctx.read_split(&ds.name, "train")?, &vocab),
            val: compute_stats(&ctx.read_split(&ds.name, "val")?, &vocab),
        });
    }
    write_stats(ctx, &mut out, &rows)?;
    out.commit();
    print!("{}", tinylm::io::read_to_string(&ctx.path("stats.txt"))?);
    Ok(())
}

struct Trained {
    row: SearchRow,
    trace: Vec<EpochRecord>,
    checkpoint: Vec<u8>,
}

fn run_training<T: Float>(
    base: &ModelConfig,
    train: &[Vec<u32>],
    val: &[Vec<u32>],
    cfg: &TrainConfig,
) -> Result<Trained, CliError> {
    let r = train_run::<T>(base, train, val, cfg)?;
    Ok(Trained {
        row: SearchRow {
            config: r.config.clone(),
            best_val_loss: r.best_val_loss,
            best_epoch: r.best_epoch,
            wall_time: r.wall_time,
        },
        checkpoint: encode_checkpoint(&r.model),
        trace: r.trace,
    })
}

fn best_path(ctx: &Context, dataset: &str, tag: &str) -> PathBuf {
    ctx.path("search").join(format!("{dataset}_{tag}.best"))
}

/// Manifest settings, overridden by a finished search for this dataset and model.
fn train_config_for(ctx: &Context, dataset: &str, tag: &str) -> Result<TrainConfig, CliError> {
    let mut cfg = ctx.manifest.train_config()?;
    let best = best_path(ctx, dataset, tag);
    if best.exists() {
        let kv = KeyValues::parse(&tinylm::io::read_to_string(&best)?, &best.display().to_string())?;
        cfg = cfg.with_kv(&kv)?;
        cfg.seed = ctx.seed();
        log::info!("{dataset} {tag}: using searched settings from {}", best.display());
    }
    Ok(cfg)
}

fn trace_table(trace: &[EpochRecord]) -> Table {
    let mut t = Table::new(["epoch", "lr", "train_loss", "val_loss"]);
    for r in trace {
        t.push([r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string(), r.val_loss.to_string()]);
    }
    t
}

fn upsert_run_ledgers(ctx: &Context, out: &mut Outputs, ledgers: Vec<Table>, timings: Vec<Table>) -> Result<(), CliError> {
    if let Some(t) = concat(ledgers) {
        out.upsert(&ctx.path(LEDGER), t, LEDGER_KEY.len())?;
    }
    if let Some(t) = concat(timings) {
        out.upsert(&ctx.path(TIMINGS), t, LEDGER_KEY.len())?;
    }
    Ok(())
}

pub fn train(ctx: &Context, sel: &Select) -> Result<(), CliError> {
    let mut out = Outputs::new();
    let (mut ledgers, mut timings) = (Vec::new(), Vec::new());
    let models = ctx.models(sel)?;
    for ds in ctx.datasets(sel)? {
        let vocab = ctx.vocab(&ds.name)?;
        let train_ids = ctx.encoded(&ds.name, "train", &vocab)?;
        let val_ids = ctx.encoded(&ds.name, "val", &vocab)?;
        for &(family, layers) in &models {
            let tag = model_tag(family, layers);
            let base = ctx.manifest.model_config(family, layers, vocab.len())?;
            let cfg = train_config_for(ctx, &ds.name, &tag)?;
            log::info!("training {} on {} ({} utterances)", model_label(family, layers), ds.name, train_ids.len());
            let t = if ctx.float32 {
                run_training::<f32>(&base, &train_ids, &val_ids, &cfg)?
            } else {
                run_training::<f64>(&base, &train_ids, &val_ids, &cfg)?
            };
            log::info!(
                "{} {tag}: best validation perplexity {:.3} at epoch {} ({:.1}s)",
                ds.name,
                t.row.best_val_loss.exp(),
                t.row.best_epoch,
                t.row.wall_time
            );
            let ckpt = ctx.checkpoint_path(&ds.name, &tag);
            out.write(&ckpt, &t.checkpoint)?;
            let meta = CheckpointMeta {
                dataset: ds.name.clone(),
                seed: ctx.seed(),
                best_val_loss: t.row.best_val_loss,
                epoch: t.row.best_epoch,
            };
            out.write(&meta_path(&ckpt), meta.to_kv().as_bytes())?;
            out.write(&ckpt.with_extension("trace.csv"), trace_table(&t.trace).to_csv().as_bytes())?;
            ledgers.push(ledger_table(&ds.name, &tag, std::slice::from_ref(&t.row)));
            timings.push(timing_table(&ds.name, &tag, std::slice::from_ref(&t.row)));
        }
    }
    upsert_run_ledgers(ctx, &mut out, ledgers, timings)?;
    out.commit();
    Ok(())
}

fn search_table(r: &SearchResult) -> Table {
    let mut t = Table::new(["learning_rate", "batch_size", "weight_decay", "dropout", "n_heads", "mean_perplexity"]);
    for (c, ppl) in &r.per_config {
        t.push([
            c.learning_rate.to_string(),
            c.batch_size.to_string(),
            c.weight_decay.to_string(),
            c.dropout.to_string(),
            c.n_heads.to_string(),
            ppl.to_string(),
        ]);
    }
    t
}

fn best_text(r: &SearchResult) -> String {
    let c = &r.best;
    format!(
        "# mean validation perplexity {}\nlearning_rate = {}\nbatch_size = {}\nweight_decay = {}\ndropout = {}\nn_heads = {}\n",
        r.best_mean_perplexity, c.learning_rate, c.batch_size, c.weight_decay, c.dropout, c.n_heads
    )
}

pub fn search(ctx: &Context, sel: &Select) -> Result<(), CliError> {
    let space = ctx.manifest.search_space()?;
    let template = ctx.manifest.train_config()?;
    let n_seeds: usize = ctx.manifest.kv.get_or("n_seeds", 3)?;
    let mut out = Outputs::new();
    let (mut ledgers, mut timings) = (Vec::new(), Vec::new());
    let models = ctx.models(sel)?;
    for ds in ctx.datasets(sel)? {
        let vocab = ctx.vocab(&ds.name)?;
        let train_ids = ctx.encoded(&ds.name, "train", &vocab)?;
        let val_ids = ctx.encoded(&ds.name, "val", &vocab)?;
        for &(family, layers) in &models {
            let tag = model_tag(family, layers);
            let base = ctx.manifest.model_config(family, layers, vocab.len())?;
            let n_points = space.points(&template, family.is_transformer()).len();
            log::info!("searching {n_points} settings x {n_seeds} seeds for {tag} on {}", ds.name);
            let r = if ctx.float32 {
                grid_search::<f32>(&space, &base, &train_ids, &val_ids, &template, n_seeds, ctx.jobs)?
            } else {
                grid_search::<f64>(&space, &base, &train_ids, &val_ids, &template, n_seeds, ctx.jobs)?
            };
            log::info!("{} {tag}: best mean validation perplexity {:.3}", ds.name, r.best_mean_perplexity);
            let stem = format!("{}_{tag}", ds.name);
            out.write(&ctx.path("search").join(format!("{stem}.csv")), search_table(&r).to_csv().as_bytes())?;
            out.write(&best_path(ctx, &ds.name, &tag), best_text(&r).as_bytes())?;
            ledgers.push(ledger_table(&ds.name, &tag, &r.rows));
            timings.push(timing_table(&ds.name, &tag, &r.rows));
        }
    }
    upsert_run_ledgers(ctx, &mut out, ledgers, timings)?;
    out.commit();
    Ok(())
}

/// Every selected (dataset, model) pair.
fn model_refs<'a>(ctx: &'a Context, sel: &EvalSelect) -> Result<Vec<ModelRef<'a>>, CliError> {
    let models = ctx.models(&sel.select)?;
    Ok(ctx
        .datasets(&sel.select)?
        .into_iter()
        .flat_map(|dataset| {
            models.iter().map(move |&(family, layers)| ModelRef {
                dataset,
                family,
                layers,
                untrained: sel.untrained,
            })
        })
        .collect())
}

pub fn ppl(ctx: &Context, sel: &EvalSelect) -> Result<(), CliError> {
    let mut out = Outputs::new();
    let mut table = eval_table(&["split", "perplexity"]);
    for m in model_refs(ctx, sel)? {
        let vocab = ctx.vocab(&m.dataset.name)?;
        let model = ctx.load_model(&m, &vocab)?;
        for split in ["val", "test"] {
            let ids = ctx.encoded(&m.dataset.name, split, &vocab)?;
            if ids.is_empty() {
                log::warn!("{} {split} split is empty; skipped", m.dataset.name);
                continue;
            }
            let p = perplexity(model.scorer(), &ids)?;
            log::info!("{} {} {split}: perplexity {p:.3}", m.dataset.name, m.tag());
            let mut cells = eval_cells(ctx, &m);
            cells.extend([split.to_string(), p.to_string()]);
            table.push(cells);
        }
    }
    out.upsert(&ctx.path(PERPLEXITY), table, EVAL_KEY.len() + 1)?;
    out.commit();
    Ok(())
}

fn read_input(path: &Option<PathBuf>, default: impl FnOnce() -> String) -> Result<(String, String), CliError> {
    match path {
        Some(p) => Ok((tinylm::io::read_to_string(p)?, p.display().to_string())),
        None => Ok((default(), "built-in".to_string())),
    }
}

fn suite_path(ctx: &Context) -> PathBuf {
    ctx.path("zorro").join("suite.tsv")
}

pub fn zorro_gen(ctx: &Context) -> Result<(), CliError> {
    let vocabs = ctx
        .manifest
        .datasets
        .iter()
        .map(|d| ctx.vocab(&d.name))
        .collect::<Result<Vec<_>, _>>()?;
    let shared = intersect_vocab(&vocabs.iter().collect::<Vec<_>>());
    log::info!("{} words shared by {} vocabularies", shared.len(), vocabs.len());
    let (text, source) = read_input(&ctx.manifest.zorro_templates, synth::agreement_templates)?;
    let templates = parse_templates(&text, &source)?;
    let per_test: usize = ctx.manifest.kv.get_or("zorro_pairs", PAIRS_PER_TEST)?;
    let (pairs, warnings) = instantiate_suite(&templates, &shared, per_test, ctx.seed())?;
    for w in warnings {
        log::warn!("{w}");
    }
    log::info!("{} pairs over {} tests", pairs.len(), templates.len());
    let mut out = Outputs::new();
    out.write(&suite_path(ctx), suite_to_tsv(&pairs).as_bytes())?;
    out.commit();
    Ok(())
}

pub fn zorro_eval(ctx: &Context, sel: &EvalSelect) -> Result<(), CliError> {
    let path = suite_path(ctx);
    if !path.exists() {
        return Err(CliError::user(format!("{} not found; run `tinylm zorro-gen` first", path.display())));
    }
    let pairs = suite_from_tsv(&tinylm::io::read_to_string(&path)?, &path.display().to_string())?;
    let normalize: bool = ctx.manifest.kv.get_or("zorro_normalize", false)?;
    let mut out = Outputs::new();
    let mut table = eval_table(&["n_pairs", "accuracy"]);
    for m in model_refs(ctx, sel)? {
        let vocab = ctx.vocab(&m.dataset.name)?;
        let model = ctx.load_model(&m, &vocab)?;
        let report = evaluate_suite(model.scorer(), &vocab, &pairs, normalize)?;
        log::info!("{} {} {}: accuracy {:.4}", m.dataset.name, m.tag(), m.state(), report.overall());
        out.write(
            &ctx.path("zorro").join(format!("{}.csv", ctx.stem(&m))),
            report.to_table().to_csv().as_bytes(),
        )?;
        let mut cells = eval_cells(ctx, &m);
        cells.extend([pairs.len().to_string(), report.overall().to_string()]);
        table.push(cells);
    }
    out.upsert(&ctx.path(ZORRO), table, EVAL_KEY.len())?;
    out.commit();
    Ok(())
}

pub fn cloze(ctx: &Context, sel: &EvalSelect) -> Result<(), CliError> {
    let lexicon = match &ctx.manifest.pos_lexicon {
        Some(p) => PosLexicon::parse(&tinylm::io::read_to_string(p)?, &p.display().to_string())?,
        None => synth::pos_lexicon(),
    };
    let kv = &ctx.manifest.kv;
    let cap: usize = kv.get_or("cloze_max_candidates", MAX_CANDIDATES)?;
    let mode = if kv.get_or("cloze_exclude_target", false)? {
        CandidateMode::ExcludeTarget
    } else {
        CandidateMode::IncludeTarget
    };
    let mut out = Outputs::new();
    let mut table = eval_table(&["n_clozes", "noun_ratio", "accuracy"]);
    for m in model_refs(ctx, sel)? {
        let vocab = ctx.vocab(&m.dataset.name)?;
        let items = extract_clozes(&ctx.read_split(&m.dataset.name, "val")?, &lexicon);
        if items.is_empty() {
            return Err(CliError::user(format!(
                "no cloze items in the {} validation split; check the part-of-speech lexicon",
                m.dataset.name
            )));
        }
        let candidates = Candidates::from_vocab(&vocab, &lexicon, cap)?;
        let model = ctx.load_model(&m, &vocab)?;
        let (report, outcomes) = evaluate_clozes(model.scorer(), &vocab, &items, &candidates, mode)?;
        log::info!(
            "{} {} {}: {} clozes, accuracy {:.4}",
            m.dataset.name,
            m.tag(),
            m.state(),
            report.n_clozes,
            report.accuracy()
        );
        out.write(
            &ctx.path("cloze").join(format!("{}.csv", ctx.stem(&m))),
            dump_table(&items, &outcomes).to_csv().as_bytes(),
        )?;
        let mut cells = eval_cells(ctx, &m);
        cells.extend([
            report.n_clozes.to_string(),
            report.noun_ratio().to_string(),
            report.accuracy().to_string(),
        ]);
        table.push(cells);
    }
    out.upsert(&ctx.path(CLOZE), table, EVAL_KEY.len())?;
    out.commit();
    Ok(())
}

pub const CATEGORY_SETS: [&str; 2] = ["syntactic", "semantic"];

/// Words and labels of one category set for a dataset, or `None` when too few
/// words remain to project.
fn category_words(
    ctx: &Context,
    set: &str,
    vocab: &tinylm::tokenizer::Vocabulary,
    freq: &std::collections::BTreeMap<String, usize>,
    dataset: &str,
) -> Result<Option<(Vec<String>, Vec<String>)>, CliError> {
    let (text, source) = match set {
        "syntactic" => read_input(&ctx.manifest.syntactic_categories, || DEFAULT_SYNTACTIC.to_string())?,
        _ => read_input(&ctx.manifest.semantic_categories, || DEFAULT_SEMANTIC.to_string())?,
    };
    let cats = CategoryFile::parse(&text, &source)?;
    let k: usize = ctx.manifest.kv.get_or("category_k", TOP_K)?;
    let (mut words, mut labels) = (Vec::new(), Vec::new());
    for (label, members) in &cats.categories {
        let chosen = if set == "syntactic" {
            members.iter().filter(|w| vocab.contains(w)).cloned().collect()
        } else {
            let (chosen, warning) = select_category_words(members, freq, k);
            if let Some(w) = warning {
                log::warn!("{dataset} {label}: {w}");
            }
            chosen
        };
        labels.extend(std::iter::repeat_n(label.clone(), chosen.len()));
        words.extend(chosen);
    }
    let n_labels = labels.iter().collect::<BTreeSet<_>>().len();
    if words.len() < 4 || n_labels < 2 {
        log::warn!(
            "{dataset}: only {} {set} words in {n_labels} categories are in the vocabulary; skipped",
            words.len()
        );
        return Ok(None);
    }
    Ok(Some((words, labels)))
}

pub fn embed(ctx: &Context, sel: &EvalSelect) -> Result<(), CliError> {
    let tsne_cfg = ctx.manifest.tsne_config()?;
    let mut out = Outputs::new();
    let mut table = eval_table(&["category_set", "n_words", "intra", "inter"]);
    let dir = ctx.path("embed");
    for m in model_refs(ctx, sel)? {
        let vocab = ctx.vocab(&m.dataset.name)?;
        let freq: std::collections::BTreeMap<String, usize> = count_frequencies(&ctx.read_split(&m.dataset.name, "train")?)
            .into_iter()
            .filter(|(w, _)| vocab.contains(w))
            .collect();
        let model = ctx.load_model(&m, &vocab)?;
        for set in CATEGORY_SETS {
            let Some((words, labels)) = category_words(ctx, set, &vocab, &freq, &m.dataset.name)? else {
                continue;
            };
            let emb = model.embeddings(&vocab, &words)?;
            let d = cosine_distances(&emb)?;
            let (intra, inter) = intra_inter(&d, &labels)?;
            let projected = tsne(&d, &tsne_cfg)?;
            let (merges, tree) = agglomerative_cluster(&d, Linkage::Average)?;
            let points: Vec<LabeledPoint> = words
                .iter()
                .zip(&labels)
                .zip(&projected.coords)
                .map(|((w, l), c)| LabeledPoint {
                    word: w.clone(),
                    label: l.clone(),
                    x: c[0],
                    y: c[1],
                })
                .collect();
            let title = format!("{}, {}, {set}", m.dataset.name, model_label(m.family, m.layers));
            let stem = format!("{}_{set}", ctx.stem(&m));
            out.write(&dir.join(format!("{stem}_tsne.csv")), scatter_table(&points).to_csv().as_bytes())?;
            out.write(&dir.join(format!("{stem}_tsne.svg")), scatter_svg(&points, &title).as_bytes())?;
            out.write(
                &dir.join(format!("{stem}_dendrogram.csv")),
                dendrogram_table(&merges, &words, &labels).to_csv().as_bytes(),
            )?;
            out.write(
                &dir.join(format!("{stem}_dendrogram.svg")),
                dendrogram_svg(&tree, &words, &labels, &title).as_bytes(),
            )?;
            log::info!(
                "{} {} {set}: {} words, intra {intra:.4}, inter {inter:.4}",
                m.dataset.name,
                m.tag(),
                words.len()
            );
            let mut cells = eval_cells(ctx, &m);
            cells.extend([set.to_string(), words.len().to_string(), intra.to_string(), inter.to_string()]);
            table.push(cells);
        }
    }
    out.upsert(&ctx.path(EMBEDDINGS), table, EVAL_KEY.len() + 1)?;
    out.commit();
    Ok(())
}
