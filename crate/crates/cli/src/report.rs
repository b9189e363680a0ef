//! Aggregates ledgers into dataset-by-model tables and figure panels.

use std::collections::BTreeMap;

use tinylm::embeddings::{scatter_from_csv, scatter_svg};
use tinylm::models::ARCHITECTURES;
use tinylm::preprocess::{stats_display, CorpusStats, DatasetStats};
use tinylm::table::Table;

use crate::commands::{CLOZE, EMBEDDINGS, PERPLEXITY, STATS, ZORRO};
use crate::context::Context;
use crate::manifest::{model_label, model_tag};
use crate::outputs::{read_table, Outputs};
use crate::CliError;

fn col(t: &Table, name: &str, ledger: &str) -> Result<usize, CliError> {
    t.column(name)
        .ok_or_else(|| CliError::user(format!("{ledger}: missing column {name:?}")))
}

fn num<T: std::str::FromStr>(cell: &str, ledger: &str) -> Result<T, CliError> {
    cell.parse()
        .map_err(|_| CliError::user(format!("{ledger}: bad number {cell:?}")))
}

/// Inverse of the long-format statistics CSV.
pub fn stats_from_table(t: &Table) -> Result<Vec<DatasetStats>, CliError> {
    let c = |n| col(t, n, STATS);
    let (ds, split) = (c("dataset")?, c("split")?);
    let cols = [c("n_utterances")?, c("mean_len")?, c("sd_len")?, c("n_tokens")?, c("oov_rate")?, c("vocab_size")?];
    let mut by_dataset: Vec<(String, Option<CorpusStats>, Option<CorpusStats>)> = Vec::new();
    for row in &t.rows {
        let s = CorpusStats {
            n_utterances: num(&row[cols[0]], STATS)?,
            mean_len: num(&row[cols[1]], STATS)?,
            sd_len: num(&row[cols[2]], STATS)?,
            n_tokens: num(&row[cols[3]], STATS)?,
            oov_rate: num(&row[cols[4]], STATS)?,
            vocab_size: num(&row[cols[5]], STATS)?,
        };
        let i = match by_dataset.iter().position(|(d, _, _)| *d == row[ds]) {
            Some(i) => i,
            None => {
                by_dataset.push((row[ds].clone(), None, None));
                by_dataset.len() - 1
            }
        };
        match row[split].as_str() {
            "train" => by_dataset[i].1 = Some(s),
            "val" => by_dataset[i].2 = Some(s),
            other => return Err(CliError::user(format!("{STATS}: unknown split {other:?}"))),
        }
    }
    by_dataset
        .into_iter()
        .map(|(dataset, train, val)| match (train, val) {
            (Some(train), Some(val)) => Ok(DatasetStats { dataset, train, val }),
            _ => Err(CliError::user(format!("{STATS}: {dataset} needs both train and val rows"))),
        })
        .collect()
}

/// Manifest datasets first, then any others found in the ledger.
fn dataset_order(ctx: &Context, found: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut order: Vec<String> = ctx.manifest.datasets.iter().map(|d| d.name.clone()).collect();
    let mut extra: Vec<String> = found.into_iter().filter(|d| !order.contains(d)).collect();
    extra.sort();
    extra.dedup();
    order.extend(extra);
    order
}

/// Seed means of `value` for trained models, keyed by (model tag, dataset).
fn seed_means(
    t: &Table,
    ledger: &str,
    value: &str,
    keep: impl Fn(&[String]) -> bool,
) -> Result<BTreeMap<(String, String), f64>, CliError> {
    let (ds, model, state, v) = (col(t, "dataset", ledger)?, col(t, "model", ledger)?, col(t, "state", ledger)?, col(t, value, ledger)?);
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for row in t.rows.iter().filter(|r| r[state] == "trained" && keep(r)) {
        let e = acc.entry((row[model].clone(), row[ds].clone())).or_default();
        e.0 += num::<f64>(&row[v], ledger)?;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

/// Model rows by dataset columns.
fn model_table(ctx: &Context, means: &BTreeMap<(String, String), f64>, fmt: impl Fn(f64) -> String) -> Option<Table> {
    if means.is_empty() {
        return None;
    }
    let datasets: Vec<String> = dataset_order(ctx, means.keys().map(|(_, d)| d.clone()))
        .into_iter()
        .filter(|d| means.keys().any(|(_, x)| x == d))
        .collect();
    let mut t = Table::new(std::iter::once("Model".to_string()).chain(datasets.iter().cloned()));
    for &(family, layers) in &ARCHITECTURES {
        let tag = model_tag(family, layers);
        if !means.keys().any(|(m, _)| *m == tag) {
            continue;
        }
        t.push(std::iter::once(model_label(family, layers)).chain(datasets.iter().map(|d| {
            means
                .get(&(tag.clone(), d.clone()))
                .map_or_else(|| "-".to_string(), |&v| fmt(v))
        })));
    }
    Some(t)
}

fn write_table(ctx: &Context, out: &mut Outputs, name: &str, title: &str, t: &Table) -> Result<(), CliError> {
    let dir = ctx.path("report");
    out.write(&dir.join(format!("{name}.csv")), t.to_csv().as_bytes())?;
    out.write(&dir.join(format!("{name}.txt")), format!("{title}\n\n{}", t.to_aligned()).as_bytes())
}

fn cloze_table(ctx: &Context, t: &Table) -> Result<Option<Table>, CliError> {
    let means = seed_means(t, CLOZE, "accuracy", |_| true)?;
    let Some(body) = model_table(ctx, &means, |v| format!("{:.2}", 100.0 * v)) else {
        return Ok(None);
    };
    let (ds, n, ratio) = (col(t, "dataset", CLOZE)?, col(t, "n_clozes", CLOZE)?, col(t, "noun_ratio", CLOZE)?);
    let first = |d: &str| t.rows.iter().find(|r| r[ds] == d);
    let mut out = Table::new(body.header.iter().cloned());
    let datasets = &body.header[1..];
    out.push(std::iter::once("Number of clozes".to_string()).chain(datasets.iter().map(|d| {
        first(d).map_or_else(|| "-".into(), |r| r[n].clone())
    })));
    let mut ratios = vec!["Ratio of noun clozes".to_string()];
    for d in datasets {
        ratios.push(match first(d) {
            Some(r) => format!("{:.2}%", 100.0 * num::<f64>(&r[ratio], CLOZE)?),
            None => "-".into(),
        });
    }
    out.push(ratios);
    out.rows.extend(body.rows);
    Ok(Some(out))
}

/// Projection panels for one category set, plus the distance summary.
fn figure(ctx: &Context, out: &mut Outputs, t: &Table, name: &str, set: &str) -> Result<bool, CliError> {
    let [ds, model, seed, state, cat, n, intra, inter] =
        ["dataset", "model", "seed", "state", "category_set", "n_words", "intra", "inter"].map(|c| col(t, c, EMBEDDINGS));
    let (ds, model, seed, state, cat) = (ds?, model?, seed?, state?, cat?);
    let (n, intra, inter) = (n?, intra?, inter?);
    let mut summary = Table::new(["dataset", "model", "seed", "n_words", "intra", "inter"]);
    let dir = ctx.path("report").join(name);
    for row in t.rows.iter().filter(|r| r[cat] == set && r[state] == "trained") {
        let stem = format!("{}_{}-s{}", row[ds], row[model], row[seed]);
        let src = ctx.path("embed").join(format!("{stem}_{set}_tsne.csv"));
        if !src.exists() {
            log::warn!("{} listed in {EMBEDDINGS} but missing; skipped", src.display());
            continue;
        }
        let points = scatter_from_csv(&tinylm::io::read_to_string(&src)?)?;
        let label = crate::manifest::parse_model_tag(&row[model])
            .map(|(f, l)| model_label(f, l))
            .unwrap_or_else(|_| row[model].clone());
        let title = format!("{}, {label}, {set}", row[ds]);
        out.write(&dir.join(format!("{stem}_tsne.svg")), scatter_svg(&points, &title).as_bytes())?;
        let dendro = ctx.path("embed").join(format!("{stem}_{set}_dendrogram.svg"));
        if dendro.exists() {
            out.write(
                &dir.join(format!("{stem}_dendrogram.svg")),
                tinylm::io::read_to_string(&dendro)?.as_bytes(),
            )?;
        }
        summary.push([
            row[ds].clone(),
            row[model].clone(),
            row[seed].clone(),
            row[n].clone(),
            format!("{:.4}", num::<f64>(&row[intra], EMBEDDINGS)?),
            format!("{:.4}", num::<f64>(&row[inter], EMBEDDINGS)?),
        ]);
    }
    if summary.rows.is_empty() {
        return Ok(false);
    }
    write_table(ctx, out, name, &format!("Mean cosine distance within and across {set} categories"), &summary)?;
    Ok(true)
}

pub fn report(ctx: &Context) -> Result<(), CliError> {
    let ledgers = [
        (STATS, "preprocess"),
        (PERPLEXITY, "ppl"),
        (ZORRO, "zorro-eval"),
        (CLOZE, "cloze"),
        (EMBEDDINGS, "embed"),
    ];
    if ledgers.iter().all(|(f, _)| !ctx.path(f).exists()) {
        let expected: Vec<String> = ledgers
            .iter()
            .map(|(f, cmd)| format!("  {} (from `tinylm {cmd}`)", ctx.path(f).display()))
            .collect();
        return Err(CliError::user(format!("no ledgers to report; expected at least one of:\n{}", expected.join("\n"))));
    }
    let mut out = Outputs::new();
    let mut written = Vec::new();
    if let Some(t) = read_table(&ctx.path(STATS))? {
        let display = stats_display(&stats_from_table(&t)?);
        write_table(ctx, &mut out, "table1", "Dataset statistics", &display)?;
        written.push("table1");
    }
    if let Some(t) = read_table(&ctx.path(PERPLEXITY))? {
        let split = col(&t, "split", PERPLEXITY)?;
        let means = seed_means(&t, PERPLEXITY, "perplexity", |r| r[split] == "val")?;
        if let Some(tab) = model_table(ctx, &means, |v| format!("{v:.2}")) {
            write_table(ctx, &mut out, "table3", "Validation perplexity", &tab)?;
            written.push("table3");
        }
    }
    if let Some(t) = read_table(&ctx.path(ZORRO))? {
        let means = seed_means(&t, ZORRO, "accuracy", |_| true)?;
        if let Some(tab) = model_table(ctx, &means, |v| format!("{:.2}", 100.0 * v)) {
            write_table(ctx, &mut out, "table4", "Minimal-pair accuracy (%)", &tab)?;
            written.push("table4");
        }
    }
    if let Some(t) = read_table(&ctx.path(CLOZE))? {
        if let Some(tab) = cloze_table(ctx, &t)? {
            write_table(ctx, &mut out, "table5", "Noun/verb cloze statistics and accuracy (%)", &tab)?;
            written.push("table5");
        }
    }
    if let Some(t) = read_table(&ctx.path(EMBEDDINGS))? {
        for (name, set) in [("figure2", "syntactic"), ("figure3", "semantic")] {
            if figure(ctx, &mut out, &t, name, set)? {
                written.push(name);
            }
        }
    }
    if written.is_empty() {
        return Err(CliError::user("ledgers hold no trained-model rows to report"));
    }
    out.commit();
    for name in written {
        let txt = ctx.path("report").join(format!("{name}.txt"));
        println!("{}", tinylm::io::read_to_string(&txt)?);
    }
    Ok(())
}
