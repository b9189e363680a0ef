use std::fmt::Write as _;
use std::path::Path;

use super::{DendrogramNode, Merge};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::table::Table;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub word: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

fn labels_in_order<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for l in labels {
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

fn color(labels: &[&str], label: &str) -> &'static str {
    let i = labels.iter().position(|l| *l == label).unwrap_or(0);
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `word,label,x,y`; coordinates use the shortest exact decimal form.
pub fn scatter_table(points: &[LabeledPoint]) -> Table {
    let mut t = Table::new(["word", "label", "x", "y"]);
    for p in points {
        t.push([p.word.clone(), p.label.clone(), p.x.to_string(), p.y.to_string()]);
    }
    t
}

pub fn scatter_from_csv(text: &str) -> Result<Vec<LabeledPoint>> {
    let t = Table::from_csv(text)?;
    let bad = |line: usize, msg: String| Error::Parse {
        path: "scatter csv".into(),
        line,
        msg,
    };
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != 4 {
                return Err(bad(i + 2, format!("expected 4 fields, got {}", r.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 2, format!("{s:?}: {e}")));
            Ok(LabeledPoint {
                word: r[0].clone(),
                label: r[1].clone(),
                x: num(&r[2])?,
                y: num(&r[3])?,
            })
        })
        .collect()
}

pub fn scatter_svg(points: &[LabeledPoint], title: &str) -> String {
    let (w, h, m) = (720.0, 560.0, 40.0);
    let legend_w = 160.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let sx = |x: f64| m + (x - x0) / span(x0, x1) * (w - 2.0 * m - legend_w);
    let sy = |y: f64| h - m - (y - y0) / span(y0, y1) * (h - 2.0 * m);
    let labels = labels_in_order(points.iter().map(|p| p.label.as_str()));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{m}" y="22" font-size="14">{}</text>"#, escape(title));
    for p in points {
        let (cx, cy) = (sx(p.x), sy(p.y));
        let _ = writeln!(
            s,
            r#"<circle class="marker" cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            color(&labels, &p.label),
            cx + 5.0,
            cy - 5.0,
            escape(&p.word)
        );
    }
    let lx = w - legend_w + 10.0;
    for (i, l) in labels.iter().enumerate() {
        let ly = m + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            color(&labels, l),
            lx + 16.0,
            ly + 9.0,
            escape(l)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.csv` and `<stem>.svg`. Nothing is written for an empty input.
pub fn export_scatter(points: &[LabeledPoint], dir: &Path, stem: &str, title: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InsufficientData(format!("no points to plot for {stem}")));
    }
    write_atomic(&dir.join(format!("{stem}.csv")), scatter_table(points).to_csv().as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.svg")), scatter_svg(points, title).as_bytes())
}

/// `step,left,right,height,size,members`, where leaves are named by word and
/// internal nodes by `#<node id>`.
pub fn dendrogram_table(merges: &[Merge], words: &[String], labels: &[String]) -> Table {
    let n = words.len();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let name = |i: usize| if i < n { words[i].clone() } else { format!("#{i}") };
    let mut t = Table::new(["step", "left", "right", "height", "size", "members", "labels"]);
    for (k, m) in merges.iter().enumerate() {
        let mut joined = members[m.left].clone();
        joined.extend(&members[m.right]);
        t.push([
            k.to_string(),
            name(m.left),
            name(m.right),
            m.height.to_string(),
            m.size.to_string(),
            joined.iter().map(|&i| words[i].as_str()).collect::<Vec<_>>().join(" "),
            labels_in_order(joined.iter().map(|&i| labels[i].as_str())).join(" "),
        ]);
        members.push(joined);
    }
    t
}

pub fn dendrogram_svg(tree: &DendrogramNode, words: &[String], labels: &[String], title: &str) -> String {
    let order = tree.leaves();
    let row = 16.0;
    let (m, label_w, plot_w) = (40.0, 140.0, 480.0);
    let h = 2.0 * m + row * order.len() as f64;
    let w = m + plot_w + label_w + 160.0;
    let top = tree.height().max(1e-12);
    let sx = |height: f64| m + plot_w * (1.0 - height / top);
    let mut pos = vec![0.0; words.len()];
    for (r, &leaf) in order.iter().enumerate() {
        pos[leaf] = m + row * (r as f64 + 0.5);
    }
    let legend = labels_in_order(labels.iter().map(String::as_str));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{m}" y="22" font-size="14">{}</text>"#, escape(title));

    // Returns (y, x) of the node's attachment point.
    fn draw(node: &DendrogramNode, pos: &[f64], sx: &dyn Fn(f64) -> f64, s: &mut String) -> (f64, f64) {
        match node {
            DendrogramNode::Leaf(i) => (pos[*i], sx(0.0)),
            DendrogramNode::Join { left, right, height } => {
                let (ya, xa) = draw(left, pos, sx, s);
                let (yb, xb) = draw(right, pos, sx, s);
                let x = sx(*height);
                let _ = writeln!(
                    s,
                    r#"<path d="M{xa:.2},{ya:.2} H{x:.2} V{yb:.2} H{xb:.2}" fill="none" stroke="black"/>"#
                );
                ((ya + yb) / 2.0, x)
            }
        }
    }
    draw(tree, &pos, &sx, &mut s);
    for &leaf in &order {
        let _ = writeln!(
            s,
            r#"<text class="leaf" x="{:.2}" y="{:.2}" fill="{}">{}</text>"#,
            sx(0.0) + 6.0,
            pos[leaf] + 4.0,
            color(&legend, &labels[leaf]),
            escape(&words[leaf])
        );
    }
    let lx = m + plot_w + label_w;
    for (i, l) in legend.iter().enumerate() {
        let ly = m + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            color(&legend, l),
            lx + 16.0,
            ly + 9.0,
            escape(l)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_dendrogram(
    merges: &[Merge],
    tree: &DendrogramNode,
    words: &[String],
    labels: &[String],
    dir: &Path,
    stem: &str,
    title: &str,
) -> Result<()> {
    if words.is_empty() || words.len() != labels.len() {
        return Err(Error::InsufficientData(format!(
            "dendrogram {stem} needs one label per word and at least one word"
        )));
    }
    write_atomic(
        &dir.join(format!("{stem}.csv")),
        dendrogram_table(merges, words, labels).to_csv().as_bytes(),
    )?;
    write_atomic(
        &dir.join(format!("{stem}.svg")),
        dendrogram_svg(tree, words, labels, title).as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{agglomerative_cluster, DistanceMatrix, Linkage};

    fn pts() -> Vec<LabeledPoint> {
        [("dog", "NOUN", 0.1, -2.5), ("run", "VERB", 1.0 / 3.0, 7e-9), ("cat", "NOUN", -1e10, 0.0)]
            .iter()
            .map(|&(w, l, x, y)| LabeledPoint {
                word: w.into(),
                label: l.into(),
                x,
                y,
            })
            .collect()
    }

    #[test]
    fn scatter_csv_round_trips_exactly() {
        let p = pts();
        let t = scatter_table(&p);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(scatter_from_csv(&t.to_csv()).unwrap(), p);
        let svg = scatter_svg(&p, "t");
        assert_eq!(svg.matches(r#"class="marker""#).count(), 3);
        assert!(svg.contains(">NOUN<") && svg.contains(">VERB<"));
    }

    #[test]
    fn empty_input_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(export_scatter(&[], dir.path(), "s", "t").is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        export_scatter(&pts(), dir.path(), "s", "t").unwrap();
        assert!(dir.path().join("s.svg").exists() && dir.path().join("s.csv").exists());
    }

    #[test]
    fn dendrogram_outputs() {
        let words: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let labels: Vec<String> = ["X", "X", "Y"].iter().map(|s| s.to_string()).collect();
        let d = DistanceMatrix::from_fn(3, |i, j| if (i, j) == (0, 1) { 0.1 } else { 0.9 });
        let (m, tree) = agglomerative_cluster(&d, Linkage::Average).unwrap();
        let t = dendrogram_table(&m, &words, &labels);
        assert_eq!(t.rows[1], vec!["1", "#3", "c", "0.9", "3", "a b c", "X Y"]);
        let svg = dendrogram_svg(&tree, &words, &labels, "d");
        assert_eq!(svg.matches(r#"class="leaf""#).count(), 3);
        assert_eq!(svg.matches("<path").count(), 2);
    }
}
