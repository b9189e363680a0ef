//! Word-embedding analysis: cosine distances, dendrograms, t-SNE and category
//! plots.

mod categories;
mod cluster;
mod plot;
mod tsne;

pub use categories::{select_category_words, CategoryFile, DEFAULT_SEMANTIC, DEFAULT_SYNTACTIC, TOP_K};
pub use cluster::{agglomerative_cluster, DendrogramNode, Linkage, Merge};
pub use plot::{
    dendrogram_svg, dendrogram_table, export_dendrogram, export_scatter, scatter_from_csv, scatter_svg,
    scatter_table, LabeledPoint,
};
pub use tsne::{tsne, TsneConfig, TsneResult};

use rayon::prelude::*;

use crate::autodiff::Float;
use crate::error::{Error, Result};
use crate::models::LanguageModel;
use crate::tokenizer::Vocabulary;

/// Selected rows of a model's input embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub words: Vec<String>,
    pub dim: usize,
    /// Row-major `words.len() × dim`.
    pub vectors: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(words: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != words.len() * dim {
            return Err(Error::shape("embedding matrix", &[words.len(), dim], &[vectors.len()]));
        }
        Ok(EmbeddingMatrix { words, dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Rows of the input embedding table for `words`, in request order.
pub fn extract_embeddings<T: Float, S: AsRef<str>>(
    model: &LanguageModel<T>,
    vocab: &Vocabulary,
    words: &[S],
) -> Result<EmbeddingMatrix> {
    let table = model.embedding_table();
    let dim = table.shape()[1];
    let mut vectors = Vec::with_capacity(words.len() * dim);
    for w in words {
        let id = vocab
            .id(w.as_ref())
            .ok_or_else(|| Error::UnknownWord(w.as_ref().to_string()))?;
        vectors.extend(table.row(id as usize).iter().map(|x| x.as_f64()));
    }
    EmbeddingMatrix::new(words.iter().map(|w| w.as_ref().to_string()).collect(), dim, vectors)
}

/// `1 − cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_distance", &[u.len()], &[v.len()]));
    }
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector(format!("cannot take the cosine of a zero vector (length {})", u.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

/// Square symmetric matrix of pairwise distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("distance matrix", &[n, n], &[data.len()]));
        }
        for i in 0..n {
            for j in i + 1..n {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::shape("distance matrix symmetry", &[i, j], &[j, i]));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Pairwise cosine distances between the rows of `m`.
pub fn cosine_distances(m: &EmbeddingMatrix) -> Result<DistanceMatrix> {
    let n = m.len();
    for i in 0..n {
        if m.row(i).iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroVector(format!("embedding of {:?}", m.words[i])));
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i < j { cosine_distance(m.row(i), m.row(j)) } else { Ok(0.0) }).collect())
        .collect::<Result<_>>()?;
    Ok(DistanceMatrix::from_fn(n, |i, j| rows[i][j]))
}

/// Mean distance within classes and mean distance across classes, over unordered
/// pairs. `labels[i]` is the class of row `i`.
pub fn intra_inter<L: PartialEq>(d: &DistanceMatrix, labels: &[L]) -> Result<(f64, f64)> {
    if labels.len() != d.len() {
        return Err(Error::shape("intra_inter", &[d.len()], &[labels.len()]));
    }
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..d.len() {
        for j in i + 1..d.len() {
            if labels[i] == labels[j] {
                intra += d.get(i, j);
                ni += 1;
            } else {
                inter += d.get(i, j);
                nx += 1;
            }
        }
    }
    if ni == 0 || nx == 0 {
        return Err(Error::InsufficientData(
            "need at least two classes and one class with two members".into(),
        ));
    }
    Ok((intra / ni as f64, inter / nx as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Family, ModelConfig};

    #[test]
    fn cosine_reference_values() {
        let x = [1.0, 2.0, -0.5];
        let neg: Vec<f64> = x.iter().map(|a| -a).collect();
        assert!(cosine_distance(&x, &x).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&x, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(cosine_distance(&x, &[0.0; 3]), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn extraction_copies_rows_in_request_order() {
        let vocab = Vocabulary::from_word_list(&["a", "b", "c"]).unwrap();
        let cfg = ModelConfig::standard(Family::Lstm, 1, vocab.len())
            .unwrap()
            .with_width(4, 8, 1)
            .unwrap();
        let model = LanguageModel::<f64>::build(cfg, 1).unwrap();
        let ab = extract_embeddings(&model, &vocab, &["a", "b"]).unwrap();
        let ba = extract_embeddings(&model, &vocab, &["b", "a"]).unwrap();
        let table = model.embedding_table();
        assert_eq!(ab.row(0), table.row(vocab.id("a").unwrap() as usize));
        assert_eq!(ab.row(0), ba.row(1));
        assert_eq!(ab.row(1), ba.row(0));
        assert!(matches!(
            extract_embeddings(&model, &vocab, &["zebra"]),
            Err(Error::UnknownWord(_))
        ));
    }

    #[test]
    fn distance_matrix_validation() {
        assert!(matches!(DistanceMatrix::new(2, vec![0.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(
            DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]),
            Err(Error::Shape { .. })
        ));
        let m = EmbeddingMatrix::new(vec!["a".into(), "b".into()], 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(cosine_distances(&m), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn intra_inter_on_two_clusters() {
        let d = DistanceMatrix::from_fn(4, |i, j| if i / 2 == j / 2 { 0.1 } else { 0.9 });
        let (a, e) = intra_inter(&d, &[0, 0, 1, 1]).unwrap();
        assert!((a - 0.1).abs() < 1e-15 && (e - 0.9).abs() < 1e-15);
    }
}
