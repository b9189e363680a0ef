use std::str::FromStr;

use super::DistanceMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            _ => Err(Error::Config(format!("unknown linkage {s:?}"))),
        }
    }
}

/// One agglomeration step. Leaves are `0..n`; the cluster formed at step `k` is
/// node `n + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DendrogramNode {
    Leaf(usize),
    Join {
        left: Box<DendrogramNode>,
        right: Box<DendrogramNode>,
        height: f64,
    },
}

impl DendrogramNode {
    pub fn height(&self) -> f64 {
        match self {
            DendrogramNode::Leaf(_) => 0.0,
            DendrogramNode::Join { height, .. } => *height,
        }
    }

    /// Leaves in drawing order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                DendrogramNode::Leaf(i) => out.push(*i),
                DendrogramNode::Join { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Builds the tree from a merge list over `n` leaves.
    pub fn from_merges(n: usize, merges: &[Merge]) -> Result<Self> {
        if n == 0 || merges.len() + 1 != n {
            return Err(Error::InsufficientData(format!(
                "{} merges cannot join {n} leaves",
                merges.len()
            )));
        }
        let mut nodes: Vec<Option<DendrogramNode>> = (0..n).map(|i| Some(DendrogramNode::Leaf(i))).collect();
        for m in merges {
            let mut take = |i: usize| {
                nodes
                    .get_mut(i)
                    .and_then(Option::take)
                    .ok_or_else(|| Error::Config(format!("merge refers to unavailable node {i}")))
            };
            let left = Box::new(take(m.left)?);
            let right = Box::new(take(m.right)?);
            nodes.push(Some(DendrogramNode::Join {
                left,
                right,
                height: m.height,
            }));
        }
        Ok(nodes.pop().flatten().expect("root was just pushed"))
    }
}

/// Hierarchical agglomerative clustering with Lance-Williams updates.
///
/// Each step joins the closest pair of clusters. Equal distances go to the pair
/// whose smallest leaves come first; the cluster holding the smaller leaf is the
/// left child.
pub fn agglomerative_cluster(d: &DistanceMatrix, linkage: Linkage) -> Result<(Vec<Merge>, DendrogramNode)> {
    let n = d.len();
    if n == 0 {
        return Err(Error::InsufficientData("nothing to cluster".into()));
    }
    let mut dist: Vec<f64> = d.data().to_vec();
    // Active clusters: (node id, size, smallest leaf), indexed by the row holding them.
    let mut active: Vec<Option<(usize, usize, usize)>> = (0..n).map(|i| Some((i, 1, i))).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..n {
            let Some((_, _, la)) = active[a] else { continue };
            for b in a + 1..n {
                let Some((_, _, lb)) = active[b] else { continue };
                let (lo, hi) = if la < lb { (la, lb) } else { (lb, la) };
                let cand = (dist[a * n + b], lo, hi, a, b);
                let better = match best {
                    None => true,
                    Some(cur) => (cand.0, cand.1, cand.2) < (cur.0, cur.1, cur.2),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (h, _, _, a, b) = best.expect("at least two active clusters");
        let (ia, sa, la) = active[a].unwrap();
        let (ib, sb, lb) = active[b].unwrap();
        for k in 0..n {
            if k == a || k == b || active[k].is_none() {
                continue;
            }
            let (dka, dkb) = (dist[k * n + a], dist[k * n + b]);
            let new = match linkage {
                Linkage::Average => (sa as f64 * dka + sb as f64 * dkb) / (sa + sb) as f64,
                Linkage::Single => dka.min(dkb),
                Linkage::Complete => dka.max(dkb),
            };
            dist[k * n + a] = new;
            dist[a * n + k] = new;
        }
        let (left, right) = if la < lb { (ia, ib) } else { (ib, ia) };
        merges.push(Merge {
            left,
            right,
            height: h,
            size: sa + sb,
        });
        active[a] = Some((n + step, sa + sb, la.min(lb)));
        active[b] = None;
    }
    let tree = DendrogramNode::from_merges(n, &merges)?;
    Ok((merges, tree))
}
