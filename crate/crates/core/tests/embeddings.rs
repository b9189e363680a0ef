//! Linkage against a brute-force recomputation, and t-SNE behaviour on
//! constructed inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinylm::embeddings::{agglomerative_cluster, tsne, DistanceMatrix, Linkage, Merge, TsneConfig};

/// Average linkage recomputed from leaf distances at every step: O(n³) per step.
fn brute_force_average(d: &DistanceMatrix) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += d.get(i, j);
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if avg < best.0 {
                    best = (avg, a, b);
                }
            }
        }
        let (h, a, b) = best;
        let right = clusters.remove(b);
        let left = clusters[a].clone();
        clusters[a].extend(&right);
        clusters[a].sort_unstable();
        out.push((left, right, h));
    }
    out
}

fn members(n: usize, merges: &[Merge], node: usize) -> Vec<usize> {
    if node < n {
        return vec![node];
    }
    let m = &merges[node - n];
    let mut v = members(n, merges, m.left);
    v.extend(members(n, merges, m.right));
    v.sort_unstable();
    v
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DistanceMatrix {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    DistanceMatrix::from_fn(n, |i, j| {
        pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    })
}

#[test]
fn average_linkage_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let d = random_points(&mut rng, 6, 3);
        let (merges, tree) = agglomerative_cluster(&d, Linkage::Average).unwrap();
        let oracle = brute_force_average(&d);
        assert_eq!(merges.len(), oracle.len());
        for (m, (l, r, h)) in merges.iter().zip(&oracle) {
            let mut got = [members(6, &merges, m.left), members(6, &merges, m.right)];
            got.sort();
            let mut want = [l.clone(), r.clone()];
            want.iter_mut().for_each(|v| v.sort_unstable());
            want.sort();
            assert_eq!(got, want);
            assert!((m.height - h).abs() < 1e-12);
        }
        let mut leaves = tree.leaves();
        leaves.sort_unstable();
        assert_eq!(leaves, (0..6).collect::<Vec<_>>());
    }
}

#[test]
fn merge_heights_never_decrease() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [2, 5, 12, 30] {
        let d = random_points(&mut rng, n, 4);
        let (merges, _) = agglomerative_cluster(&d, Linkage::Average).unwrap();
        assert!(merges.windows(2).all(|w| w[0].height <= w[1].height));
    }
}

fn blobs(rng: &mut ChaCha8Rng) -> DistanceMatrix {
    // Intra-blob distances in [0.05, 0.1], inter-blob distances 10× larger.
    let mut data = vec![0.0; 400];
    for i in 0..20 {
        for j in i + 1..20 {
            let base = if i / 10 == j / 10 { 0.05 } else { 0.5 };
            let d = base + rng.gen_range(0.0..base);
            data[i * 20 + j] = d;
            data[j * 20 + i] = d;
        }
    }
    DistanceMatrix::new(20, data).unwrap()
}

#[test]
fn tsne_is_seed_deterministic() {
    let d = blobs(&mut ChaCha8Rng::seed_from_u64(3));
    let cfg = TsneConfig {
        seed: 9,
        ..TsneConfig::default()
    };
    let a = tsne(&d, &cfg).unwrap();
    let b = tsne(&d, &cfg).unwrap();
    assert_eq!(a, b);
    let c = tsne(&d, &TsneConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.coords, c.coords);
}

#[test]
fn tsne_cost_falls_after_exaggeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in [blobs(&mut rng), random_points(&mut rng, 25, 5)] {
        let r = tsne(&d, &TsneConfig::default()).unwrap();
        assert_eq!(r.kl.len(), 1001);
        assert!(r.kl[1000] < r.kl[250], "{} vs {}", r.kl[1000], r.kl[250]);
    }
}

#[test]
fn tsne_keeps_blobs_apart() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..3 {
        let d = blobs(&mut rng);
        let r = tsne(&d, &TsneConfig { seed, ..TsneConfig::default() }).unwrap();
        for i in 0..20 {
            let nearest = (0..20)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let dist = |j: usize| {
                        (r.coords[i][0] - r.coords[j][0]).powi(2) + (r.coords[i][1] - r.coords[j][1]).powi(2)
                    };
                    dist(a).total_cmp(&dist(b))
                })
                .unwrap();
            assert_eq!(nearest / 10, i / 10, "seed {seed} point {i}");
        }
    }
}

#[test]
fn tsne_rejects_bad_input() {
    assert!(DistanceMatrix::new(3, vec![0.0; 8]).is_err());
    let mut asym = vec![0.0; 16];
    asym[1] = 1.0;
    assert!(DistanceMatrix::new(4, asym).is_err());
}
