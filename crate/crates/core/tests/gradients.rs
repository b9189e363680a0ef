use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinylm::autodiff::{grad_check, GradCheck, Tape, Tensor, Var};
use tinylm::models::{Family, LanguageModel, ModelConfig};
use tinylm::tokenizer::pad_batch;
use tinylm::Result;

const TOL: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Checks `op` applied to the pieces of θ (split by `shapes`), reduced by a fixed
/// random weighting so every output element matters.
fn check_op<F>(seed: u64, shapes: &[&[usize]], op: F) -> GradCheck
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let theta = Tensor::from_f64(&[sizes.iter().sum()], &random(&mut rng, sizes.iter().sum()))
        .unwrap();
    let probe_rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let report = grad_check(
        |flat| {
            let mut offset = 0;
            let mut parts = Vec::new();
            for (shape, &n) in shapes.iter().zip(&sizes) {
                parts.push(flat.slice(0, offset, offset + n)?.reshape(shape)?);
                offset += n;
            }
            let out = op(&parts)?;
            let w = random(&mut probe_rng.clone(), out.value().len());
            let w = flat.tape().constant(Tensor::new(out.shape(), w)?);
            Ok(out.mul(w)?.sum())
        },
        &theta,
        1e-5,
    )
    .unwrap();
    report
}

macro_rules! primitive {
    ($name:ident, $shapes:expr, $op:expr) => {
        #[test]
        fn $name() {
            for seed in 0..3 {
                let r = check_op(seed, $shapes, $op);
                assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
            }
        }
    };
}

primitive!(matmul, &[&[3, 4], &[4, 2]], |p| p[0].matmul(p[1]));
primitive!(matmul_batched, &[&[2, 3, 4], &[2, 4, 2]], |p| p[0].matmul(p[1]));
primitive!(matmul_transposed, &[&[3, 4], &[5, 4]], |p| p[0].matmul_t(p[1]));
primitive!(matmul_transposed_batched, &[&[2, 3, 4], &[2, 5, 4]], |p| p[0].matmul_t(p[1]));
primitive!(add, &[&[3, 4], &[3, 4]], |p| p[0].add(p[1]));
primitive!(sub, &[&[3, 4], &[3, 4]], |p| p[0].sub(p[1]));
primitive!(mul, &[&[3, 4], &[3, 4]], |p| p[0].mul(p[1]));
primitive!(add_row, &[&[3, 4], &[4]], |p| p[0].add_row(p[1]));
primitive!(scale, &[&[5]], |p| Ok(p[0].scale(-2.5)));
primitive!(sigmoid, &[&[2, 5]], |p| Ok(p[0].sigmoid()));
primitive!(tanh, &[&[2, 5]], |p| Ok(p[0].tanh()));
primitive!(gelu, &[&[2, 5]], |p| Ok(p[0].gelu()));
primitive!(softmax_last, &[&[3, 4]], |p| p[0].softmax(1));
primitive!(softmax_first, &[&[3, 4]], |p| p[0].softmax(0));
primitive!(softmax_middle, &[&[2, 3, 4]], |p| p[0].softmax(1));
primitive!(log_softmax, &[&[3, 4]], |p| p[0].log_softmax(1));
primitive!(log_softmax_first, &[&[3, 4]], |p| p[0].log_softmax(0));
primitive!(layer_norm, &[&[3, 5], &[5], &[5]], |p| p[0].layer_norm(p[1], p[2], 1e-5));
primitive!(embedding, &[&[6, 3]], |p| p[0].embedding(&[1, 4, 1, 0, 5]));
primitive!(concat, &[&[2, 3], &[2, 2]], |p| Var::concat(&[p[0], p[1], p[0]], 1));
primitive!(slice, &[&[4, 5]], |p| p[0].slice(1, 1, 4));
primitive!(reshape, &[&[4, 3]], |p| p[0].reshape(&[2, 6]));
primitive!(permute, &[&[2, 3, 4]], |p| p[0].permute(&[2, 0, 1]));
primitive!(sum, &[&[7]], |p| Ok(p[0].sum()));
primitive!(mean, &[&[7]], |p| Ok(p[0].mean()));
primitive!(frozen_dropout, &[&[2, 4]], |p| {
    p[0].dropout_with_mask(vec![2.0, 0.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0])
});
primitive!(eval_dropout, &[&[2, 4]], |p| p[0].dropout::<ChaCha8Rng>(0.5, None));
primitive!(cross_entropy, &[&[4, 5]], |p| p[0].cross_entropy(&[1, 4, 0, 2], 99));
primitive!(cross_entropy_ignore, &[&[4, 5]], |p| p[0].cross_entropy(&[1, 3, 0, 3], 3));

#[test]
fn two_layer_mlp() {
    // 4 → 6 → 3 with biases: 24 + 6 + 18 + 3 = 51 parameters.
    let r = check_op(7, &[&[6, 4], &[6], &[3, 6], &[3], &[5, 4]], |p| {
        let h = p[4].matmul_t(p[0])?.add_row(p[1])?.tanh();
        let out = h.matmul_t(p[2])?.add_row(p[3])?;
        out.cross_entropy(&[0, 2, 1, 1, 0], 99)
    });
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn lstm_cell_step() {
    let d = 3;
    let r = check_op(11, &[&[2, d], &[2, d], &[2, d], &[4 * d, d], &[4 * d, d], &[4 * d], &[4, d]], |p| {
        let (x, h, c) = (p[0], p[1], p[2]);
        let gates = x.matmul_t(p[3])?.add(h.matmul_t(p[4])?)?.add_row(p[5])?;
        let i = gates.slice(1, 0, d)?.sigmoid();
        let f = gates.slice(1, d, 2 * d)?.sigmoid();
        let g = gates.slice(1, 2 * d, 3 * d)?.tanh();
        let o = gates.slice(1, 3 * d, 4 * d)?.sigmoid();
        let c2 = f.mul(c)?.add(i.mul(g)?)?;
        let h2 = o.mul(c2.tanh())?;
        h2.matmul_t(p[6])?.cross_entropy(&[1, 3], 99)
    });
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

fn tiny(family: Family, layers: usize) -> ModelConfig {
    let mut c = ModelConfig::standard(family, layers, 12).unwrap().with_width(8, 16, 2).unwrap();
    c.max_len = 8;
    c.init_std = 0.5;
    c
}

fn check_model(family: Family, layers: usize) -> GradCheck {
    let model = LanguageModel::<f64>::build(tiny(family, layers), 3).unwrap();
    assert!(model.count_params() <= 5000, "{}", model.count_params());
    let batch = pad_batch(&[vec![0u32, 5, 7, 9, 1], vec![0, 6, 3, 1]], 4);
    let targets: Vec<usize> = batch.ids.iter().rev().map(|&i| i as usize).collect();
    let theta = Tensor::new(vec![model.count_params()], model.params().flatten()).unwrap();
    grad_check(
        |flat| {
            let vars = model.params().unflatten(flat)?;
            model.forward(&vars, &batch, None)?.cross_entropy(&targets, 4)
        },
        &theta,
        1e-5,
    )
    .unwrap()
}

#[test]
fn transformer_block() {
    let (n, d, heads) = (4, 6, 2);
    let hd = d / heads;
    let shapes: &[&[usize]] = &[
        &[n, d],
        &[d],
        &[d],
        &[3 * d, d],
        &[d, d],
        &[d],
        &[d],
        &[2 * d, d],
        &[2 * d],
        &[d, 2 * d],
        &[3, d],
    ];
    let r = check_op(5, shapes, move |p| {
        let x = p[0];
        let h = x.layer_norm(p[1], p[2], 1e-5)?;
        let qkv = h.matmul_t(p[3])?.reshape(&[n, 3, heads, hd])?.permute(&[1, 2, 0, 3])?;
        let part = |i: usize| qkv.slice(0, i, i + 1).and_then(|v| v.reshape(&[heads, n, hd]));
        let mut mask = vec![0.0; heads * n * n];
        for hh in 0..heads {
            for q in 0..n {
                for k in q + 1..n {
                    mask[(hh * n + q) * n + k] = -1e9;
                }
            }
        }
        let mask = x.tape().constant(Tensor::new(vec![heads, n, n], mask)?);
        let attn = part(0)?.matmul_t(part(1)?)?.scale(1.0 / (hd as f64).sqrt()).add(mask)?.softmax(2)?;
        let ctx = attn.matmul(part(2)?)?.permute(&[1, 0, 2])?.reshape(&[n, d])?;
        let x = x.add(ctx.matmul_t(p[4])?.add_row(p[5])?)?;
        let h = x.layer_norm(p[6], p[1], 1e-5)?;
        let ff = h.matmul_t(p[7])?.add_row(p[8])?.gelu().matmul_t(p[9])?;
        let y = x.add(ff)?;
        y.matmul_t(p[10])?.cross_entropy(&[0, 2, 1, 99], 99)
    });
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn full_models() {
    for (family, layers) in [
        (Family::Lstm, 1),
        (Family::Lstm, 2),
        (Family::CausalTransformer, 2),
        (Family::MaskedTransformer, 2),
    ] {
        let r = check_model(family, layers);
        assert!(r.max_rel_error < 1e-4, "{family} {layers}: {r:?}");
    }
}

/// Eight-layer stacks push some gradients down to ~1e-9, where central
/// differences carry ~1e-11 of rounding noise. Those coordinates are held to an
/// absolute bound instead.
#[test]
fn deep_models() {
    for family in [Family::CausalTransformer, Family::MaskedTransformer] {
        let r = check_model(family, 8);
        for (i, (&a, &b)) in r.analytic.iter().zip(&r.numeric).enumerate() {
            if a.abs() + b.abs() > 1e-6 {
                let rel = (a - b).abs() / (a.abs() + b.abs());
                assert!(rel < 1e-4, "{family} coordinate {i}: {a} vs {b}");
            } else {
                assert!((a - b).abs() < 1e-9, "{family} coordinate {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn two_consumers_accumulate() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true);
    let y = x.sigmoid().add(x.tanh()).unwrap().sum();
    let g = tape.backward(y).unwrap();
    for (i, v) in [1.0f64, 2.0].into_iter().enumerate() {
        let s = 1.0 / (1.0 + (-v).exp());
        let expected = s * (1.0 - s) + 1.0 - v.tanh().powi(2);
        assert!((g.wrt(x).unwrap().data()[i] - expected).abs() < 1e-12);
    }
}
