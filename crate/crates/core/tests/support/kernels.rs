//! Per-instance deviation between each tape kernel and its scalar-loop
//! reference.

use hedge_core::layers::{AttentionPool, ConvBank, GruCell, LstmCell, SeqMask};
use hedge_core::params::{Ctx, ParamStore};
use hedge_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{self, ConvWindow, GruWeights, LstmWeights};
use super::tiny::to_mat;

pub type Kernel = (&'static str, fn(u64) -> f64);

pub const INSTANCES: u64 = 120;
pub const TOL: f64 = 1e-12;

/// Every kernel with its per-seed deviation function.
pub const KERNELS: [Kernel; 5] = [
    ("matmul", matmul_error),
    ("gru_step", gru_error),
    ("lstm_step", lstm_error),
    ("attention_pool", attention_error),
    ("conv1d_maxpool", conv_error),
];

/// Largest deviation over [`INSTANCES`] seeds.
pub fn worst(f: fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(f).fold(0.0, f64::max)
}

pub fn close(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn perturb_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    // Biases start at zero; randomize them so they are exercised.
    for p in store.iter_mut() {
        if p.name.contains(".b") {
            p.tensor
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
}

pub fn matmul_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k, n) = (
        rng.gen_range(1..7),
        rng.gen_range(1..7),
        rng.gen_range(1..7),
    );
    let a = Tensor::uniform(&[m, k], -2.0, 2.0, &mut rng);
    let b = Tensor::uniform(&[k, n], -2.0, 2.0, &mut rng);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    let want: Vec<f64> = oracles::matmul(&to_mat(&a), &to_mat(&b)).concat();
    close(g.value(c).data(), &want)
}

pub fn gru_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d, h) = (
        rng.gen_range(1..4),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", d, h, &mut rng).unwrap();
    perturb_biases(&mut store, &mut rng);
    let x = Tensor::uniform(&[b, d], -1.0, 1.0, &mut rng);
    let h0 = Tensor::uniform(&[b, h], -1.0, 1.0, &mut rng);
    let m = |id| to_mat(store.get(id));
    let weights = GruWeights {
        w: [m(cell.w_z), m(cell.w_r), m(cell.w_h)],
        u: [m(cell.u_z), m(cell.u_r), m(cell.u_h)],
        b: [cell.b_z, cell.b_r, cell.b_h].map(|id| store.get(id).data().to_vec()),
    };
    let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(&store, false, &mut drop_rng);
    let (vx, vh) = (ctx.g.constant(x.clone()), ctx.g.constant(h0.clone()));
    let out = cell.step(&mut ctx, vx, vh).unwrap();
    let got = to_mat(ctx.g.value(out));
    let (xs, hs) = (to_mat(&x), to_mat(&h0));
    (0..b)
        .map(|r| close(&got[r], &oracles::gru_step(&xs[r], &hs[r], &weights)))
        .fold(0.0, f64::max)
}

pub fn lstm_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d, h) = (
        rng.gen_range(1..4),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", d, h, &mut rng).unwrap();
    perturb_biases(&mut store, &mut rng);
    let x = Tensor::uniform(&[b, d], -1.0, 1.0, &mut rng);
    let h0 = Tensor::uniform(&[b, h], -1.0, 1.0, &mut rng);
    let c0 = Tensor::uniform(&[b, h], -1.0, 1.0, &mut rng);
    let weights = LstmWeights {
        w: cell.w.map(|id| to_mat(store.get(id))),
        u: cell.u.map(|id| to_mat(store.get(id))),
        b: cell.b.map(|id| store.get(id).data().to_vec()),
    };
    let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(&store, false, &mut drop_rng);
    let vx = ctx.g.constant(x.clone());
    let vh = ctx.g.constant(h0.clone());
    let vc = ctx.g.constant(c0.clone());
    let (ho, co) = cell.step(&mut ctx, vx, vh, vc).unwrap();
    let (got_h, got_c) = (to_mat(ctx.g.value(ho)), to_mat(ctx.g.value(co)));
    let (xs, hs, cs) = (to_mat(&x), to_mat(&h0), to_mat(&c0));
    (0..b)
        .map(|r| {
            let (eh, ec) = oracles::lstm_step(&xs[r], &hs[r], &cs[r], &weights);
            close(&got_h[r], &eh).max(close(&got_c[r], &ec))
        })
        .fold(0.0, f64::max)
}

fn random_lengths(rng: &mut ChaCha8Rng, b: usize, t: usize) -> Vec<usize> {
    (0..b).map(|_| rng.gen_range(1..=t)).collect()
}

pub fn attention_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, h, a) = (
        rng.gen_range(1..4),
        rng.gen_range(1..7),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    let mut store = ParamStore::new();
    let pool = AttentionPool::new(&mut store, "att", h, a, &mut rng).unwrap();
    let states: Vec<Tensor> = (0..t)
        .map(|_| Tensor::uniform(&[b, h], -2.0, 2.0, &mut rng))
        .collect();
    let mask = SeqMask::from_lengths(random_lengths(&mut rng, b, t), t).unwrap();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(&store, false, &mut drop_rng);
    let vars: Vec<_> = states.iter().map(|s| ctx.g.constant(s.clone())).collect();
    let (context, weights) = pool.forward(&mut ctx, &vars, &mask.flat()).unwrap();
    let (got_c, got_w) = (to_mat(ctx.g.value(context)), to_mat(ctx.g.value(weights)));
    let w = to_mat(store.get(pool.w));
    let v = store.get(pool.v).data().to_vec();
    let mut worst: f64 = 0.0;
    for r in 0..b {
        let seq: Vec<Vec<f64>> = states.iter().map(|s| s.row(r).to_vec()).collect();
        let (ec, ew) = oracles::attention_pool(&seq, mask.lengths()[r], &w, &v);
        worst = worst.max(close(&got_c[r], &ec)).max(close(&got_w[r], &ew));
    }
    worst
}

pub fn conv_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, d, f) = (
        rng.gen_range(1..4),
        rng.gen_range(1..8),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
    );
    let widths: Vec<usize> = match rng.gen_range(0..3) {
        0 => vec![1, 2],
        1 => vec![3, 4, 5],
        _ => vec![2, 5],
    };
    let mut store = ParamStore::new();
    let bank = ConvBank::new(&mut store, "conv", d, &widths, f, &mut rng).unwrap();
    perturb_biases(&mut store, &mut rng);
    let seq: Vec<Tensor> = (0..t)
        .map(|_| Tensor::uniform(&[b, d], -1.0, 1.0, &mut rng))
        .collect();
    let mask = SeqMask::from_lengths(random_lengths(&mut rng, b, t), t).unwrap();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(&store, false, &mut drop_rng);
    let vars: Vec<_> = seq.iter().map(|s| ctx.g.constant(s.clone())).collect();
    let out = bank.forward_maxpool(&mut ctx, &vars, &mask).unwrap();
    let got = to_mat(ctx.g.value(out));
    let windows: Vec<ConvWindow> = bank
        .windows
        .iter()
        .map(|&(width, w, bias)| {
            let data = store.get(w).data();
            let w = (0..width)
                .map(|k| {
                    (0..d)
                        .map(|i| data[(k * d + i) * f..(k * d + i + 1) * f].to_vec())
                        .collect()
                })
                .collect();
            ConvWindow {
                width,
                w,
                b: store.get(bias).data().to_vec(),
            }
        })
        .collect();
    let mut worst: f64 = 0.0;
    for r in 0..b {
        // Pad slots hold garbage here; only the first `len` rows may matter.
        let rows: Vec<Vec<f64>> = seq.iter().map(|s| s.row(r).to_vec()).collect();
        let want = oracles::conv1d_maxpool(&rows, mask.lengths()[r], &windows);
        worst = worst.max(close(&got[r], &want));
    }
    worst
}
