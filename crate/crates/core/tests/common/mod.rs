#![allow(dead_code)]

use std::sync::Arc;

use llc::autodiff::{Axis, Binary, Csr, Group, ParamId, ParamStore, Reduce, Tape, Tensor, Unary, Var};
use llc::graph::{generate_sbm, Graph, SbmParams};
use llc::layers::{gat_forward, sage_forward, GatParams, SageParams};
use llc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[-1, -0.05] ∪ [0.05, 1]`, keeping clear of kinks at zero.
pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub fn positive(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    random(rows, cols, rng).map(|x| x.abs() + 0.1)
}

/// Largest relative error, over `ids`, between the analytic gradient of
/// `sum(R * f)` and central finite differences. `R` is a fixed random
/// projection so the whole Jacobian is exercised.
pub fn max_rel_error<F>(store: &mut ParamStore, ids: &[ParamId], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let probe = {
        let mut tape = Tape::new();
        let out = f(&mut tape, store).unwrap();
        let [r, c] = tape.shape(out);
        random(r, c, &mut rng(seed ^ 0x5eed))
    };
    let loss = |tape: &mut Tape, store: &ParamStore| -> Var {
        let out = f(tape, store).unwrap();
        let p = tape.leaf(probe.clone()).unwrap();
        let prod = tape.mul(out, p).unwrap();
        tape.sum_all(prod).unwrap()
    };
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    let grads = tape.backward(l).unwrap();
    grads.write_to(store);
    let value = |store: &ParamStore| {
        let mut t = Tape::new();
        let l = loss(&mut t, store);
        t.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = store.grad(id).cloned().unwrap_or_else(|| {
            let [r, c] = store.value(id).shape();
            Tensor::zeros(r, c)
        });
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let x = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = x + STEP;
            let up = value(store);
            store.value_mut(id).data_mut()[i] = x - STEP;
            let down = value(store);
            store.value_mut(id).data_mut()[i] = x;
            numeric.push((up - down) / (2.0 * STEP));
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut analytic.data().iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(&mut analytic.data().iter().copied())
            .max(norm(&mut numeric.iter().copied()))
            .max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}

fn params(store: &mut ParamStore, tensors: Vec<Tensor>) -> Vec<ParamId> {
    tensors
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("x{i}"), Group::Weight, t))
        .collect()
}

/// Checks `f` on freshly drawn inputs and returns the relative error.
fn check<F>(seed: u64, inputs: Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids = params(&mut store, inputs);
    max_rel_error(&mut store, &ids.clone(), seed, |tape, store| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect::<Result<_>>()?;
        f(tape, &vars)
    })
}

pub fn small_graph(seed: u64) -> Graph {
    generate_sbm(&SbmParams {
        communities: 2,
        nodes_per_community: 6,
        p_in: 0.5,
        p_out: 0.1,
        feature_dim: 4,
        feature_noise: 0.5,
        seed,
    })
    .unwrap()
}

fn random_csr(rows: usize, cols: usize, rng: &mut impl Rng) -> Arc<Csr> {
    let entries: Vec<Vec<(usize, f64)>> = (0..rows)
        .map(|_| {
            let mut row = Vec::new();
            for c in 0..cols {
                if rng.random::<f64>() < 0.4 {
                    row.push((c, rng.random_range(-1.0..1.0)));
                }
            }
            row
        })
        .collect();
    Arc::new(Csr::from_rows(cols, &entries))
}

pub type Case = (&'static str, fn(u64) -> f64);

/// One entry per differentiable primitive plus both message-passing layers.
pub const CASES: &[Case] = &[
    ("matmul", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(4, 2, r)], |t, v| t.matmul(v[0], v[1]))
    }),
    ("add", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(3, 4, r)], |t, v| t.add(v[0], v[1]))
    }),
    ("add_row_broadcast", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(1, 4, r)], |t, v| t.add(v[0], v[1]))
    }),
    ("sub_col_broadcast", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(3, 1, r)], |t, v| t.binary(Binary::Sub, v[0], v[1]))
    }),
    ("mul", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(3, 4, r)], |t, v| t.mul(v[0], v[1]))
    }),
    ("mul_row_broadcast", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(1, 4, r)], |t, v| t.mul(v[0], v[1]))
    }),
    ("scale", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.scale(v[0], -1.7))
    }),
    ("scale_by", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(1, 1, r)], |t, v| t.scale_by(v[0], v[1]))
    }),
    ("relu", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.relu(v[0]))
    }),
    ("sigmoid", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.sigmoid(v[0]))
    }),
    ("tanh", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.tanh(v[0]))
    }),
    ("exp", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.exp(v[0]))
    }),
    ("log", |s| {
        let r = &mut rng(s);
        check(s, vec![positive(3, 4, r)], |t, v| t.log(v[0]))
    }),
    ("elu", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.elu(v[0]))
    }),
    ("leaky_relu", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.unary(Unary::LeakyRelu(0.2), v[0]))
    }),
    ("softmax_cols", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.softmax(v[0], Axis::Cols))
    }),
    ("softmax_rows", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.softmax(v[0], Axis::Rows))
    }),
    ("log_softmax_cols", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.log_softmax(v[0], Axis::Cols))
    }),
    ("log_softmax_rows", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.log_softmax(v[0], Axis::Rows))
    }),
    ("concat_cols", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 2, r), random(3, 3, r)], |t, v| t.concat(v, Axis::Cols))
    }),
    ("concat_rows", |s| {
        let r = &mut rng(s);
        check(s, vec![random(2, 3, r), random(1, 3, r)], |t, v| t.concat(v, Axis::Rows))
    }),
    ("slice_cols", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 5, r)], |t, v| t.slice(v[0], Axis::Cols, 1, 3))
    }),
    ("slice_rows", |s| {
        let r = &mut rng(s);
        check(s, vec![random(5, 3, r)], |t, v| t.slice(v[0], Axis::Rows, 2, 2))
    }),
    ("reduce_sum", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(3, 4, r), random(3, 4, r)], |t, v| {
            t.reduce(Reduce::Sum, v)
        })
    }),
    ("reduce_mean", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(3, 4, r), random(3, 4, r)], |t, v| {
            t.reduce(Reduce::Mean, v)
        })
    }),
    ("reduce_max", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r), random(3, 4, r), random(3, 4, r)], |t, v| {
            t.reduce(Reduce::Max, v)
        })
    }),
    ("sum_all", |s| {
        let r = &mut rng(s);
        check(s, vec![random(3, 4, r)], |t, v| t.sum_all(v[0]))
    }),
    ("cross_entropy", |s| {
        let r = &mut rng(s);
        let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..3)).collect();
        check(s, vec![random(5, 3, r)], move |t, v| t.cross_entropy(v[0], &labels, &[0, 2, 3, 4]))
    }),
    ("spmm", |s| {
        let r = &mut rng(s);
        let a = random_csr(4, 5, r);
        check(s, vec![random(5, 3, r)], move |t, v| t.spmm(&a, v[0]))
    }),
    ("neighborhood_attention", |s| {
        let r = &mut rng(s);
        let g = small_graph(s);
        let n = g.n_nodes();
        check(s, vec![random(n, 3, r), random(n, 1, r), random(n, 1, r)], move |t, v| {
            t.neighborhood_attention(g.adjacency_with_self(), v[0], v[1], v[2], 0.2)
        })
    }),
    ("sage_layer", |s| {
        let g = small_graph(s);
        let mut r = rng(s);
        let mut store = ParamStore::new();
        let p = SageParams::init(&mut store, "sage", 3, &mut r);
        let h = store.add("h", Group::Weight, random(g.n_nodes(), 3, &mut r));
        let ids = store.ids().collect::<Vec<_>>();
        max_rel_error(&mut store, &ids, s, |t, st| {
            let x = t.param(st, h)?;
            sage_forward(t, st, &p, &g, x)
        })
    }),
    ("gat_layer", |s| {
        let g = small_graph(s);
        let mut r = rng(s);
        let mut store = ParamStore::new();
        let p = GatParams::init(&mut store, "gat", 3, 2, &mut r);
        let h = store.add("h", Group::Weight, random(g.n_nodes(), 3, &mut r));
        let ids = store.ids().collect::<Vec<_>>();
        max_rel_error(&mut store, &ids, s, |t, st| {
            let x = t.param(st, h)?;
            gat_forward(t, st, &p, &g, x)
        })
    }),
];

pub const GRAD_SEEDS: u64 = 10;

/// Worst error of one case over all seeds.
pub fn worst_over_seeds(case: fn(u64) -> f64) -> f64 {
    (0..GRAD_SEEDS).map(case).fold(0.0, f64::max)
}
