//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the library code it is used to check.
#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use votegraph::autodiff::{check_gradients, check_gradients_with, AutodiffError, Tape, Tensor, Var};
use votegraph::election::{PreferenceProfile, RankingProfile};
use votegraph::models::{DifferentiableMechanism, Gevn, GevnConfig, GraphBatch};
use votegraph::rules::RuleKind;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` uniformly random strict preference orders over `m` candidates.
pub fn random_orders(n: usize, m: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let mut o: Vec<usize> = (0..m).collect();
            o.shuffle(rng);
            o
        })
        .collect()
}

fn first_max(points: &[i64]) -> usize {
    let best = *points.iter().max().expect("at least one candidate");
    points.iter().position(|&p| p == best).expect("max exists")
}

fn head_to_head(orders: &[Vec<usize>], a: usize, b: usize) -> i64 {
    orders
        .iter()
        .filter(|o| {
            let pa = o.iter().position(|&c| c == a).unwrap();
            let pb = o.iter().position(|&c| c == b).unwrap();
            pa < pb
        })
        .count() as i64
}

/// Brute-force winner of `rule` on preference orders, integer arithmetic
/// only, lowest index on ties.
pub fn oracle_winner(rule: RuleKind, orders: &[Vec<usize>], m: usize) -> usize {
    match rule {
        RuleKind::Plurality => {
            let pts: Vec<i64> = (0..m)
                .map(|c| orders.iter().filter(|o| o[0] == c).count() as i64)
                .collect();
            first_max(&pts)
        }
        RuleKind::Borda => {
            let pts: Vec<i64> = (0..m)
                .map(|c| {
                    orders
                        .iter()
                        .map(|o| (m - 1 - o.iter().position(|&x| x == c).unwrap()) as i64)
                        .sum()
                })
                .collect();
            first_max(&pts)
        }
        RuleKind::Copeland => {
            // Doubled to stay integral: 2 per win, 1 per draw.
            let pts: Vec<i64> = (0..m)
                .map(|a| {
                    (0..m)
                        .filter(|&b| b != a)
                        .map(|b| {
                            let (x, y) = (head_to_head(orders, a, b), head_to_head(orders, b, a));
                            if x > y {
                                2
                            } else if x == y {
                                1
                            } else {
                                0
                            }
                        })
                        .sum()
                })
                .collect();
            first_max(&pts)
        }
        RuleKind::Maximin => {
            let pts: Vec<i64> = (0..m)
                .map(|a| {
                    (0..m)
                        .filter(|&b| b != a)
                        .map(|b| head_to_head(orders, a, b))
                        .min()
                        .unwrap_or(orders.len() as i64)
                })
                .collect();
            first_max(&pts)
        }
        RuleKind::Stv => {
            let mut alive: Vec<usize> = (0..m).collect();
            loop {
                let tally: Vec<i64> = alive
                    .iter()
                    .map(|&c| {
                        orders
                            .iter()
                            .filter(|o| *o.iter().find(|x| alive.contains(x)).unwrap() == c)
                            .count() as i64
                    })
                    .collect();
                for (k, &c) in alive.iter().enumerate() {
                    if 2 * tally[k] > orders.len() as i64 {
                        return c;
                    }
                }
                if alive.len() == 1 {
                    return alive[0];
                }
                let low = *tally.iter().min().unwrap();
                let k = tally.iter().position(|&t| t == low).unwrap();
                alive.remove(k);
            }
        }
    }
}

/// Brute-force Condorcet winner: beats every other candidate by a strict
/// head-to-head majority.
pub fn oracle_condorcet(orders: &[Vec<usize>], m: usize) -> Option<usize> {
    (0..m).find(|&a| {
        (0..m)
            .filter(|&b| b != a)
            .all(|b| head_to_head(orders, a, b) > head_to_head(orders, b, a))
    })
}

pub fn ranking(orders: &[Vec<usize>]) -> RankingProfile {
    RankingProfile::from_orders(orders).unwrap()
}

/// Per-candidate share of `ties` among the co-winners of a score vector:
/// the best any neutral mechanism can do in expectation against a
/// lowest-index tie-break label.
pub fn neutral_ceiling(scores: &[f64]) -> f64 {
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    1.0 / scores.iter().filter(|&&s| s == best).count() as f64
}

type Case = (String, Box<dyn Fn(&mut Tape, Var) -> Result<Var, AutodiffError>>, Tensor);

fn tensor(rows: usize, cols: usize, rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Entries bounded away from zero so kinked ops stay differentiable under
/// finite differences.
fn away_from_zero(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Contracts `y` with fixed random weights into a scalar.
fn contract(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var, AutodiffError> {
    let w = tape.constant(w.clone())?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

/// One randomised instance of every tape primitive, each reduced to a
/// scalar by a random linear functional. Binary ops appear once per
/// operand position.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let rows = r.random_range(2..5);
    let cols = r.random_range(2..5);
    let inner = r.random_range(1..4);
    let mut cases: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, $point:expr, $out:expr, $body:expr) => {{
            let out: (usize, usize) = $out;
            let w = tensor(out.0, out.1, &mut r, -1.0, 1.0);
            let f = $body;
            cases.push((
                $name.to_string(),
                Box::new(move |t: &mut Tape, x: Var| {
                    let y = f(t, x)?;
                    contract(t, y, &w)
                }),
                $point,
            ));
        }};
    }
    let b = tensor(inner, cols, &mut r, -1.0, 1.0);
    case!("matmul(x, B)", tensor(rows, inner, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| {
        let c = t.constant(b.clone())?;
        t.matmul(x, c)
    });
    let a = tensor(rows, inner, &mut r, -1.0, 1.0);
    case!("matmul(A, x)", tensor(inner, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| {
        let c = t.constant(a.clone())?;
        t.matmul(c, x)
    });
    for (name, k) in [("add", 0), ("sub(x, c)", 1), ("sub(c, x)", 2), ("mul", 3)] {
        let c = tensor(rows, cols, &mut r, -1.0, 1.0);
        case!(name, tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| {
            let c = t.constant(c.clone())?;
            match k {
                0 => t.add(x, c),
                1 => t.sub(x, c),
                2 => t.sub(c, x),
                _ => t.mul(c, x),
            }
        });
    }
    let row = tensor(1, cols, &mut r, -1.0, 1.0);
    let row2 = row.clone();
    case!("add_row(x, r)", tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| {
        let c = t.constant(row.clone())?;
        t.add_row(x, c)
    });
    let mat = tensor(rows, cols, &mut r, -1.0, 1.0);
    let mat2 = mat.clone();
    case!("add_row(A, x)", tensor(1, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| {
        let c = t.constant(mat.clone())?;
        t.add_row(c, x)
    });
    case!("mul_row(x, r)", tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| {
        let c = t.constant(row2.clone())?;
        t.mul_row(x, c)
    });
    case!("mul_row(A, x)", tensor(1, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| {
        let c = t.constant(mat2.clone())?;
        t.mul_row(c, x)
    });
    let factor: f64 = r.random_range(-2.0..2.0);
    case!("scale", tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| t.scale(x, factor));
    case!("add_scalar", tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols), move |t: &mut Tape, x| t.add_scalar(x, 0.7));
    case!("neg", tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols), |t: &mut Tape, x| t.neg(x));
    case!("relu", away_from_zero(rows, cols, &mut r), (rows, cols), |t: &mut Tape, x| t.relu(x));
    case!("leaky_relu", away_from_zero(rows, cols, &mut r), (rows, cols), |t: &mut Tape, x| t.leaky_relu(x, 0.01));
    case!("sigmoid", tensor(rows, cols, &mut r, -3.0, 3.0), (rows, cols), |t: &mut Tape, x| t.sigmoid(x));
    case!("log", tensor(rows, cols, &mut r, 0.2, 2.0), (rows, cols), |t: &mut Tape, x| t.log(x));
    let floor = 0.0;
    case!("clamp_min", away_from_zero(rows, cols, &mut r), (rows, cols), move |t: &mut Tape, x| t.clamp_min(x, floor));
    case!("sum", tensor(rows, cols, &mut r, -1.0, 1.0), (1, 1), |t: &mut Tape, x| t.sum(x));
    case!("mean", tensor(rows, cols, &mut r, -1.0, 1.0), (1, 1), |t: &mut Tape, x| t.mean(x));
    case!("layer_norm", tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols), |t: &mut Tape, x| t.layer_norm(x));
    let other = tensor(rows, 2, &mut r, -1.0, 1.0);
    case!("concat_cols", tensor(rows, cols, &mut r, -1.0, 1.0), (rows, cols + 2), move |t: &mut Tape, x| {
        let c = t.constant(other.clone())?;
        t.concat_cols(&[c, x])
    });
    let other = tensor(2, cols, &mut r, -1.0, 1.0);
    case!("concat_rows", tensor(rows, cols, &mut r, -1.0, 1.0), (2 * rows + 2, cols), move |t: &mut Tape, x| {
        let c = t.constant(other.clone())?;
        t.concat_rows(&[x, c, x])
    });
    let index: Arc<[usize]> = (0..rows + 3).map(|_| r.random_range(0..rows)).collect();
    let gathered = index.len();
    case!("gather_rows", tensor(rows, cols, &mut r, -1.0, 1.0), (gathered, cols), move |t: &mut Tape, x| {
        t.gather_rows(x, index.clone())
    });
    case!("slice_rows", tensor(rows, cols, &mut r, -1.0, 1.0), (rows - 1, cols), move |t: &mut Tape, x| {
        t.slice_rows(x, 1, rows - 1)
    });
    case!("reshape", tensor(rows, cols, &mut r, -1.0, 1.0), (cols, rows), move |t: &mut Tape, x| {
        t.reshape(x, cols, rows)
    });
    case!("transpose", tensor(rows, cols, &mut r, -1.0, 1.0), (cols, rows), |t: &mut Tape, x| t.transpose(x));
    let segments = r.random_range(1..4);
    let seg: Arc<[usize]> = (0..rows).map(|_| r.random_range(0..segments)).collect();
    case!("segment_sum", tensor(rows, cols, &mut r, -1.0, 1.0), (segments, cols), move |t: &mut Tape, x| {
        t.segment_sum(x, seg.clone(), segments)
    });
    let len = rows + 3;
    let mut seg: Vec<usize> = (0..len).map(|_| r.random_range(0..3)).collect();
    seg.sort_unstable();
    let seg: Arc<[usize]> = seg.into();
    case!("segment_softmax", tensor(len, 1, &mut r, -2.0, 2.0), (len, 1), move |t: &mut Tape, x| {
        t.segment_softmax(x, seg.clone())
    });
    let mut keep: Vec<bool> = (0..cols).map(|_| r.random_bool(0.6)).collect();
    keep[0] = true;
    let keep: Arc<[bool]> = keep.into();
    case!("masked_softmax", tensor(1, cols, &mut r, -2.0, 2.0), (1, cols), move |t: &mut Tape, x| {
        t.masked_softmax(x, keep.clone())
    });
    case!("softmax_rows", tensor(rows, cols, &mut r, -2.0, 2.0), (rows, cols), |t: &mut Tape, x| t.softmax_rows(x));
    cases
}

/// Worst relative gradient error over every primitive for one seed.
pub fn primitive_errors(seed: u64) -> Vec<(String, f64)> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, f, point)| {
            let err = check_gradients(f, &point, 1e-6).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, err)
        })
        .collect()
}

/// A small GEVN and a random batch of elections.
pub fn gevn_instance(seed: u64) -> (Gevn, Vec<PreferenceProfile>, Tensor) {
    let mut r = rng(seed);
    let config = GevnConfig {
        layers: 2,
        node_width: 5,
        edge_width: 3,
    };
    let gevn = Gevn::new(config, seed).unwrap();
    let profiles: Vec<PreferenceProfile> = (0..r.random_range(1..4))
        .map(|_| {
            let n = r.random_range(1..5);
            let m = r.random_range(1..5);
            let s = (0..n * m).map(|_| r.random_range(0.0..1.0)).collect();
            PreferenceProfile::cardinal(n, m, s).unwrap()
        })
        .collect();
    let c: usize = profiles.iter().map(|p| p.m()).sum();
    let w = tensor(c, 1, &mut r, -1.0, 1.0);
    (gevn, profiles, w)
}

fn gevn_objective(
    gevn: &Gevn,
    batch: &GraphBatch,
    w: &Tensor,
    tape: &mut Tape,
    trainable: bool,
    edges: Var,
) -> Result<(Var, votegraph::autodiff::BoundParams), votegraph::Error> {
    let bound = gevn.params().bind(tape, trainable)?;
    let p = gevn.forward(tape, &bound, batch, edges)?;
    Ok((contract(tape, p, w)?, bound))
}

/// Worst relative error of a full GEVN forward pass, with respect to both
/// the ballot column and every parameter.
pub fn gevn_gradient_error(seed: u64) -> f64 {
    let (gevn, profiles, w) = gevn_instance(seed);
    let refs: Vec<&PreferenceProfile> = profiles.iter().collect();
    let batch = GraphBatch::from_profiles(&refs);
    let edges = batch.edge_features().clone();

    let wrt_edges = check_gradients(
        |tape, x| {
            gevn_objective(&gevn, &batch, &w, tape, false, x)
                .map(|(y, _)| y)
                .map_err(|e| AutodiffError::Shape(e.to_string()))
        },
        &edges,
        1e-6,
    )
    .unwrap();

    let mut tape = Tape::new();
    let e = tape.constant(edges.clone()).unwrap();
    let (y, bound) = gevn_objective(&gevn, &batch, &w, &mut tape, true, e).unwrap();
    let mut grads = tape.backward(y).unwrap();
    let analytic: Vec<f64> = gevn
        .params()
        .collect_grads(&bound, &mut grads)
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let point: Vec<f64> = gevn.params().values().iter().flat_map(|t| t.data().to_vec()).collect();
    let shapes: Vec<[usize; 2]> = gevn.params().values().iter().map(|t| t.shape()).collect();
    let wrt_params = check_gradients_with(
        |flat| {
            let mut g = gevn.clone();
            let mut off = 0;
            let values = shapes
                .iter()
                .map(|s| {
                    let len = s[0] * s[1];
                    let t = Tensor::new(s[0], s[1], flat[off..off + len].to_vec());
                    off += len;
                    t
                })
                .collect::<Result<Vec<_>, _>>()?;
            g.params_mut().assign(values)?;
            let mut tape = Tape::new();
            let e = tape.constant(edges.clone())?;
            let (y, _) = gevn_objective(&g, &batch, &w, &mut tape, false, e)
                .map_err(|e| AutodiffError::Shape(e.to_string()))?;
            Ok(tape.value(y).item())
        },
        &analytic,
        &point,
        1e-6,
    )
    .unwrap();
    wrt_edges.max(wrt_params)
}
