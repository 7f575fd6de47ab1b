//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero if any criterion fails.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test -p tem-core --test acceptance -- gradient`.

use std::error::Error;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tem_core::autodiff::optim::Bound;
use tem_core::autodiff::{gradcheck, gru_cell, kl_categorical, kl_categorical_var, AutodiffError, Graph, GruParams, Tensor, Var};
use tem_core::comm::{
    replay_chain_log, run_comm_phase, CommChoice, CommError, CommPolicy, CommRequest, Message, MessageBuffer,
};
use tem_core::env::{self, ScenarioConfig, ScenarioKind, WorldState};
use tem_core::harness::{
    collect, evaluate, finetune, report, train, transfer_eval, ActionMode, CollectOptions, CommBehavior, TrainOutcome,
};
use tem_core::learning::{causal_effects, expected_causal_effect, gae, gamma_matrix, CommSample};
use tem_core::networks::{action_forward, comm_forward, manifest, manifest_hash, AttnTrace, NetError};
use tem_core::{Actor, ActorConfig, Algo, Checkpoint, Critic, EvalMode, EvalOptions, NetDims, RunConfig};

type Res<T> = Result<T, Box<dyn Error>>;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Res<Verdict>); 10] = [
        ("gradient correctness", gradient_correctness),
        ("protocol invariants", protocol_invariants),
        ("distribution laws", distribution_laws),
        ("oracle equivalence", oracle_equivalence),
        ("scalability", scalability),
        ("finetune versus zero-shot", finetune_direction),
        ("silence-weight direction", silence_direction),
        ("learning progress", learning_progress),
        ("comparative harness", comparative_harness),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = run().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let tag = if verdict.pass { "PASS" } else { "FAIL" };
        println!("{tag}  {name} ({secs:.1}s): {}", verdict.detail);
        if !verdict.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.0}s of {:.0}s budget", t.as_secs_f64(), limit.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// Gradient correctness

const INSTANCES: usize = 20;
const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Entries at least `gap` away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = uniform(rng, shape, gap, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

/// `Σ w ⊙ y` with fixed random weights, so every output entry matters.
fn weighted(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var, AutodiffError> {
    let c = g.constant(w.clone());
    let m = g.mul(y, c)?;
    Ok(g.sum(m))
}

type OpCase = Box<dyn Fn(&mut ChaCha8Rng) -> Res<f64>>;

fn fd<F>(inputs: &[Tensor], f: F) -> Res<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    Ok(gradcheck::check(inputs, FD_STEP, f)?.max_rel_err)
}

/// A unary op of shape `[r × c] → out_shape(r, c)`.
fn unary(
    make: fn(&mut ChaCha8Rng, &[usize]) -> Tensor,
    out_shape: fn(usize, usize) -> Vec<usize>,
    op: fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
) -> OpCase {
    Box::new(move |rng| {
        let (r, c) = dims(rng);
        let x = make(rng, &[r, c]);
        let w = uniform(rng, &out_shape(r, c), -1.0, 1.0);
        fd(&[x], |g, v| {
            let y = op(g, v[0])?;
            weighted(g, y, &w)
        })
    })
}

fn plain(rng: &mut ChaCha8Rng, s: &[usize]) -> Tensor {
    uniform(rng, s, -1.0, 1.0)
}

fn same(r: usize, c: usize) -> Vec<usize> {
    vec![r, c]
}

fn binary(rows_b: bool, op: fn(&mut Graph, Var, Var) -> Result<Var, AutodiffError>) -> OpCase {
    Box::new(move |rng| {
        let (r, c) = dims(rng);
        let a = plain(rng, &[r, c]);
        let b = plain(rng, &[if rows_b { 1 } else { r }, c]);
        let w = plain(rng, &[r, c]);
        fd(&[a, b], |g, v| {
            let y = op(g, v[0], v[1])?;
            weighted(g, y, &w)
        })
    })
}

/// Operands at least 0.05 apart so min and max never tie.
fn extremum(op: fn(&mut Graph, Var, Var) -> Result<Var, AutodiffError>) -> OpCase {
    Box::new(move |rng| {
        let (r, c) = dims(rng);
        let a = plain(rng, &[r, c]);
        let d = off_zero(rng, &[r, c], 0.05);
        let b = Tensor::new(vec![r, c], a.data().iter().zip(d.data()).map(|(x, y)| x + y).collect())?;
        let w = plain(rng, &[r, c]);
        fd(&[a, b], |g, v| {
            let y = op(g, v[0], v[1])?;
            weighted(g, y, &w)
        })
    })
}

fn op_cases() -> Vec<(&'static str, OpCase)> {
    let mut cases: Vec<(&'static str, OpCase)> = vec![
        (
            "matmul",
            Box::new(|rng| {
                let (r, k) = dims(rng);
                let c = rng.random_range(1..5);
                let a = plain(rng, &[r, k]);
                let b = plain(rng, &[k, c]);
                let w = plain(rng, &[r, c]);
                fd(&[a, b], |g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    weighted(g, y, &w)
                })
            }),
        ),
        ("transpose", unary(plain, |r, c| vec![c, r], |g, x| g.transpose(x))),
        ("add", binary(false, |g, a, b| g.add(a, b))),
        ("add (row broadcast)", binary(true, |g, a, b| g.add(a, b))),
        ("sub", binary(false, |g, a, b| g.sub(a, b))),
        ("sub (row broadcast)", binary(true, |g, a, b| g.sub(a, b))),
        ("mul", binary(false, |g, a, b| g.mul(a, b))),
        ("mul (row broadcast)", binary(true, |g, a, b| g.mul(a, b))),
        ("scale", unary(plain, same, |g, x| Ok(g.scale(x, -1.7)))),
        ("add_scalar", unary(plain, same, |g, x| Ok(g.add_scalar(x, 0.3)))),
        (
            "concat",
            Box::new(|rng| {
                let axis = rng.random_range(0..2);
                let (r, c) = dims(rng);
                let (r2, c2) = if axis == 0 { (rng.random_range(1..4), c) } else { (r, rng.random_range(1..4)) };
                let a = plain(rng, &[r, c]);
                let b = plain(rng, &[r2, c2]);
                let out = if axis == 0 { [r + r2, c] } else { [r, c + c2] };
                let w = plain(rng, &out);
                fd(&[a, b], |g, v| {
                    let y = g.concat(&[v[0], v[1]], axis)?;
                    weighted(g, y, &w)
                })
            }),
        ),
        (
            "slice_rows",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let start = rng.random_range(0..r);
                let len = rng.random_range(1..=r - start);
                let x = plain(rng, &[r, c]);
                let w = plain(rng, &[len, c]);
                fd(&[x], |g, v| {
                    let y = g.slice_rows(v[0], start, len)?;
                    weighted(g, y, &w)
                })
            }),
        ),
        (
            "gather_rows",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let rows: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..r)).collect();
                let x = plain(rng, &[r, c]);
                let w = plain(rng, &[rows.len(), c]);
                fd(&[x], |g, v| {
                    let y = g.gather_rows(v[0], &rows)?;
                    weighted(g, y, &w)
                })
            }),
        ),
        (
            "pick",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let cols: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
                let x = plain(rng, &[r, c]);
                let w = plain(rng, &[r, 1]);
                fd(&[x], |g, v| {
                    let y = g.pick(v[0], &cols)?;
                    weighted(g, y, &w)
                })
            }),
        ),
        ("relu", unary(|rng, s| off_zero(rng, s, 0.01), same, |g, x| Ok(g.relu(x)))),
        ("tanh", unary(|rng, s| uniform(rng, s, -2.0, 2.0), same, |g, x| Ok(g.tanh(x)))),
        ("sigmoid", unary(|rng, s| uniform(rng, s, -4.0, 4.0), same, |g, x| Ok(g.sigmoid(x)))),
        ("exp", unary(plain, same, |g, x| Ok(g.exp(x)))),
        ("log", unary(|rng, s| uniform(rng, s, 0.2, 2.0), same, |g, x| Ok(g.log(x)))),
        ("softmax (rows)", unary(|rng, s| uniform(rng, s, -3.0, 3.0), same, |g, x| g.softmax(x, 1))),
        ("softmax (columns)", unary(|rng, s| uniform(rng, s, -3.0, 3.0), same, |g, x| g.softmax(x, 0))),
        (
            "masked_softmax",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let mut mask: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.6)).collect();
                for row in 0..r {
                    let keep = rng.random_range(0..c);
                    mask[row * c + keep] = true;
                }
                let x = uniform(rng, &[r, c], -3.0, 3.0);
                let w = plain(rng, &[r, c]);
                fd(&[x], |g, v| {
                    let y = g.masked_softmax(v[0], &mask)?;
                    weighted(g, y, &w)
                })
            }),
        ),
        ("log_softmax", unary(|rng, s| uniform(rng, s, -3.0, 3.0), same, |g, x| Ok(g.log_softmax(x)))),
        (
            "layer_norm",
            Box::new(|rng| {
                let r = rng.random_range(1..4);
                let c = rng.random_range(2..6);
                let x = uniform(rng, &[r, c], -2.0, 2.0);
                let w = plain(rng, &[r, c]);
                fd(&[x], |g, v| {
                    let y = g.layer_norm(v[0], 1e-5);
                    weighted(g, y, &w)
                })
            }),
        ),
        ("sum", unary(plain, |_, _| vec![1, 1], |g, x| Ok(g.sum(x)))),
        ("mean", unary(plain, |_, _| vec![1, 1], |g, x| Ok(g.mean(x)))),
        ("sum_axis (0)", unary(plain, |_, c| vec![1, c], |g, x| g.sum_axis(x, 0))),
        ("sum_axis (1)", unary(plain, |r, _| vec![r, 1], |g, x| g.sum_axis(x, 1))),
        ("mean_axis (0)", unary(plain, |_, c| vec![1, c], |g, x| g.mean_axis(x, 0))),
        ("mean_axis (1)", unary(plain, |r, _| vec![r, 1], |g, x| g.mean_axis(x, 1))),
        ("minimum", extremum(|g, a, b| g.minimum(a, b))),
        ("maximum", extremum(|g, a, b| g.maximum(a, b))),
        (
            "clamp",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                // Entries sit at least 0.05 from either bound.
                let mut x = uniform(rng, &[r, c], -1.0, 1.0);
                for v in x.data_mut() {
                    if (v.abs() - 0.5).abs() < 0.05 {
                        *v += 0.1f64.copysign(*v);
                    }
                }
                let w = plain(rng, &[r, c]);
                fd(&[x], |g, v| {
                    let y = g.clamp(v[0], -0.5, 0.5);
                    weighted(g, y, &w)
                })
            }),
        ),
        (
            "clamp_between",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let x = plain(rng, &[r, c]);
                let mut lo = Vec::with_capacity(r * c);
                let mut hi = Vec::with_capacity(r * c);
                for &v in x.data() {
                    // Bounds either bracket the entry or sit wholly on one side.
                    match rng.random_range(0..3) {
                        0 => {
                            lo.push(v - rng.random_range(0.05..1.0));
                            hi.push(v + rng.random_range(0.05..1.0));
                        }
                        1 => {
                            let l = v + rng.random_range(0.05..1.0);
                            lo.push(l);
                            hi.push(l + 1.0);
                        }
                        _ => {
                            let h = v - rng.random_range(0.05..1.0);
                            lo.push(h - 1.0);
                            hi.push(h);
                        }
                    }
                }
                let lo = Tensor::new(vec![r, c], lo)?;
                let hi = Tensor::new(vec![r, c], hi)?;
                let w = plain(rng, &[r, c]);
                fd(&[x], |g, v| {
                    let y = g.clamp_between(v[0], lo.clone(), hi.clone())?;
                    weighted(g, y, &w)
                })
            }),
        ),
        (
            "gru_cell",
            Box::new(|rng| {
                let b = rng.random_range(1..4);
                let d_in = rng.random_range(1..5);
                let d_h = rng.random_range(1..5);
                let mut inputs = vec![plain(rng, &[b, d_in]), plain(rng, &[b, d_h])];
                for _ in 0..3 {
                    inputs.push(plain(rng, &[d_in, d_h]));
                }
                for _ in 0..3 {
                    inputs.push(plain(rng, &[d_h, d_h]));
                }
                for _ in 0..6 {
                    inputs.push(plain(rng, &[1, d_h]));
                }
                let w = plain(rng, &[b, d_h]);
                fd(&inputs, |g, v| {
                    let p = GruParams {
                        w_ir: v[2],
                        w_iz: v[3],
                        w_in: v[4],
                        w_hr: v[5],
                        w_hz: v[6],
                        w_hn: v[7],
                        b_ir: v[8],
                        b_iz: v[9],
                        b_in: v[10],
                        b_hr: v[11],
                        b_hz: v[12],
                        b_hn: v[13],
                    };
                    let y = gru_cell(g, v[0], v[1], &p)?;
                    weighted(g, y, &w)
                })
            }),
        ),
        (
            "kl_categorical",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let p = uniform(rng, &[r, c], 0.05, 0.95);
                let q = uniform(rng, &[r, c], 0.05, 0.95);
                let w = plain(rng, &[r, 1]);
                fd(&[p, q], |g, v| {
                    let y = kl_categorical_var(g, v[0], v[1])?;
                    weighted(g, y, &w)
                })
            }),
        ),
    ];
    for comm in [false, true] {
        let name = if comm { "tiny actor (message network)" } else { "tiny actor (action network)" };
        cases.push((name, Box::new(move |rng| tiny_actor_gradcheck(rng, comm))));
    }
    cases
}

fn tiny_actor_config() -> ActorConfig {
    ActorConfig {
        obs_len: 6,
        k_neighbors: 3,
        dims: NetDims {
            d_h: 4,
            d_model: 4,
            n_enc: 1,
            n_dec: 1,
            ..NetDims::default()
        },
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_messages(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Message> {
    (0..n).map(|_| Message::new(&random_vec(rng, len))).collect()
}

/// Loss over every actor output on a random batch. Biases are randomized
/// so no ReLU layer sits exactly on its kink.
fn tiny_actor_gradcheck(rng: &mut ChaCha8Rng, comm: bool) -> Res<f64> {
    let cfg = tiny_actor_config();
    let mut actor = Actor::new(cfg, rng);
    let names: Vec<String> = actor.params.iter().map(|(n, _)| n.to_string()).collect();
    for n in names.iter().filter(|n| n.ends_with(".b")) {
        for v in actor.params.get_mut(n).unwrap().data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let obs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(rng, 6)).collect();
    let hs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(rng, 4)).collect();
    let bufs: Vec<Vec<Message>> = (0..3).map(|_| {
        let n = rng.random_range(0..4);
        random_messages(rng, n, 6)
    }).collect();
    let masks: Vec<Vec<bool>> = (0..3).map(|_| (0..3).map(|_| rng.random_bool(0.6)).collect()).collect();
    let w_act = uniform(rng, &[3, 5], -1.0, 1.0);
    let w_h = uniform(rng, &[3, 4], -1.0, 1.0);
    let w_comm = uniform(rng, &[3, 4], -1.0, 1.0);

    // The message network sees o_f through a stop-gradient, so its check
    // holds the observation encoder fixed.
    let (consts, trainable): (Vec<_>, Vec<_>) = actor
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .partition(|(n, _)| comm && n.starts_with("obs."));
    let names: Vec<String> = trainable.iter().map(|(n, _)| n.clone()).collect();
    let inputs: Vec<Tensor> = trainable.into_iter().map(|(_, t)| t).collect();
    let net = |e: NetError| match e {
        NetError::Autodiff(e) => e,
        _ => AutodiffError::InvalidArgument("network input"),
    };

    fd(&inputs, |g, vars| {
        let mut pairs: Vec<(String, Var)> = names.iter().cloned().zip(vars.iter().copied()).collect();
        for (n, t) in &consts {
            pairs.push((n.clone(), g.constant(t.clone())));
        }
        let p = Bound::from_vars(pairs);
        let o: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
        let h: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();
        let b: Vec<&[Message]> = bufs.iter().map(Vec::as_slice).collect();
        if comm {
            let m: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
            let probs = comm_forward(g, &p, &cfg, &o, &b, &m, None).map_err(net)?;
            weighted(g, probs, &w_comm)
        } else {
            let out = action_forward(g, &p, &cfg, &o, &b, &h).map_err(net)?;
            let a = weighted(g, out.log_probs, &w_act)?;
            let c = weighted(g, out.h_new, &w_h)?;
            g.add(a, c)
        }
    })
}

/// Forward must be the identity and the backward pass must deliver
/// exactly nothing to the input.
fn stop_gradient_case(rng: &mut ChaCha8Rng) -> Res<bool> {
    let (r, c) = dims(rng);
    let x = plain(rng, &[r, c]);
    let w = plain(rng, &[r, c]);
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let y = g.stop_gradient(v);
    let loss = weighted(&mut g, y, &w)?;
    let grads = g.backward(loss)?;
    let zero = grads.get(v).is_none_or(|t| t.data().iter().all(|&d| d == 0.0));
    Ok(g.value(y) == &x && zero)
}

fn gradient_correctness() -> Res<Verdict> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6752_6164);
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    let cases = op_cases();
    for (name, case) in &cases {
        let mut op_worst = 0.0f64;
        for _ in 0..INSTANCES {
            op_worst = op_worst.max(case(&mut rng)?);
        }
        if op_worst >= GRAD_TOL {
            failures.push(format!("{name} {op_worst:.2e}"));
        }
        if op_worst > worst.0 {
            worst = (op_worst, name);
        }
    }
    let mut stop_ok = true;
    for _ in 0..INSTANCES {
        stop_ok &= stop_gradient_case(&mut rng)?;
    }
    if !stop_ok {
        failures.push("stop_gradient".into());
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    if !fast {
        failures.push(format!("too slow: {time}"));
    }
    Ok(Verdict::new(
        failures.is_empty(),
        format!(
            "{} cases x {INSTANCES} instances plus stop_gradient, worst rel err {:.2e} ({}), {time}{}",
            cases.len(),
            worst.0,
            worst.1,
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    ))
}

// ---------------------------------------------------------------------------
// Protocol invariants

/// Sends whenever a teammate is visible, except that in round 0 each agent
/// holds back with probability `hold` so that chains get a chance to grow.
/// `first` picks the lowest slot; otherwise it prefers teammates that have
/// already sent, which the protocol must still handle.
struct Adversary<'a> {
    rng: &'a mut ChaCha8Rng,
    first: bool,
    hold: f64,
}

impl CommPolicy for Adversary<'_> {
    fn decide(&mut self, requests: &[CommRequest<'_>]) -> Result<Vec<CommChoice>, CommError> {
        Ok(requests
            .iter()
            .map(|r| {
                let valid: Vec<usize> = (0..r.valid.len()).filter(|&s| r.valid[s]).collect();
                let stale: Vec<usize> = valid.iter().copied().filter(|&s| !r.fresh[s]).collect();
                let pool = if stale.is_empty() || self.rng.random_bool(0.5) { &valid } else { &stale };
                let silent = pool.is_empty() || (r.round == 0 && self.rng.random_bool(self.hold));
                let choice = match (silent, self.first) {
                    (true, _) => 0,
                    (false, true) => pool[0] + 1,
                    (false, false) => pool[self.rng.random_range(0..pool.len())] + 1,
                };
                let mut probs = vec![0.0; r.valid.len() + 1];
                probs[choice] = 1.0;
                CommChoice { choice, probs }
            })
            .collect())
    }
}

fn protocol_invariants() -> Res<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7072_6f74);
    let mut sends = 0usize;
    let mut longest = 0usize;
    for sim in 0..10_000 {
        let n = rng.random_range(2..=12);
        let kind = if rng.random_bool(0.5) { ScenarioKind::PredatorPrey } else { ScenarioKind::CooperativeNavigation };
        let mut cfg = ScenarioConfig::new(kind, n, rng.random_range(1..4));
        cfg.obs_radius = rng.random_range(0.2..3.0);
        cfg.k_neighbors = rng.random_range(1..=4);
        let capacity = rng.random_range(0..=10);
        let state = env::reset(&cfg, rng.random());
        let obs = env::observe_all(&cfg, &state);
        let mut buffers = vec![MessageBuffer::new(capacity, cfg.obs_len()); n];
        let hold = [0.0, 0.5, 0.9][sim % 3];
        let mut policy = Adversary {
            rng: &mut rng,
            first: sim % 2 == 0,
            hold,
        };
        let (_, log) = run_comm_phase(&obs, &mut buffers, &mut policy, false)?;

        let rounds = log.records.iter().map(|r| r.round + 1).max().unwrap_or(0);
        if rounds > n {
            return Ok(Verdict::new(false, format!("simulation {sim}: {rounds} rounds with {n} agents")));
        }
        let mut seen = vec![false; n];
        for r in &log.records {
            if std::mem::replace(&mut seen[r.sender], true) {
                return Ok(Verdict::new(false, format!("simulation {sim}: agent {} sent twice", r.sender)));
            }
        }
        if let Some(b) = buffers.iter().find(|b| b.len() > capacity) {
            return Ok(Verdict::new(false, format!("simulation {sim}: buffer of {} over capacity {capacity}", b.len())));
        }
        if replay_chain_log(&log, &obs, capacity, cfg.obs_len())? != buffers {
            return Ok(Verdict::new(false, format!("simulation {sim}: replay differs")));
        }
        sends += log.sends();
        longest = longest.max(rounds);
    }
    Ok(Verdict::new(
        sends > 0,
        format!("10000 simulations, {sends} sends, longest chain {longest} rounds; all within budget and replayed exactly"),
    ))
}

// ---------------------------------------------------------------------------
// Distribution laws

fn random_actor(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> Actor {
    let dims = if rng.random_bool(0.5) {
        NetDims::default()
    } else {
        NetDims {
            d_h: 8,
            d_model: 8,
            n_enc: 2,
            n_dec: 2,
            ..NetDims::default()
        }
    };
    Actor::new(ActorConfig::for_scenario(cfg, dims), rng)
}

fn random_world(rng: &mut ChaCha8Rng) -> ScenarioConfig {
    let kind = if rng.random_bool(0.5) { ScenarioKind::PredatorPrey } else { ScenarioKind::CooperativeNavigation };
    let mut cfg = ScenarioConfig::new(kind, rng.random_range(2..10), rng.random_range(1..4));
    cfg.obs_radius = rng.random_range(0.3..2.5);
    cfg
}

/// Communication samples from short rollouts of random actors.
fn comm_snapshots(rng: &mut ChaCha8Rng, want: usize) -> Res<Vec<(Actor, Vec<CommSample>)>> {
    let mut out = Vec::new();
    let mut have = 0;
    while have < want {
        let mut cfg = random_world(rng);
        cfg.episode_len = 5;
        let actor = random_actor(rng, &cfg);
        let critic = Critic::new(cfg.global_state_len(), 8, rng);
        let opts = CollectOptions {
            comm: CommBehavior::Learned(tem_core::comm::CommMode::Sample),
            actions: ActionMode::Sample,
            buffer_capacity: rng.random_range(1..9),
            record: true,
            record_comm: true,
            traces: false,
        };
        let got = collect(&actor, Some(&critic), &cfg, 2, &opts, rng)?;
        let samples: Vec<CommSample> = got.batch.comm.into_iter().filter(|s| !s.decision.neighbors.is_empty()).collect();
        have += samples.len();
        out.push((actor, samples));
    }
    Ok(out)
}

fn distribution_laws() -> Res<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6469_7374);
    let mut comm_err = 0.0f64;
    let mut attn_err = 0.0f64;
    let mut rows = 0usize;
    let mut masked = 0usize;
    for _ in 0..200 {
        let cfg = random_world(&mut rng);
        let actor = random_actor(&mut rng, &cfg);
        let state = env::reset(&cfg, rng.random());
        let obs = env::observe_all(&cfg, &state);
        let bufs: Vec<Vec<Message>> = obs
            .iter()
            .map(|_| {
                let n = rng.random_range(0..6);
                random_messages(&mut rng, n, cfg.obs_len())
            })
            .collect();
        let masks: Vec<Vec<bool>> = obs.iter().map(|o| o.neighbor_mask()).collect();
        let mut g = Graph::new();
        let p = actor.params.bind(&mut g, false);
        let mut trace = AttnTrace::default();
        let o: Vec<&[f64]> = obs.iter().map(|o| o.data.as_slice()).collect();
        let b: Vec<&[Message]> = bufs.iter().map(Vec::as_slice).collect();
        let m: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
        let probs = comm_forward(&mut g, &p, &actor.config, &o, &b, &m, Some(&mut trace))?;
        let k = actor.config.comm_options();
        for (row, mask) in g.value(probs).data().chunks(k).zip(&masks) {
            comm_err = comm_err.max((row.iter().sum::<f64>() - 1.0).abs());
            for (s, &ok) in mask.iter().enumerate() {
                if !ok {
                    masked += 1;
                    if row[s + 1] != 0.0 {
                        return Ok(Verdict::new(false, format!("masked slot {s} has probability {}", row[s + 1])));
                    }
                }
            }
        }
        for w in &trace.weights {
            let cols = w.shape()[1];
            for row in w.data().chunks(cols) {
                attn_err = attn_err.max((row.iter().sum::<f64>() - 1.0).abs());
                rows += 1;
            }
        }
    }

    let mut gamma_min = f64::INFINITY;
    let mut decisions = 0;
    let mut effects_seen = 0;
    for (actor, samples) in comm_snapshots(&mut rng, 1000)? {
        let capacity = 8;
        for e in causal_effects(&actor, &samples, capacity)? {
            decisions += 1;
            effects_seen += e.len();
            gamma_min = gamma_min.min(e.iter().copied().fold(f64::INFINITY, f64::min));
        }
    }

    let mut kl_max = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..10);
        let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let z: f64 = raw.iter().sum::<f64>().max(1e-12);
        let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
        kl_max = kl_max.max(kl_categorical(&p, &p)?.abs());
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![1, n], p.clone())?);
        let b = g.constant(Tensor::new(vec![1, n], p)?);
        let kl = kl_categorical_var(&mut g, a, b)?;
        kl_max = kl_max.max(g.value(kl).item().abs());
    }

    let pass = comm_err < 1e-6 && attn_err < 1e-9 && gamma_min >= 0.0 && kl_max == 0.0 && decisions >= 1000;
    Ok(Verdict::new(
        pass,
        format!(
            "comm sum err {comm_err:.1e}, {masked} masked slots exactly 0, {rows} attention rows err {attn_err:.1e}, \
             min Γ {gamma_min:.2e} over {decisions} snapshots ({effects_seen} effects), max KL(p‖p) {kl_max:e}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// Oracle equivalence

fn naive_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            let qi = if q[i] < 1e-10 { 1e-10 } else { q[i] };
            acc += p[i] * (p[i] / qi).ln();
        }
    }
    if acc < 0.0 {
        0.0
    } else {
        acc
    }
}

/// Per-step advantage as a direct sum of discounted TD errors, evaluated
/// from the far end so it cuts at the first terminal step.
fn naive_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let n = r.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut end = n;
        for (s, &done) in d.iter().enumerate().skip(t) {
            if done {
                end = s + 1;
                break;
            }
        }
        let mut acc = 0.0;
        for s in (t..end).rev() {
            let next = if d[s] {
                0.0
            } else if s + 1 < n {
                v[s + 1]
            } else {
                boot
            };
            let live = if d[s] { 0.0 } else { 1.0 };
            let delta = r[s] + gamma * next * live - v[s];
            acc = delta + gamma * lam * live * acc;
        }
        out.push(acc);
    }
    out
}

fn naive_reward(cfg: &ScenarioConfig, s: &WorldState) -> Vec<f64> {
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt();
    let mut team = 0.0;
    match cfg.kind {
        ScenarioKind::CooperativeNavigation => {
            for &t in &s.target_pos {
                let mut best = f64::INFINITY;
                for &a in &s.agent_pos {
                    if d(a, t) < best {
                        best = d(a, t);
                    }
                }
                if best.is_finite() {
                    team += -best;
                }
            }
        }
        ScenarioKind::PredatorPrey => {
            if !s.target_pos.is_empty() {
                for &a in &s.agent_pos {
                    let mut best = f64::INFINITY;
                    for &t in &s.target_pos {
                        if d(a, t) < best {
                            best = d(a, t);
                        }
                    }
                    team += -best;
                }
            }
        }
    }
    let n = s.agent_pos.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut hits = 0;
        for j in 0..n {
            if i != j && d(s.agent_pos[i], s.agent_pos[j]) < cfg.collision_dist {
                hits += 1;
            }
        }
        out.push(team - cfg.collision_penalty * hits as f64);
    }
    out
}

/// Causal effect of one candidate delivery, rebuilt from the definition:
/// append the sender's buffer and observation to the receiver's inbox,
/// drop the oldest beyond capacity, and compare action distributions.
fn naive_gamma(actor: &Actor, s: &CommSample, k: usize, capacity: usize) -> Res<f64> {
    let n = &s.decision.neighbors[k];
    let h = &s.neighbor_hidden[k];
    let mut with: Vec<Message> = n.buffer.clone();
    with.extend(s.decision.sender_buffer.iter().cloned());
    with.push(s.decision.sender_obs.clone());
    let drop = with.len().saturating_sub(capacity);
    let (p1, _) = actor.action_dists(&[n.obs.payload()], &[&with[drop..]], &[h])?;
    let (p0, _) = actor.action_dists(&[n.obs.payload()], &[&n.buffer], &[h])?;
    Ok(naive_kl(&p1[0], &p0[0]))
}

fn oracle_equivalence() -> Res<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f72_6163);
    let mut report = Vec::new();
    let mut pass = true;

    // Expected causal effect over whole batches.
    let mut cases = 0;
    let mut worst = 0.0f64;
    for (actor, samples) in comm_snapshots(&mut rng, 100)? {
        let capacity = 8;
        let effects = causal_effects(&actor, &samples, capacity)?;
        let refs: Vec<&CommSample> = samples.iter().collect();
        let eff_refs: Vec<&[f64]> = effects.iter().map(Vec::as_slice).collect();
        let k = actor.config.comm_options();
        let gammas = gamma_matrix(&refs, &eff_refs, k)?;
        let probs: Vec<f64> = samples.iter().flat_map(|s| s.decision.probs.iter().copied()).collect();
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(vec![samples.len(), k], probs)?);
        let e = expected_causal_effect(&mut g, p, gammas)?;
        for (b, s) in samples.iter().enumerate() {
            let mut acc = 0.0;
            for (j, n) in s.decision.neighbors.iter().enumerate() {
                acc += s.decision.probs[n.slot + 1] * naive_gamma(&actor, s, j, capacity)?;
            }
            let got = g.value(e).data()[b];
            worst = worst.max((got - acc).abs());
            cases += 1;
        }
    }
    pass &= worst == 0.0 && cases >= 100;
    report.push(format!("E[Γ] {cases} decisions max diff {worst:e}"));

    // GAE.
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..60);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.05)).collect();
        let boot = rng.random_range(-5.0..5.0);
        let gamma = rng.random_range(0.8..1.0);
        let lam = rng.random_range(0.5..1.0);
        let got = gae(&r, &v, &d, boot, gamma, lam);
        let want = naive_gae(&r, &v, &d, boot, gamma, lam);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    pass &= worst == 0.0;
    report.push(format!("GAE 200 sequences max diff {worst:e}"));

    // Rewards, with a generous collision distance so penalties occur.
    let mut worst = 0.0f64;
    let mut collisions = 0;
    for _ in 0..200 {
        let mut cfg = random_world(&mut rng);
        cfg.collision_dist = rng.random_range(0.05..0.8);
        let mut state = env::reset(&cfg, rng.random());
        if cfg.kind == ScenarioKind::PredatorPrey && rng.random_bool(0.1) {
            state.target_pos.clear();
            state.target_vel.clear();
        }
        let got = env::compute_reward(&cfg, &state);
        let want = naive_reward(&cfg, &state);
        collisions += env::detect_events(&cfg, &state).collisions;
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    pass &= worst == 0.0;
    report.push(format!("reward 200 states ({collisions} collisions) max diff {worst:e}"));

    // KL, both the plain and the graph form.
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..8);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
            let z: f64 = raw.iter().sum::<f64>().max(1e-12);
            raw.iter().map(|x| x / z).collect()
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        worst = worst.max((kl_categorical(&p, &q)? - naive_kl(&p, &q)).abs());

        let mut want = 0.0;
        for i in 0..n {
            let ps = p[i].clamp(1e-10, 1.0);
            let qs = q[i].clamp(1e-10, 1.0);
            want += p[i] * (ps.ln() - qs.ln());
        }
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![1, n], p)?);
        let b = g.constant(Tensor::new(vec![1, n], q)?);
        let kl = kl_categorical_var(&mut g, a, b)?;
        worst = worst.max((g.value(kl).item() - want).abs());
    }
    pass &= worst == 0.0;
    report.push(format!("KL 200 pairs max diff {worst:e}"));

    Ok(Verdict::new(pass, report.join("; ")))
}

// ---------------------------------------------------------------------------
// Training-based criteria

fn run_config(scenario: &str, algo: Algo, steps: usize, seed: u64) -> Res<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.set("scenario", scenario)?;
    cfg.algo = algo;
    cfg.total_env_steps = steps;
    cfg.seed = seed;
    cfg.eval_every = 0;
    Ok(cfg)
}

fn scenario(spec: &str) -> Res<ScenarioConfig> {
    let mut cfg = RunConfig::default();
    cfg.set("scenario", spec)?;
    Ok(cfg.scenario)
}

fn train_run(cfg: RunConfig, out: Option<&Path>) -> Res<TrainOutcome> {
    let mut cfg = cfg;
    cfg.out = out.map(Path::to_path_buf);
    Ok(train(cfg)?)
}

/// The PP 7-3 actor shared by the transfer checks, trained on first use.
fn pp73_checkpoint() -> Res<Checkpoint> {
    static CACHE: Mutex<Option<Checkpoint>> = Mutex::new(None);
    let mut slot = CACHE.lock().map_err(|_| "checkpoint cache poisoned")?;
    if slot.is_none() {
        let cfg = run_config("pp:7-3", Algo::Tem, 20_000, 0)?;
        *slot = Some(train_run(cfg, None)?.checkpoint);
    }
    Ok(slot.clone().expect("filled above"))
}

fn scalability() -> Res<Verdict> {
    let start = Instant::now();
    let ckpt = pp73_checkpoint()?;
    let trained = manifest(&ckpt.actor);
    let hash = manifest_hash(&ckpt.actor, true);
    let mut same_shape = true;
    for spec in ["pp:3-1", "pp:7-3", "pp:9-3"] {
        let s = scenario(spec)?;
        let fresh = Actor::new(ActorConfig::for_scenario(&s, ckpt.config.net), &mut ChaCha8Rng::seed_from_u64(1));
        same_shape &= manifest(&fresh.params) == trained;
    }
    let targets = [scenario("pp:3-1")?, scenario("pp:9-3")?];
    let opts = EvalOptions {
        episodes: 10,
        mode: EvalMode::Greedy,
        ..EvalOptions::default()
    };
    let reports = transfer_eval(&ckpt, &targets, &opts)?;
    let unchanged = manifest_hash(&ckpt.actor, true) == hash;
    let ran = reports.iter().all(|r| r.episodes.len() == 10);
    let (fast, time) = within(start, Duration::from_secs(300));
    let summary: Vec<String> = reports
        .iter()
        .map(|r| format!("{} R={:.1} S={:.1} C={:.1}", r.scenario.label(), r.mean_reward, r.mean_success, r.mean_collisions))
        .collect();
    Ok(Verdict::new(
        same_shape && unchanged && ran && fast,
        format!(
            "manifest ({} tensors, {} scalars) identical for 3-1/7-3/9-3: {same_shape}; {}; hash unchanged: {unchanged}; {time}",
            trained.entries.len(),
            trained.total(),
            summary.join(", ")
        ),
    ))
}

fn finetune_direction() -> Res<Verdict> {
    let ckpt = pp73_checkpoint()?;
    let target = scenario("pp:3-1")?;
    let opts = EvalOptions {
        episodes: 100,
        seed: 31,
        mode: EvalMode::Greedy,
        traces: false,
    };
    let zero_shot = evaluate(&ckpt, &target, &opts)?.mean_reward;
    let tuned = finetune(&ckpt, &target, 50_000, None)?.checkpoint;
    let finetuned = evaluate(&tuned, &target, &opts)?.mean_reward;
    let actor_same = manifest(&tuned.actor) == manifest(&ckpt.actor);
    let (before, after) = (ckpt.critic.num_scalars(), tuned.critic.num_scalars());
    Ok(Verdict::new(
        finetuned >= zero_shot && actor_same && before != after,
        format!(
            "pp:7-3 actor on pp:3-1: zero-shot R={zero_shot:.2}, after 50k finetune R={finetuned:.2}; \
             actor manifest unchanged: {actor_same}; critic scalars {before} -> {after}"
        ),
    ))
}

/// Mean communication rate over the last tenth of training iterations.
fn final_comm_rate(out: &TrainOutcome) -> f64 {
    let n = out.metrics.len();
    let tail = &out.metrics[n - (n / 10).max(1)..];
    tail.iter().map(|m| m.comm_rate).sum::<f64>() / tail.len() as f64
}

fn silence_direction() -> Res<Verdict> {
    let start = Instant::now();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..3 {
        let mut rates = [0.0; 2];
        for (i, delta) in [0.0, 1.0].into_iter().enumerate() {
            let mut cfg = run_config("cn:3-3", Algo::Tem, 100_000, seed)?;
            cfg.hyper.delta = delta;
            rates[i] = final_comm_rate(&train_run(cfg, None)?);
        }
        if rates[1] < rates[0] {
            wins += 1;
        }
        pairs.push(format!("seed {seed}: {:.3} vs {:.3}", rates[0], rates[1]));
    }
    let (fast, time) = within(start, Duration::from_secs(3600));
    Ok(Verdict::new(
        wins == 3 && fast,
        format!("comm_rate δ=0 vs δ=1 ({}); lower with δ=1 in {wins}/3; {time}", pairs.join(", ")),
    ))
}

fn learning_progress() -> Res<Verdict> {
    let start = Instant::now();
    let cfg = run_config("cn:3-3", Algo::Tem, 200_000, 0)?;
    let s = cfg.scenario.clone();
    let ckpt = train_run(cfg, None)?.checkpoint;
    let opts = |mode| EvalOptions {
        episodes: 20,
        seed: 20_260_101,
        mode,
        traces: false,
    };
    let trained = evaluate(&ckpt, &s, &opts(EvalMode::Greedy))?.mean_reward;
    let random = evaluate(&ckpt, &s, &opts(EvalMode::Random))?.mean_reward;
    let gain = (trained - random) / random.abs();
    let (fast, time) = within(start, Duration::from_secs(1800));
    Ok(Verdict::new(
        gain >= 0.3 && fast,
        format!(
            "cn:3-3 200k steps: trained R={trained:.2}, random R={random:.2}, improvement {:.1}% (need ≥30%); {time}",
            100.0 * gain
        ),
    ))
}

fn comparative_harness() -> Res<Verdict> {
    let dir = tempfile::tempdir()?;
    let s = scenario("pp:7-3")?;
    let mut lines = Vec::new();
    for algo in [Algo::Tem, Algo::Mappo, Algo::Fc, Algo::Rc] {
        let mut cfg = run_config("pp:7-3", algo, 20_000, 0)?;
        cfg.eval_every = 10;
        let out = dir.path().join(algo.tag());
        let ckpt = train_run(cfg, Some(&out))?.checkpoint;
        let r = evaluate(&ckpt, &s, &EvalOptions::default())?;
        lines.push(format!(
            "{:<6} R = {:>8.2} ± {:>6.2}  S = {:>6.2} ± {:>6.2}  C = {:>5.2} ± {:>5.2}  comm_rate = {:.3}",
            algo.tag(),
            r.mean_reward,
            r.std_reward,
            r.mean_success,
            r.std_success,
            r.mean_collisions,
            r.std_collisions,
            r.comm_rate
        ));
    }
    let random = evaluate(
        &Checkpoint::load(&dir.path().join("tem").join("checkpoint.bin"))?,
        &s,
        &EvalOptions {
            mode: EvalMode::Random,
            ..EvalOptions::default()
        },
    )?;
    lines.push(format!(
        "{:<6} R = {:>8.2} ± {:>6.2}  S = {:>6.2} ± {:>6.2}  C = {:>5.2} ± {:>5.2}  comm_rate = {:.3}",
        "random",
        random.mean_reward,
        random.std_reward,
        random.mean_success,
        random.std_success,
        random.mean_collisions,
        random.std_collisions,
        random.comm_rate
    ));
    let summary = report(dir.path())?;
    println!("pp:7-3, 20k steps, seed 0, 10 greedy episodes each");
    for l in &lines {
        println!("  {l}");
    }
    print!("{}", summary.table);
    let ok = summary.summaries.len() == 4 && summary.files.iter().all(|f| f.exists());
    Ok(Verdict::new(ok, format!("4 algorithms trained and evaluated, {} report rows", summary.summaries.len())))
}

fn determinism_and_persistence() -> Res<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut cfg = run_config("cn:3-3", Algo::Tem, 6_000, 7)?;
    cfg.eval_every = 2;
    let out = dir.path().join("run");
    let files = ["metrics.csv", "eval.csv", "config.txt", "checkpoint.bin"];
    // Both runs write to the same path, since the config records it.
    train_run(cfg.clone(), Some(&out))?;
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f))).collect::<Result<_, _>>()?;
    std::fs::remove_dir_all(&out)?;
    train_run(cfg, Some(&out))?;
    let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f))).collect::<Result<_, _>>()?;
    let same = first == second;

    let original = &first[3];
    let loaded = Checkpoint::load(&out.join("checkpoint.bin"))?;
    let again = dir.path().join("again.bin");
    loaded.save(&again)?;
    let round_trip = &std::fs::read(&again)? == original;
    Ok(Verdict::new(
        same && round_trip,
        format!(
            "two runs wrote identical {}: {same}; checkpoint save/load/save byte-identical: {round_trip} ({} bytes)",
            files.join(", "),
            original.len()
        ),
    ))
}
