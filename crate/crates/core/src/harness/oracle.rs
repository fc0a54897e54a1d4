//! Independent numerical checks: central finite differences against the
//! reverse pass, and brute-force sums against the recursive estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::behaviours::BehaviourNet;
use crate::choreographer::{discounted_return, gae, A2cConfig, ChoreographerNet, Rollout, RolloutStep};
use crate::error::Result;
use crate::nn::{
    squashed_gaussian, Activation, Dense, DenseSpec, Gradients, Graph, Lstm, LstmSpec, Matrix, ParamId,
    ParamStore, Var,
};
use crate::world::{Behaviour, WorldState, OBS_DIM};

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const ESTIMATOR_TOLERANCE: f64 = 1e-10;
const FD_STEP: f64 = 1e-6;
/// Denominator floor so near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;
const LOSS_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub draws: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(OracleCheck::passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, REL_FLOOR)
}

/// Relative error whose denominator never drops below `floor`; gradients
/// smaller than the finite-difference resolution are compared absolutely.
pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grads` with central differences of `loss` on the chosen
/// coordinates of `params`. Returns the largest relative error.
fn compare<F>(store: &mut ParamStore, grads: &Gradients, coords: &[(ParamId, usize)], loss: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for &(id, k) in coords {
        let original = store.value(id).data()[k];
        store.value_mut(id).data_mut()[k] = original + FD_STEP;
        let up = loss(store)?;
        store.value_mut(id).data_mut()[k] = original - FD_STEP;
        let down = loss(store)?;
        store.value_mut(id).data_mut()[k] = original;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
        // central differences at this step resolve about 1e-9 * |loss|
        let floor = REL_FLOOR.max(LOSS_FLOOR * up.abs().max(down.abs()));
        worst = worst.max(relative_error_with_floor(analytic, numeric, floor));
    }
    Ok(worst)
}

fn all_coords(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .filter(|id| !store.is_frozen(*id))
        .flat_map(|id| (0..store.value(id).len()).map(move |k| (id, k)))
        .collect()
}

fn sampled_coords<R: Rng + ?Sized>(store: &ParamStore, per_tensor: usize, rng: &mut R) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .filter(|id| !store.is_frozen(*id))
        .flat_map(|id| {
            let n = store.value(id).len();
            (0..per_tensor.min(n)).map(|_| (id, rng.gen_range(0..n))).collect::<Vec<_>>()
        })
        .collect()
}

fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Random linear read-out of a node, so every output element matters.
fn projection(g: &mut Graph<'_>, y: Var, weights: &Matrix) -> Result<Var> {
    let w = g.input(weights.clone());
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn evaluate(store: &ParamStore, build: &dyn Fn(&mut Graph<'_>) -> Result<Var>) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    Ok((g.value(loss).item(), g.backward(loss)?))
}

fn value_of(store: &ParamStore, build: &dyn Fn(&mut Graph<'_>) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    Ok(g.value(loss).item())
}

pub fn gradcheck_dense(draws: usize, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (i, o, b) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4));
        let act = if rng.gen() { Activation::Tanh } else { Activation::Identity };
        let mut store = ParamStore::new();
        let layer = Dense::register(&mut store, "d", DenseSpec::new(i, o, act)?, &mut rng)?;
        let x = random_matrix(&mut rng, b, i, 1.5);
        let proj = random_matrix(&mut rng, b, o, 1.0);
        let build = |g: &mut Graph<'_>| -> Result<Var> {
            let xv = g.input(x.clone());
            let y = layer.forward(g, xv)?;
            projection(g, y, &proj)
        };
        let (_, grads) = evaluate(&store, &build)?;
        let coords = all_coords(&store);
        worst = worst.max(compare(&mut store, &grads, &coords, |s| value_of(s, &build))?);
    }
    Ok(OracleCheck {
        name: "dense",
        draws,
        max_error: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

pub fn gradcheck_lstm(draws: usize, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (i, h, steps) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4));
        let mut store = ParamStore::new();
        let cell = Lstm::register(&mut store, "lstm", LstmSpec::new(i, h)?, &mut rng)?;
        let xs: Vec<Matrix> = (0..steps).map(|_| random_matrix(&mut rng, 1, i, 1.5)).collect();
        let h0 = random_matrix(&mut rng, 1, h, 0.5);
        let c0 = random_matrix(&mut rng, 1, h, 0.5);
        let ph = random_matrix(&mut rng, 1, h, 1.0);
        let pc = random_matrix(&mut rng, 1, h, 1.0);
        let build = |g: &mut Graph<'_>| -> Result<Var> {
            let mut hv = g.input(h0.clone());
            let mut cv = g.input(c0.clone());
            for x in &xs {
                let xv = g.input(x.clone());
                (hv, cv) = cell.forward(g, xv, hv, cv)?;
            }
            let a = projection(g, hv, &ph)?;
            let b = projection(g, cv, &pc)?;
            g.add(a, b)
        };
        let (_, grads) = evaluate(&store, &build)?;
        let coords = all_coords(&store);
        worst = worst.max(compare(&mut store, &grads, &coords, |s| value_of(s, &build))?);
    }
    Ok(OracleCheck {
        name: "lstm",
        draws,
        max_error: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

/// Behaviour-cloning loss through a dense layer and the squashed Gaussian head.
pub fn gradcheck_gaussian_head(draws: usize, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (i, k, b) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..4));
        let mut store = ParamStore::new();
        let layer = Dense::register(&mut store, "head", DenseSpec::new(i, 2 * k, Activation::Identity)?, &mut rng)?;
        let x = random_matrix(&mut rng, b, i, 1.0);
        let noise: Vec<f64> = (0..b * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target = random_matrix(&mut rng, b, k, 1.0);
        let build = |g: &mut Graph<'_>| -> Result<Var> {
            let xv = g.input(x.clone());
            let raw = layer.forward(g, xv)?;
            let s = squashed_gaussian(g, raw, &noise)?;
            let t = g.input(target.clone());
            crate::behaviours::bc_loss_node(g, s.action, t)
        };
        let (_, grads) = evaluate(&store, &build)?;
        let coords = all_coords(&store);
        worst = worst.max(compare(&mut store, &grads, &coords, |s| value_of(s, &build))?);
    }
    Ok(OracleCheck {
        name: "gaussian_head",
        draws,
        max_error: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

/// Total actor-critic loss of the full choreographer on random 3-step
/// rollouts, checked on a random subset of coordinates of every trainable tensor.
pub fn gradcheck_actor_critic(draws: usize, seed: u64) -> Result<OracleCheck> {
    const COORDS_PER_TENSOR: usize = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let cfg = A2cConfig::default();
    for _ in 0..draws {
        let behaviours = BehaviourNet::new(rng.gen())?;
        let net = ChoreographerNet::new(&behaviours, rng.gen())?;
        let rollout = random_rollout(&net, 3, &mut rng)?;
        let grads = {
            let mut g = Graph::new(&net.store);
            let loss = net.a2c_loss(&mut g, &rollout, &cfg)?;
            g.backward(loss.total)?
        };
        let coords = sampled_coords(&net.store, COORDS_PER_TENSOR, &mut rng);
        let mut store = net.store.clone();
        // a2c_loss reads trainable weights through the graph's store; the
        // frozen feature weights it reads from `net` are never perturbed
        let err = compare(&mut store, &grads, &coords, |s| {
            let mut g = Graph::new(s);
            let loss = net.a2c_loss(&mut g, &rollout, &cfg)?;
            Ok(g.value(loss.total).item())
        })?;
        worst = worst.max(err);
    }
    Ok(OracleCheck {
        name: "actor_critic",
        draws,
        max_error: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

fn random_rollout<R: Rng + ?Sized>(net: &ChoreographerNet, len: usize, rng: &mut R) -> Result<Rollout> {
    let mut state = net.initial_state();
    let mut steps = Vec::with_capacity(len);
    let world = WorldState::reset(rng.gen());
    let base = world.observe(&world);
    for t in 0..len {
        let mut obs = base.as_slice().to_vec();
        for o in obs.iter_mut().take(OBS_DIM) {
            *o += rng.gen_range(-0.05..0.05);
        }
        let out = net.step(&obs, &state)?;
        let b = Behaviour::from_index(rng.gen_range(0..3)).expect("index below 3");
        steps.push(RolloutStep {
            observation: obs,
            state: state.clone(),
            behaviour: b,
            log_prob: out.log_probs[b.index()],
            value: out.value,
            reward: rng.gen_range(-1.0..2.0),
            terminal: t + 1 == len && rng.gen(),
        });
        state = out.state;
    }
    Ok(Rollout {
        steps,
        bootstrap_value: rng.gen_range(-1.0..1.0),
    })
}

/// `sum_l (gamma lambda)^l delta_{t+l}`, stopping after a terminal step.
#[allow(clippy::needless_range_loop)]
pub fn brute_force_gae(rewards: &[f64], values: &[f64], terminals: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta = |i: usize| {
        let live = if terminals[i] { 0.0 } else { 1.0 };
        rewards[i] + gamma * values[i + 1] * live - values[i]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for i in t..n {
                total += (gamma * lambda).powi((i - t) as i32) * delta(i);
                if terminals[i] {
                    break;
                }
            }
            total
        })
        .collect()
}

pub fn brute_force_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| (t..rewards.len()).map(|i| gamma.powi((i - t) as i32) * rewards[i]).sum())
        .collect()
}

pub fn check_gae(draws: usize, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let n = rng.gen_range(1..=150);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..10.0)).collect();
        let values: Vec<f64> = (0..=n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let terminals: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.05)).collect();
        let (gamma, lambda) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let fast = gae(&rewards, &values, &terminals, gamma, lambda)?;
        let slow = brute_force_gae(&rewards, &values, &terminals, gamma, lambda);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(OracleCheck {
        name: "gae",
        draws,
        max_error: worst,
        tolerance: ESTIMATOR_TOLERANCE,
    })
}

pub fn check_returns(draws: usize, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let n = rng.gen_range(1..=150);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..10.0)).collect();
        let gamma = rng.gen_range(0.0..=1.0);
        for (a, b) in discounted_return(&rewards, gamma)
            .iter()
            .zip(brute_force_returns(&rewards, gamma))
        {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(OracleCheck {
        name: "discounted_return",
        draws,
        max_error: worst,
        tolerance: ESTIMATOR_TOLERANCE,
    })
}

/// Every check with `draws` random draws each.
pub fn oracle_suite(draws: usize, seed: u64) -> Result<OracleReport> {
    Ok(OracleReport {
        checks: vec![
            gradcheck_dense(draws, seed)?,
            gradcheck_lstm(draws, seed.wrapping_add(1))?,
            gradcheck_gaussian_head(draws, seed.wrapping_add(2))?,
            gradcheck_actor_critic(draws, seed.wrapping_add(3))?,
            check_gae(draws, seed.wrapping_add(4))?,
            check_returns(draws, seed.wrapping_add(5))?,
        ],
    })
}
