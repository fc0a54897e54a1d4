use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::returns::{gae, normalize_advantages};
use crate::behaviours::{observation_input, BehaviourNet, FEATURES_PREFIX, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, DenseSpec, Graph, Lstm, LstmSpec, LstmState, Matrix, ParamStore, Var};
use crate::world::{Behaviour, OBS_DIM};

pub const LSTM_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cConfig {
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
        }
    }
}

/// Frozen feature extractor, LSTM memory, policy and value heads.
#[derive(Debug, Clone)]
pub struct ChoreographerNet {
    pub store: ParamStore,
    features: [Dense; 2],
    lstm: Lstm,
    policy: Dense,
    value: Dense,
}

/// Result of one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub probs: [f64; 3],
    pub log_probs: [f64; 3],
    pub value: f64,
    pub state: LstmState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub behaviour: Behaviour,
    pub log_prob: f64,
    pub value: f64,
    pub state: LstmState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub observation: Vec<f64>,
    /// LSTM state before the step.
    pub state: LstmState,
    pub behaviour: Behaviour,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    /// Value of the state after the last step; zero when it was terminal.
    pub bootstrap_value: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Raw GAE advantages from the values recorded during the rollout.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<Vec<f64>> {
        let mut values: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        values.push(self.bootstrap_value);
        let terminals: Vec<bool> = self.steps.iter().map(|s| s.terminal).collect();
        gae(&self.rewards(), &values, &terminals, gamma, lambda)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Graph nodes of the actor-critic objective.
#[derive(Debug, Clone, Copy)]
pub struct A2cLoss {
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub total: Var,
}

impl ChoreographerNet {
    /// Copies and freezes the feature extractor of `behaviours`; the LSTM and
    /// both heads are freshly initialised from `init_seed`.
    pub fn new(behaviours: &BehaviourNet, init_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut store = ParamStore::new();
        store.copy_from(&behaviours.store, FEATURES_PREFIX)?;
        let [l1, l2] = behaviours.feature_layers();
        let features = [
            Dense {
                spec: l1.spec,
                weight: lookup(&store, behaviours, l1.weight)?,
                bias: lookup(&store, behaviours, l1.bias)?,
            },
            Dense {
                spec: l2.spec,
                weight: lookup(&store, behaviours, l2.weight)?,
                bias: lookup(&store, behaviours, l2.bias)?,
            },
        ];
        store.freeze(FEATURES_PREFIX)?;
        let lstm = Lstm::register(&mut store, "lstm", LstmSpec::new(FEATURE_DIM, LSTM_HIDDEN)?, &mut rng)?;
        let policy = Dense::register(
            &mut store,
            "policy",
            DenseSpec::new(LSTM_HIDDEN, 3, Activation::Identity)?,
            &mut rng,
        )?;
        let value = Dense::register(
            &mut store,
            "value",
            DenseSpec::new(LSTM_HIDDEN, 1, Activation::Identity)?,
            &mut rng,
        )?;
        Ok(Self {
            store,
            features,
            lstm,
            policy,
            value,
        })
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(LSTM_HIDDEN)
    }

    /// Frozen latent features for one or more stacked observations.
    pub fn features(&self, observations: &[f64]) -> Result<Matrix> {
        let mut g = Graph::new(&self.store);
        let x = observation_input(&mut g, observations)?;
        let h = self.features[0].forward(&mut g, x)?;
        let f = self.features[1].forward(&mut g, h)?;
        Ok(g.value(f).clone())
    }

    fn recurrent(&self, g: &mut Graph<'_>, feat: Var, h: Var, c: Var) -> Result<(Var, Var, Var, Var)> {
        let (h2, c2) = self.lstm.forward(g, feat, h, c)?;
        let logits = self.policy.forward(g, h2)?;
        let logp = g.log_softmax(logits);
        let value = self.value.forward(g, h2)?;
        Ok((logp, value, h2, c2))
    }

    pub fn step(&self, observation: &[f64], state: &LstmState) -> Result<StepOutput> {
        if observation.len() != OBS_DIM {
            return Err(Error::DimensionMismatch {
                context: "choreographer observation",
                expected: OBS_DIM,
                got: observation.len(),
            });
        }
        let feat = self.features(observation)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(feat);
        let h = g.input_row(&state.h);
        let c = g.input_row(&state.c);
        let (logp, value, h2, c2) = self.recurrent(&mut g, x, h, c)?;
        let lp = g.value(logp).data();
        let log_probs = [lp[0], lp[1], lp[2]];
        Ok(StepOutput {
            probs: log_probs.map(f64::exp),
            log_probs,
            value: g.value(value).item(),
            state: LstmState {
                h: g.value(h2).data().to_vec(),
                c: g.value(c2).data().to_vec(),
            },
        })
    }

    /// Samples a behaviour from the policy.
    pub fn select_behaviour<R: Rng + ?Sized>(
        &self,
        observation: &[f64],
        state: &LstmState,
        rng: &mut R,
    ) -> Result<Selection> {
        let out = self.step(observation, state)?;
        let i = sample_categorical(&out.probs, rng.gen::<f64>());
        Ok(Selection {
            behaviour: Behaviour::from_index(i).expect("three logits"),
            log_prob: out.log_probs[i],
            value: out.value,
            state: out.state,
        })
    }

    /// Actor-critic objective over a whole rollout, unrolled through the LSTM
    /// from the state stored with its first step.
    pub fn a2c_loss(&self, g: &mut Graph<'_>, rollout: &Rollout, cfg: &A2cConfig) -> Result<A2cLoss> {
        let first = rollout.steps.first().ok_or(Error::EmptyRollout)?;
        let raw = rollout.advantages(cfg.gamma, cfg.lambda)?;
        let norm = normalize_advantages(&raw);
        let obs: Vec<f64> = rollout.steps.iter().flat_map(|s| s.observation.iter().copied()).collect();
        let feats = self.features(&obs)?;

        let mut h = g.input_row(&first.state.h);
        let mut c = g.input_row(&first.state.c);
        let mut weights_pi = Vec::with_capacity(rollout.len() * 3);
        let mut logps = Vec::with_capacity(rollout.len());
        let mut values = Vec::with_capacity(rollout.len());
        let mut targets = Vec::with_capacity(rollout.len());
        for (t, step) in rollout.steps.iter().enumerate() {
            let x = g.input_row(feats.row(t));
            let (logp, value, h2, c2) = self.recurrent(g, x, h, c)?;
            h = h2;
            c = c2;
            let mut w = [0.0; 3];
            w[step.behaviour.index()] = -norm[t];
            weights_pi.extend_from_slice(&w);
            logps.push(logp);
            values.push(value);
            targets.push(raw[t] + step.value);
        }
        let n = rollout.len();
        let logp_all = stack_rows(g, &logps)?;
        let value_all = stack_rows(g, &values)?;

        let weights = g.input(Matrix::from_vec(n, 3, weights_pi));
        let weighted = g.mul(logp_all, weights)?;
        let policy = g.sum(weighted);

        let target = g.input(Matrix::from_vec(n, 1, targets));
        let diff = g.sub(value_all, target)?;
        let sq = g.square(diff);
        let value = g.sum(sq);

        let probs = g.exp(logp_all);
        let plogp = g.mul(probs, logp_all)?;
        let neg_entropy = g.sum(plogp);
        let entropy = g.scale(neg_entropy, -1.0);

        let v = g.scale(value, cfg.value_coef);
        let e = g.scale(neg_entropy, cfg.entropy_coef);
        let pv = g.add(policy, v)?;
        let total = g.add(pv, e)?;
        Ok(A2cLoss {
            policy,
            value,
            entropy,
            total,
        })
    }

    /// One optimiser step on the actor-critic objective.
    pub fn a2c_update(&mut self, rollout: &Rollout, cfg: &A2cConfig) -> Result<LossComponents> {
        let (components, grads) = {
            let mut g = Graph::new(&self.store);
            let loss = self.a2c_loss(&mut g, rollout, cfg)?;
            let components = LossComponents {
                policy: g.value(loss.policy).item(),
                value: g.value(loss.value).item(),
                entropy: g.value(loss.entropy).item(),
                total: g.value(loss.total).item(),
            };
            (components, g.backward(loss.total)?)
        };
        self.store.apply_gradients(&grads, cfg.lr)?;
        Ok(components)
    }
}

fn lookup(store: &ParamStore, source: &BehaviourNet, id: crate::nn::ParamId) -> Result<crate::nn::ParamId> {
    let name = source.store.name(id);
    store.id(name).ok_or_else(|| Error::NoSuchParameter(name.to_string()))
}

/// Stacks 1-row nodes vertically by transposed concatenation.
fn stack_rows(g: &mut Graph<'_>, rows: &[Var]) -> Result<Var> {
    g.concat_rows(rows)
}

/// Index drawn from `probs` with a uniform variate `u` in `[0, 1)`.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
