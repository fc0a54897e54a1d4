use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experts::aperture_for;
use crate::nn::{squashed_gaussian, Activation, Dense, DenseSpec, Graph, Matrix, ParamStore, Var};
use crate::world::{Action, Behaviour, Observation, WorldState, MAX_DPOS, MAX_DYAW, OBS_DIM};

pub const FEATURES_PREFIX: &str = "features";
pub const FEATURE_DIM: usize = 128;

/// Output head of a [`BehaviourNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Behaviour(Behaviour),
    /// Single xyz head of the undecomposed baseline.
    EndToEnd,
}

impl HeadKind {
    /// Number of action dimensions; the head itself emits twice as many values.
    pub fn action_dim(self) -> usize {
        match self {
            HeadKind::Behaviour(Behaviour::Grasp) => 4,
            _ => 3,
        }
    }

    pub fn param_prefix(self) -> &'static str {
        match self {
            HeadKind::Behaviour(Behaviour::Approach) => "head.approach",
            HeadKind::Behaviour(Behaviour::Grasp) => "head.grasp",
            HeadKind::Behaviour(Behaviour::Retract) => "head.retract",
            HeadKind::EndToEnd => "head.end_to_end",
        }
    }

    pub fn behaviour(self) -> Option<Behaviour> {
        match self {
            HeadKind::Behaviour(b) => Some(b),
            HeadKind::EndToEnd => None,
        }
    }

    /// Expert action scaled by the action limits into `[-1, 1]^k`.
    pub fn normalize(self, action: &Action) -> Vec<f64> {
        let mut t: Vec<f64> = action.dpos.iter().map(|d| d / MAX_DPOS).collect();
        if self.action_dim() == 4 {
            t.push(action.dyaw / MAX_DYAW);
        }
        t.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
    }

    /// World command for a normalised head output; the aperture follows the
    /// rule of the active behaviour.
    pub fn denormalize(self, output: &[f64], state: &WorldState) -> Action {
        let dyaw = if self.action_dim() == 4 {
            output[3] * MAX_DYAW
        } else {
            0.0
        };
        Action::new(
            [output[0] * MAX_DPOS, output[1] * MAX_DPOS, output[2] * MAX_DPOS],
            dyaw,
            aperture_for(self.behaviour(), state),
        )
    }
}

impl HeadKind {
    /// `action` as this head could have issued it: components outside the
    /// head's action space are dropped and the aperture follows the head's rule.
    pub fn restrict(self, action: &Action, state: &WorldState) -> Action {
        self.denormalize(&self.normalize(action), state)
    }
}

impl From<Behaviour> for HeadKind {
    fn from(b: Behaviour) -> Self {
        HeadKind::Behaviour(b)
    }
}

/// Shared 28-128-128 tanh feature extractor with one Gaussian head per behaviour.
#[derive(Debug, Clone)]
pub struct BehaviourNet {
    pub store: ParamStore,
    features: [Dense; 2],
    heads: Vec<(HeadKind, Dense)>,
}

impl BehaviourNet {
    /// Approach (6 outputs), grasp (8) and retract (6) heads.
    pub fn new(init_seed: u64) -> Result<Self> {
        Self::with_heads(
            init_seed,
            &Behaviour::ALL.map(HeadKind::Behaviour),
        )
    }

    /// The end-to-end baseline: same extractor, one xyz head.
    pub fn end_to_end(init_seed: u64) -> Result<Self> {
        Self::with_heads(init_seed, &[HeadKind::EndToEnd])
    }

    fn with_heads(init_seed: u64, kinds: &[HeadKind]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut store = ParamStore::new();
        let l1 = Dense::register(
            &mut store,
            "features.l1",
            DenseSpec::new(OBS_DIM, FEATURE_DIM, Activation::Tanh)?,
            &mut rng,
        )?;
        let l2 = Dense::register(
            &mut store,
            "features.l2",
            DenseSpec::new(FEATURE_DIM, FEATURE_DIM, Activation::Tanh)?,
            &mut rng,
        )?;
        let mut heads = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let spec = DenseSpec::new(FEATURE_DIM, 2 * kind.action_dim(), Activation::Identity)?;
            heads.push((kind, Dense::register(&mut store, kind.param_prefix(), spec, &mut rng)?));
        }
        Ok(Self {
            store,
            features: [l1, l2],
            heads,
        })
    }

    pub fn head_kinds(&self) -> impl Iterator<Item = HeadKind> + '_ {
        self.heads.iter().map(|(k, _)| *k)
    }

    pub fn head(&self, kind: HeadKind) -> Result<&Dense> {
        self.heads
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::NoSuchParameter(kind.param_prefix().to_string()))
    }

    pub fn feature_layers(&self) -> &[Dense; 2] {
        &self.features
    }

    pub fn features(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.features[0].forward(g, x)?;
        self.features[1].forward(g, h)
    }

    /// Raw head output `[mu | log_sigma]` for a batch of observations.
    pub fn head_raw(&self, g: &mut Graph<'_>, kind: HeadKind, x: Var) -> Result<Var> {
        let head = self.head(kind)?;
        let f = self.features(g, x)?;
        head.forward(g, f)
    }

    /// Normalised action for one observation: the reparameterised sample
    /// when `noise` is given, otherwise the mean `tanh(mu)`.
    pub fn act(&self, kind: HeadKind, obs: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
        let zeros;
        let noise = match noise {
            Some(n) => n,
            None => {
                zeros = vec![0.0; kind.action_dim()];
                &zeros
            }
        };
        let mut g = Graph::new(&self.store);
        let x = observation_input(&mut g, obs)?;
        let raw = self.head_raw(&mut g, kind, x)?;
        let s = squashed_gaussian(&mut g, raw, noise)?;
        Ok(g.value(s.action).data().to_vec())
    }

    /// One online behaviour-cloning step. Returns the loss and the sampled
    /// action (computed before the update).
    pub fn bc_step(
        &mut self,
        kind: HeadKind,
        obs: &[f64],
        target: &[f64],
        noise: &[f64],
        lr: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let (loss, action, grads) = {
            let mut g = Graph::new(&self.store);
            let x = observation_input(&mut g, obs)?;
            let raw = self.head_raw(&mut g, kind, x)?;
            let s = squashed_gaussian(&mut g, raw, noise)?;
            let t = g.input_row(target);
            let loss = bc_loss_node(&mut g, s.action, t)?;
            let grads = g.backward(loss)?;
            (g.value(loss).item(), g.value(s.action).data().to_vec(), grads)
        };
        self.store.apply_gradients(&grads, lr)?;
        Ok((loss, action))
    }

    /// Full-batch step: mean BC loss over all rows. `noise` is row-major `rows x k`.
    pub fn bc_batch_step(&mut self, kind: HeadKind, batch: &BcBatch, noise: &[f64], lr: f64) -> Result<f64> {
        let (loss, grads) = {
            let mut g = Graph::new(&self.store);
            let loss = self.bc_batch_loss(&mut g, kind, batch, noise)?;
            (g.value(loss).item(), g.backward(loss)?)
        };
        self.store.apply_gradients(&grads, lr)?;
        Ok(loss)
    }

    pub fn bc_batch_loss(
        &self,
        g: &mut Graph<'_>,
        kind: HeadKind,
        batch: &BcBatch,
        noise: &[f64],
    ) -> Result<Var> {
        let x = observation_input(g, batch.observations().data())?;
        let raw = self.head_raw(g, kind, x)?;
        let s = squashed_gaussian(g, raw, noise)?;
        let t = g.input(batch.targets());
        let total = bc_loss_node(g, s.action, t)?;
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }

    pub fn freeze_features(&mut self) -> Result<()> {
        self.store.freeze(FEATURES_PREFIX)
    }

    /// Checkpoint bytes of the feature extractor alone.
    pub fn feature_checkpoint(&self) -> Vec<u8> {
        self.store.checkpoint_bytes(FEATURES_PREFIX)
    }

    /// SHA-256 of [`Self::feature_checkpoint`], hex encoded.
    pub fn feature_hash(&self) -> String {
        hex_digest(&self.feature_checkpoint())
    }
}

/// Graph input for a row-major batch of raw observations, rescaled by
/// [`Observation::scaled`].
pub fn observation_input(g: &mut Graph<'_>, observations: &[f64]) -> Result<Var> {
    if observations.is_empty() || !observations.len().is_multiple_of(OBS_DIM) {
        return Err(Error::DimensionMismatch {
            context: "observation_input",
            expected: OBS_DIM,
            got: observations.len(),
        });
    }
    let mut scaled = Vec::with_capacity(observations.len());
    for chunk in observations.chunks_exact(OBS_DIM) {
        let mut o = [0.0; OBS_DIM];
        o.copy_from_slice(chunk);
        scaled.extend_from_slice(&Observation(o).scaled());
    }
    Ok(g.input(Matrix::from_vec(observations.len() / OBS_DIM, OBS_DIM, scaled)))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Squared Euclidean distance between prediction and demonstration.
pub fn bc_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "bc_loss",
            expected: target.len(),
            got: predicted.len(),
        });
    }
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// Graph form of [`bc_loss`], summed over every row.
pub fn bc_loss_node(g: &mut Graph<'_>, predicted: Var, target: Var) -> Result<Var> {
    let diff = g.sub(predicted, target)?;
    let sq = g.square(diff);
    Ok(g.sum(sq))
}

/// Observation / normalised expert action pairs.
#[derive(Debug, Clone, Default)]
pub struct BcBatch {
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl BcBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics if `target` lies outside `[-1, 1]^k`.
    pub fn push(&mut self, observation: Vec<f64>, target: Vec<f64>) {
        assert!(target.iter().all(|t| (-1.0..=1.0).contains(t)), "target outside [-1, 1]");
        self.pairs.push((observation, target));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.pairs
    }

    pub fn observations(&self) -> Matrix {
        let cols = self.pairs.first().map_or(0, |p| p.0.len());
        Matrix::from_vec(
            self.pairs.len(),
            cols,
            self.pairs.iter().flat_map(|p| p.0.iter().copied()).collect(),
        )
    }

    pub fn targets(&self) -> Matrix {
        let cols = self.pairs.first().map_or(0, |p| p.1.len());
        Matrix::from_vec(
            self.pairs.len(),
            cols,
            self.pairs.iter().flat_map(|p| p.1.iter().copied()).collect(),
        )
    }
}
