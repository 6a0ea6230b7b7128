//! Mini-batch training loop: seeded shuffling, Adam updates, per-epoch
//! validation and best-epoch selection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adam::{AdamConfig, AdamState};
use crate::context::ContextIndex;
use crate::eval::{evaluate_split, EvalMode, Metrics};
use crate::kernels::Reduction;
use crate::kg::{KnowledgeGraph, Split, TripleId};
use crate::model::{loss_and_grad, EmbeddingState, LossConfig, ModelError};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub num_layers: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub exclude_self: bool,
    pub neighbor_cap: Option<usize>,
    /// Single-threaded fixed-order execution.
    pub strict_determinism: bool,
    /// Row-sparse Adam; dense Adam when false.
    pub lazy_adam: bool,
    /// Ranking mode used for validation.
    pub eval_mode: EvalMode,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            learning_rate: 5e-3,
            l2_lambda: 1e-7,
            batch_size: 512,
            max_epochs: 20,
            num_layers: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            exclude_self: false,
            neighbor_cap: None,
            strict_determinism: false,
            lazy_adam: true,
            eval_mode: EvalMode::Raw,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(String::from(msg)));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if self.neighbor_cap == Some(0) {
            return bad("neighbor_cap must be at least 1");
        }
        Ok(())
    }

    pub fn reduction(&self) -> Reduction {
        if self.strict_determinism {
            Reduction::Strict
        } else {
            Reduction::Parallel
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            lazy: self.lazy_adam,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("train split is empty")]
    EmptyTrain,
    #[error("epoch {epoch}: {source}")]
    Numerical { epoch: usize, source: ModelError },
    #[error("epoch {epoch}, batch {batch}: non-finite parameter after Adam update")]
    Divergence { epoch: usize, batch: usize },
    #[error("epoch {epoch}: {message}")]
    Observer { epoch: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Per-triple mean of the batch losses (including the L2 term).
    pub mean_loss: f64,
    pub validation: Option<Metrics>,
    /// This epoch is the new best and its state is the selected one.
    pub improved: bool,
}

/// Hook invoked after every epoch, e.g. to log or checkpoint.
pub trait TrainObserver<T> {
    fn on_epoch(&mut self, record: &EpochRecord, state: &EmbeddingState<T>, adam: &AdamState<T>) -> Result<(), String>;
}

impl<T> TrainObserver<T> for () {
    fn on_epoch(&mut self, _: &EpochRecord, _: &EmbeddingState<T>, _: &AdamState<T>) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// State with the best validation MRR (last epoch without a validation split).
    pub best: EmbeddingState<T>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub last: EmbeddingState<T>,
    pub adam: AdamState<T>,
    pub log: Vec<EpochRecord>,
}

pub struct Trainer<'a, T> {
    kg: &'a KnowledgeGraph,
    ctx: &'a ContextIndex,
    config: TrainConfig,
    state: EmbeddingState<T>,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    order: Vec<TripleId>,
    epoch: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Fresh embeddings initialised from `config.seed`.
    pub fn new(kg: &'a KnowledgeGraph, ctx: &'a ContextIndex, config: TrainConfig) -> Result<Self, TrainError> {
        let state = EmbeddingState::init(kg.num_entities(), kg.num_relations(), config.dim, config.seed);
        Self::with_state(kg, ctx, config, state)
    }

    pub fn with_state(kg: &'a KnowledgeGraph, ctx: &'a ContextIndex, config: TrainConfig, state: EmbeddingState<T>) -> Result<Self, TrainError> {
        config.validate()?;
        if state.dim() != config.dim || state.entities.rows() != kg.num_entities() || state.relations.rows() != kg.num_relations() {
            return Err(TrainError::Config(format!(
                "embedding shape {}x{}/{} does not match graph {}x{}/{}",
                state.entities.rows(),
                state.relations.rows(),
                state.dim(),
                kg.num_entities(),
                kg.num_relations(),
                config.dim
            )));
        }
        let order = kg.split_ids(Split::Train);
        if order.is_empty() {
            return Err(TrainError::EmptyTrain);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            kg,
            ctx,
            adam: AdamState::new(&state),
            state,
            rng,
            order,
            epoch: 0,
            config,
        })
    }

    pub fn state(&self) -> &EmbeddingState<T> {
        &self.state
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Draws the next epoch's permutation of the train split.
    pub fn shuffle_epoch(&mut self) -> &[TripleId] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }

    /// Shuffles the train split and runs one pass of mini-batch updates.
    /// Returns the per-triple mean loss. The final short batch is kept.
    pub fn run_epoch(&mut self) -> Result<f64, TrainError> {
        let epoch = self.epoch + 1;
        self.shuffle_epoch();
        let adam_cfg = self.config.adam();
        let mut loss_cfg = LossConfig {
            layers: self.config.num_layers,
            l2_lambda: self.config.l2_lambda,
            exclude_self: self.config.exclude_self,
            neighbor_cap: self.config.neighbor_cap,
            sample_seed: 0,
            reduction: self.config.reduction(),
        };
        let mut total = 0.0f64;
        for (b, batch) in self.order.chunks(self.config.batch_size).enumerate() {
            loss_cfg.sample_seed = sample_seed(self.config.seed, self.adam.step);
            let (loss, grads) = loss_and_grad(&self.state, self.kg.triples(), self.ctx, batch, b, &loss_cfg)
                .map_err(|source| TrainError::Numerical { epoch, source })?;
            total += loss.to_f64() * batch.len() as f64;
            self.adam
                .step(&mut self.state, &grads, &adam_cfg)
                .map_err(|_| TrainError::Divergence { epoch, batch: b })?;
            debug_assert!(self.state.is_finite() && self.adam.is_finite());
        }
        self.epoch = epoch;
        Ok(total / self.order.len() as f64)
    }

    /// Validation metrics on the valid split with the current state, if it has triples.
    pub fn validate(&self) -> Option<Metrics> {
        evaluate_split(
            &self.state,
            self.kg,
            self.ctx,
            Split::Valid,
            self.config.num_layers,
            self.config.eval_mode,
            self.config.reduction(),
        )
        .map(|r| r.metrics)
    }

    /// Runs up to `max_epochs` epochs, keeping the state with the best validation MRR.
    pub fn train(mut self, observer: &mut impl TrainObserver<T>) -> Result<TrainOutcome<T>, TrainError> {
        let mut best = self.state.clone();
        let mut best_epoch = 0;
        let mut best_mrr = f64::NEG_INFINITY;
        let mut log = Vec::with_capacity(self.config.max_epochs);
        let mut stale = 0;
        for _ in 0..self.config.max_epochs {
            let mean_loss = self.run_epoch()?;
            let validation = self.validate();
            let improved = match validation {
                Some(m) => m.mrr > best_mrr,
                None => true,
            };
            if improved {
                best_mrr = validation.map_or(best_mrr, |m| m.mrr);
                best = self.state.clone();
                best_epoch = self.epoch;
                stale = 0;
            } else {
                stale += 1;
            }
            let record = EpochRecord {
                epoch: self.epoch,
                mean_loss,
                validation,
                improved,
            };
            observer
                .on_epoch(&record, &self.state, &self.adam)
                .map_err(|message| TrainError::Observer { epoch: self.epoch, message })?;
            log.push(record);
            if self.config.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
        Ok(TrainOutcome {
            best,
            best_epoch,
            last: self.state,
            adam: self.adam,
            log,
        })
    }
}

fn sample_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
