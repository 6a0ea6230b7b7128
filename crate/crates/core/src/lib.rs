//! Context-aggregated embeddings for knowledge-graph relation prediction.
//!
//! Every entity and relation gets a trainable embedding. A stack of
//! aggregation layers then folds each element's context into its embedding:
//!
//! - the context of an entity is the set of `(relation, neighbor)` pairs from
//!   every triple it takes part in, in either direction;
//! - the context of a relation is the set of `(head, tail)` endpoint pairs of
//!   the triples it labels.
//!
//! Each context pair contributes an element-wise product of its two
//! embeddings, weighted by a per-segment softmax over DistMult scores of the
//! implied triples. The final embeddings score all candidate relations for a
//! `(head, tail)` query and are trained with a softmax cross-entropy loss and
//! Adam, using gradients that are derived by hand for every layer.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, the CLI and anything touching the filesystem live
//! in the companion `aggre` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod adam;
pub mod context;
pub mod eval;
pub mod kernels;
pub mod kg;
pub mod model;
pub mod real;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use context::{ContextIndex, ContextOptions, Direction, EntityContextPair, RelationContextPair, SplitFilter};
pub use eval::{compute_metrics, evaluate_split, hits_at, rank_of_true, rank_queries, EvalMode, KnownRelations, Metrics, QueryRank, RankingReport};
pub use kernels::Reduction;
pub use kg::{KgBuilder, KgError, LineOutcome, KnowledgeGraph, Split, Triple, TripleId, Vocab};
pub use model::{aggregate, loss_and_grad, relation_scores, AggregateOptions, EmbeddingState, Gradients, LayerTrace, LossConfig, ModelError};
pub use real::{Matrix, Real};
pub use trainer::{EpochRecord, TrainConfig, TrainError, TrainObserver, TrainOutcome, Trainer};
