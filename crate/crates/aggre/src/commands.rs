//! The four subcommands as library functions.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use aggre_core::{
    aggregate, rank_queries, AdamState, AggregateOptions, ContextIndex, ContextOptions, EmbeddingState, EpochRecord, EvalMode,
    KnownRelations, KnowledgeGraph, Split, TrainError, TrainObserver, Trainer, Triple,
};
use log::info;

use crate::bundle::Bundle;
use crate::checkpoint::Checkpoint;
use crate::config::{ContextPolicy, RunConfig};
use crate::dataset::{self, SplitFiles};
use crate::error::{AppError, Result};
use crate::report::{aggregates, EvalReport, LogLine, ModeFlags, QueryLine};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Parses the split files and writes a bundle with contexts built under `context`.
pub fn preprocess(files: &SplitFiles, out: &Path, context: ContextPolicy) -> Result<Bundle> {
    let bundle = Bundle::build(dataset::load(files)?, context.splits());
    bundle.write(out)?;
    Ok(bundle)
}

pub fn summary(kg: &KnowledgeGraph) -> String {
    format!(
        "entities: {}\nrelations: {}\ntrain: {}\nvalid: {}\ntest: {}\nduplicates skipped: {}\ncross-split dropped: {}\n",
        kg.num_entities(),
        kg.num_relations(),
        kg.count(Split::Train),
        kg.count(Split::Valid),
        kg.count(Split::Test),
        kg.duplicates(),
        kg.cross_split_dropped()
    )
}

/// The graph named by `cfg` with contexts for its context policy.
pub fn load_graph(cfg: &RunConfig) -> Result<(KnowledgeGraph, ContextIndex)> {
    let splits = cfg.context.splits();
    if let Some(path) = &cfg.bundle {
        let b = Bundle::read(path)?;
        if b.context_splits == splits {
            return Ok((b.graph, b.context));
        }
        let ctx = ContextIndex::build(&b.graph, ContextOptions { splits });
        return Ok((b.graph, ctx));
    }
    let dir = cfg
        .data_dir
        .as_ref()
        .ok_or_else(|| AppError::Config("either data_dir or bundle must be set".into()))?;
    let kg = dataset::load(&SplitFiles::in_dir(dir))?;
    let ctx = ContextIndex::build(&kg, ContextOptions { splits });
    Ok((kg, ctx))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| AppError::io(path, e))
}

pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_checkpoint: PathBuf,
}

struct RunObserver<'a> {
    cfg: &'a RunConfig,
    kg: &'a KnowledgeGraph,
    log: BufWriter<File>,
    log_path: PathBuf,
    start: Instant,
    failure: Option<AppError>,
}

impl RunObserver<'_> {
    fn record(&mut self, record: &EpochRecord, state: &EmbeddingState<f32>, adam: &AdamState<f32>) -> Result<()> {
        let line = LogLine::new(record, self.start.elapsed().as_secs_f64());
        let json = serde_json::to_string(&line).expect("log line serializes");
        writeln!(self.log, "{json}")
            .and_then(|_| self.log.flush())
            .map_err(|e| AppError::io(&self.log_path, e))?;
        info!(
            "epoch {} loss {:.6}{}",
            record.epoch,
            record.mean_loss,
            record.validation.map(|m| format!(" val mrr {:.4} mr {:.4} hit3 {:.4}", m.mrr, m.mr, m.hit3)).unwrap_or_default()
        );
        if record.improved {
            let ckpt = checkpoint(self.cfg, record.epoch, state, Some(adam));
            ckpt.write(&self.cfg.out.join(BEST_CHECKPOINT), self.kg.entities(), self.kg.relations())?;
        }
        Ok(())
    }
}

impl TrainObserver<f32> for RunObserver<'_> {
    fn on_epoch(&mut self, record: &EpochRecord, state: &EmbeddingState<f32>, adam: &AdamState<f32>) -> Result<(), String> {
        self.record(record, state, adam).map_err(|e| {
            let msg = e.to_string();
            self.failure = Some(e);
            msg
        })
    }
}

fn checkpoint(cfg: &RunConfig, epoch: usize, state: &EmbeddingState<f32>, adam: Option<&AdamState<f32>>) -> Checkpoint {
    Checkpoint {
        layers: cfg.train.num_layers as u32,
        seed: cfg.train.seed,
        epoch: epoch as u32,
        state: state.clone(),
        adam: adam.cloned(),
    }
}

/// Trains in single precision, writing the resolved config, the JSONL log and
/// `best.ckpt` / `last.ckpt` into `cfg.out`.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let (kg, ctx) = load_graph(cfg)?;
    create_dir(&cfg.out)?;
    let config_path = cfg.out.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_text()).map_err(|e| AppError::io(&config_path, e))?;
    let log_path = cfg.out.join(LOG_FILE);
    let log = File::create(&log_path).map_err(|e| AppError::io(&log_path, e))?;
    info!("{}", summary(&kg).trim_end().replace('\n', ", "));

    let trainer = Trainer::<f32>::new(&kg, &ctx, cfg.train.clone())?;
    let mut observer = RunObserver {
        cfg,
        kg: &kg,
        log: BufWriter::new(log),
        log_path,
        start: Instant::now(),
        failure: None,
    };
    let outcome = match trainer.train(&mut observer) {
        Ok(o) => o,
        Err(TrainError::Observer { .. }) if observer.failure.is_some() => return Err(observer.failure.take().unwrap()),
        Err(e) => return Err(e.into()),
    };
    let last_epoch = outcome.log.last().map_or(0, |r| r.epoch);
    checkpoint(cfg, last_epoch, &outcome.last, Some(&outcome.adam)).write(&cfg.out.join(LAST_CHECKPOINT), kg.entities(), kg.relations())?;
    let best_checkpoint = cfg.out.join(BEST_CHECKPOINT);
    if outcome.best_epoch == 0 {
        checkpoint(cfg, 0, &outcome.best, None).write(&best_checkpoint, kg.entities(), kg.relations())?;
    }
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        epochs: outcome.log,
        best_checkpoint,
    })
}

/// Loads a checkpoint and checks it against the graph it will be applied to.
pub fn load_checkpoint(path: &Path, kg: &KnowledgeGraph) -> Result<Checkpoint> {
    let ckpt = Checkpoint::read(path)?;
    let (ne, nr) = (ckpt.state.entities.rows(), ckpt.state.relations.rows());
    if ne != kg.num_entities() || nr != kg.num_relations() {
        return Err(AppError::Data(format!(
            "checkpoint has {ne} entities and {nr} relations, graph has {} and {}",
            kg.num_entities(),
            kg.num_relations()
        )));
    }
    if let Some((e, r)) = Checkpoint::read_vocabs(path)? {
        if &e != kg.entities() || &r != kg.relations() {
            return Err(AppError::Data(format!("{}: vocabularies differ from the graph", path.display())));
        }
    }
    if !ckpt.state.is_finite() {
        return Err(AppError::Numerical(format!("{}: non-finite parameters", path.display())));
    }
    Ok(ckpt)
}

pub struct EvalRequest<'a> {
    pub checkpoint: &'a Path,
    pub split: Split,
    pub mode: EvalMode,
    pub hits: &'a [usize],
    pub per_query: bool,
}

pub fn eval(cfg: &RunConfig, req: &EvalRequest<'_>) -> Result<EvalReport> {
    let (kg, ctx) = load_graph(cfg)?;
    let ckpt = load_checkpoint(req.checkpoint, &kg)?;
    let queries: Vec<Triple> = kg.split_ids(req.split).into_iter().map(|id| kg.triple(id)).collect();
    if queries.is_empty() {
        return Err(AppError::Data(format!("{} split is empty", req.split)));
    }
    let reduction = cfg.train.reduction();
    let trace = aggregate(
        &ckpt.state,
        &ctx,
        AggregateOptions {
            reduction,
            ..AggregateOptions::layers(ckpt.layers as usize)
        },
    );
    let ranking = rank_queries(&trace, &queries, req.mode, &KnownRelations::from_graph(&kg), reduction);
    let label = |v: &aggre_core::Vocab, id: u32| v.label(id).unwrap_or_default().to_string();
    let queries = req.per_query.then(|| {
        ranking
            .queries
            .iter()
            .map(|q| QueryLine {
                head: label(kg.entities(), q.head),
                relation: label(kg.relations(), q.rel),
                tail: label(kg.entities(), q.tail),
                rank: q.rank,
            })
            .collect()
    });
    Ok(EvalReport {
        config: cfg.to_text().lines().map(str::to_string).collect(),
        checkpoint: req.checkpoint.display().to_string(),
        split: req.split.name().to_string(),
        layers: ckpt.layers,
        mode: ModeFlags {
            ranking: req.mode.name().to_string(),
            ties: "mean".to_string(),
            context: cfg.context.name().to_string(),
        },
        metrics: aggregates(&ranking, req.hits),
        queries,
    })
}

fn resolve_entity(kg: &KnowledgeGraph, label: &str) -> Result<u32> {
    kg.entities().id(label).ok_or_else(|| {
        let near = kg.entities().nearest_by_prefix(label, 5);
        let hint = if near.is_empty() {
            "no label shares a prefix".to_string()
        } else {
            format!("nearest: {}", near.join(", "))
        };
        AppError::Data(format!("unknown entity label {label:?}; {hint}"))
    })
}

/// Top `k` relations for `(head, ?, tail)`, best first; equal scores keep label order.
pub fn predict(cfg: &RunConfig, checkpoint: &Path, head: &str, tail: &str, k: usize) -> Result<Vec<(String, f32)>> {
    let (kg, ctx) = load_graph(cfg)?;
    let (h, t) = (resolve_entity(&kg, head)?, resolve_entity(&kg, tail)?);
    let ckpt = load_checkpoint(checkpoint, &kg)?;
    let trace = aggregate(
        &ckpt.state,
        &ctx,
        AggregateOptions {
            reduction: cfg.train.reduction(),
            ..AggregateOptions::layers(ckpt.layers as usize)
        },
    );
    let scores = trace.score_relations(&[(h, t)]);
    let labels = kg.relations().labels();
    let mut ranked: Vec<(String, f32)> = labels.iter().cloned().zip(scores.row(0).iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}
