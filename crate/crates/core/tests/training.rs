mod support;

use aggre_core::eval::rank_queries;
use aggre_core::{
    aggregate, AggregateOptions, ContextIndex, ContextOptions, EvalMode, KgBuilder, KnowledgeGraph, KnownRelations, Reduction, Split, TrainConfig,
    Trainer,
};

fn overfit_graph() -> (KnowledgeGraph, ContextIndex) {
    let mut b = KgBuilder::new();
    b.add_split_text(Split::Train, &support::overfit_tsv()).unwrap();
    let kg = b.finish().unwrap();
    let ctx = ContextIndex::build(&kg, ContextOptions::default());
    (kg, ctx)
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        dim: 32,
        num_layers: 2,
        learning_rate: 5e-3,
        max_epochs: 200,
        seed: 7,
        strict_determinism: true,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_toy_graph() {
    let (kg, ctx) = overfit_graph();
    assert_eq!((kg.triples().len(), kg.num_relations()), (50, 5));
    let out = Trainer::<f32>::new(&kg, &ctx, overfit_config()).unwrap().train(&mut ()).unwrap();
    assert_eq!(out.log.len(), 200);
    let trace = aggregate(&out.best, &ctx, AggregateOptions::layers(2));
    let report = rank_queries(&trace, kg.triples(), EvalMode::Raw, &KnownRelations::from_graph(&kg), Reduction::Strict);
    assert!(report.metrics.mrr >= 0.99, "train MRR {}", report.metrics.mrr);

    // Epoch-mean loss may only tick up by less than 10% within any 10-epoch window.
    let losses: Vec<f64> = out.log.iter().map(|r| r.mean_loss).collect();
    for window in losses.windows(10) {
        for pair in window.windows(2) {
            assert!(pair[1] < pair[0] * 1.1, "loss rose from {} to {}", pair[0], pair[1]);
        }
        assert!(window[9] <= window[0] * 1.1);
    }
}

#[test]
fn overfits_with_self_exclusion_and_small_batches() {
    let (kg, ctx) = overfit_graph();
    let cfg = TrainConfig {
        exclude_self: true,
        batch_size: 10,
        ..overfit_config()
    };
    let out = Trainer::<f32>::new(&kg, &ctx, cfg).unwrap().train(&mut ()).unwrap();
    assert!(out.log.last().unwrap().mean_loss < out.log[0].mean_loss);
}

#[test]
fn strict_runs_are_bitwise_reproducible() {
    let (kg, ctx) = overfit_graph();
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 16,
        neighbor_cap: Some(3),
        ..overfit_config()
    };
    let a = Trainer::<f32>::new(&kg, &ctx, cfg.clone()).unwrap().train(&mut ()).unwrap();
    let b = Trainer::<f32>::new(&kg, &ctx, cfg).unwrap().train(&mut ()).unwrap();
    let bits = |s: &aggre_core::EmbeddingState<f32>| s.entities.as_slice().iter().chain(s.relations.as_slice()).map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.last), bits(&b.last));
    let la: Vec<u64> = a.log.iter().map(|r| r.mean_loss.to_bits()).collect();
    let lb: Vec<u64> = b.log.iter().map(|r| r.mean_loss.to_bits()).collect();
    assert_eq!(la, lb);
}

#[test]
fn every_triple_once_per_epoch() {
    let (kg, ctx) = overfit_graph();
    let mut trainer = Trainer::<f32>::new(&kg, &ctx, overfit_config()).unwrap();
    let mut previous = Vec::new();
    for _ in 0..3 {
        let order = trainer.shuffle_epoch().to_vec();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
        let batched: usize = order.chunks(16).map(|c| c.len()).sum();
        assert_eq!(batched, 50);
        assert_ne!(order, previous);
        previous = order;
    }
}

#[test]
fn best_epoch_tracks_validation_mrr() {
    let mut b = KgBuilder::new();
    let triples = support::overfit_triples();
    let train: String = triples[..40].iter().map(|(h, r, t)| format!("e{h}\tr{r}\te{t}\n")).collect();
    let valid: String = triples[40..].iter().map(|(h, r, t)| format!("e{h}\tr{r}\te{t}\n")).collect();
    b.add_split_text(Split::Train, &train).unwrap();
    b.add_split_text(Split::Valid, &valid).unwrap();
    let kg = b.finish().unwrap();
    let ctx = ContextIndex::build(&kg, ContextOptions::default());
    let cfg = TrainConfig {
        max_epochs: 15,
        ..overfit_config()
    };
    let out = Trainer::<f32>::new(&kg, &ctx, cfg).unwrap().train(&mut ()).unwrap();
    let best = out
        .log
        .iter()
        .map(|r| r.validation.unwrap().mrr)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = out.log[out.best_epoch - 1];
    assert_eq!(chosen.validation.unwrap().mrr, best);
    assert!(chosen.improved);
}
