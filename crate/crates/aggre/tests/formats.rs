use std::fs;
use std::path::Path;

use aggre::checkpoint::{self, Checkpoint};
use aggre::{dataset, AppError, Bundle, ContextPolicy, RunConfig, SplitFiles};
use aggre_core::{AdamState, EmbeddingState, Split, SplitFilter};

fn write_splits(dir: &Path, train: &str, valid: &str, test: &str) -> SplitFiles {
    fs::write(dir.join("train.txt"), train).unwrap();
    fs::write(dir.join("valid.txt"), valid).unwrap();
    fs::write(dir.join("test.txt"), test).unwrap();
    SplitFiles::in_dir(dir)
}

#[test]
fn toy_bundle_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_splits(dir.path(), "a\tp\tb\nb\tq\tc\nc\tp\tc\n", "a\tq\tc\n", "a\tp\tb\nb\tp\ta\n");
    let kg = dataset::load(&files).unwrap();
    assert_eq!(kg.cross_split_dropped(), 1);
    for policy in [ContextPolicy::Train, ContextPolicy::TrainValid] {
        let bundle = Bundle::build(kg.clone(), policy.splits());
        let path = dir.path().join("g.bundle");
        bundle.write(&path).unwrap();
        let back = Bundle::read(&path).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.graph.cross_split_dropped(), 1);
        assert_eq!(back.encode(), bundle.encode());
    }
}

#[test]
fn bundle_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_splits(dir.path(), "a\tp\tb\nb\tq\tc\n", "", "");
    let bytes = Bundle::build(dataset::load(&files).unwrap(), SplitFilter::TRAIN_ONLY).encode();
    assert!(Bundle::decode(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Bundle::decode(&extra).unwrap_err().contains("trailing"));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(Bundle::decode(&magic).unwrap_err().contains("magic"));
    // Flip a context pair's source id: the stored index no longer matches the triples.
    let mut ctx = bytes.clone();
    let n = ctx.len();
    ctx[n - 4] ^= 1;
    assert!(Bundle::decode(&ctx).is_err());
}

#[test]
fn missing_split_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_splits(dir.path(), "a\tp\tb\n", "", "");
    fs::remove_file(&files.valid).unwrap();
    let err = dataset::load(&files).unwrap_err();
    assert!(matches!(err, AppError::Data(_)));
    assert!(err.to_string().contains("valid.txt"), "{err}");
    assert_eq!(err.exit_code(), AppError::EXIT_DATA);
}

#[test]
fn parse_errors_carry_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_splits(dir.path(), "a\tp\tb\nbad line\n", "", "");
    let err = dataset::load(&files).unwrap_err().to_string();
    assert!(err.contains("train.txt") && err.contains("line 2"), "{err}");
}

fn sample_checkpoint(with_adam: bool) -> Checkpoint {
    let state = EmbeddingState::<f32>::init(4, 3, 5, 9);
    let mut adam = AdamState::new(&state);
    adam.step = 17;
    adam.entity_v.as_mut_slice()[3] = 0.25;
    Checkpoint {
        layers: 2,
        seed: u64::MAX - 3,
        epoch: 11,
        state,
        adam: with_adam.then_some(adam),
    }
}

#[test]
fn checkpoint_round_trips() {
    for with_adam in [false, true] {
        let ckpt = sample_checkpoint(with_adam);
        assert_eq!(Checkpoint::decode(&ckpt.encode()).unwrap(), ckpt);
    }
}

#[test]
fn checkpoint_header_layout() {
    let bytes = sample_checkpoint(false).encode();
    assert_eq!(&bytes[..6], b"AGGRE1");
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    assert_eq!([u32_at(6), u32_at(10), u32_at(14), u32_at(18)], [5, 4, 3, 2]);
    assert_eq!(u64::from_le_bytes(bytes[22..30].try_into().unwrap()), u64::MAX - 3);
    assert_eq!(u32_at(30), 11);
    // header + (4 + 3) * 5 floats + adam flag
    assert_eq!(bytes.len(), 34 + 35 * 4 + 1);
    let first = f32::from_le_bytes(bytes[34..38].try_into().unwrap());
    assert_eq!(first, sample_checkpoint(false).state.entities.as_slice()[0]);
}

#[test]
fn checkpoint_bad_magic_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let mut bytes = sample_checkpoint(true).encode();
    bytes[5] = b'2';
    fs::write(&path, bytes).unwrap();
    let err = Checkpoint::read(&path).unwrap_err();
    assert!(matches!(err, AppError::Format { .. }), "{err}");
    assert!(err.to_string().contains("magic"));
}

#[test]
fn checkpoint_vocabularies_sit_beside_it() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_splits(dir.path(), "a\tp\tb\nb\tq\tc\nc\tp\td\nd\tr\ta\n", "", "");
    let kg = dataset::load(&files).unwrap();
    let path = dir.path().join("model.ckpt");
    sample_checkpoint(false).write(&path, kg.entities(), kg.relations()).unwrap();
    let (ep, rp) = checkpoint::vocab_paths(&path);
    assert_eq!(fs::read_to_string(ep).unwrap(), "a\nb\nc\nd\n");
    assert_eq!(fs::read_to_string(rp).unwrap(), "p\nq\nr\n");
    let (e, r) = Checkpoint::read_vocabs(&path).unwrap().unwrap();
    assert_eq!((&e, &r), (kg.entities(), kg.relations()));
}

#[test]
fn config_defaults_and_round_trip() {
    let cfg = RunConfig::parse("# comment\n\ndata_dir = d\n").unwrap();
    assert_eq!(cfg.train.dim, 256);
    assert_eq!(cfg.train.learning_rate, 5e-3);
    assert_eq!(cfg.train.l2_lambda, 1e-7);
    assert_eq!(cfg.train.batch_size, 512);
    assert_eq!(cfg.train.max_epochs, 20);
    assert_eq!(cfg.train.num_layers, 2);
    assert_eq!(cfg.context, ContextPolicy::Train);

    let mut custom = cfg.clone();
    for (k, v) in [
        ("lr", "0.0123456789"),
        ("l2", "3e-9"),
        ("neighbor_cap", "7"),
        ("patience", "2"),
        ("eval_mode", "filtered"),
        ("context", "train+valid"),
        ("strict", "true"),
        ("seed", "18446744073709551615"),
    ] {
        custom.set(k, v).unwrap();
    }
    assert_eq!(RunConfig::parse(&custom.to_text()).unwrap(), custom);
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn config_rejects_bad_input() {
    for (text, needle) in [
        ("dims = 3\n", "unknown key"),
        ("dim = 3\ndim = 4\n", "twice"),
        ("dim 3\n", "key = value"),
        ("dim = -1\n", "dim"),
        ("eval_mode = optimistic\n", "raw or filtered"),
        ("context = all\n", "train+valid"),
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert!(matches!(err, AppError::Config(_)));
        assert!(err.to_string().contains(needle), "{text:?}: {err}");
    }
    let mut cfg = RunConfig::default();
    assert!(cfg.validate().is_err(), "no data source");
    cfg.data_dir = Some("d".into());
    cfg.train.batch_size = 0;
    assert_eq!(cfg.validate().unwrap_err().exit_code(), AppError::EXIT_CONFIG);
}

#[test]
fn split_files_use_conventional_names() {
    let f = SplitFiles::in_dir(Path::new("/x"));
    assert_eq!(f.path(Split::Valid), Path::new("/x/valid.txt"));
}
