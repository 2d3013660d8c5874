mod common;

use std::fs;

use common::separated_spec;
use dpn_core::config::Config;
use dpn_core::data_io::generate_synthetic;
use dpn_core::learning::checkpoint::{checkpoint_from_text, checkpoint_to_text, load_checkpoint};
use dpn_core::learning::{train, ProjectionHead};
use dpn_core::pipeline::{
    run_estimate_k, run_eval, run_generate, run_train, OutputLock, CHECKPOINT_FILE, ESTIMATE_FILE, LOCK_FILE,
    RUN_MANIFEST_FILE,
};
use dpn_core::Error;

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let _held = OutputLock::acquire(&out).unwrap();
    assert!(matches!(
        run_generate(&separated_spec(3, 2, 0), &out),
        Err(Error::Locked(_))
    ));
    assert!(!out.join(RUN_MANIFEST_FILE).exists());
}

#[test]
fn manifest_written_before_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train");
    let missing = dir.path().join("no-such-dataset");
    assert!(run_train(&missing, &Config::default(), &out).is_err());
    let manifest = fs::read_to_string(out.join(RUN_MANIFEST_FILE)).unwrap();
    assert!(manifest.starts_with("command=train\n"));
    assert!(manifest.contains("[config]\n"));
    assert!(!out.join(CHECKPOINT_FILE).exists());
    assert!(!out.join(LOCK_FILE).exists());
}

#[test]
fn zero_epoch_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let spec = separated_spec(4, 2, 1);
    let manifest = run_generate(&spec, &dir.path().join("data")).unwrap();
    let config = Config {
        epochs: 0,
        seed: 1,
        ..Config::default()
    };
    run_train(&manifest, &config, &dir.path().join("train")).unwrap();
    let saved = load_checkpoint(&dir.path().join("train").join(CHECKPOINT_FILE)).unwrap();

    let data = generate_synthetic(&spec).unwrap();
    let init = ProjectionHead::init(
        data.dim(),
        data.dim(),
        config.activation,
        config.init_noise,
        config.seed,
    )
    .unwrap();
    assert_eq!(saved.head, init);
    assert_eq!(saved, train(&data.training_view(), &config).unwrap());
}

#[test]
fn checkpoint_text_round_trips() {
    let data = generate_synthetic(&separated_spec(5, 3, 2)).unwrap();
    let mut state = train(
        &data.training_view(),
        &Config {
            seed: 2,
            ..Config::default()
        },
    )
    .unwrap();
    let text = checkpoint_to_text(&state);
    // The loss trace lives in its own TSV, not in the checkpoint.
    state.loss_trace.clear();
    assert_eq!(checkpoint_from_text(&text).unwrap(), state);
}

#[test]
fn eval_requires_a_checkpoint_and_estimate_k_a_valid_bound() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run_generate(&separated_spec(4, 2, 3), &dir.path().join("data")).unwrap();
    let config = Config::default();
    let err = run_eval(
        &manifest,
        &dir.path().join("missing.txt"),
        &config,
        None,
        &dir.path().join("eval"),
    );
    assert!(matches!(err, Err(Error::Config(_))));
    assert!(matches!(
        run_estimate_k(&manifest, &config, 1, &dir.path().join("k")),
        Err(Error::Config(_))
    ));

    let est = run_estimate_k(&manifest, &config, 8, &dir.path().join("k")).unwrap();
    assert_eq!(est.k, 4);
    let table = fs::read_to_string(dir.path().join("k").join(ESTIMATE_FILE)).unwrap();
    assert!(table.contains("estimated_k\t4\n"));
}
