//! Coding rate binds the pipeline end to end. Two models share the same
//! data, latent width, and schedule and differ only in how the latent is
//! split into sub-vectors, which fixes the level-1 alphabet: two
//! sub-vectors can name four messages, four sub-vectors sixteen. Ten
//! classes cannot fit through four messages, so the starved model is
//! capped by counting; the wider alphabet packs nine to ten classes and
//! lands far above the cap.

use mrtoc::config::DatasetSpec;
use mrtoc::evaluation::evaluate;
use mrtoc::training::{train_progressive, TrainConfig};

#[test]
fn level_one_alphabet_binds_accuracy() {
    let data = DatasetSpec::Blobs { num_classes: 10, dim: 8, samples_per_class: 200, spread: 0.15 };
    let ds = data.load(0).unwrap();
    let (train, test) = ds.split(0.8, 0).unwrap();
    let base = TrainConfig {
        encoder_hidden: vec![64, 64],
        head_hidden: vec![64, 64],
        seed: 0,
        ..TrainConfig::default()
    };

    let starved = TrainConfig { m: 2, d: 8, ..base.clone() };
    let (starved_model, _) = train_progressive(&starved, &train).unwrap();
    let starved_acc = evaluate(&starved_model, 1, 0.001, &test, 5, 0).unwrap();

    let adequate = TrainConfig { m: 4, d: 4, ..base };
    let (adequate_model, _) = train_progressive(&adequate, &train).unwrap();
    let adequate_acc = evaluate(&adequate_model, 1, 0.001, &test, 5, 0).unwrap();

    // Four distinct level-1 messages cannot cover more than the four
    // biggest classes of the test split; any excess would mean the
    // pipeline leaked unquantized information.
    let mut counts = vec![0usize; test.num_classes()];
    for &label in test.labels() {
        counts[label] += 1;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let cap = counts[..4].iter().sum::<usize>() as f64 / test.len() as f64;
    assert!(
        starved_acc <= cap + 1e-9,
        "starved level-1 accuracy {starved_acc:.4} exceeds the four-message cap {cap:.4}"
    );
    assert!(
        adequate_acc >= 0.85,
        "sixteen messages should pack at least nine of ten classes, got {adequate_acc:.4}"
    );
}
