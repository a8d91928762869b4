use invrescale::model::{ModelConfig, RescaleModel, Variant};
use invrescale::synth::toy_set;
use invrescale::train::{train, LossWeights, TrainConfig};

#[test]
fn loss_falls_over_a_toy_run() {
    let images = toy_set(16, 48, 48, 0);
    for variant in [Variant::Baseline, Variant::Alpha, Variant::Meta] {
        let cfg = ModelConfig::new(variant, 2).with_blocks(2).with_width(8);
        let mut model = RescaleModel::new(cfg, 0).unwrap();
        let tc = TrainConfig { iterations: 2000, batch: 1, patch_size: 16, ..TrainConfig::default() };
        let report = train(&mut model, &images, &tc, &LossWeights::for_model(2, variant)).unwrap();
        let (first, last) = (report.mean_total(0, 100), report.mean_total(1900, 2000));
        assert!(last < first, "{variant}: first 100 {first}, last 100 {last}");
        assert!(model.store.iter().all(|p| p.value.is_finite()));
    }
}

#[test]
fn training_is_reproducible() {
    let images = toy_set(4, 32, 32, 1);
    let run = || {
        let mut m = RescaleModel::new(ModelConfig::new(Variant::Alpha, 2).with_blocks(1).with_width(4), 5).unwrap();
        let tc = TrainConfig { iterations: 10, batch: 2, patch_size: 16, seed: 5, ..TrainConfig::default() };
        let r = train(&mut m, &images, &tc, &LossWeights::for_model(2, Variant::Alpha)).unwrap();
        (m.to_bytes(), r.to_csv(1))
    };
    assert_eq!(run(), run());
}
