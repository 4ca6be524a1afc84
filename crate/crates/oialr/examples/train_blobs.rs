//! Train the same network twice on synthetic clusters: once dense, once
//! with the adaptive low-rank schedule. Prints the per-epoch telemetry of
//! both runs side by side.

use oialr::data::synth_blobs;
use oialr::nn::{Activation, SequentialModel};
use oialr::trainer::{train, train_baseline, TrainConfig, TrainEvent};

fn main() -> oialr::Result<()> {
    let data = synth_blobs(4, 16, 50, 0.8, 7)?;
    let model = SequentialModel::mlp(&[16, 24, 16, 4], Activation::Relu, 0)?;

    let mut cfg = TrainConfig {
        epochs: 12,
        batch_size: 20,
        seed: 0,
        ..TrainConfig::default()
    };
    cfg.schedule.total_epochs = cfg.epochs;
    cfg.schedule.warmup_epochs = 2;
    cfg.schedule.base_lr = 0.01;

    let mut sink = |_: usize, _: &_, _: &_, _: &_| Ok(());
    let base = train_baseline(model.clone(), &cfg, &data, &mut sink)?;
    let ours = train(model, &cfg, &data, &mut sink)?;

    println!("epoch  base_loss  base_acc   lr_loss    lr_acc  trainable%  ranks");
    for (b, o) in base.telemetry.iter().zip(&ours.telemetry) {
        let ranks: Vec<String> = o.rank_per_layer.iter().map(|r| r.to_string()).collect();
        println!(
            "{:>5}  {:>9.4}  {:>8.3}  {:>9.4}  {:>8.3}  {:>10.2}  {}",
            b.epoch,
            b.val_loss,
            b.val_metric,
            o.val_loss,
            o.val_metric,
            o.trainable_pct,
            ranks.join(";")
        );
    }

    println!("\nevents:");
    for event in &ours.events {
        match event {
            TrainEvent::Converted { step } => println!("  step {step}: converted to factored form"),
            TrainEvent::BasisUpdate {
                step,
                ell,
                layers,
                ranks_before,
                ranks_after,
                ..
            } => println!(
                "  step {step}: refreshed {ell} layer(s) {layers:?}, ranks {ranks_before:?} -> {ranks_after:?}"
            ),
        }
    }
    Ok(())
}
