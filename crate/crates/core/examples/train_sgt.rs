//! Saliency-guided quantization-aware training of one configuration.
//!
//! ```text
//! cargo run --release --example train_sgt -- [BITS] [TRAIN] [EPOCHS] [CHECKPOINT]
//! ```
//!
//! Reads MNIST from `$SALIQ_DATA_DIR` when set and otherwise generates a
//! synthetic digit set in memory. `BITS` is `regular` or e.g. `4,2`.

use std::path::PathBuf;

use saliq::data::{synthetic, Dataset, Source, Split};
use saliq::model::{save_checkpoint, Architecture, BitConfig, CnnModel};
use saliq::rng;
use saliq::train::{self, SgtConfig};

fn load(split: Split, n: usize) -> saliq::Result<Dataset> {
    Ok(match std::env::var_os(saliq::harness::DATA_DIR_ENV) {
        Some(dir) => Dataset::load(dir.as_ref(), Source::Mnist, split)?.truncate(n),
        None => synthetic::dataset(n, 7, split),
    })
}

fn main() -> saliq::Result<()> {
    let mut args = std::env::args().skip(1);
    let bits: BitConfig = args.next().unwrap_or_else(|| "4,2".into()).parse()?;
    let n: usize = args.next().map_or(2048, |s| s.parse().expect("TRAIN must be a count"));
    let epochs: usize = args.next().map_or(3, |s| s.parse().expect("EPOCHS must be a count"));
    let checkpoint = args.next().map(PathBuf::from);

    let train_set = load(Split::Train, n)?;
    let test_set = load(Split::Test, 1000)?;
    let mut cfg = SgtConfig::defaults_for(Source::Mnist, bits);
    cfg.epochs = epochs;
    // short runs want more, smaller steps than the full-size defaults
    cfg.batch_size = 32;
    cfg.lr = 0.05;

    let mut model = CnnModel::<f32>::new(Architecture::STANDARD, bits, &mut rng::stream(cfg.seed, rng::INIT));
    println!("{bits} on {} images, k = {}, lambda = {}", train_set.len(), cfg.k, cfg.lambda);
    println!("epoch   ce      kl      train   test");
    train::train(&mut model, &train_set, &test_set, &cfg, |r| {
        println!(
            "{:>5}   {:.4}  {:.4}  {:.3}   {:.3}",
            r.epoch, r.ce_loss, r.kl_loss, r.train_acc, r.test_acc
        );
    })?;
    println!(
        "clip levels after training: {:.4} {:.4}",
        model.conv1.alpha.value, model.conv2.alpha.value
    );
    for layer in 0..2 {
        let w = model.effective_conv_weight(layer);
        let mut levels: Vec<f32> = w.data().to_vec();
        levels.sort_by(f32::total_cmp);
        levels.dedup();
        println!("conv{} effective weights use {} distinct values", layer + 1, levels.len());
    }
    if let Some(path) = checkpoint {
        save_checkpoint(&model, cfg.seed, cfg.epochs as u32, &path)?;
        println!("saved {}", path.display());
    }
    Ok(())
}
