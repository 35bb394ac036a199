//! Vanilla-gradient saliency maps for a few test images.
//!
//! ```text
//! cargo run --release --example saliency_maps -- [CHECKPOINT] [OUT_DIR]
//! ```
//!
//! Without a checkpoint a regular model is first trained for two epochs on
//! synthetic digits. Each map is printed as a coarse heatmap next to its image
//! and written as PGM files, together with a copy whose least salient half
//! is replaced by noise.

use std::path::PathBuf;

use saliq::data::{synthetic, Source, Split, IMAGE_SIDE};
use saliq::harness;
use saliq::model::{Architecture, BitConfig, CnnModel};
use saliq::rng;
use saliq::saliency::{saliency_map, visualize_masked, write_pgm};
use saliq::train::{self, SgtConfig, TrainMode};

const SHADES: &[u8] = b" .:-=+*#%@";

fn shade(v: f32) -> char {
    SHADES[((v.clamp(0.0, 1.0) * (SHADES.len() - 1) as f32).round()) as usize] as char
}

fn quick_model() -> saliq::Result<CnnModel<f32>> {
    let bits = BitConfig::REGULAR;
    let mut cfg = SgtConfig::defaults_for(Source::Mnist, bits);
    cfg.mode = TrainMode::Plain;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    let train_set = synthetic::dataset(2048, 1, Split::Train);
    let check = synthetic::dataset(200, 1, Split::Test);
    let mut model = CnnModel::new(Architecture::STANDARD, bits, &mut rng::stream(cfg.seed, rng::INIT));
    train::train(&mut model, &train_set, &check, &cfg, |r| {
        println!("epoch {}: test accuracy {:.3}", r.epoch, r.test_acc)
    })?;
    Ok(model)
}

fn main() -> saliq::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(path) => harness::load_model(path.as_ref())?,
        None => quick_model()?,
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "saliency-out".into()));
    std::fs::create_dir_all(&out).map_err(|e| saliq::Error::io("creating output dir", e))?;

    let images = synthetic::dataset(3, 99, Split::Test);
    let mut noise = rng::stream(0, rng::VISUALIZE);
    for i in 0..images.len() {
        let (x, y) = images.gather(&[i]);
        let map = saliency_map(&model, &x, y[0], i)?;
        let predicted = model.predict(&x)?[0];
        println!("\nimage {i}: label {}, predicted {predicted}, raw max |grad| {:.3e}", y[0], map.raw_max);
        for r in (0..IMAGE_SIDE).step_by(2) {
            let row = |v: &[f32]| (0..IMAGE_SIDE).map(|c| shade(v[r * IMAGE_SIDE + c])).collect::<String>();
            println!("  {}   {}", row(x.data()), row(&map.values));
        }
        let masked = visualize_masked(x.data(), &map, 0.5, &mut noise)?;
        write_pgm(&out.join(format!("{i}_input.pgm")), x.data(), IMAGE_SIDE, IMAGE_SIDE)?;
        write_pgm(&out.join(format!("{i}_saliency.pgm")), &map.values, IMAGE_SIDE, IMAGE_SIDE)?;
        write_pgm(&out.join(format!("{i}_masked50.pgm")), &masked, IMAGE_SIDE, IMAGE_SIDE)?;
    }
    println!("\nwrote PGM files to {}", out.display());
    Ok(())
}
