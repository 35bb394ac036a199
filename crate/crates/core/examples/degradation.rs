//! Deletion curves: accuracy as the most salient pixels are replaced by
//! uniform noise, for a regular and a 2-bit model.
//!
//! ```text
//! cargo run --release --example degradation -- [CHECKPOINT...]
//! ```
//!
//! Given no checkpoints, both models are trained briefly on synthetic digits.
//! A steeper early drop means the saliency ranking finds the pixels the
//! model actually relies on.

use saliq::data::{synthetic, Source, Split};
use saliq::harness;
use saliq::model::{Architecture, BitConfig, CnnModel};
use saliq::rng;
use saliq::saliency::{combined_csv, curve_metrics, default_fractions, degradation_curve, DegradeOptions};
use saliq::train::{self, SaliencyTarget, SgtConfig, TrainMode};

fn quick_model(bits: BitConfig) -> saliq::Result<CnnModel<f32>> {
    let mut cfg = SgtConfig::defaults_for(Source::Mnist, bits);
    cfg.mode = TrainMode::Plain;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    let train_set = synthetic::dataset(2048, 1, Split::Train);
    let mut model = CnnModel::new(Architecture::STANDARD, bits, &mut rng::stream(cfg.seed, rng::INIT));
    train::train(&mut model, &train_set, &synthetic::dataset(100, 1, Split::Test), &cfg, |_| {})?;
    Ok(model)
}

fn main() -> saliq::Result<()> {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    let models: Vec<(String, CnnModel<f32>)> = if paths.is_empty() {
        let mut v = Vec::new();
        for bits in [BitConfig::REGULAR, BitConfig::quantized(2, 2)?] {
            println!("training {bits} for 2 epochs on 2048 synthetic digits");
            v.push((bits.to_string(), quick_model(bits)?));
        }
        v
    } else {
        paths
            .iter()
            .map(|p| Ok((harness::model_id(p.as_ref()), harness::load_model(p.as_ref())?)))
            .collect::<saliq::Result<_>>()?
    };

    let test = synthetic::dataset(300, 5, Split::Test);
    let mut curves = Vec::new();
    for (id, model) in &models {
        let opts = DegradeOptions {
            seed: 0,
            target: SaliencyTarget::True,
            model_id: id.clone(),
        };
        let curve = degradation_curve(model, &test, &default_fractions(), &opts)?;
        let m = curve_metrics(&curve)?;
        println!("{id}: drop at 50% = {:.3}, area = {:.3}", m.drop_at_50pct, m.area_under_curve);
        curves.push(curve);
    }
    print!("\n{}", combined_csv(&curves)?);
    Ok(())
}
