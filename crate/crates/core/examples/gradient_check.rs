//! Central-difference check of the reverse-mode tape on a small
//! quantization-aware network, in 64-bit.

use saliq::model::{Architecture, BitConfig, CnnModel, QuantSwitches};
use saliq::rng;
use saliq::tensor::gradcheck::{check_gradients, GradCheckOptions};
use saliq::Tensor;

fn main() -> saliq::Result<()> {
    let arch = Architecture {
        in_channels: 1,
        image_size: 6,
        conv1_channels: 2,
        conv2_channels: 3,
        hidden: 5,
        classes: 4,
    };
    let mut r = rng::stream(1, 0);
    let mut model = CnnModel::<f64>::new(arch, BitConfig::quantized(4, 2)?, &mut r);
    // the clip stays, the piecewise-constant quantizers would defeat finite differences
    model.switches = QuantSwitches {
        weights: false,
        activations: false,
    };
    model.conv1.alpha.value = 0.35;
    model.conv2.alpha.value = 0.2;
    let x = Tensor::<f64>::uniform([3, 1, 6, 6], 1.0, &mut r).map(f64::abs);
    let labels = [0usize, 2, 3];

    let params: Vec<Tensor<f64>> = model
        .tensors()
        .iter()
        .map(|t| (*t).clone())
        .chain([Tensor::scalar(model.conv1.alpha.value), Tensor::scalar(model.conv2.alpha.value)])
        .collect();
    let report = check_gradients(
        &params,
        |t, v| {
            let p = saliq::model::BoundParams {
                conv1_w: v[0],
                conv1_b: v[1],
                conv2_w: v[2],
                conv2_b: v[3],
                fc1_w: v[4],
                fc1_b: v[5],
                fc2_w: v[6],
                fc2_b: v[7],
                alpha1: v[8],
                alpha2: v[9],
            };
            let xv = t.leaf(x.clone(), false);
            let logits = model.forward(t, &p, xv)?;
            let lp = t.log_softmax(logits)?;
            t.cross_entropy(lp, &labels)
        },
        &GradCheckOptions::default(),
    )?;
    println!(
        "probed {} elements, skipped {} near kinks, max relative error {:.3e}",
        report.checked, report.rejected, report.max_rel_error
    );
    if let Some((input, elem, a, n)) = report.worst {
        println!("worst: parameter {} [{elem}] analytic {a:.9} numeric {n:.9}", saliq::model::PARAM_NAMES[input]);
    }
    println!("{}", if report.passes(1e-4) { "ok" } else { "MISMATCH" });
    Ok(())
}
