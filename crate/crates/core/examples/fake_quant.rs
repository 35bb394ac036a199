//! Weight and activation fake quantization on a handful of values, with the
//! straight-through gradient mask next to each weight. The largest positive
//! weight sits on the open upper edge of the window and gets no gradient.

use saliq::quant::{self, BitWidth};
use saliq::Tensor;

fn main() -> saliq::Result<()> {
    let w = Tensor::new([8], vec![-0.85f64, -0.62, -0.3, -0.05, 0.2, 0.41, 0.77, 1.0])?;
    for bits in [2u8, 3, 4, 8] {
        let q = quant::fake_quant_weights(&w, bits)?;
        let params = quant::weight_quant_params(&w, BitWidth::new(bits)?);
        let (lo, hi) = quant::weight_ste_range::<f64>(&params);
        let pass = quant::ste_backward(&Tensor::ones([8]), &w, lo, hi)?;
        println!("{bits} bits  step {:.5}  window ({lo:.4}, {hi:.4})", params.step);
        for ((x, y), g) in w.data().iter().zip(q.data()).zip(pass.data()) {
            println!("  {x:>6.2} -> {:>8.5}   grad x{g}", y + 0.0);
        }
    }

    let a = Tensor::new([7], vec![-3.0f64, -1.0, -0.4, 0.0, 0.35, 0.9, 2.5])?;
    let alpha = 1.0;
    let clipped = quant::pact_clip(&a, alpha);
    let q = quant::pact_quantize(&clipped, alpha, 2)?;
    let (_, d_alpha) = quant::pact_clip_backward(&Tensor::ones([7]), &a, alpha);
    println!("\nclip at alpha = {alpha}, 2-bit grid {{-1, -1/3, 1/3, 1}}");
    for ((x, c), y) in a.data().iter().zip(clipped.data()).zip(q.data()) {
        println!("  {x:>5.2} -> clip {c:>5.2} -> {:>8.5}", y + 0.0);
    }
    println!("  d(sum)/d(alpha) = {d_alpha}");
    Ok(())
}
