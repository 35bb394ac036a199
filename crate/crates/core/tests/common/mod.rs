//! Checks shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

use saliq::model::{Architecture, BitConfig, BoundParams, CnnModel, QuantSwitches};
use saliq::quant::{self, BitWidth};
use saliq::rng;
use saliq::tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use saliq::{Result, Tape, Tensor, Var};

pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl GradCase {
    pub fn passes(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 500);
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(lo..hi))
}

/// Values with magnitude in `[margin, 1 + margin)` and random sign.
fn away_from_zero(shape: &[usize], margin: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 501);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = margin + r.gen::<f64>();
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(out ⊙ r)` with a fixed random weighting `r`, so every output
/// element contributes a distinct coefficient.
fn weighted_sum(t: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = t.value(out).shape().to_vec();
    let r = t.leaf(random(&shape, -1.0, 1.0, seed), false);
    let prod = t.mul(out, r)?;
    Ok(t.sum(prod))
}

pub const TINY: Architecture = Architecture {
    in_channels: 1,
    image_size: 6,
    conv1_channels: 2,
    conv2_channels: 3,
    hidden: 5,
    classes: 4,
};

fn bound_from(v: &[Var]) -> BoundParams {
    BoundParams {
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
    }
}

/// Every differentiable op and the full training objective, in 64-bit.
pub fn gradient_suite() -> Vec<GradCase> {
    let opts = GradCheckOptions::default();
    let mut cases = Vec::new();
    let mut push = |name, report: Result<GradCheckReport>, tolerance| {
        cases.push(GradCase {
            name,
            report: report.expect("gradient check runs"),
            tolerance,
        })
    };

    push(
        "conv2d",
        check_gradients(
            &[random(&[2, 2, 5, 5], -1.0, 1.0, 1), random(&[3, 2, 3, 3], -0.5, 0.5, 2), random(&[3], -0.5, 0.5, 3)],
            |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
                weighted_sum(t, y, 10)
            },
            &opts,
        ),
        1e-4,
    );
    push(
        "conv2d_stride2_valid",
        check_gradients(
            &[random(&[1, 3, 7, 7], -1.0, 1.0, 4), random(&[2, 3, 3, 3], -0.5, 0.5, 5), random(&[2], -0.5, 0.5, 6)],
            |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 2, 0)?;
                weighted_sum(t, y, 11)
            },
            &opts,
        ),
        1e-4,
    );
    push(
        "linear",
        check_gradients(
            &[random(&[3, 4], -1.0, 1.0, 7), random(&[5, 4], -1.0, 1.0, 8), random(&[5], -1.0, 1.0, 9)],
            |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                weighted_sum(t, y, 12)
            },
            &opts,
        ),
        1e-4,
    );
    push(
        "relu",
        check_gradients(
            &[away_from_zero(&[4, 6], 0.05, 13)],
            |t, v| {
                let y = t.relu(v[0]);
                weighted_sum(t, y, 14)
            },
            &opts,
        ),
        1e-4,
    );
    push(
        "log_softmax",
        check_gradients(
            &[random(&[3, 5], -2.0, 2.0, 15)],
            |t, v| {
                let y = t.log_softmax(v[0])?;
                weighted_sum(t, y, 16)
            },
            &opts,
        ),
        1e-4,
    );
    push(
        "cross_entropy",
        check_gradients(
            &[random(&[4, 6], -2.0, 2.0, 17)],
            |t, v| {
                let lp = t.log_softmax(v[0])?;
                t.cross_entropy(lp, &[0, 5, 2, 2])
            },
            &opts,
        ),
        1e-4,
    );
    push(
        "kl_divergence",
        check_gradients(
            &[random(&[3, 5], -2.0, 2.0, 18), random(&[3, 5], -2.0, 2.0, 19)],
            |t, v| {
                let lp = t.log_softmax(v[0])?;
                let lq = t.log_softmax(v[1])?;
                t.kl_divergence(lp, lq)
            },
            &opts,
        ),
        1e-4,
    );
    push(
        "pact_clip_with_alpha",
        check_gradients(
            &[away_from_zero(&[5, 6], 0.0, 20).map(|x| x * 3.0), Tensor::new([1], vec![1.3]).unwrap()],
            |t, v| {
                let y = t.pact_clip(v[0], v[1])?;
                weighted_sum(t, y, 21)
            },
            &opts,
        ),
        1e-4,
    );
    push("full_model_composite", composite_report(&opts), 1e-3);
    cases
}

/// CE + KL between clean and perturbed inputs through the whole network,
/// with PACT clipping active and the rounding quantizers off (their true
/// derivative is zero almost everywhere, so they are covered by the STE
/// oracle instead). Every parameter, both clip levels included, is probed.
fn composite_report(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut model: CnnModel<f64> = CnnModel::new(TINY, BitConfig::quantized(4, 2)?, &mut rng::stream(3, rng::INIT));
    model.conv1.alpha.value = 0.35;
    model.conv2.alpha.value = 0.2;
    model.switches = QuantSwitches {
        weights: false,
        activations: false,
    };
    let mut inputs: Vec<Tensor<f64>> = model.tensors().iter().map(|t| (*t).clone()).collect();
    inputs.push(Tensor::new([1], vec![model.conv1.alpha.value])?);
    inputs.push(Tensor::new([1], vec![model.conv2.alpha.value])?);
    let x = random(&[3, 1, 6, 6], 0.0, 1.0, 30);
    let xt = random(&[3, 1, 6, 6], 0.0, 1.0, 31);
    let labels = [1, 3, 0];
    check_gradients(
        &inputs,
        |t, v| {
            let p = bound_from(v);
            let xv = t.leaf(x.clone(), false);
            let xtv = t.leaf(xt.clone(), false);
            let logits = model.forward(t, &p, xv)?;
            let lp = t.log_softmax(logits)?;
            let ce = t.cross_entropy(lp, &labels)?;
            let logits_t = model.forward(t, &p, xtv)?;
            let lq = t.log_softmax(logits_t)?;
            let kl = t.kl_divergence(lp, lq)?;
            let kl = t.scale(kl, 0.7);
            t.add(ce, kl)
        },
        &GradCheckOptions {
            max_per_input: Some(12),
            ..*opts
        },
    )
}

pub fn weights_strategy() -> impl Strategy<Value = (Vec<f64>, u8)> {
    (prop::collection::vec(-4.0f64..4.0, 1..64), 2u8..=8)
}

fn fq(w: &[f64], bits: u8) -> Vec<f64> {
    let t = Tensor::new([w.len()], w.to_vec()).unwrap();
    quant::fake_quant_weights(&t, bits).unwrap().into_data()
}

pub fn prop_idempotent((w, bits): (Vec<f64>, u8)) -> std::result::Result<(), TestCaseError> {
    let once = fq(&w, bits);
    let twice = fq(&once, bits);
    prop_assert_eq!(
        once.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        twice.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    Ok(())
}

pub fn prop_level_count((w, bits): (Vec<f64>, u8)) -> std::result::Result<(), TestCaseError> {
    let mut q: Vec<u64> = fq(&w, bits).iter().map(|v| v.to_bits()).collect();
    q.sort_unstable();
    q.dedup();
    prop_assert!(q.len() as u64 <= 1u64 << bits);
    Ok(())
}

pub fn prop_monotone((w, bits): (Vec<f64>, u8)) -> std::result::Result<(), TestCaseError> {
    let q = fq(&w, bits);
    for i in 0..w.len() {
        for j in 0..w.len() {
            if w[i] <= w[j] {
                prop_assert!(q[i] <= q[j], "w {} <= {} but q {} > {}", w[i], w[j], q[i], q[j]);
            }
        }
    }
    Ok(())
}

pub fn prop_error_bound((w, bits): (Vec<f64>, u8)) -> std::result::Result<(), TestCaseError> {
    let t = Tensor::new([w.len()], w.clone()).unwrap();
    let step = quant::weight_quant_params(&t, BitWidth::new(bits).unwrap()).step;
    for (x, q) in w.iter().zip(fq(&w, bits)) {
        prop_assert!((x - q).abs() <= step / 2.0 * (1.0 + 1e-12), "|{x} - {q}| > {}", step / 2.0);
    }
    Ok(())
}

/// Tape gradient through `fake_quant` versus an indicator built from an
/// explicit enumeration of the grid.
pub fn prop_ste_indicator((w, bits): (Vec<f64>, u8)) -> std::result::Result<(), TestCaseError> {
    let t = Tensor::new([w.len()], w.clone()).unwrap();
    let width = BitWidth::new(bits).unwrap();
    let step = quant::weight_quant_params(&t, width).step;
    let half = 1i64 << (bits - 1);
    let levels: Vec<f64> = (-half..half).map(|q| q as f64 * step).collect();
    let lo = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut tape = Tape::<f64>::new();
    let v = tape.leaf(t, true);
    let q = tape.fake_quant(v, width);
    let s = tape.sum(q);
    let grads = tape.backward(s).unwrap();
    let g = grads.get(v).unwrap();
    for (x, &gi) in w.iter().zip(g.data()) {
        let expected = if step == 0.0 || (*x > lo && *x < hi) { 1.0 } else { 0.0 };
        prop_assert_eq!(gi, expected, "w = {}", x);
    }
    Ok(())
}

pub fn pact_strategy() -> impl Strategy<Value = (f64, u8, Vec<f64>)> {
    (0.01f64..20.0, 2u8..=8, prop::collection::vec(-1.0f64..=1.0, 1..32))
}

/// Grid endpoints are hit exactly and every output is one of `2^b` levels.
pub fn prop_pact_endpoints((alpha, bits, unit): (f64, u8, Vec<f64>)) -> std::result::Result<(), TestCaseError> {
    let mut a: Vec<f64> = unit.iter().map(|u| u * alpha).collect();
    a.push(alpha);
    a.push(-alpha);
    let t = Tensor::new([a.len()], a.clone()).unwrap();
    let q = quant::pact_quantize(&t, alpha, bits).unwrap().into_data();
    prop_assert_eq!(q[q.len() - 2], alpha);
    prop_assert_eq!(q[q.len() - 1], -alpha);
    let step = 2.0 * alpha / ((1u64 << bits) - 1) as f64;
    for (x, y) in a.iter().zip(&q) {
        prop_assert!(*y >= -alpha && *y <= alpha);
        prop_assert!((x - y).abs() <= step / 2.0 * (1.0 + 1e-9) + 1e-15);
    }
    let mut distinct: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    prop_assert!(distinct.len() as u64 <= 1u64 << bits);
    Ok(())
}

/// Runs every quantizer property through a proptest runner and returns
/// `(name, outcome)` pairs.
pub fn quantizer_properties(cases: u32) -> Vec<(&'static str, std::result::Result<(), String>)> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut out = Vec::new();
    let weight_props: [(&'static str, fn((Vec<f64>, u8)) -> std::result::Result<(), TestCaseError>); 5] = [
        ("idempotence", prop_idempotent),
        ("at_most_2^b_levels", prop_level_count),
        ("monotonicity", prop_monotone),
        ("error_within_half_step", prop_error_bound),
        ("ste_indicator_oracle", prop_ste_indicator),
    ];
    for (name, prop) in weight_props {
        let mut runner = TestRunner::new(config.clone());
        out.push((name, runner.run(&weights_strategy(), prop).map_err(|e| e.to_string())));
    }
    let mut runner = TestRunner::new(config);
    out.push((
        "pact_endpoints_exact",
        runner.run(&pact_strategy(), prop_pact_endpoints).map_err(|e| e.to_string()),
    ));
    out
}
