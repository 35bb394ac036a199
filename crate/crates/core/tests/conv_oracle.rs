use proptest::prelude::*;
use rand::Rng;

use saliq::rng;
use saliq::tensor::kernels::{conv2d_backward, conv2d_forward, ConvAlgo};
use saliq::Tensor;

/// Six nested loops in the order channel, kernel row, kernel column, with
/// the bias added last.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((oi * c + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xo] = acc + b.data()[oi];
                }
            }
        }
    }
    Tensor::new([n, o, oh, ow], out).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 9);
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(-1.0..1.0))
}

fn geometry() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, usize, u64)> {
    (1usize..3, 1usize..4, 1usize..4, 1usize..4, 3usize..9, 1usize..3, 0usize..2, any::<u64>())
        .prop_filter("kernel fits", |(_, _, _, k, s, _, p, _)| s + 2 * p >= *k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn direct_path_is_bit_identical_to_loops((n, c, o, k, s, stride, pad, seed) in geometry()) {
        let x = random(&[n, c, s, s], seed);
        let w = random(&[o, c, k, k], seed ^ 1);
        let b = random(&[o], seed ^ 2);
        let got = conv2d_forward(&x, &w, &b, stride, pad, ConvAlgo::Direct).unwrap();
        prop_assert_eq!(got, naive_conv(&x, &w, &b, stride, pad));
    }

    #[test]
    fn im2col_path_within_rounding((n, c, o, k, s, stride, pad, seed) in geometry()) {
        let x = random(&[n, c, s, s], seed);
        let w = random(&[o, c, k, k], seed ^ 1);
        let b = random(&[o], seed ^ 2);
        let got = conv2d_forward(&x, &w, &b, stride, pad, ConvAlgo::Im2col).unwrap();
        let want = naive_conv(&x, &w, &b, stride, pad);
        for (a, e) in got.data().iter().zip(want.data()) {
            prop_assert!((a - e).abs() <= 1e-12, "{} vs {}", a, e);
        }
    }

    /// The backward pass is the adjoint of the forward map:
    /// <dY, conv(X)> = <dX, X> + <dW, W> + <db, b> for a bilinear-plus-bias map.
    #[test]
    fn backward_is_adjoint((n, c, o, k, s, stride, pad, seed) in geometry()) {
        let x = random(&[n, c, s, s], seed);
        let w = random(&[o, c, k, k], seed ^ 1);
        let b = random(&[o], seed ^ 2);
        let y = naive_conv(&x, &w, &b, stride, pad);
        let dy = random(y.shape(), seed ^ 3);
        let g = conv2d_backward(&x, &w, &b, &dy, stride, pad, [true, true, true]).unwrap();
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&dy, &y);
        let bias_part = dot(g.bias.as_ref().unwrap(), &b);
        // conv(X) without bias is linear in X and in W separately
        prop_assert!((lhs - bias_part - dot(g.input.as_ref().unwrap(), &x)).abs() <= 1e-9 * lhs.abs().max(1.0));
        prop_assert!((lhs - bias_part - dot(g.weight.as_ref().unwrap(), &w)).abs() <= 1e-9 * lhs.abs().max(1.0));
    }
}

#[test]
fn weight_gradient_independent_of_batch_grouping() {
    // 19 images straddle several reduction groups
    let x = random(&[19, 2, 6, 6], 1);
    let w = random(&[3, 2, 3, 3], 2);
    let b = random(&[3], 3);
    let dy = random(&[19, 3, 6, 6], 4);
    let all = conv2d_backward(&x, &w, &b, &dy, 1, 1, [false, true, false]).unwrap().weight.unwrap();
    let mut summed = Tensor::zeros(w.shape());
    for i in 0..19 {
        let g = conv2d_backward(&x.slice_outer(i, 1), &w, &b, &dy.slice_outer(i, 1), 1, 1, [false, true, false])
            .unwrap()
            .weight
            .unwrap();
        summed.add_assign(&g).unwrap();
    }
    for (a, e) in all.data().iter().zip(summed.data()) {
        assert!((a - e).abs() < 1e-12);
    }
}
