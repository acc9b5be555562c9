//! Dense rectifier networks with backpropagation and momentum SGD.

mod flat;
mod network;
mod optim;

pub use flat::FlatGradient;
pub(crate) use flat::{cosine_with_norm, dot};
pub use network::{DistillTargets, LayerParams, LayerSlot, LossHead, Network, NetworkSpec, ParamLayout};
pub(crate) use network::softmax_inplace;
pub use optim::{Sgd, DEFAULT_MOMENTUM};

#[cfg(test)]
mod tests {
    use ndarray::{array, s, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    fn random_batch(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn parameter_counts() {
        let net = Network::new(NetworkSpec::dnn_100(784, 10), 1).unwrap();
        assert_eq!(net.param_count(), 79_510);
        let deep = NetworkSpec::dnn_400x3(784, 10);
        assert_eq!(deep.param_count(), 784 * 400 + 400 + 2 * (400 * 400 + 400) + 400 * 10 + 10);
    }

    #[test]
    fn zero_width_layer_is_rejected() {
        let spec = NetworkSpec::new(4, vec![3, 0], 2, LossHead::SoftmaxCrossEntropy);
        assert!(matches!(Network::new(spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::new(NetworkSpec::dnn_100(784, 10), 7).unwrap();
        let b = Network::new(NetworkSpec::dnn_100(784, 10), 7).unwrap();
        assert_eq!(a.params(), b.params());
        let c = Network::new(NetworkSpec::dnn_100(784, 10), 8).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_network_gives_zero_logits_and_features() {
        let net = Network::zeros(NetworkSpec::new(5, vec![4], 3, LossHead::SoftmaxCrossEntropy)).unwrap();
        let x = random_batch(&mut ChaCha8Rng::seed_from_u64(0), 6, 5);
        assert!(net.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
        assert!(net.penultimate_features(x.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_hand_computation() {
        let spec = NetworkSpec::new(3, vec![2], 2, LossHead::SoftmaxCrossEntropy);
        let mut net = Network::zeros(spec).unwrap();
        let w1 = array![[0.5, -1.0], [0.25, 2.0], [-0.75, 0.1]];
        let b1 = array![0.1, -0.2];
        let w2 = array![[1.5, -0.5], [0.3, 0.7]];
        let b2 = array![0.05, -0.05];
        let flat = net
            .layout()
            .flatten(&[
                LayerParams { weights: w1.clone(), bias: b1.clone() },
                LayerParams { weights: w2.clone(), bias: b2.clone() },
            ])
            .unwrap();
        net.load_flat(&flat).unwrap();
        let x = [[0.2, -0.4, 0.9], [1.0, 0.5, -0.3]];
        let out = net.forward(array![[0.2, -0.4, 0.9], [1.0, 0.5, -0.3]].view()).unwrap();
        for (r, row) in x.iter().enumerate() {
            let mut h = [0.0; 2];
            for j in 0..2 {
                let mut z = b1[j];
                for i in 0..3 {
                    z += row[i] * w1[[i, j]];
                }
                h[j] = if z > 0.0 { z } else { 0.0 };
            }
            for k in 0..2 {
                let mut z = b2[k];
                for j in 0..2 {
                    z += h[j] * w2[[j, k]];
                }
                assert!((out[[r, k]] - z).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_row_matches_row_in_batch() {
        let net = Network::new(NetworkSpec::dnn_100(20, 10), 3).unwrap();
        let x = random_batch(&mut ChaCha8Rng::seed_from_u64(1), 50, 20);
        let full = net.forward(x.view()).unwrap();
        let one = net.forward(x.slice(s![17..18, ..])).unwrap();
        assert_eq!(one.row(0), full.row(17));
    }

    #[test]
    fn features_recompose_to_logits() {
        let net = Network::new(NetworkSpec::new(8, vec![6, 5], 4, LossHead::SoftmaxCrossEntropy), 11).unwrap();
        let x = random_batch(&mut ChaCha8Rng::seed_from_u64(2), 9, 8);
        let feats = net.penultimate_features(x.view()).unwrap();
        assert_eq!(feats.ncols(), 5);
        let layers = net.layers();
        let last = layers.last().unwrap();
        let recomposed = feats.dot(&last.weights) + &last.bias;
        let logits = net.forward(x.view()).unwrap();
        for (a, b) in recomposed.iter().zip(logits.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let hundred = Network::new(NetworkSpec::dnn_100(8, 10), 0).unwrap();
        assert_eq!(hundred.penultimate_features(x.view()).unwrap().ncols(), 100);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let net = Network::new(NetworkSpec::dnn_100(8, 10), 0).unwrap();
        let x = Array2::zeros((2, 7));
        assert!(matches!(net.forward(x.view()), Err(Error::Shape { .. })));
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let net = Network::zeros(NetworkSpec::dnn_100(4, 10)).unwrap();
        let x = random_batch(&mut ChaCha8Rng::seed_from_u64(3), 5, 4);
        let (loss, _) = net.loss_and_gradient(x.view(), &[0, 3, 9, 2, 2], None).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let net = Network::zeros(NetworkSpec::dnn_100(4, 10)).unwrap();
        let x = Array2::zeros((1, 4));
        assert!(matches!(
            net.loss_and_gradient(x.view(), &[10], None),
            Err(Error::Label { label: 10, classes: 10 })
        ));
    }

    #[test]
    fn one_hot_distillation_equals_plain_bce() {
        let spec = NetworkSpec::new(6, vec![5], 4, LossHead::SigmoidBce);
        let net = Network::new(spec, 5).unwrap();
        let x = random_batch(&mut ChaCha8Rng::seed_from_u64(4), 7, 6);
        let labels = [0, 1, 2, 3, 0, 1, 2];
        let targets = Array2::from_shape_fn((7, 4), |(i, c)| f64::from(u8::from(labels[i] == c)));
        let mask = [true, true, false, true];
        let plain = net.loss_and_gradient(x.view(), &labels, None).unwrap();
        let distilled = net
            .loss_and_gradient(
                x.view(),
                &labels,
                Some(DistillTargets { targets: targets.view(), old_classes: &mask }),
            )
            .unwrap();
        assert_eq!(plain.0, distilled.0);
        assert_eq!(plain.1, distilled.1);
    }

    #[test]
    fn distillation_requires_sigmoid_head() {
        let net = Network::zeros(NetworkSpec::new(2, vec![2], 2, LossHead::SoftmaxCrossEntropy)).unwrap();
        let x = Array2::zeros((1, 2));
        let t = Array2::zeros((1, 2));
        let r = net.loss_and_gradient(x.view(), &[0], Some(DistillTargets { targets: t.view(), old_classes: &[true, false] }));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    /// Central differences on every coordinate, relative error
    /// `|a - n| / max(|a|, |n|, 1e-5)`.
    pub(crate) fn max_fd_relative_error(net: &Network, x: &Array2<f64>, labels: &[usize], distill: Option<DistillTargets<'_>>) -> f64 {
        let (_, grad) = net.loss_and_gradient(x.view(), labels, distill).unwrap();
        let eps = 1e-5;
        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for i in 0..net.param_count() {
            let orig = net.params()[i];
            probe.params_mut()[i] = orig + eps;
            let (up, _) = probe.loss_and_gradient(x.view(), labels, distill).unwrap();
            probe.params_mut()[i] = orig - eps;
            let (down, _) = probe.loss_and_gradient(x.view(), labels, distill).unwrap();
            probe.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.as_slice()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences_8_4_3() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let net = Network::new(NetworkSpec::new(8, vec![4], 3, LossHead::SoftmaxCrossEntropy), 42).unwrap();
        let x = random_batch(&mut rng, 5, 8);
        assert!(max_fd_relative_error(&net, &x, &[0, 1, 2, 1, 0], None) <= 1e-4);
    }

    #[test]
    fn sigmoid_distillation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Network::new(NetworkSpec::new(5, vec![4, 3], 4, LossHead::SigmoidBce), 9).unwrap();
        let x = random_batch(&mut rng, 6, 5);
        let targets = Array2::from_shape_fn((6, 4), |_| rng.gen_range(0.0..1.0));
        let mask = [true, false, true, false];
        let d = DistillTargets { targets: targets.view(), old_classes: &mask };
        assert!(max_fd_relative_error(&net, &x, &[0, 1, 2, 3, 1, 3], Some(d)) <= 1e-4);
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut net = Network::new(NetworkSpec::new(3, vec![2], 2, LossHead::SoftmaxCrossEntropy), 1).unwrap();
        let before = net.flatten();
        let g = FlatGradient::new((0..net.param_count()).map(|i| i as f64 * 0.1).collect());
        let mut opt = Sgd::new(0.5, 0.0, &net).unwrap();
        opt.step(&mut net, &g).unwrap();
        for ((a, b), gi) in net.params().iter().zip(&before).zip(g.as_slice()) {
            assert_eq!(*a, b - 0.5 * gi);
        }
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut net = Network::new(NetworkSpec::new(3, vec![2], 2, LossHead::SoftmaxCrossEntropy), 1).unwrap();
        let before = net.flatten();
        let mut opt = Sgd::new(0.1, 0.9, &net).unwrap();
        opt.step(&mut net, &FlatGradient::zeros(before.len())).unwrap();
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn two_momentum_steps_closed_form() {
        let mut net = Network::new(NetworkSpec::new(3, vec![2], 2, LossHead::SoftmaxCrossEntropy), 1).unwrap();
        let before = net.flatten();
        let g = FlatGradient::new((0..net.param_count()).map(|i| 0.3 - i as f64 * 0.05).collect());
        let (lr, m) = (0.01, 0.9);
        let mut opt = Sgd::new(lr, m, &net).unwrap();
        opt.step(&mut net, &g).unwrap();
        opt.step(&mut net, &g).unwrap();
        for ((a, b), gi) in net.params().iter().zip(&before).zip(g.as_slice()) {
            assert!(((a - b) - (-lr * gi * (2.0 + m))).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_wrong_length() {
        let mut net = Network::new(NetworkSpec::new(3, vec![2], 2, LossHead::SoftmaxCrossEntropy), 1).unwrap();
        let mut opt = Sgd::new(0.1, 0.9, &net).unwrap();
        assert!(matches!(opt.step(&mut net, &FlatGradient::zeros(3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn single_weight_perturbation_touches_one_coordinate() {
        let mut net = Network::new(NetworkSpec::new(4, vec![3], 2, LossHead::SoftmaxCrossEntropy), 2).unwrap();
        let before = net.flatten();
        let mut layers = net.layers();
        layers[1].weights[[2, 1]] += 0.125;
        net.load_flat(&net.layout().flatten(&layers).unwrap()).unwrap();
        let after = net.flatten();
        let changed: Vec<usize> = (0..before.len()).filter(|&i| before[i] != after[i]).collect();
        assert_eq!(changed, vec![net.layout().weight_index(1, 2, 1)]);
    }

    #[test]
    fn layout_is_stable_and_validates_length() {
        let a = NetworkSpec::dnn_100(12, 10).layout();
        let b = NetworkSpec::dnn_100(12, 10).layout();
        assert_eq!(a, b);
        assert_eq!(a.bias_index(0, 0), 12 * 100);
        assert!(matches!(a.unflatten(&[0.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn overfits_small_separable_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((10, 4), |(i, j)| {
            let centre = if labels[i] == 0 { 0.2 } else { 0.8 };
            centre + if j % 2 == 0 { 0.05 } else { -0.05 } * rng.gen_range(0.0..1.0)
        });
        let mut net = Network::new(NetworkSpec::new(4, vec![8], 2, LossHead::SoftmaxCrossEntropy), 3).unwrap();
        let mut opt = Sgd::new(1e-2, 0.9, &net).unwrap();
        for _ in 0..200 {
            let (_, g) = net.loss_and_gradient(x.view(), &labels, None).unwrap();
            opt.step(&mut net, &g).unwrap();
        }
        assert_eq!(net.predict(x.view()).unwrap(), labels);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let x = random_batch(&mut rng, 16, 6);
            let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
            let mut net = Network::new(NetworkSpec::new(6, vec![5], 3, LossHead::SoftmaxCrossEntropy), 4).unwrap();
            let mut opt = Sgd::new(0.05, 0.9, &net).unwrap();
            for _ in 0..25 {
                let (_, g) = net.loss_and_gradient(x.view(), &labels, None).unwrap();
                opt.step(&mut net, &g).unwrap();
            }
            net.flatten()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(values in proptest::collection::vec(-10.0f64..10.0, 3 * 4 + 4 + 4 * 2 + 2)) {
            let layout = NetworkSpec::new(3, vec![4], 2, LossHead::SoftmaxCrossEntropy).layout();
            let layers = layout.unflatten(&values).unwrap();
            prop_assert_eq!(layout.flatten(&layers).unwrap(), values);
        }

        #[test]
        fn random_small_nets_pass_gradient_check(seed in 0u64..1000, din in 1usize..6, h in 1usize..6, dout in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::new(NetworkSpec::new(din, vec![h], dout, LossHead::SoftmaxCrossEntropy), seed).unwrap();
            let x = random_batch(&mut rng, 4, din);
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..dout)).collect();
            // finite differences are meaningless across a ReLU kink
            let first = &net.layers()[0];
            let pre = x.dot(&first.weights) + &first.bias;
            prop_assume!(pre.iter().all(|v| v.abs() > 1e-3));
            prop_assert!(max_fd_relative_error(&net, &x, &labels, None) <= 1e-4);
        }
    }
}
