mod common;

use drift_core::nnet::loss_and_grad_with_velocity;
use drift_core::*;

fn setup(act: Activation, seed: u64) -> (Mlp<f64>, PointCloud64, PointCloud64) {
    let mut rng = RngState::new(seed);
    let net = Mlp::new(&[2, 16, 16, 2], act, &mut rng).unwrap();
    let e = sample_prior(24, 2, &mut rng).unwrap();
    let y = sample(&ToyTarget::eight_gaussians(), 24, &mut rng).unwrap();
    (net, e, y)
}

#[test]
fn backprop_matches_finite_differences() {
    let schemes = [
        Scheme::OneSided,
        Scheme::TwoSided,
        Scheme::Sinkhorn(SinkhornStop::HalfSteps(61)),
    ];
    for act in [Activation::Relu, Activation::Tanh] {
        for (s, scheme) in schemes.into_iter().enumerate() {
            let (net, e, y) = setup(act, 100 + s as u64);
            let cfg = DriftConfig::new(scheme, 0.5, CostKind::SqEuclidean);
            let mut rng = RngState::new(7);
            for c in common::finite_difference_check(&net, &e, &y, &cfg, 20, 1e-6, &mut rng) {
                assert!(c.checked >= 20, "{act:?} {scheme}: {c:?}");
                assert!(c.max_rel_err < 1e-5, "{act:?} {scheme}: {c:?}");
            }
        }
    }
}

#[test]
fn gradient_is_minus_jacobian_transpose_velocity() {
    let (net, e, y) = setup(Activation::Tanh, 3);
    let cfg = DriftConfig::new(Scheme::Sinkhorn(SinkhornStop::HalfSteps(61)), 0.3, CostKind::SqEuclidean);
    let (loss, grads, v) = drifting_loss_and_grad(&net, &e, &y, &cfg).unwrap();
    let n = e.n() as f64;
    let half_sq: f64 = v.iter().map(|x| 0.5 * x * x).sum::<f64>() / n;
    assert!((loss - half_sq).abs() <= 1e-15 * half_sq.max(1.0));

    let (_, cache) = net.forward_cached(e.points()).unwrap();
    let expected = net.backward(&cache, (&v * (-1.0 / n)).view());
    for (g, x) in grads.layers.iter().zip(&expected.layers) {
        let scale = x.weight.iter().chain(&x.bias).fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = common::max_abs_diff(&g.weight, &x.weight)
            .max(g.bias.iter().zip(&x.bias).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
        assert!(diff <= 1e-12 * scale, "{diff} vs {scale}");
    }

    let (loss2, grads2) = loss_and_grad_with_velocity(&net, &e, v.view()).unwrap();
    assert_eq!(loss, loss2);
    assert_eq!(grads, grads2);
}

#[test]
fn gradient_ignores_dependence_of_velocity_on_parameters() {
    // Differentiating through V would change the result; the detached gradient must not.
    let (net, e, y) = setup(Activation::Tanh, 4);
    let cfg = DriftConfig::new(Scheme::OneSided, 0.5, CostKind::SqEuclidean);
    let (_, grads, _) = drifting_loss_and_grad(&net, &e, &y, &cfg).unwrap();
    let h = 1e-6;
    let full_loss = |delta: f64| {
        let mut p = net.clone();
        p.layers_mut()[0].bias[0] += delta;
        drifting_loss_and_grad(&p, &e, &y, &cfg).unwrap().0
    };
    let through_v = (full_loss(h) - full_loss(-h)) / (2.0 * h);
    let detached = grads.layers[0].bias[0];
    assert!((through_v - detached).abs() > 1e-3 * detached.abs(), "{through_v} vs {detached}");
}
