use super::*;
use crate::gradcheck::{
    fd_grad_theta, fd_hvp, fd_label_contraction, fd_logit_jvp, random_instance, relative_error,
    InstanceFamily,
};
use crate::ndcore::{cholesky_solve, max_abs_diff, Rng};
use proptest::prelude::*;

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

#[test]
fn parameter_layout_is_layerwise_weights_then_bias() {
    let cfg = MlpConfig {
        input_dim: 3,
        hidden_dim: 4,
        num_hidden_layers: 2,
        output_dim: 2,
        activation: Activation::Relu,
    };
    let model = Model::mlp(&cfg, LossKind::SoftmaxCrossEntropy).unwrap();
    assert_eq!(model.num_params(), 3 * 4 + 4 + 4 * 4 + 4 + 4 * 2 + 2);
    let offsets: Vec<_> = model
        .layers()
        .iter()
        .map(|l| (l.w_offset, l.b_offset))
        .collect();
    assert_eq!(offsets, vec![(0, 12), (16, 32), (36, 44)]);
    assert_eq!(Model::linear(5).unwrap().num_params(), 5);
}

#[test]
fn invalid_mlp_config_rejected() {
    let cfg = MlpConfig::four_layer(0, 8, 2);
    assert!(Model::mlp(&cfg, LossKind::MeanSquaredError).is_err());
}

#[test]
fn linear_loss_is_half_mean_squared_residual() {
    let mut rng = Rng::new(1);
    let x = random_matrix(&mut rng, 20, 4);
    let y = random_matrix(&mut rng, 20, 1);
    let model = Model::linear(4).unwrap();

    // Least-squares solution: zero gradient, loss equals residual energy.
    let xty = x.t_matvec(y.as_slice()).unwrap();
    let theta_star = cholesky_solve(&x.gram(1.0), &xty).unwrap();
    let g = model.grad_theta(&theta_star, &x, &y).unwrap();
    assert!(g.norm_inf() < 1e-12);
    let resid: f64 = (0..20)
        .map(|i| (y.get(i, 0) - crate::ndcore::dot(x.row(i), &theta_star)).powi(2))
        .sum();
    let loss = model.loss(&theta_star, &x, &y).unwrap();
    assert!((loss - resid / 40.0).abs() < 1e-14);

    // Exact labels: zero loss and zero gradient.
    let theta: Vec<f64> = vec![0.5, -1.0, 2.0, 0.25];
    let y_exact = Matrix::column(&x.matvec(&theta).unwrap());
    assert!(model.loss(&theta, &x, &y_exact).unwrap() < 1e-28);
    assert!(model.grad_theta(&theta, &x, &y_exact).unwrap().norm_inf() < 1e-14);
}

#[test]
fn linear_gradient_at_zero_is_negative_moment() {
    let mut rng = Rng::new(2);
    let x = random_matrix(&mut rng, 10, 3);
    let y = random_matrix(&mut rng, 10, 1);
    let model = Model::linear(3).unwrap();
    let g = model.grad_theta(&[0.0; 3], &x, &y).unwrap();
    let expected = x.t_matvec(y.as_slice()).unwrap().scaled(-1.0 / 10.0);
    assert!(max_abs_diff(&g, &expected) < 1e-15);
}

#[test]
fn linear_closed_forms_for_jvp_contraction_and_hvp() {
    let mut rng = Rng::new(3);
    let n = 12;
    let x = random_matrix(&mut rng, n, 4);
    let y = random_matrix(&mut rng, n, 1);
    let model = Model::linear(4).unwrap();
    let theta: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let v: Vec<f64> = (0..4).map(|_| rng.normal()).collect();

    let xv = x.matvec(&v).unwrap();
    let jvp = model.logit_jvp(&theta, &x, &v).unwrap();
    assert!(max_abs_diff(jvp.as_slice(), &xv) < 1e-14);

    let c = model.grad_label_contraction(&theta, &x, &v).unwrap();
    let expected: Vec<f64> = xv.iter().map(|a| -a / n as f64).collect();
    assert!(max_abs_diff(c.as_slice(), &expected) < 1e-15);

    let hv = model.hvp(&theta, &x, &y, &v).unwrap();
    let expected = x.gram(n as f64).matvec(&v).unwrap();
    assert!(max_abs_diff(&hv, &expected) < 1e-14);

    let zero = vec![0.0; 4];
    assert_eq!(model.logit_jvp(&theta, &x, &zero).unwrap().max_abs(), 0.0);
    assert_eq!(
        model
            .grad_label_contraction(&theta, &x, &zero)
            .unwrap()
            .max_abs(),
        0.0
    );
    assert_eq!(model.hvp(&theta, &x, &y, &zero).unwrap().norm_inf(), 0.0);
}

#[test]
fn uniform_prediction_cross_entropy_is_log_k() {
    // All-zero parameters give zero logits and a uniform prediction.
    let k = 5;
    let model = Model::mlp(
        &MlpConfig::four_layer(3, 4, k),
        LossKind::SoftmaxCrossEntropy,
    )
    .unwrap();
    let theta = vec![0.0; model.num_params()];
    let mut rng = Rng::new(4);
    let x = random_matrix(&mut rng, 7, 3);
    let y = LabelParam::Softmax.apply(&random_matrix(&mut rng, 7, k));
    let loss = model.loss(&theta, &x, &y).unwrap();
    assert!((loss - (k as f64).ln()).abs() < 1e-14);
}

#[test]
fn cross_entropy_rejects_non_simplex_labels() {
    let model = Model::mlp(
        &MlpConfig::four_layer(2, 3, 3),
        LossKind::SoftmaxCrossEntropy,
    )
    .unwrap();
    let theta = vec![0.0; model.num_params()];
    let x = Matrix::zeros(2, 2);
    let y = Matrix::from_rows(&[vec![0.5, 0.5, 0.0], vec![0.5, 0.6, 0.0]]).unwrap();
    assert!(matches!(
        model.loss(&theta, &x, &y),
        Err(Error::NonSimplexLabels { row: 1, .. })
    ));
    assert!(model.grad_theta(&theta, &x, &y).is_err());
    assert!(model.grad_theta_affine(&theta, &x, &y).is_ok());
}

#[test]
fn shape_mismatches_rejected() {
    let model = Model::linear(3).unwrap();
    let x = Matrix::zeros(4, 2);
    let y = Matrix::zeros(4, 1);
    assert!(matches!(
        model.loss(&[0.0; 3], &x, &y),
        Err(Error::ShapeMismatch { .. })
    ));
    let x = Matrix::zeros(4, 3);
    assert!(model.loss(&[0.0; 2], &x, &y).is_err());
    assert!(model.loss(&[0.0; 3], &x, &Matrix::zeros(3, 1)).is_err());
    assert!(model.hvp(&[0.0; 3], &x, &y, &[0.0; 4]).is_err());
}

#[test]
fn saturated_cross_entropy_is_clamped() {
    // Huge logits for the wrong class: log-probability floored at ln(1e-12).
    let model = Model::mlp(
        &MlpConfig {
            input_dim: 1,
            hidden_dim: 1,
            num_hidden_layers: 1,
            output_dim: 2,
            activation: Activation::Relu,
        },
        LossKind::SoftmaxCrossEntropy,
    )
    .unwrap();
    // hidden = relu(x), logits = (1000 h, 0)
    let theta = vec![1.0, 0.0, 1000.0, 0.0, 0.0, 0.0];
    let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
    let y = Matrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
    let loss = model.loss(&theta, &x, &y).unwrap();
    assert!((loss + CE_PROB_FLOOR.ln()).abs() < 1e-12);
    let y_right = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
    assert!(model.loss(&theta, &x, &y_right).unwrap() < 1e-300);
}

#[test]
fn softmax_pullback_matches_finite_differences() {
    let mut rng = Rng::new(6);
    let w = random_matrix(&mut rng, 3, 4);
    let gy = random_matrix(&mut rng, 3, 4);
    let y = LabelParam::Softmax.apply(&w);
    let gw = LabelParam::Softmax.pullback(&y, &gy);
    let objective = |w: &Matrix| -> f64 {
        let y = LabelParam::Softmax.apply(w);
        crate::ndcore::dot(y.as_slice(), gy.as_slice())
    };
    let mut probe = w.clone();
    for i in 0..3 {
        for c in 0..4 {
            let base = w.get(i, c);
            probe.set(i, c, base + 1e-6);
            let plus = objective(&probe);
            probe.set(i, c, base - 1e-6);
            let minus = objective(&probe);
            probe.set(i, c, base);
            assert!(((plus - minus) / 2e-6 - gw.get(i, c)).abs() < 1e-9);
        }
    }
}

fn instance_strategy() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 0usize..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn analytic_derivatives_match_finite_differences((seed, fam) in instance_strategy()) {
        let mut rng = Rng::new(seed);
        let inst = random_instance(&mut rng, InstanceFamily::ALL[fam], 200, 32).unwrap();
        let (m, th, x, y, v) = (&inst.model, &inst.theta, &inst.x, &inst.y, &inst.direction);

        let g = m.grad_theta(th, x, y).unwrap();
        prop_assert!(relative_error(&g, &fd_grad_theta(m, th, x, y).unwrap()) <= 1e-6);

        let j = m.logit_jvp(th, x, v).unwrap();
        let j_fd = fd_logit_jvp(m, th, x, v).unwrap();
        prop_assert!(relative_error(j.as_slice(), j_fd.as_slice()) <= 1e-6);

        let c = m.grad_label_contraction(th, x, v).unwrap();
        let c_fd = fd_label_contraction(m, th, x, y, v).unwrap();
        prop_assert!(relative_error(c.as_slice(), c_fd.as_slice()) <= 1e-6);

        let hv = m.hvp(th, x, y, v).unwrap();
        prop_assert!(relative_error(&hv, &fd_hvp(m, th, x, y, v).unwrap()) <= 1e-5);
    }

    #[test]
    fn gradient_is_affine_in_labels((seed, fam) in instance_strategy(), alpha in 0.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let inst = random_instance(&mut rng, InstanceFamily::ALL[fam], 200, 32).unwrap();
        let other = random_instance(&mut rng, InstanceFamily::ALL[fam], 200, 32).unwrap();
        let (m, th, x, y1) = (&inst.model, &inst.theta, &inst.x, &inst.y);
        // A second label matrix of the right shape and kind.
        let y2 = match m.loss_kind() {
            LossKind::MeanSquaredError => y1.scaled(-0.5),
            LossKind::SoftmaxCrossEntropy => {
                let w = Matrix::from_vec(y1.rows(), y1.cols(),
                    (0..y1.rows() * y1.cols()).map(|i| (i as f64 + other.theta[0]).sin()).collect()).unwrap();
                LabelParam::Softmax.apply(&w)
            }
        };
        let mixed = Matrix::from_vec(y1.rows(), y1.cols(), y1.as_slice().iter().zip(y2.as_slice())
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect()).unwrap();
        let g1 = m.grad_theta(th, x, y1).unwrap();
        let g2 = m.grad_theta(th, x, &y2).unwrap();
        let gm = m.grad_theta(th, x, &mixed).unwrap();
        let combo: Vec<f64> = g1.iter().zip(g2.iter()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        prop_assert!(max_abs_diff(&gm, &combo) <= 1e-12);
    }

    #[test]
    fn label_contraction_oracle_is_label_independent((seed, fam) in instance_strategy()) {
        let mut rng = Rng::new(seed);
        let inst = random_instance(&mut rng, InstanceFamily::ALL[fam], 200, 32).unwrap();
        let (m, th, x, y, v) = (&inst.model, &inst.theta, &inst.x, &inst.y, &inst.direction);
        let y_other = y.scaled(0.3);
        let a = fd_label_contraction(m, th, x, y, v).unwrap();
        let b = fd_label_contraction(m, th, x, &y_other, v).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-8);
    }

    #[test]
    fn hvp_is_symmetric((seed, fam) in instance_strategy()) {
        let mut rng = Rng::new(seed);
        let inst = random_instance(&mut rng, InstanceFamily::ALL[fam], 200, 32).unwrap();
        let (m, th, x, y, v) = (&inst.model, &inst.theta, &inst.x, &inst.y, &inst.direction);
        let u: Vec<f64> = (0..m.num_params()).map(|_| rng.normal()).collect();
        let uhv = crate::ndcore::dot(&u, &m.hvp(th, x, y, v).unwrap());
        let vhu = crate::ndcore::dot(v, &m.hvp(th, x, y, &u).unwrap());
        prop_assert!((uhv - vhu).abs() <= 1e-10 * (1.0 + uhv.abs()));
    }
}
