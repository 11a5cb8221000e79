mod support;

use catenary_core::geometry::{
    catenary_z, distance_to_model, error_vector, forward_point, yaw_rotation,
};
use catenary_core::loss::{loss_gradient, total_loss, LossWeights};
use catenary_core::{ConductorConfig, ParamVector, Point3, PointCloud};
use nalgebra::Vector3;
use proptest::prelude::*;
use support::*;

fn any_config() -> impl Strategy<Value = ConductorConfig> {
    prop_oneof![
        Just(ConductorConfig::single()),
        Just(ConductorConfig::three_two()),
        Just(ConductorConfig::double_circuit()),
    ]
}

proptest! {
    #[test]
    fn catenary_even_and_nonnegative(x in -5000.0..5000.0f64, a in 10.0..5000.0f64) {
        let z = catenary_z(x, a).unwrap();
        prop_assert_eq!(z, catenary_z(-x, a).unwrap());
        prop_assert!(z >= 0.0);
        if x != 0.0 {
            prop_assert!(z > 0.0 || (x / a).abs() < 1e-7);
        }
    }

    #[test]
    fn offsets_are_linear(
        config in any_config(),
        d1 in proptest::collection::vec(-10.0..10.0f64, 3),
        d2 in proptest::collection::vec(-10.0..10.0f64, 3),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
    ) {
        let l = config.l();
        let (d1, d2) = (&d1[..l], &d2[..l]);
        let mixed: Vec<f64> = d1.iter().zip(d2).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = config.offset_matrix(&mixed).unwrap();
        let rhs = config.offset_matrix(d1).unwrap() * alpha + config.offset_matrix(d2).unwrap() * beta;
        prop_assert!((lhs - rhs).amax() < 1e-9);

        let mut by_jacobian = nalgebra::Matrix3xX::zeros(config.q());
        for (d, j) in d1.iter().zip(config.offset_jacobians()) {
            by_jacobian += j * *d;
        }
        prop_assert_eq!(config.offset_matrix(d1).unwrap(), by_jacobian);
    }

    #[test]
    fn model_points_have_zero_residual(seed in 0u64..10_000, x_j in -150.0..150.0f64) {
        let mut r = rng(seed);
        for config in [ConductorConfig::three_two(), ConductorConfig::double_circuit()] {
            let p = random_params(&mut r, &config, (300.0, 3000.0));
            for k in 0..config.q() {
                let pt = forward_point(&p, &config, k, x_j).unwrap();
                prop_assert!(error_vector(&p, &config, k, &pt).unwrap().norm() < 1e-8);
            }
        }
    }

    #[test]
    fn translation_is_additive(seed in 0u64..10_000, t in proptest::array::uniform3(-100.0..100.0f64)) {
        let config = ConductorConfig::three_two();
        let mut r = rng(seed);
        let p = random_params(&mut r, &config, (300.0, 3000.0));
        let moved = ParamVector { x_o: p.x_o + t[0], y_o: p.y_o + t[1], z_o: p.z_o + t[2], ..p.clone() };
        for k in 0..5 {
            let a = forward_point(&p, &config, k, 12.5).unwrap();
            let b = forward_point(&moved, &config, k, 12.5).unwrap();
            prop_assert!((b - (a + Vector3::from(t))).norm() < 1e-9);
        }
    }

    #[test]
    fn distance_is_invariant_under_planar_rigid_motion(
        seed in 0u64..10_000,
        yaw in -3.0..3.0f64,
        t in proptest::array::uniform3(-50.0..50.0f64),
    ) {
        let config = ConductorConfig::double_circuit();
        let mut r = rng(seed);
        let p = random_params(&mut r, &config, (500.0, 3000.0));
        let cloud = mixed_cloud(&mut r, &p, &config, 20, 3.0);
        let t = Vector3::from(t);
        let moved_p = p.transformed(yaw, t);
        let rot = yaw_rotation(yaw);
        for pt in &cloud.points {
            let moved_pt = Point3::from(rot * pt.coords + t);
            let a = distance_to_model(&p, &config, pt).unwrap();
            let b = distance_to_model(&moved_p, &config, &moved_pt).unwrap();
            prop_assert!((a.d - b.d).abs() < 1e-7);
            prop_assert_eq!(a.k_star, b.k_star);
        }
    }
}

#[test]
fn lateral_vertical_offsets_match_sampled_distance() {
    // Offsets purely in the c2-c3 plane at the vertex region, where the
    // closed form is exact up to sampling resolution.
    let config = ConductorConfig::three_two();
    let mut r = rng(11);
    for _ in 0..50 {
        let p = random_params(&mut r, &config, (1000.0, 3000.0));
        let k = rand::Rng::random_range(&mut r, 0..5);
        let x_j = rand::Rng::random_range(&mut r, -5.0..5.0);
        let rot = yaw_rotation(p.psi);
        let off = rot * Vector3::new(0.0, rand::Rng::random_range(&mut r, -1.0..1.0), rand::Rng::random_range(&mut r, -1.0..1.0));
        let pt = forward_point(&p, &config, k, x_j).unwrap() + off;
        let closed = distance_to_model(&p, &config, &pt).unwrap();
        let local_x = (rot.transpose() * (pt - Point3::new(p.x_o, p.y_o, p.z_o))).x;
        let (sampled, _) = sampled_distance(&p, &config, &pt, local_x, 10.0, 0.01);
        assert!((closed.d - sampled).abs() < 1e-3, "{} vs {}", closed.d, sampled);
    }
}

#[test]
fn gradient_matches_finite_differences_on_random_instances() {
    let mut r = rng(2024);
    let mut checked = 0;
    while checked < 40 {
        let config = if checked % 2 == 0 { ConductorConfig::three_two() } else { ConductorConfig::double_circuit() };
        let p = random_params(&mut r, &config, (500.0, 3000.0));
        let truth = nearby(&mut r, &p);
        let cloud = mixed_cloud(&mut r, &truth, &config, 50, 2.0);
        if association_margin(&p, &config, &cloud) < 1e-2 {
            continue;
        }
        let prior = nearby(&mut r, &p);
        let w = random_weights(&mut r, config.n_params(), cloud.len());
        let g = loss_gradient(&p, &cloud, &prior, &w, &config).unwrap();
        let fd = fd_gradient(&p, &cloud, &prior, &w, &config, 1e-6);
        let err = normwise_relative_error(&g, &fd);
        assert!(err < 1e-5, "norm-wise relative error {err}: {g:?} vs {fd:?}");
        let fd = fd_gradient_scaled(&p, &cloud, &prior, &w, &config, 1e-6);
        let err = max_relative_error(&g, &fd, 1e-6);
        assert!(err < 1e-5, "component-wise relative error {err}: {g:?} vs {fd:?}");
        checked += 1;
    }
}

#[test]
fn regularization_alone_is_minimized_at_the_prior() {
    let config = ConductorConfig::three_two();
    let prior = ParamVector::new(1.0, 2.0, 3.0, 0.1, 800.0, vec![4.0, 4.0, 3.0]);
    let w = LossWeights::default_for(3);
    let empty = PointCloud::default();
    let at_prior = total_loss(&prior, &empty, &prior, &w, &config).unwrap().total;
    assert_eq!(at_prior, 0.0);
    let mut r = rng(5);
    for _ in 0..100 {
        let p = nearby(&mut r, &prior);
        assert!(total_loss(&p, &empty, &prior, &w, &config).unwrap().total > 0.0);
    }
    let g = loss_gradient(&prior, &empty, &prior, &w, &config).unwrap();
    assert!(g.iter().all(|&g| g == 0.0));
}
