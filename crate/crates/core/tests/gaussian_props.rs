use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use trajpmbm::gaussian::{
    kf_predict, kf_update, rts_smooth, GaussianDensity, MeasurementModel, MotionModel,
};

fn spd(entries: &[f64], n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(n, n, &entries[..n * n]);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

fn symmetric_psd(m: &DMatrix<f64>) -> bool {
    let asym = (m - m.transpose()).amax();
    asym <= 1e-12 * (1.0 + m.amax()) && m.clone().symmetric_eigenvalues().min() >= -1e-9
}

fn sensor(h: DMatrix<f64>, r: DMatrix<f64>) -> MeasurementModel {
    MeasurementModel::new(h, r, 0.9, 10.0, 1e-4, 1e6).unwrap()
}

/// Posterior by the information form, an algebraically independent route.
fn information_update(
    d: &GaussianDensity,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> GaussianDensity {
    let p_inv = d.cov.clone().try_inverse().unwrap();
    let r_inv = r.clone().try_inverse().unwrap();
    let cov = (&p_inv + h.transpose() * &r_inv * h).try_inverse().unwrap();
    let mean = &cov * (&p_inv * &d.mean + h.transpose() * &r_inv * z);
    GaussianDensity { mean, cov }
}

/// Prediction as the marginal of the joint of `(x, w)` mapped through `[F I]`.
fn joint_predict(d: &GaussianDensity, f: &DMatrix<f64>, q: &DMatrix<f64>) -> GaussianDensity {
    let n = d.dim();
    let mut joint = DMatrix::zeros(2 * n, 2 * n);
    joint.view_mut((0, 0), (n, n)).copy_from(&d.cov);
    joint.view_mut((n, n), (n, n)).copy_from(q);
    let mut map = DMatrix::zeros(n, 2 * n);
    map.view_mut((0, 0), (n, n)).copy_from(f);
    map.view_mut((0, n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    let mut jm = DVector::zeros(2 * n);
    jm.rows_mut(0, n).copy_from(&d.mean);
    GaussianDensity {
        mean: &map * jm,
        cov: &map * joint * map.transpose(),
    }
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn update_shrinks_covariance(
        p in prop::collection::vec(-2.0..2.0f64, 16),
        r in prop::collection::vec(-1.0..1.0f64, 4),
        h in prop::collection::vec(-1.0..1.0f64, 8),
        mean in prop::collection::vec(-10.0..10.0f64, 4),
        z in prop::collection::vec(-10.0..10.0f64, 2),
    ) {
        let mut hm = DMatrix::from_row_slice(2, 4, &h);
        hm[(0, 0)] += 2.0;
        hm[(1, 2)] += 2.0;
        prop_assume!(hm.clone().svd(false, false).singular_values.min() > 1e-3);
        let prior = GaussianDensity::new(DVector::from_vec(mean), spd(&p, 4)).unwrap();
        let model = sensor(hm, spd(&r, 2));
        let (post, _) = kf_update(&prior, &DVector::from_vec(z), &model).unwrap();
        let diff = &prior.cov - &post.cov;
        prop_assert!(diff.symmetric_eigenvalues().min() >= -1e-9);
        prop_assert!(symmetric_psd(&post.cov));
    }

    #[test]
    fn update_matches_information_form(
        p in prop::collection::vec(-2.0..2.0f64, 16),
        r in prop::collection::vec(-1.0..1.0f64, 4),
        h in prop::collection::vec(-1.0..1.0f64, 8),
        mean in prop::collection::vec(-10.0..10.0f64, 4),
        z in prop::collection::vec(-10.0..10.0f64, 2),
    ) {
        let hm = DMatrix::from_row_slice(2, 4, &h);
        let rm = spd(&r, 2);
        let prior = GaussianDensity::new(DVector::from_vec(mean), spd(&p, 4)).unwrap();
        let z = DVector::from_vec(z);
        let (post, ll) = kf_update(&prior, &z, &sensor(hm.clone(), rm.clone())).unwrap();
        let oracle = information_update(&prior, &z, &hm, &rm);
        prop_assert!(close(&post.cov, &oracle.cov, 1e-9));
        prop_assert!((&post.mean - &oracle.mean).amax() <= 1e-9 * (1.0 + oracle.mean.amax()));

        // Likelihood from the joint density: p(z) = p(x, z) / p(x | z) at any x.
        let x = &oracle.mean;
        let log_prior = log_pdf(x, &prior.mean, &prior.cov);
        let log_lik_x = log_pdf(&z, &(&hm * x), &rm);
        let log_post = log_pdf(x, &oracle.mean, &oracle.cov);
        prop_assert!((ll - (log_prior + log_lik_x - log_post)).abs() < 1e-8);
    }

    #[test]
    fn predict_matches_joint_marginal(
        p in prop::collection::vec(-2.0..2.0f64, 16),
        q in prop::collection::vec(-1.0..1.0f64, 16),
        f in prop::collection::vec(-1.5..1.5f64, 16),
        mean in prop::collection::vec(-10.0..10.0f64, 4),
    ) {
        let fm = DMatrix::from_row_slice(4, 4, &f);
        let qm = spd(&q, 4);
        let motion = MotionModel::new(fm.clone(), qm.clone(), 0.99, 1.0).unwrap();
        let prior = GaussianDensity::new(DVector::from_vec(mean), spd(&p, 4)).unwrap();
        let pred = kf_predict(&prior, &motion).unwrap();
        let oracle = joint_predict(&prior, &fm, &qm);
        prop_assert!(close(&pred.cov, &oracle.cov, 1e-9));
        prop_assert!((&pred.mean - &oracle.mean).amax() <= 1e-9 * (1.0 + oracle.mean.amax()));
        prop_assert!(symmetric_psd(&pred.cov));
    }

    #[test]
    fn smoother_keeps_final_state_and_symmetry(
        zs in prop::collection::vec(prop::collection::vec(-20.0..20.0f64, 2), 1..12),
    ) {
        let motion = MotionModel::constant_velocity_2d(1.0, 0.002, 0.99).unwrap();
        let model = MeasurementModel::position_2d(1.0, 0.9, 10.0, 1e-4, 1e6).unwrap();
        let mut d = GaussianDensity::from_slices(&[0.0; 4], &[1e4, 1.0, 1e4, 1.0]).unwrap();
        let mut filtered = Vec::new();
        for (i, z) in zs.iter().enumerate() {
            if i > 0 {
                d = kf_predict(&d, &motion).unwrap();
            }
            d = kf_update(&d, &DVector::from_column_slice(z), &model).unwrap().0;
            filtered.push(d.clone());
        }
        let smoothed = rts_smooth(&filtered, &motion).unwrap();
        prop_assert_eq!(smoothed.last().unwrap(), filtered.last().unwrap());
        for s in &smoothed {
            prop_assert!(symmetric_psd(&s.cov));
        }
    }
}

fn log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let diff = x - mean;
    let inv = cov.clone().try_inverse().unwrap();
    -0.5 * ((diff.transpose() * inv * &diff)[(0, 0)]
        + cov.determinant().ln()
        + n * (2.0 * std::f64::consts::PI).ln())
}
