//! Linear-Gaussian state-space primitives.
//!
//! Kalman prediction and update (with the marginal measurement likelihood),
//! Rauch-Tung-Striebel smoothing and ellipsoidal gating. Every covariance
//! leaving this module is symmetrised.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::error::{invalid, Error, Result};

/// Mean and covariance of a single Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov_diag: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(cov_diag)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Linear-Gaussian motion model with constant survival probability.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub survival: f64,
    pub period: f64,
}

impl MotionModel {
    pub fn new(
        transition: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        survival: f64,
        period: f64,
    ) -> Result<Self> {
        if !transition.is_square() {
            return Err(invalid("transition", "must be square"));
        }
        if process_noise.shape() != transition.shape() {
            return Err(invalid("process_noise", "must match the transition shape"));
        }
        if !(0.0..=1.0).contains(&survival) {
            return Err(invalid("survival", format!("{survival} is outside [0, 1]")));
        }
        if (&process_noise - process_noise.transpose()).amax() > 1e-9 * (1.0 + process_noise.amax())
        {
            return Err(invalid("process_noise", "must be symmetric"));
        }
        if process_noise.symmetric_eigenvalues().min() < -1e-9 {
            return Err(invalid("process_noise", "must be positive semidefinite"));
        }
        Ok(Self {
            transition,
            process_noise,
            survival,
            period,
        })
    }

    /// Nearly-constant-velocity model in two dimensions.
    ///
    /// State ordering is `[px, vx, py, vy]`, i.e. `F = I2 ⊗ [[1, T], [0, 1]]` and
    /// `Q = q · I2 ⊗ [[T³/3, T²/2], [T²/2, T]]`.
    pub fn constant_velocity_2d(period: f64, noise_intensity: f64, survival: f64) -> Result<Self> {
        let t = period;
        let block_f = DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
        let block_q = DMatrix::from_row_slice(
            2,
            2,
            &[t.powi(3) / 3.0, t.powi(2) / 2.0, t.powi(2) / 2.0, t],
        ) * noise_intensity;
        let eye = DMatrix::<f64>::identity(2, 2);
        Self::new(
            eye.kronecker(&block_f),
            eye.kronecker(&block_q),
            survival,
            period,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }
}

/// Linear-Gaussian point-target measurement model with Poisson clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub observation: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub detection: f64,
    /// Expected number of clutter returns per scan.
    pub clutter_rate: f64,
    /// Spatial clutter density (one over the surveillance area for uniform clutter).
    pub clutter_density: f64,
    /// Squared Mahalanobis distance accepted by the gate.
    pub gate_threshold: f64,
}

impl MeasurementModel {
    pub fn new(
        observation: DMatrix<f64>,
        noise: DMatrix<f64>,
        detection: f64,
        clutter_rate: f64,
        clutter_density: f64,
        gate_threshold: f64,
    ) -> Result<Self> {
        let m = observation.nrows();
        if noise.shape() != (m, m) {
            return Err(invalid(
                "noise",
                "must be square with one row per measurement component",
            ));
        }
        if noise.clone().cholesky().is_none() {
            return Err(invalid("noise", "must be positive definite"));
        }
        if !(0.0..=1.0).contains(&detection) {
            return Err(invalid(
                "detection",
                format!("{detection} is outside [0, 1]"),
            ));
        }
        if clutter_rate < 0.0 || clutter_density < 0.0 {
            return Err(invalid(
                "clutter_rate",
                "clutter rate and density must be non-negative",
            ));
        }
        if gate_threshold <= 0.0 {
            return Err(invalid("gate_threshold", "must be positive"));
        }
        Ok(Self {
            observation,
            noise,
            detection,
            clutter_rate,
            clutter_density,
            gate_threshold,
        })
    }

    /// Position-only sensor for the `[px, vx, py, vy]` state: `H = I2 ⊗ [1, 0]`, `R = σ² I2`.
    pub fn position_2d(
        noise_variance: f64,
        detection: f64,
        clutter_rate: f64,
        clutter_density: f64,
        gate_threshold: f64,
    ) -> Result<Self> {
        let h =
            DMatrix::<f64>::identity(2, 2).kronecker(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        Self::new(
            h,
            DMatrix::<f64>::identity(2, 2) * noise_variance,
            detection,
            clutter_rate,
            clutter_density,
            gate_threshold,
        )
    }

    /// Clutter intensity κ(z) for uniform clutter.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate * self.clutter_density
    }

    pub fn measurement_dim(&self) -> usize {
        self.observation.nrows()
    }
}

/// Upper quantile of the chi-square distribution, used as a gate threshold.
pub fn chi_square_quantile(probability: f64, dof: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&probability) || probability <= 0.0 {
        return Err(invalid(
            "gate_quantile",
            format!("{probability} is outside (0, 1)"),
        ));
    }
    let chi = ChiSquared::new(dof as f64).map_err(|e| invalid("gate_quantile", e.to_string()))?;
    // Polish the library's bracketing result with Newton steps on the CDF.
    let mut x = chi.inverse_cdf(probability);
    for _ in 0..8 {
        let density = chi.pdf(x);
        if density <= 0.0 {
            break;
        }
        let dx = (chi.cdf(x) - probability) / density;
        x -= dx;
        if dx.abs() <= 1e-15 * x.abs() {
            break;
        }
    }
    Ok(x)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn kf_predict(d: &GaussianDensity, m: &MotionModel) -> Result<GaussianDensity> {
    if m.state_dim() != d.dim() {
        return Err(Error::DimensionMismatch(format!(
            "motion model is {}-dimensional, density is {}-dimensional",
            m.state_dim(),
            d.dim()
        )));
    }
    let f = &m.transition;
    let mean = f * &d.mean;
    let mut cov = f * &d.cov * f.transpose() + &m.process_noise;
    symmetrize(&mut cov);
    Ok(GaussianDensity { mean, cov })
}

/// Quantities of a Kalman update that do not depend on the measurement value.
///
/// Preparing these once per prior and reusing them for every gated
/// measurement keeps the update step linear in the number of pairs.
#[derive(Debug, Clone)]
pub struct Innovation {
    predicted: DVector<f64>,
    /// Lower Cholesky factor of the innovation covariance.
    chol: DMatrix<f64>,
    log_norm: f64,
    gain: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    prior_mean: DVector<f64>,
}

impl Innovation {
    pub fn new(d: &GaussianDensity, m: &MeasurementModel) -> Result<Self> {
        let h = &m.observation;
        if h.ncols() != d.dim() {
            return Err(Error::DimensionMismatch(format!(
                "observation matrix has {} columns, density is {}-dimensional",
                h.ncols(),
                d.dim()
            )));
        }
        let ph_t = &d.cov * h.transpose();
        let mut s = h * &ph_t + &m.noise;
        symmetrize(&mut s);
        let chol = s
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dim = h.nrows() as f64;
        let log_norm = -0.5 * (log_det + dim * (2.0 * PI).ln());
        // K = P Hᵀ S⁻¹
        let gain = chol.solve(&ph_t.transpose()).transpose();
        let n = d.dim();
        let i_kh = DMatrix::<f64>::identity(n, n) - &gain * h;
        let mut posterior_cov =
            &i_kh * &d.cov * i_kh.transpose() + &gain * &m.noise * gain.transpose();
        symmetrize(&mut posterior_cov);
        Ok(Self {
            predicted: h * &d.mean,
            chol: l,
            log_norm,
            gain,
            posterior_cov,
            prior_mean: d.mean.clone(),
        })
    }

    fn whitened_norm_sq(&self, z: &DVector<f64>) -> f64 {
        // Forward substitution L y = z - ẑ.
        let n = self.predicted.len();
        let mut y = [0.0f64; 8];
        let mut y_heap;
        let y: &mut [f64] = if n <= 8 {
            &mut y[..n]
        } else {
            y_heap = vec![0.0; n];
            &mut y_heap
        };
        let mut acc = 0.0;
        for i in 0..n {
            let mut v = z[i] - self.predicted[i];
            for j in 0..i {
                v -= self.chol[(i, j)] * y[j];
            }
            y[i] = v / self.chol[(i, i)];
            acc += y[i] * y[i];
        }
        acc
    }

    pub fn mahalanobis_sq(&self, z: &DVector<f64>) -> Result<f64> {
        if z.len() != self.predicted.len() {
            return Err(Error::DimensionMismatch(format!(
                "measurement has {} entries, model expects {}",
                z.len(),
                self.predicted.len()
            )));
        }
        Ok(self.whitened_norm_sq(z))
    }

    /// `log N(z; H m, H P Hᵀ + R)`.
    pub fn log_likelihood(&self, z: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * self.whitened_norm_sq(z)
    }

    pub fn posterior(&self, z: &DVector<f64>) -> GaussianDensity {
        let mean = &self.prior_mean + &self.gain * (z - &self.predicted);
        GaussianDensity {
            mean,
            cov: self.posterior_cov.clone(),
        }
    }

    pub fn predicted_measurement(&self) -> &DVector<f64> {
        &self.predicted
    }
}

/// Kalman update returning the posterior and `log N(z; H m, H P Hᵀ + R)`.
pub fn kf_update(
    d: &GaussianDensity,
    z: &DVector<f64>,
    m: &MeasurementModel,
) -> Result<(GaussianDensity, f64)> {
    let innov = Innovation::new(d, m)?;
    let _ = innov.mahalanobis_sq(z)?;
    Ok((innov.posterior(z), innov.log_likelihood(z)))
}

/// Rauch-Tung-Striebel backward pass over consecutive filtered moments.
pub fn rts_smooth(filtered: &[GaussianDensity], m: &MotionModel) -> Result<Vec<GaussianDensity>> {
    let Some(last) = filtered.last() else {
        return Err(Error::DimensionMismatch(
            "cannot smooth an empty sequence".into(),
        ));
    };
    let f = &m.transition;
    let mut out = vec![last.clone(); filtered.len()];
    for k in (0..filtered.len() - 1).rev() {
        let cur = &filtered[k];
        let predicted = kf_predict(cur, m)?;
        let chol = predicted
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::Singular("predicted covariance in smoother"))?;
        // G = P Fᵀ P_pred⁻¹, computed as (P_pred⁻¹ F P)ᵀ.
        let gain = chol.solve(&(f * &cur.cov)).transpose();
        let next = &out[k + 1];
        let mean = &cur.mean + &gain * (&next.mean - &predicted.mean);
        let mut cov = &cur.cov + &gain * (&next.cov - &predicted.cov) * gain.transpose();
        symmetrize(&mut cov);
        out[k] = GaussianDensity { mean, cov };
    }
    Ok(out)
}

/// True iff the squared Mahalanobis distance of the innovation is within the gate.
pub fn gate(d: &GaussianDensity, z: &DVector<f64>, m: &MeasurementModel) -> Result<bool> {
    let innov = Innovation::new(d, m)?;
    Ok(innov.mahalanobis_sq(z)? <= m.gate_threshold)
}

/// Plain multivariate normal log-density, used where no prior needs updating.
pub fn log_gaussian_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("covariance"))?;
    let diff = x - mean;
    let sol = chol.solve(&diff);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (diff.dot(&sol) + log_det + x.len() as f64 * (2.0 * PI).ln()))
}

/// Serializable description of a diagonal-covariance Gaussian, used in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn to_density(&self) -> Result<GaussianDensity> {
        if self.mean.len() != self.variances.len() {
            return Err(invalid(
                "variances",
                "must have one entry per mean component",
            ));
        }
        if self.variances.iter().any(|v| *v < 0.0) {
            return Err(invalid("variances", "must be non-negative"));
        }
        GaussianDensity::from_slices(&self.mean, &self.variances)
    }
}
