use crate::error::Result;
use crate::gaussian::{kf_predict, GaussianDensity, MotionModel};

use super::bernoulli::{MomentHistory, Window};

/// One weighted Gaussian of the undetected-trajectory intensity.
#[derive(Debug, Clone)]
pub struct PoissonComponent {
    pub weight: f64,
    pub birth: usize,
    pub moments: MomentHistory,
}

impl PoissonComponent {
    pub fn density(&self) -> &GaussianDensity {
        self.moments.latest()
    }
}

/// Gaussian-mixture intensity of a Poisson point process over trajectories.
#[derive(Debug, Clone, Default)]
pub struct PoissonIntensity {
    pub components: Vec<PoissonComponent>,
}

impl PoissonIntensity {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, weight: f64, birth: usize, density: GaussianDensity) {
        self.components.push(PoissonComponent {
            weight,
            birth,
            moments: MomentHistory::new(density),
        });
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Survival thinning and Kalman prediction of every component, then the
    /// birth components stamped with time `to`.
    pub fn predict(
        &self,
        motion: &MotionModel,
        birth: &PoissonIntensity,
        to: usize,
        window: Window,
    ) -> Result<Self> {
        let mut components = Vec::with_capacity(self.len() + birth.len());
        for c in &self.components {
            components.push(PoissonComponent {
                weight: c.weight * motion.survival,
                birth: c.birth,
                moments: c.moments.push(kf_predict(c.density(), motion)?, window),
            });
        }
        for b in &birth.components {
            components.push(PoissonComponent {
                weight: b.weight,
                birth: to,
                moments: MomentHistory::new(b.density().clone()),
            });
        }
        Ok(Self { components })
    }

    /// Missed-detection thinning.
    pub fn thin(&mut self, detection: f64) {
        for c in &mut self.components {
            c.weight *= 1.0 - detection;
        }
    }
}

/// Removes components with weight below `threshold`.
pub fn prune_ppp(p: &PoissonIntensity, threshold: f64) -> PoissonIntensity {
    PoissonIntensity {
        components: p
            .components
            .iter()
            .filter(|c| c.weight >= threshold)
            .cloned()
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intensity(weights: &[f64]) -> PoissonIntensity {
        let mut p = PoissonIntensity::new();
        for &w in weights {
            p.push(
                w,
                1,
                GaussianDensity::from_slices(&[0.0, 0.0, 0.0, 0.0], &[1.0; 4]).unwrap(),
            );
        }
        p
    }

    #[test]
    fn empty_prior_predicts_to_birth() {
        let motion = MotionModel::constant_velocity_2d(1.0, 0.002, 0.99).unwrap();
        let birth = intensity(&[0.05]);
        let p = PoissonIntensity::new()
            .predict(&motion, &birth, 4, Window::Full)
            .unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.components[0].weight, 0.05);
        assert_eq!(p.components[0].birth, 4);
        assert_eq!(p.components[0].density(), birth.components[0].density());
    }

    #[test]
    fn predict_scales_and_appends() {
        let motion = MotionModel::constant_velocity_2d(1.0, 0.002, 0.99).unwrap();
        let p = intensity(&[0.1, 0.2, 0.3]);
        let q = p
            .predict(&motion, &intensity(&[0.05]), 2, Window::Full)
            .unwrap();
        assert_eq!(q.len(), 4);
        let w: Vec<f64> = q.components.iter().map(|c| c.weight).collect();
        for (a, b) in w.iter().zip([0.099, 0.198, 0.297, 0.05]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(q.components[0].moments.len(), 2);
    }

    #[test]
    fn pruning() {
        let p = intensity(&[0.5, 1e-5]);
        assert_eq!(prune_ppp(&p, 1e-4).len(), 1);
        assert_eq!(prune_ppp(&p, 0.0).len(), 2);
        assert!(prune_ppp(&p, 1.0).is_empty());
    }
}
