//! Measurement-vector-fusion baseline: the primary measurement and the
//! transferred predicted observation are fused into one minimum-mean-
//! square pseudo-measurement, which a single isolated filter then tracks
//! with the fused covariance as its noise.

use crate::engine::{measurement_update, predict, Diagnostics};
use crate::error::{Error, Result};
use crate::gaussian::{CovMatrix, GaussianBelief, MeasVec, Stage};
use crate::models::{residual_with_wrap, wrap_components_in_place, MeasurementModel, ProcessModel};
use crate::btl::TransferPacket;
use crate::sigma::RuleSpec;

/// Fused pseudo-measurement and its covariance.
#[derive(Debug, Clone)]
pub struct FusedMeasurement {
    pub z_tilde: MeasVec,
    pub q_tilde: CovMatrix,
}

/// Fuses two observation-space estimates:
/// `z_tilde = z + Q (Q + C)^{-1} (eta - z)` with wrapped angular
/// differences, and `Q_tilde = (Q^{-1} + C^{-1})^{-1}`.
pub fn fuse(
    z: &MeasVec,
    z_cov: &CovMatrix,
    eta: &MeasVec,
    eta_cov: &CovMatrix,
    angular: &[usize],
) -> Result<FusedMeasurement> {
    let n = z.dim();
    if eta.dim() != n || z_cov.dim() != n || eta_cov.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "fuse",
            expected: n,
            got: eta.dim().max(z_cov.dim()).max(eta_cov.dim()),
        });
    }
    let q = z_cov.as_matrix();
    let c = eta_cov.as_matrix();
    let sum = q + c;
    let sum_inv = sum.clone().try_inverse().ok_or(Error::SingularSum)?;
    let gain = q * &sum_inv;

    let diff = residual_with_wrap(eta.as_vector(), z.as_vector(), angular);
    let mut fused = z.as_vector() + &gain * diff;
    wrap_components_in_place(&mut fused, angular);

    let q_inv = q.clone().try_inverse().ok_or(Error::SingularSum)?;
    let c_inv = c.clone().try_inverse().ok_or(Error::SingularSum)?;
    let info_sum = (q_inv + c_inv).try_inverse().ok_or(Error::SingularSum)?;
    // Exact-arithmetic result is symmetric; restore it bitwise.
    let q_tilde = 0.5 * (&info_sum + info_sum.transpose());

    Ok(FusedMeasurement {
        z_tilde: MeasVec::new(fused)?,
        q_tilde: CovMatrix::new(q_tilde)?,
    })
}

/// Isolated filter operating on fused pseudo-measurements. With no
/// packet the cycle falls back to the raw measurement, matching the
/// primary filter's first-step behavior.
#[derive(Debug, Clone)]
pub struct MvfFilter<P, M> {
    pub rule: RuleSpec,
    process: P,
    meas: M,
    q_v: CovMatrix,
    q_w: CovMatrix,
    belief: GaussianBelief,
    pub diagnostics: Diagnostics,
}

impl<P: ProcessModel, M: MeasurementModel> MvfFilter<P, M> {
    pub fn new(
        rule: RuleSpec,
        process: P,
        meas: M,
        q_v: CovMatrix,
        q_w: CovMatrix,
        init: GaussianBelief,
    ) -> Result<Self> {
        rule.validate()?;
        if init.stage != Stage::Posterior {
            return Err(Error::StageMismatch {
                op: "MvfFilter::new",
                expected: "posterior",
                got: init.stage.name(),
            });
        }
        Ok(MvfFilter {
            rule,
            process,
            meas,
            q_v,
            q_w,
            belief: init,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn step(&mut self, z: &MeasVec, packet: Option<TransferPacket>) -> Result<GaussianBelief> {
        let step = self.belief.step + 1;
        let (z_used, r_used) = match packet {
            Some(p) => {
                if p.valid_for != step {
                    return Err(Error::StalePacket {
                        valid_for: p.valid_for,
                        step,
                    });
                }
                let fused = fuse(
                    z,
                    &self.q_w,
                    &p.eta_mean,
                    &p.eta_cov,
                    self.meas.angular_components(),
                )?;
                (fused.z_tilde, fused.q_tilde)
            }
            None => (z.clone(), self.q_w.clone()),
        };
        let (pred, points) = predict(
            &self.belief,
            &self.rule,
            &self.process,
            &self.q_v,
            &mut self.diagnostics,
        )?;
        let post = measurement_update(
            &pred,
            &points,
            &self.meas,
            &r_used,
            &z_used,
            &mut self.diagnostics,
        )?;
        self.belief = post.clone();
        Ok(post)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::StateVec;
    use crate::models::{LinearMeasurement, LinearProcess};
    use nalgebra::{dmatrix, DMatrix};
    use proptest::prelude::*;

    fn scalar(v: f64) -> MeasVec {
        MeasVec::from_slice(&[v]).unwrap()
    }

    fn scalar_cov(v: f64) -> CovMatrix {
        CovMatrix::from_diagonal(&[v]).unwrap()
    }

    #[test]
    fn equal_covariance_average_halves_variance() {
        let f = fuse(&scalar(2.0), &scalar_cov(4.0), &scalar(0.0), &scalar_cov(4.0), &[]).unwrap();
        assert!((f.z_tilde[0] - 1.0).abs() < 1e-12);
        assert!((f.q_tilde.as_matrix()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uninformative_source_leaves_measurement() {
        let f = fuse(
            &scalar(2.0),
            &scalar_cov(4.0),
            &scalar(100.0),
            &scalar_cov(4e12),
            &[],
        )
        .unwrap();
        assert!((f.z_tilde[0] - 2.0).abs() < 1e-9);
        assert!((f.q_tilde.as_matrix()[(0, 0)] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn hand_computed_scalar_case() {
        // z = 1, Q = 2, eta = 4, C = 1: z_tilde = 1 + (2/3) * 3 = 3, Q_tilde = 2/3.
        let f = fuse(&scalar(1.0), &scalar_cov(2.0), &scalar(4.0), &scalar_cov(1.0), &[]).unwrap();
        assert!((f.z_tilde[0] - 3.0).abs() < 1e-12);
        assert!((f.q_tilde.as_matrix()[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_wraps_bearing_difference() {
        use std::f64::consts::PI;
        let z = MeasVec::from_slice(&[100.0, PI - 0.05]).unwrap();
        let eta = MeasVec::from_slice(&[100.0, -PI + 0.05]).unwrap();
        let cov = CovMatrix::from_diagonal(&[4.0, 0.01]).unwrap();
        let f = fuse(&z, &cov, &eta, &cov, &[1]).unwrap();
        // Equal covariances: midpoint across the cut, wrapped.
        let expected = crate::models::wrap_angle_residual(PI, 0.0);
        assert!(
            (f.z_tilde[1] - expected).abs() < 1e-9,
            "fused bearing {} vs {expected}",
            f.z_tilde[1]
        );
    }

    #[test]
    fn fused_covariance_never_exceeds_inputs() {
        let q = CovMatrix::new(dmatrix![4.0, 0.5; 0.5, 1.0]).unwrap();
        let c = CovMatrix::new(dmatrix![2.0, -0.2; -0.2, 3.0]).unwrap();
        let z = MeasVec::from_slice(&[1.0, 2.0]).unwrap();
        let eta = MeasVec::from_slice(&[0.5, 2.5]).unwrap();
        let f = fuse(&z, &q, &eta, &c, &[]).unwrap();
        for input in [&q, &c] {
            let diff = input.as_matrix() - f.q_tilde.as_matrix();
            let eig = diff.symmetric_eigen();
            assert!(
                eig.eigenvalues.min() > -1e-12,
                "fused covariance not dominated"
            );
        }
    }

    proptest! {
        #[test]
        fn fusion_is_symmetric_in_arguments(
            z0 in -5.0f64..5.0, e0 in -5.0f64..5.0,
            qv in 0.5f64..4.0, cv in 0.5f64..4.0,
        ) {
            let f1 = fuse(&scalar(z0), &scalar_cov(qv), &scalar(e0), &scalar_cov(cv), &[]).unwrap();
            let f2 = fuse(&scalar(e0), &scalar_cov(cv), &scalar(z0), &scalar_cov(qv), &[]).unwrap();
            prop_assert!((f1.z_tilde[0] - f2.z_tilde[0]).abs() < 1e-12);
            prop_assert!(
                (f1.q_tilde.as_matrix()[(0, 0)] - f2.q_tilde.as_matrix()[(0, 0)]).abs() < 1e-12
            );
        }
    }

    #[test]
    fn mvf_step_without_packet_is_isolated() {
        let process = LinearProcess {
            matrix: dmatrix![1.0, 0.3; 0.0, 0.95],
        };
        let h = LinearMeasurement {
            matrix: dmatrix![1.0, 0.0],
        };
        let q_v = CovMatrix::from_diagonal(&[0.01, 0.02]).unwrap();
        let q_w = scalar_cov(0.3);
        let init = GaussianBelief::initial(
            StateVec::from_slice(&[0.0, 1.0]).unwrap(),
            CovMatrix::from_diagonal(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let mut mvf = MvfFilter::new(
            RuleSpec::ckf3(2),
            process.clone(),
            h.clone(),
            q_v.clone(),
            q_w.clone(),
            init.clone(),
        )
        .unwrap();
        let mut iso =
            crate::btl::PrimaryFilter::new(RuleSpec::ckf3(2), process, h, q_v, q_w, init).unwrap();
        let z = scalar(0.8);
        let a = mvf.step(&z, None).unwrap();
        let b = iso.step(&z, None).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn mvf_rejects_stale_packet() {
        let process = LinearProcess {
            matrix: DMatrix::identity(1, 1),
        };
        let h = LinearMeasurement {
            matrix: DMatrix::identity(1, 1),
        };
        let init = GaussianBelief::initial(
            StateVec::from_slice(&[0.0]).unwrap(),
            scalar_cov(1.0),
        )
        .unwrap();
        let mut mvf = MvfFilter::new(
            RuleSpec::ut(1, 2.0),
            process,
            h,
            scalar_cov(0.1),
            scalar_cov(0.5),
            init,
        )
        .unwrap();
        let packet = TransferPacket {
            eta_mean: scalar(0.0),
            eta_cov: scalar_cov(1.0),
            produced_at: 4,
            valid_for: 5,
        };
        assert!(matches!(
            mvf.step(&scalar(0.1), Some(packet)),
            Err(Error::StalePacket { .. })
        ));
    }
}
