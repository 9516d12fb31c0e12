//! Rule-agnostic Gaussian moment-matching filter steps.
//!
//! The same three operations back the unscented and both cubature
//! filters; only the point-set rule differs. Bearing-like measurement
//! components (declared by the model) are handled with wrapped
//! residuals: weighted means are reconstructed about the first
//! transformed point and innovations are wrapped before use.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{psd_repair, CovMatrix, GaussianBelief, MeasVec, Stage, StateVec};
use crate::models::{residual_with_wrap, wrap_components_in_place, MeasurementModel, ProcessModel};
use crate::sigma::{generate, RuleSpec, WeightedPointSet};

/// Per-filter numeric event counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Number of covariance repairs performed on this filter's behalf.
    pub repairs: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.repairs += other.repairs;
    }
}

/// Predicted-observation moments shared by the measurement update and
/// the transferred-observation update.
#[derive(Debug, Clone)]
pub struct MomentSet {
    /// `z_hat` (or `eta_hat`): weighted mean of the transformed points.
    pub pred_meas_mean: MeasVec,
    /// Scatter of the transformed points plus the supplied noise/transfer
    /// covariance.
    pub innov_cov: CovMatrix,
    /// `n_x x n_z` cross covariance between state deviations and
    /// transformed-point residuals.
    pub cross_cov: DMatrix<f64>,
}

/// Maximum innovation-covariance condition number before the gain solve
/// is refused.
const MAX_CONDITION: f64 = 1e12;

fn symmetric_accumulate(acc: &mut DMatrix<f64>, d: &DVector<f64>, w: f64) {
    let n = d.len();
    for i in 0..n {
        let wd = w * d[i];
        for j in 0..=i {
            acc[(i, j)] += wd * d[j];
        }
    }
}

fn mirror_lower(acc: &mut DMatrix<f64>) {
    let n = acc.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            acc[(i, j)] = acc[(j, i)];
        }
    }
}

/// Time update: propagate the points through the process model and
/// moment-match, adding `q_v`. Returns the predicted belief together
/// with the propagated points for reuse in the following update.
pub fn predict<P: ProcessModel>(
    belief: &GaussianBelief,
    rule: &RuleSpec,
    process: &P,
    q_v: &CovMatrix,
    diag: &mut Diagnostics,
) -> Result<(GaussianBelief, WeightedPointSet)> {
    if belief.stage != Stage::Posterior {
        return Err(Error::StageMismatch {
            op: "predict",
            expected: "posterior",
            got: belief.stage.name(),
        });
    }
    if q_v.dim() != belief.dim() {
        return Err(Error::DimensionMismatch {
            context: "predict",
            expected: belief.dim(),
            got: q_v.dim(),
        });
    }
    let drawn = generate(rule, belief)?;
    let mut propagated = Vec::with_capacity(drawn.len());
    for p in &drawn.points {
        propagated.push(StateVec::new(process.apply(p.as_vector())?)?);
    }
    let propagated = WeightedPointSet {
        points: propagated,
        weights: drawn.weights,
    };

    let mean = propagated.weighted_mean();
    let mut cov = propagated.weighted_scatter(&mean);
    cov += q_v.as_matrix();
    let (cov, repairs) = psd_repair(&cov)?;
    diag.repairs += u64::from(repairs);

    let predicted = GaussianBelief::new(
        StateVec::new(mean)?,
        cov,
        belief.step + 1,
        Stage::Predicted,
    )?;
    Ok((predicted, propagated))
}

/// Transforms the points through the measurement model and computes the
/// observation-space moments. `extra_cov` is the additive term of the
/// innovation covariance: the sensor noise for a measurement update, or
/// the transferred covariance for a transferred-observation update.
pub fn observation_moments<M: MeasurementModel>(
    points: &WeightedPointSet,
    belief: &GaussianBelief,
    meas: &M,
    extra_cov: &CovMatrix,
) -> Result<MomentSet> {
    let n_z = meas.meas_dim();
    if extra_cov.dim() != n_z {
        return Err(Error::DimensionMismatch {
            context: "observation_moments",
            expected: n_z,
            got: extra_cov.dim(),
        });
    }
    let angular = meas.angular_components();
    let mut transformed = Vec::with_capacity(points.len());
    for p in &points.points {
        transformed.push(meas.apply(p.as_vector())?);
    }

    // Weighted mean, reconstructed about the first transformed point so
    // that bearing-like components never average across the +/-pi cut.
    let mut mean = DVector::zeros(n_z);
    if angular.is_empty() {
        for (z, w) in transformed.iter().zip(&points.weights) {
            mean.axpy(*w, z, 1.0);
        }
    } else {
        let reference = transformed[0].clone();
        for (z, w) in transformed.iter().zip(&points.weights) {
            mean.axpy(*w, &residual_with_wrap(z, &reference, angular), 1.0);
        }
        mean += &reference;
        wrap_components_in_place(&mut mean, angular);
    }

    let mut innov = DMatrix::zeros(n_z, n_z);
    let n_x = belief.dim();
    let mut cross = DMatrix::zeros(n_x, n_z);
    let x_hat = belief.mean.as_vector();
    for ((z, x), w) in transformed.iter().zip(&points.points).zip(&points.weights) {
        let dz = residual_with_wrap(z, &mean, angular);
        symmetric_accumulate(&mut innov, &dz, *w);
        let dx = x.as_vector() - x_hat;
        for i in 0..n_x {
            let wdx = w * dx[i];
            for j in 0..n_z {
                cross[(i, j)] += wdx * dz[j];
            }
        }
    }
    mirror_lower(&mut innov);
    innov += extra_cov.as_matrix();

    Ok(MomentSet {
        pred_meas_mean: MeasVec::new(mean)?,
        innov_cov: CovMatrix::new(innov)?,
        cross_cov: cross,
    })
}

/// `K = P_xz * P_zz^{-1}` via a linear solve, with a condition guard.
fn gain(moments: &MomentSet) -> Result<DMatrix<f64>> {
    let s = moments.innov_cov.as_matrix();
    let eig = s.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_abs = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let condition = if min_abs > 0.0 {
        max_abs / min_abs
    } else {
        f64::INFINITY
    };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularInnovation { condition });
    }
    let kt = s
        .clone()
        .lu()
        .solve(&moments.cross_cov.transpose())
        .ok_or(Error::SingularInnovation { condition })?;
    Ok(kt.transpose())
}

/// Gaussian conditioning on one observation-space quantity.
fn conditioning_update<M: MeasurementModel>(
    belief: &GaussianBelief,
    points: &WeightedPointSet,
    meas: &M,
    observed: &MeasVec,
    extra_cov: &CovMatrix,
    out_stage: Stage,
    diag: &mut Diagnostics,
) -> Result<GaussianBelief> {
    if observed.dim() != meas.meas_dim() {
        return Err(Error::DimensionMismatch {
            context: "update",
            expected: meas.meas_dim(),
            got: observed.dim(),
        });
    }
    let moments = observation_moments(points, belief, meas, extra_cov)?;
    let k = gain(&moments)?;
    let innovation = residual_with_wrap(
        observed.as_vector(),
        moments.pred_meas_mean.as_vector(),
        meas.angular_components(),
    );
    let mean = belief.mean.as_vector() + &k * innovation;
    let cov = belief.cov.as_matrix() - &k * moments.innov_cov.as_matrix() * k.transpose();
    // K S K^T breaks bitwise symmetry; restore it before the repair check.
    let cov = 0.5 * (&cov + cov.transpose());
    let (cov, repairs) = psd_repair(&cov)?;
    diag.repairs += u64::from(repairs);
    GaussianBelief::new(StateVec::new(mean)?, cov, belief.step, out_stage)
}

/// Measurement update with sensor noise `noise_cov` and observation `z`.
/// Accepts a predicted or tl-updated belief; the supplied points must be
/// the ones that realize the belief (propagated prior points, or points
/// redrawn after a transferred-observation update).
pub fn measurement_update<M: MeasurementModel>(
    pred: &GaussianBelief,
    points: &WeightedPointSet,
    meas: &M,
    noise_cov: &CovMatrix,
    z: &MeasVec,
    diag: &mut Diagnostics,
) -> Result<GaussianBelief> {
    if pred.stage == Stage::Posterior {
        return Err(Error::StageMismatch {
            op: "measurement_update",
            expected: "predicted or tl-updated",
            got: pred.stage.name(),
        });
    }
    conditioning_update(pred, points, meas, z, noise_cov, Stage::Posterior, diag)
}

/// Transferred-observation update: conditions the predicted belief on the
/// packet mean, with the packet covariance in place of sensor noise.
pub fn tl_update<M: MeasurementModel>(
    pred: &GaussianBelief,
    points: &WeightedPointSet,
    meas: &M,
    eta_mean: &MeasVec,
    eta_cov: &CovMatrix,
    diag: &mut Diagnostics,
) -> Result<GaussianBelief> {
    if pred.stage != Stage::Predicted {
        return Err(Error::StageMismatch {
            op: "tl_update",
            expected: "predicted",
            got: pred.stage.name(),
        });
    }
    conditioning_update(pred, points, meas, eta_mean, eta_cov, Stage::TlUpdated, diag)
}

/// Predict-observation step: redraw points from the posterior, advance
/// them one step, and form the observation-space moments for the next
/// step, with `q_w` added. This is the quantity a transfer packet carries.
pub fn predict_observation<P: ProcessModel, M: MeasurementModel>(
    post: &GaussianBelief,
    rule: &RuleSpec,
    process: &P,
    meas: &M,
    q_w: &CovMatrix,
    diag: &mut Diagnostics,
) -> Result<(MeasVec, CovMatrix)> {
    if post.stage != Stage::Posterior {
        return Err(Error::StageMismatch {
            op: "predict_observation",
            expected: "posterior",
            got: post.stage.name(),
        });
    }
    let drawn = generate(rule, post)?;
    let mut advanced = Vec::with_capacity(drawn.len());
    for p in &drawn.points {
        advanced.push(StateVec::new(process.apply(p.as_vector())?)?);
    }
    let advanced = WeightedPointSet {
        points: advanced,
        weights: drawn.weights,
    };
    // State-side moments are not needed; reuse the observation helper with
    // a placeholder belief mean (cross covariance is discarded).
    let pred_mean = advanced.weighted_mean();
    let placeholder = GaussianBelief::new(
        StateVec::new(pred_mean)?,
        CovMatrix::zeros(post.dim()),
        post.step + 1,
        Stage::Predicted,
    )?;
    let moments = observation_moments(&advanced, &placeholder, meas, q_w)?;
    let (eta_cov, repairs) = psd_repair(moments.innov_cov.as_matrix())?;
    diag.repairs += u64::from(repairs);
    Ok((moments.pred_meas_mean, eta_cov))
}
