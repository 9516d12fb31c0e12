//! Closed-form linear-Gaussian references used by the test suites.
//!
//! Deliberately independent of the filter engine: plain textbook Kalman
//! recursions over dense matrices with explicit inverses, no point sets,
//! no wrapped residuals, no covariance repair. Only available to test
//! builds via the `test-oracles` feature.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Plain Kalman filter state for a model `x' = A x + v`, `z = H x + w`.
#[derive(Debug, Clone)]
pub struct LinearKalman {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl LinearKalman {
    pub fn predict(&mut self) {
        self.mean = &self.a * &self.mean;
        self.cov = &self.a * &self.cov * self.a.transpose() + &self.q;
    }

    /// Measurement update with an arbitrary observation covariance.
    pub fn update_with(&mut self, z: &DVector<f64>, r: &DMatrix<f64>) {
        let s = &self.h * &self.cov * self.h.transpose() + r;
        let s_inv = s.clone().try_inverse().expect("oracle innovation invertible");
        let k = &self.cov * self.h.transpose() * s_inv;
        self.mean = &self.mean + &k * (z - &self.h * &self.mean);
        self.cov = &self.cov - &k * &s * k.transpose();
    }

    pub fn update(&mut self, z: &DVector<f64>) {
        let r = self.r.clone();
        self.update_with(z, &r);
    }

    /// One-step-ahead observation moments from the current posterior:
    /// mean `H A x`, covariance `H (A P A^T + Q) H^T + R`.
    ///
    /// Note the transferred-observation packet of the point-set filters
    /// omits the `Q` term (points are advanced through `f` without
    /// re-injecting process noise); use [`Self::packet_moments`] when
    /// replicating that convention.
    pub fn predicted_observation(&self) -> (DVector<f64>, DMatrix<f64>) {
        let pred_cov = &self.a * &self.cov * self.a.transpose() + &self.q;
        let mean = &self.h * &self.a * &self.mean;
        let cov = &self.h * pred_cov * self.h.transpose() + &self.r;
        (mean, cov)
    }

    /// Observation moments matching the point-set filters' packet
    /// convention: covariance `H (A P A^T) H^T + R` without process noise.
    pub fn packet_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let pred_cov = &self.a * &self.cov * self.a.transpose();
        let mean = &self.h * &self.a * &self.mean;
        let cov = &self.h * pred_cov * self.h.transpose() + &self.r;
        (mean, cov)
    }
}

/// A seeded, stable random linear-Gaussian model.
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

pub fn random_stable_model(n_x: usize, n_z: usize, seed: u64) -> LinearModel {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = |r: usize, c: usize| {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let mut a = draw(n_x, n_x);
    // Scale to spectral radius 0.95 via the Frobenius bound, then verify
    // contraction by powering.
    let scale = 0.95 / a.norm();
    a *= scale;
    for _ in 0..8 {
        let powered = (&a * &a).norm();
        if powered < 1.0 {
            break;
        }
        a *= 0.9;
    }
    let h = draw(n_z, n_x);
    let qf = draw(n_x, n_x) * 0.2;
    let q = &qf * qf.transpose() + DMatrix::identity(n_x, n_x) * 0.05;
    let rf = draw(n_z, n_z) * 0.3;
    let r = &rf * rf.transpose() + DMatrix::identity(n_z, n_z) * 0.2;
    let x0 = draw(n_x, 1).column(0).into_owned();
    let p0 = DMatrix::identity(n_x, n_x);
    LinearModel { a, h, q, r, x0, p0 }
}

/// Simulates the model, returning (truths, measurements) for `steps` steps.
pub fn simulate(
    model: &LinearModel,
    steps: usize,
    seed: u64,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let q_chol = model.q.clone().cholesky().expect("Q SPD").unpack();
    let r_chol = model.r.clone().cholesky().expect("R SPD").unpack();
    let n_x = model.a.nrows();
    let n_z = model.h.nrows();
    let mut x = model.x0.clone();
    let mut truths = Vec::with_capacity(steps);
    let mut zs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let vx = DVector::from_fn(n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        let vz = DVector::from_fn(n_z, |_, _| rng.sample::<f64, _>(StandardNormal));
        x = &model.a * &x + &q_chol * vx;
        let z = &model.h * &x + &r_chol * vz;
        truths.push(x.clone());
        zs.push(z);
    }
    (truths, zs)
}

/// Closed-form reference for the transfer-learning primary filter on a
/// linear model: a Kalman filter that, from step 2 on, processes the
/// stacked pseudo-measurement `[eta*; z]` with block-diagonal covariance
/// `diag(P*_eta_eta, R)` and stacked observation matrix `[H; H]`.
pub struct StackedOracle {
    pub source: LinearKalman,
    pub primary: LinearKalman,
    pending: Option<(DVector<f64>, DMatrix<f64>)>,
}

impl StackedOracle {
    pub fn new(source: LinearKalman, primary: LinearKalman) -> Self {
        StackedOracle {
            source,
            primary,
            pending: None,
        }
    }

    /// Advances both filters one step; returns the primary posterior.
    pub fn step(&mut self, z_source: &DVector<f64>, z_primary: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let incoming = self.pending.take();
        self.source.predict();
        self.source.update(z_source);
        self.pending = Some(self.source.packet_moments());

        self.primary.predict();
        match incoming {
            Some((eta, eta_cov)) => {
                let n_z = z_primary.len();
                let mut h_st = DMatrix::zeros(2 * n_z, self.primary.h.ncols());
                h_st.rows_mut(0, n_z).copy_from(&self.primary.h);
                h_st.rows_mut(n_z, n_z).copy_from(&self.primary.h);
                let mut r_st = DMatrix::zeros(2 * n_z, 2 * n_z);
                r_st.view_mut((0, 0), (n_z, n_z)).copy_from(&eta_cov);
                r_st.view_mut((n_z, n_z), (n_z, n_z))
                    .copy_from(&self.primary.r);
                let mut z_st = DVector::zeros(2 * n_z);
                z_st.rows_mut(0, n_z).copy_from(&eta);
                z_st.rows_mut(n_z, n_z).copy_from(z_primary);

                let s = &h_st * &self.primary.cov * h_st.transpose() + &r_st;
                let s_inv = s.clone().try_inverse().expect("stacked innovation invertible");
                let k = &self.primary.cov * h_st.transpose() * s_inv;
                self.primary.mean = &self.primary.mean + &k * (z_st - &h_st * &self.primary.mean);
                self.primary.cov = &self.primary.cov - &k * s * k.transpose();
            }
            None => self.primary.update(z_primary),
        }
        (self.primary.mean.clone(), self.primary.cov.clone())
    }
}
