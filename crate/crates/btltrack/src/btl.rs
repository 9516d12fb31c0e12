//! Paired source/primary tracking with transfer of predicted
//! observations.
//!
//! The source filter runs a plain predict/update cycle and additionally
//! emits, at each step `k`, the observation-space moments it predicts
//! for step `k+1`. The primary filter consumes that packet one step
//! later as an extra conditioning stage before its own measurement
//! update. The first primary step has no packet and is a plain isolated
//! cycle.

use crate::engine::{
    measurement_update, predict, predict_observation, tl_update, Diagnostics,
};
use crate::error::{Error, Result};
use crate::gaussian::{CovMatrix, GaussianBelief, MeasVec, Stage};
use crate::models::{MeasurementModel, ProcessModel};
use crate::sigma::{generate, RuleSpec};

/// Predicted-observation moments shipped from source to primary, valid
/// for exactly one step.
#[derive(Debug, Clone)]
pub struct TransferPacket {
    /// Predicted observation mean for step `valid_for`.
    pub eta_mean: MeasVec,
    /// Predicted observation covariance for step `valid_for`.
    pub eta_cov: CovMatrix,
    /// Source step that produced the packet.
    pub produced_at: usize,
    /// The only step allowed to consume the packet, `produced_at + 1`.
    pub valid_for: usize,
}

/// Source tracking filter: isolated cycle plus packet emission.
#[derive(Debug, Clone)]
pub struct SourceFilter<P, M> {
    pub rule: RuleSpec,
    process: P,
    meas: M,
    q_v: CovMatrix,
    q_w: CovMatrix,
    belief: GaussianBelief,
    pub diagnostics: Diagnostics,
}

impl<P: ProcessModel, M: MeasurementModel> SourceFilter<P, M> {
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
                op: "SourceFilter::new",
                expected: "posterior",
                got: init.stage.name(),
            });
        }
        Ok(SourceFilter {
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

    /// One cycle: predict, measurement update with `z`, then predict the
    /// observation for the next step. Returns the posterior and the
    /// packet for step `k + 1`.
    pub fn step(&mut self, z: &MeasVec) -> Result<(GaussianBelief, TransferPacket)> {
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
            &self.q_w,
            z,
            &mut self.diagnostics,
        )?;
        let (eta_mean, eta_cov) = predict_observation(
            &post,
            &self.rule,
            &self.process,
            &self.meas,
            &self.q_w,
            &mut self.diagnostics,
        )?;
        let packet = TransferPacket {
            eta_mean,
            eta_cov,
            produced_at: post.step,
            valid_for: post.step + 1,
        };
        self.belief = post.clone();
        Ok((post, packet))
    }
}

/// Primary tracking filter: consumes transfer packets through the
/// two-likelihood update. With no packet the cycle is a plain isolated
/// predict/update, which also makes this type the isolated baseline.
#[derive(Debug, Clone)]
pub struct PrimaryFilter<P, M> {
    pub rule: RuleSpec,
    process: P,
    meas: M,
    q_v: CovMatrix,
    q_w: CovMatrix,
    belief: GaussianBelief,
    pub diagnostics: Diagnostics,
}

impl<P: ProcessModel, M: MeasurementModel> PrimaryFilter<P, M> {
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
                op: "PrimaryFilter::new",
                expected: "posterior",
                got: init.stage.name(),
            });
        }
        Ok(PrimaryFilter {
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

    /// One cycle. A packet, when present, must be valid for exactly the
    /// step being processed; after the transferred-observation update the
    /// points are redrawn from the tl-updated belief before the
    /// measurement update.
    pub fn step(&mut self, z: &MeasVec, packet: Option<TransferPacket>) -> Result<GaussianBelief> {
        let step = self.belief.step + 1;
        let (pred, points) = predict(
            &self.belief,
            &self.rule,
            &self.process,
            &self.q_v,
            &mut self.diagnostics,
        )?;
        let (working, working_points) = match packet {
            Some(p) => {
                if p.valid_for != step {
                    return Err(Error::StalePacket {
                        valid_for: p.valid_for,
                        step,
                    });
                }
                let tl = tl_update(
                    &pred,
                    &points,
                    &self.meas,
                    &p.eta_mean,
                    &p.eta_cov,
                    &mut self.diagnostics,
                )?;
                let redrawn = generate(&self.rule, &tl)?;
                (tl, redrawn)
            }
            None => (pred, points),
        };
        let post = measurement_update(
            &working,
            &working_points,
            &self.meas,
            &self.q_w,
            z,
            &mut self.diagnostics,
        )?;
        self.belief = post.clone();
        Ok(post)
    }
}

/// Drives a source/primary pair over full measurement sequences with the
/// one-step packet delay. Step 1 on the primary runs without a transfer
/// update; the packet produced by the source at step `k` is consumed by
/// the primary at step `k + 1`.
pub fn run_pair<P1, M1, P2, M2>(
    source: &mut SourceFilter<P1, M1>,
    primary: &mut PrimaryFilter<P2, M2>,
    z_source: &[MeasVec],
    z_primary: &[MeasVec],
) -> Result<(Vec<GaussianBelief>, Vec<GaussianBelief>)>
where
    P1: ProcessModel,
    M1: MeasurementModel,
    P2: ProcessModel,
    M2: MeasurementModel,
{
    if z_source.len() != z_primary.len() {
        return Err(Error::DimensionMismatch {
            context: "run_pair",
            expected: z_source.len(),
            got: z_primary.len(),
        });
    }
    let mut source_out = Vec::with_capacity(z_source.len());
    let mut primary_out = Vec::with_capacity(z_primary.len());
    let mut pending: Option<TransferPacket> = None;
    for (zs, zp) in z_source.iter().zip(z_primary) {
        let incoming = pending.take();
        let (post_s, packet) = source.step(zs)?;
        pending = Some(packet);
        let post_p = primary.step(zp, incoming)?;
        source_out.push(post_s);
        primary_out.push(post_p);
    }
    Ok((source_out, primary_out))
}
