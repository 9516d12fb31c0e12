//! Seeded trajectory/measurement synthesis and Monte Carlo execution
//! with common random numbers.
//!
//! RNG discipline: one root seed; every (run, purpose) pair gets its own
//! counter-derived ChaCha stream, `stream_id = run_index * 4 + purpose`.
//! All filter variants inside one experiment therefore see identical
//! truths and measurement noise, and adding or removing variants never
//! perturbs the streams. Measurement noise is drawn as a standard-normal
//! deviate and scaled by `sqrt(intensity) * sigma`, so experiments that
//! differ only in noise intensity remain pairwise coupled as well.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::btl::{PrimaryFilter, SourceFilter, TransferPacket};
use crate::error::{Error, Result};
use crate::fusion::MvfFilter;
use crate::gaussian::{matrix_sqrt_psd, CovMatrix, GaussianBelief, MeasVec, StateVec};
use crate::models::{
    ct_apply, ct_process_cov, meas_cov, range_bearing_apply, wrap_angle_residual,
    CoordinatedTurn, CtModelConfig, RangeBearing, SensorModel, CT_STATE_DIM,
};
use crate::sigma::{RuleKind, RuleSpec};

/// A run is abandoned (and excluded from RMSE) once its position error
/// exceeds this many meters.
pub const DIVERGENCE_LIMIT_M: f64 = 1e6;

/// How a filter variant participates in the two-sensor experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Primary sensor only, no transfer.
    Isolated,
    /// Two-likelihood update on transferred predicted observations.
    Btlf,
    /// Measurement-vector fusion of the transferred predicted observation.
    Mvf,
}

impl FilterMode {
    pub fn name(self) -> &'static str {
        match self {
            FilterMode::Isolated => "isolated",
            FilterMode::Btlf => "btlf",
            FilterMode::Mvf => "mvf",
        }
    }
}

/// How the per-run initial estimate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// The estimate starts at the true initial state.
    Exact,
    /// The estimate is drawn from `N(x0, P0)` per run.
    Sampled,
}

/// One filter variant to evaluate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantSpec {
    pub label: String,
    pub rule: RuleSpec,
    pub mode: FilterMode,
}

impl VariantSpec {
    pub fn new(rule: RuleSpec, mode: FilterMode) -> Self {
        let rule_tag = match rule.kind {
            RuleKind::Ut => format!("ut-k{}", trim_float(rule.kappa)),
            RuleKind::Ckf3 => "ckf3".to_string(),
            RuleKind::Ckf5 => "ckf5".to_string(),
        };
        VariantSpec {
            label: format!("{rule_tag}-{}", mode.name()),
            rule,
            mode,
        }
    }
}

fn trim_float(v: f64) -> String {
    if v == v.trunc() {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Full description of one Monte Carlo experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: CtModelConfig,
    pub x0: StateVec,
    pub p0: CovMatrix,
    pub steps: usize,
    pub mc_runs: usize,
    pub seed: u64,
    pub source_sensor: SensorModel,
    pub primary_sensor: SensorModel,
    pub variants: Vec<VariantSpec>,
    pub init_mode: InitMode,
}

impl ExperimentConfig {
    /// The two-sensor coordinated-turn benchmark scenario: a 300 m/s
    /// target holding a -3 deg/s turn for 100 steps of 1 s, range-bearing
    /// sensors at the origin with `sigma_r = 10 m`, `sigma_zeta = 0.78 mrad`
    /// and source intensity 1.
    pub fn benchmark_scenario(variants: Vec<VariantSpec>) -> Self {
        let sigma_zeta = 0.78e-3;
        ExperimentConfig {
            model: CtModelConfig {
                t_s: 1.0,
                q1: 0.1,
                q2: 1.75e-3,
                omega_epsilon: 1e-8,
            },
            x0: StateVec::from_slice(&[
                1000.0,
                300.0,
                1000.0,
                0.0,
                -3.0 * std::f64::consts::PI / 180.0,
            ])
            .unwrap(),
            p0: CovMatrix::from_diagonal(&[100.0, 10.0, 100.0, 10.0, 100.0e-3]).unwrap(),
            steps: 100,
            mc_runs: 1000,
            seed: 42,
            source_sensor: SensorModel {
                sigma_r: 10.0,
                sigma_zeta,
                intensity: 1.0,
            },
            primary_sensor: SensorModel {
                sigma_r: 10.0,
                sigma_zeta,
                intensity: 4.0,
            },
            variants,
            init_mode: InitMode::Sampled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.source_sensor.validate()?;
        self.primary_sensor.validate()?;
        if self.x0.dim() != CT_STATE_DIM {
            return Err(Error::DimensionMismatch {
                context: "ExperimentConfig::x0",
                expected: CT_STATE_DIM,
                got: self.x0.dim(),
            });
        }
        if self.p0.dim() != CT_STATE_DIM {
            return Err(Error::DimensionMismatch {
                context: "ExperimentConfig::p0",
                expected: CT_STATE_DIM,
                got: self.p0.dim(),
            });
        }
        if self.steps == 0 {
            return Err(Error::invalid("k_steps", "must be >= 1"));
        }
        if self.mc_runs == 0 {
            return Err(Error::invalid("mc", "must be >= 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid("filters", "at least one variant required"));
        }
        for v in &self.variants {
            v.rule.validate()?;
            if v.rule.n_x != CT_STATE_DIM {
                return Err(Error::DimensionMismatch {
                    context: "VariantSpec::rule",
                    expected: CT_STATE_DIM,
                    got: v.rule.n_x,
                });
            }
        }
        Ok(())
    }

    /// Hash of the canonical serialized config, for output provenance.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in digest.iter().take(8) {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Per-variant aggregate over all Monte Carlo runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantReport {
    pub label: String,
    pub rule: RuleSpec,
    pub mode: FilterMode,
    /// Primary-sensor noise intensity the variant ran under.
    pub intensity: f64,
    /// Per-step position RMSE over non-diverged runs, meters, length K.
    pub rmse_curve: Vec<f64>,
    /// Arithmetic mean of `rmse_curve` over the steps.
    pub time_avg_rmse: f64,
    pub diverged_runs: u64,
    pub repairs: u64,
}

/// Result of one Monte Carlo experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub mc_runs: usize,
    /// Digest over every generated truth/measurement stream, in run
    /// order; equal digests certify that two reports saw identical data.
    pub stream_digest: String,
    pub variants: Vec<VariantReport>,
    /// Wall-clock time; excluded from serialized payloads so equal
    /// configs and seeds produce byte-identical reports.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Purpose tag of one RNG substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Truth = 0,
    SourceMeas = 1,
    PrimaryMeas = 2,
    Init = 3,
}

/// Counter-derived substream for one (run, purpose) pair.
pub fn substream(seed: u64, run: usize, kind: StreamKind) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((run as u64) * 4 + kind as u64);
    rng
}

fn normal_vector(rng: &mut ChaCha12Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Simulates the true trajectory for steps `1..=K`. The initial state
/// `x0` anchors the recurrence and is not part of the returned sequence.
pub fn gen_truth(
    model: &CtModelConfig,
    x0: &StateVec,
    steps: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<StateVec>> {
    let q_v = ct_process_cov(model);
    let noise_factor = matrix_sqrt_psd(q_v.as_matrix())?;
    let mut out = Vec::with_capacity(steps);
    let mut x = x0.as_vector().clone();
    for _ in 0..steps {
        let xi = normal_vector(rng, CT_STATE_DIM);
        x = ct_apply(&x, model)? + &noise_factor * xi;
        out.push(StateVec::new(x.clone())?);
    }
    Ok(out)
}

/// Range-bearing measurements of a truth sequence. The noise deviate is
/// drawn first and scaled by `sqrt(intensity) * sigma`, so sweeps over
/// intensity share the same underlying randomness.
pub fn gen_measurements(
    truth: &[StateVec],
    sensor: &SensorModel,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<MeasVec>> {
    let scale = sensor.intensity.sqrt();
    let mut out = Vec::with_capacity(truth.len());
    for x in truth {
        let mut z = range_bearing_apply(x.as_vector())?;
        let xi = normal_vector(rng, 2);
        z[0] += scale * sensor.sigma_r * xi[0];
        z[1] += scale * sensor.sigma_zeta * xi[1];
        z[1] = wrap_angle_residual(z[1], 0.0);
        out.push(MeasVec::new(z)?);
    }
    Ok(out)
}

enum Runner {
    Isolated(PrimaryFilter<CoordinatedTurn, RangeBearing>),
    Btlf {
        source: SourceFilter<CoordinatedTurn, RangeBearing>,
        primary: PrimaryFilter<CoordinatedTurn, RangeBearing>,
        pending: Option<TransferPacket>,
    },
    Mvf {
        source: SourceFilter<CoordinatedTurn, RangeBearing>,
        fuser: MvfFilter<CoordinatedTurn, RangeBearing>,
        pending: Option<TransferPacket>,
    },
}

impl Runner {
    fn build(cfg: &ExperimentConfig, spec: &VariantSpec, init: &GaussianBelief) -> Result<Runner> {
        let process = CoordinatedTurn { cfg: cfg.model };
        let q_v = ct_process_cov(&cfg.model);
        let q_w_source = meas_cov(&cfg.source_sensor);
        let q_w_primary = meas_cov(&cfg.primary_sensor);
        Ok(match spec.mode {
            FilterMode::Isolated => Runner::Isolated(PrimaryFilter::new(
                spec.rule,
                process,
                RangeBearing,
                q_v,
                q_w_primary,
                init.clone(),
            )?),
            FilterMode::Btlf => Runner::Btlf {
                source: SourceFilter::new(
                    spec.rule,
                    process,
                    RangeBearing,
                    q_v.clone(),
                    q_w_source,
                    init.clone(),
                )?,
                primary: PrimaryFilter::new(
                    spec.rule,
                    process,
                    RangeBearing,
                    q_v,
                    q_w_primary,
                    init.clone(),
                )?,
                pending: None,
            },
            FilterMode::Mvf => Runner::Mvf {
                source: SourceFilter::new(
                    spec.rule,
                    process,
                    RangeBearing,
                    q_v.clone(),
                    q_w_source,
                    init.clone(),
                )?,
                fuser: MvfFilter::new(
                    spec.rule,
                    process,
                    RangeBearing,
                    q_v,
                    q_w_primary,
                    init.clone(),
                )?,
                pending: None,
            },
        })
    }

    fn step(&mut self, z_source: &MeasVec, z_primary: &MeasVec) -> Result<GaussianBelief> {
        match self {
            Runner::Isolated(f) => f.step(z_primary, None),
            Runner::Btlf {
                source,
                primary,
                pending,
            } => {
                let incoming = pending.take();
                let (_, packet) = source.step(z_source)?;
                *pending = Some(packet);
                primary.step(z_primary, incoming)
            }
            Runner::Mvf {
                source,
                fuser,
                pending,
            } => {
                let incoming = pending.take();
                let (_, packet) = source.step(z_source)?;
                *pending = Some(packet);
                fuser.step(z_primary, incoming)
            }
        }
    }

    fn repairs(&self) -> u64 {
        match self {
            Runner::Isolated(f) => f.diagnostics.repairs,
            Runner::Btlf { source, primary, .. } => {
                source.diagnostics.repairs + primary.diagnostics.repairs
            }
            Runner::Mvf { source, fuser, .. } => {
                source.diagnostics.repairs + fuser.diagnostics.repairs
            }
        }
    }
}

struct RunOutcome {
    /// Per variant: per-step squared position error, or None if diverged.
    sq_errors: Vec<Option<Vec<f64>>>,
    repairs: Vec<u64>,
    digest: u64,
}

fn fnv1a(acc: u64, bytes: &[u8]) -> u64 {
    let mut h = acc;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn digest_streams(truth: &[StateVec], z_s: &[MeasVec], z_p: &[MeasVec]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for x in truth {
        for v in x.iter() {
            h = fnv1a(h, &v.to_bits().to_le_bytes());
        }
    }
    for z in z_s.iter().chain(z_p) {
        for v in z.iter() {
            h = fnv1a(h, &v.to_bits().to_le_bytes());
        }
    }
    h
}

fn run_single(cfg: &ExperimentConfig, p0_factor: &DMatrix<f64>, run: usize) -> Result<RunOutcome> {
    let truth = gen_truth(
        &cfg.model,
        &cfg.x0,
        cfg.steps,
        &mut substream(cfg.seed, run, StreamKind::Truth),
    )?;
    let z_source = gen_measurements(
        &truth,
        &cfg.source_sensor,
        &mut substream(cfg.seed, run, StreamKind::SourceMeas),
    )?;
    let z_primary = gen_measurements(
        &truth,
        &cfg.primary_sensor,
        &mut substream(cfg.seed, run, StreamKind::PrimaryMeas),
    )?;

    let init_mean = match cfg.init_mode {
        InitMode::Exact => cfg.x0.clone(),
        InitMode::Sampled => {
            let xi = normal_vector(
                &mut substream(cfg.seed, run, StreamKind::Init),
                CT_STATE_DIM,
            );
            StateVec::new(cfg.x0.as_vector() + p0_factor * xi)?
        }
    };
    let init = GaussianBelief::initial(init_mean, cfg.p0.clone())?;

    let mut sq_errors = Vec::with_capacity(cfg.variants.len());
    let mut repairs = Vec::with_capacity(cfg.variants.len());
    for spec in &cfg.variants {
        let mut runner = Runner::build(cfg, spec, &init)?;
        let mut errs = Vec::with_capacity(cfg.steps);
        let mut diverged = false;
        for k in 0..cfg.steps {
            match runner.step(&z_source[k], &z_primary[k]) {
                Ok(post) => {
                    let dx = post.mean[0] - truth[k][0];
                    let dy = post.mean[2] - truth[k][2];
                    let sq = dx * dx + dy * dy;
                    if !sq.is_finite() || sq.sqrt() > DIVERGENCE_LIMIT_M {
                        diverged = true;
                        break;
                    }
                    errs.push(sq);
                }
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
        }
        repairs.push(runner.repairs());
        sq_errors.push(if diverged { None } else { Some(errs) });
    }

    Ok(RunOutcome {
        sq_errors,
        repairs,
        digest: digest_streams(&truth, &z_source, &z_primary),
    })
}

/// Runs the full Monte Carlo experiment. Runs are independent and may
/// execute in parallel; aggregation is an ordered reduction over the run
/// index, so the report is identical regardless of thread count.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.validate()?;
    let start = Instant::now();
    let p0_factor = matrix_sqrt_psd(cfg.p0.as_matrix())?;

    #[cfg(feature = "parallel")]
    let outcomes: Vec<RunOutcome> = (0..cfg.mc_runs)
        .into_par_iter()
        .map(|run| run_single(cfg, &p0_factor, run))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<RunOutcome> = (0..cfg.mc_runs)
        .map(|run| run_single(cfg, &p0_factor, run))
        .collect::<Result<_>>()?;

    let mut variants = Vec::with_capacity(cfg.variants.len());
    for (vi, spec) in cfg.variants.iter().enumerate() {
        let mut sums = vec![0.0f64; cfg.steps];
        let mut valid = 0u64;
        let mut diverged = 0u64;
        let mut repairs = 0u64;
        for outcome in &outcomes {
            repairs += outcome.repairs[vi];
            match &outcome.sq_errors[vi] {
                Some(errs) => {
                    valid += 1;
                    for (k, e) in errs.iter().enumerate() {
                        sums[k] += e;
                    }
                }
                None => diverged += 1,
            }
        }
        let rmse_curve: Vec<f64> = if valid > 0 {
            sums.iter().map(|s| (s / valid as f64).sqrt()).collect()
        } else {
            vec![f64::NAN; cfg.steps]
        };
        let time_avg_rmse = rmse_curve.iter().sum::<f64>() / cfg.steps as f64;
        variants.push(VariantReport {
            label: spec.label.clone(),
            rule: spec.rule,
            mode: spec.mode,
            intensity: cfg.primary_sensor.intensity,
            rmse_curve,
            time_avg_rmse,
            diverged_runs: diverged,
            repairs,
        });
    }

    let mut hasher = Sha256::new();
    for outcome in &outcomes {
        hasher.update(outcome.digest.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut stream_digest = String::with_capacity(16);
    for b in digest.iter().take(8) {
        stream_digest.push_str(&format!("{b:02x}"));
    }

    Ok(McReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        steps: cfg.steps,
        mc_runs: cfg.mc_runs,
        stream_digest,
        variants,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
