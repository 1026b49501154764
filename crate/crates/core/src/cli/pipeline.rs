//! The identification pipeline behind the CLI commands.

use std::fmt;

use nalgebra::DVector;
use serde::Serialize;

use super::config::{DatagenConfig, PipelineConfig, RecordSpec, SignalSpec};
use crate::boucwen::{decimate, multisine, simulate, swept_sine, BoucWenParams};
use crate::cpd::{init_transform, CpdOptions, InitOptions};
use crate::dataset::{build_regressors, rmse, rmse_db, simulate_free_run, Predictor, RegressorSpec, TimeSeriesData};
use crate::error::{Error, Result};
use crate::polyfit::{enumerate_terms_capped, frols_select, FrolsConfig, PolyNarxModel, PolyTerm};
use crate::pwl::cond_diagnostics;
use crate::urelu::{transform, UReluNet};
use crate::varpro::{train, TrainConfig, TrainReport};

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={} {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// Output-rate record plus the seed that produced its excitation.
#[derive(Clone, Debug)]
pub struct GeneratedRecord {
    pub spec: RecordSpec,
    pub seed: u64,
    pub data: TimeSeriesData,
}

fn excitation(rec: &RecordSpec, n_hi: usize, fs: f64, seed: u64) -> Result<Vec<f64>> {
    Ok(match &rec.signal {
        SignalSpec::Multisine {
            f_min,
            f_max,
            amplitude_rms,
        } => multisine(n_hi, fs, *f_min, *f_max, *amplitude_rms, seed)?,
        SignalSpec::SweptSine {
            f_start,
            f_end,
            amplitude,
        } => swept_sine(n_hi, fs, *f_start, *f_end, *amplitude)?,
        SignalSpec::Zero => vec![0.0; n_hi],
    })
}

/// Simulates one record at `fs_sim` and decimates it to the output rate.
///
/// Multisine records are repeated for `periods + 1` periods and the period
/// before the last is kept, so neither the start-up transient nor the filter
/// edges touch the returned samples.
pub fn generate_record(
    params: &BoucWenParams,
    cfg: &DatagenConfig,
    rec: &RecordSpec,
    seed: u64,
) -> Result<TimeSeriesData> {
    if cfg.factor == 0 || rec.n_samples == 0 {
        return Err(Error::invalid("factor and n_samples must be positive"));
    }
    let n_hi = rec.n_samples * cfg.factor;
    let one = excitation(rec, n_hi, cfg.fs_sim, seed)?;
    let periodic = matches!(rec.signal, SignalSpec::Multisine { .. });
    let reps = if periodic { rec.periods.max(1) + 1 } else { 1 };
    let u_hi: Vec<f64> = one.iter().copied().cycle().take(n_hi * reps).collect();
    let sim = simulate(params, &u_hi, cfg.fs_sim, &cfg.integrator)?;
    let u_lo = decimate(&u_hi, cfg.factor, cfg.fs_sim)?;
    let y_lo = decimate(&sim.y, cfg.factor, cfg.fs_sim)?;
    let start = if periodic { (reps - 2) * rec.n_samples } else { 0 };
    let range = start..start + rec.n_samples;
    TimeSeriesData::new(u_lo[range.clone()].to_vec(), y_lo[range].to_vec(), cfg.fs_sim / cfg.factor as f64)
}

pub fn generate_records(params: &BoucWenParams, cfg: &DatagenConfig, seed: u64) -> Result<Vec<GeneratedRecord>> {
    cfg.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let s = seed.wrapping_add(i as u64);
            Ok(GeneratedRecord {
                spec: rec.clone(),
                seed: s,
                data: generate_record(params, cfg, rec, s)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct InitSummary {
    pub cpd_rel_error: f64,
    pub cpd_iterations: usize,
    pub n_points: usize,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub net: UReluNet,
    pub report: TrainReport,
    pub poly: PolyNarxModel,
    pub frols_err_sum: f64,
    pub init: InitSummary,
}

fn rms_or_one(x: &[f64]) -> f64 {
    let r = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// Regressors → FROLS polynomial → Hessian/CPD initialization → training.
pub fn fit_model(cfg: &PipelineConfig, data: &TimeSeriesData) -> StageResult<FitOutcome> {
    let spec = cfg.regressors;
    let (su, sy) = if cfg.net.scale_signals {
        (rms_or_one(data.u()), rms_or_one(data.y()))
    } else {
        (1.0, 1.0)
    };
    let scaled = TimeSeriesData::new(
        data.u().iter().map(|v| v / su).collect(),
        data.y().iter().map(|v| v / sy).collect(),
        data.sample_rate(),
    )
    .stage("regressors")?;
    let ds = build_regressors(&scaled, spec).stage("regressors")?;

    let candidates = enumerate_terms_capped(spec.dim(), cfg.poly.max_degree, cfg.poly.term_cap).stage("polyfit")?;
    let frols = frols_select(
        &ds,
        &candidates,
        &FrolsConfig {
            max_terms: cfg.poly.max_terms,
            esr_tol: cfg.poly.esr_tol,
        },
    )
    .stage("polyfit")?;
    log::info!("polynomial model: {} terms, ERR sum {:.6}", frols.model.terms().len(), frols.err_sum());

    let init = init_transform(
        &ds,
        &frols.model,
        cfg.init.n,
        &InitOptions {
            cpd: CpdOptions {
                seed: cfg.seed,
                ..cfg.init.cpd
            },
            max_points: cfg.init.max_points,
        },
    )
    .stage("init")?;
    log::info!("CPD relative error {:.3e} after {} sweeps", init.factors.rel_error, init.factors.iterations);

    let (net, mut report) = train(&init.v0, &ds, cfg.net.q, &TrainConfig {
        bias_mode: cfg.net.bias_mode,
        rng_seed: cfg.seed,
        ..cfg.train
    })
    .stage("train")?;

    // Undo the signal scaling: x = (U D⁻¹) V, ŷ = s_y·(network output).
    let mut v = net.v().clone();
    for (row, mut vr) in v.row_iter_mut().enumerate() {
        vr /= if row <= spec.n_u { su } else { sy };
    }
    let w: DVector<f64> = net.w() * sy;
    let net = UReluNet::new(v, net.beta().clone(), w, net.x_min().to_vec(), net.x_max().to_vec())
        .stage("train")?
        .with_regressor_spec(Some(spec));
    report.residual_history.iter_mut().for_each(|r| *r *= sy * sy);
    report.final_rmse *= sy;
    report.final_rmse_db = rmse_db(report.final_rmse).ok();
    if let Some(h) = report.holdout_rmse.as_mut() {
        h.iter_mut().for_each(|r| *r *= sy);
    }

    Ok(FitOutcome {
        net,
        report,
        poly: frols.model.clone(),
        frols_err_sum: frols.err_sum(),
        init: InitSummary {
            cpd_rel_error: init.factors.rel_error,
            cpd_iterations: init.factors.iterations,
            n_points: init.n_points,
        },
    })
}

/// Least-squares linear ARX model on the same regressors (constant included).
pub fn fit_linear_arx(data: &TimeSeriesData, spec: RegressorSpec) -> Result<PolyNarxModel> {
    let ds = build_regressors(data, spec)?;
    let m = spec.dim();
    let mut terms = vec![PolyTerm::constant(m)];
    terms.extend((0..m).map(|i| PolyTerm::var(m, i, 1)));
    PolyNarxModel::fit_ols(&ds, terms)
}

#[derive(Clone, Debug, Serialize)]
pub struct FreeRunMetrics {
    /// Number of simulated (non-seed) samples.
    pub n_s: usize,
    pub rmse: Option<f64>,
    pub rmse_db: Option<f64>,
    pub diverged: bool,
    pub divergence_index: Option<usize>,
    #[serde(skip)]
    pub y_sim: Vec<f64>,
}

/// Free-run simulation seeded with the first `max_lag` measured outputs;
/// the error is taken over the simulated samples only.
pub fn free_run_metrics<P: Predictor + ?Sized>(model: &P, data: &TimeSeriesData, spec: RegressorSpec) -> Result<FreeRunMetrics> {
    let seed = spec.max_lag();
    let n_s = data.len().saturating_sub(seed);
    if n_s == 0 {
        return Err(Error::SeriesTooShort {
            required: seed + 1,
            actual: data.len(),
        });
    }
    match simulate_free_run(model, data.u(), data.y(), spec) {
        Ok(ys) => {
            let e = rmse(&data.y()[seed..], &ys[seed..])?;
            Ok(FreeRunMetrics {
                n_s,
                rmse: Some(e),
                rmse_db: rmse_db(e).ok(),
                diverged: false,
                divergence_index: None,
                y_sim: ys,
            })
        }
        Err(Error::Diverged { index }) => Ok(FreeRunMetrics {
            n_s,
            rmse: None,
            rmse_db: None,
            diverged: true,
            divergence_index: Some(index),
            y_sim: Vec::new(),
        }),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRecord {
    pub name: String,
    #[serde(flatten)]
    pub metrics: FreeRunMetrics,
    pub cond_u: f64,
    pub cond_x: f64,
}

pub fn evaluate_net(net: &UReluNet, name: &str, data: &TimeSeriesData) -> Result<EvalRecord> {
    let spec = net
        .regressor_spec()
        .ok_or_else(|| Error::invalid("model file has no regressor_spec"))?;
    let metrics = free_run_metrics(net, data, spec)?;
    let ds = build_regressors(data, spec)?;
    let x = transform(&ds.regressors, net.v())?;
    let (cond_u, cond_x) = cond_diagnostics(&ds.regressors, &x)?;
    Ok(EvalRecord {
        name: name.to_string(),
        metrics,
        cond_u,
        cond_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boucwen::InitialState;

    fn linear_params() -> BoucWenParams {
        BoucWenParams {
            m_l: 1.0,
            k_l: 1e4,
            c_l: 20.0,
            alpha: 0.0,
            beta_bw: 0.0,
            gamma: 0.0,
            delta: 0.0,
            nu: 1.0,
            initial: InitialState::default(),
        }
    }

    fn small_datagen() -> DatagenConfig {
        DatagenConfig {
            records: vec![RecordSpec {
                name: "r".into(),
                n_samples: 256,
                signal: SignalSpec::Multisine {
                    f_min: 5.0,
                    f_max: 100.0,
                    amplitude_rms: 1.0,
                },
                periods: 1,
            }],
            ..DatagenConfig::default()
        }
    }

    #[test]
    fn zero_signal_gives_zero_output() {
        let cfg = DatagenConfig {
            records: vec![RecordSpec {
                name: "z".into(),
                n_samples: 64,
                signal: SignalSpec::Zero,
                periods: 1,
            }],
            ..DatagenConfig::default()
        };
        let recs = generate_records(&linear_params(), &cfg, 0).unwrap();
        assert!(recs[0].data.y().iter().all(|&v| v == 0.0));
        assert_eq!(recs[0].data.sample_rate(), 750.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_records(&linear_params(), &small_datagen(), 4).unwrap();
        let b = generate_records(&linear_params(), &small_datagen(), 4).unwrap();
        assert_eq!(a[0].data, b[0].data);
        assert_eq!(a[0].data.len(), 256);
    }

    #[test]
    fn linear_arx_fits_linear_system() {
        let recs = generate_records(&linear_params(), &small_datagen(), 1).unwrap();
        let spec = RegressorSpec::new(3, 3).unwrap();
        let arx = fit_linear_arx(&recs[0].data, spec).unwrap();
        let m = free_run_metrics(&arx, &recs[0].data, spec).unwrap();
        let y_rms = rms_or_one(recs[0].data.y());
        assert!(m.rmse.unwrap() < 1e-3 * y_rms);
    }

    #[test]
    fn divergence_is_a_result() {
        let data = TimeSeriesData::new(vec![0.0; 20], vec![1.0; 20], 1.0).unwrap();
        let spec = RegressorSpec::new(0, 1).unwrap();
        let blow = |phi: &[f64]| phi[1] * 1e300;
        let m = free_run_metrics(&blow, &data, spec).unwrap();
        assert!(m.diverged);
        assert_eq!(m.divergence_index, Some(2));
    }
}
