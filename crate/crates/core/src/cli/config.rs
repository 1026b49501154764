//! Pipeline configuration: one JSON document whose keys can be overridden
//! from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::boucwen::IntegratorOptions;
use crate::cpd::CpdOptions;
use crate::dataset::RegressorSpec;
use crate::error::{Error, Result};
use crate::polyfit::DEFAULT_TERM_CAP;
use crate::pwl::DEFAULT_REGION_LIMIT;
use crate::urelu::BiasMode;
use crate::varpro::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: PathBuf,
    pub validation: Vec<PathBuf>,
    pub model: PathBuf,
    pub report: PathBuf,
    pub history: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            train: "data/train.csv".into(),
            validation: vec!["data/validation.csv".into()],
            model: "model.json".into(),
            report: "report.json".into(),
            history: None,
            metrics: None,
            out_dir: "data".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolyConfig {
    pub max_degree: u32,
    pub max_terms: usize,
    pub esr_tol: f64,
    pub term_cap: usize,
}

impl Default for PolyConfig {
    fn default() -> Self {
        Self {
            max_degree: 3,
            max_terms: 50,
            esr_tol: 1e-6,
            term_cap: DEFAULT_TERM_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub n: usize,
    pub max_points: Option<usize>,
    pub cpd: CpdOptions,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            n: 5,
            max_points: None,
            cpd: CpdOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub q: usize,
    pub bias_mode: BiasMode,
    /// Fit on RMS-scaled signals and fold the scales back into `V` and `w`.
    pub scale_signals: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            q: 10,
            bias_mode: BiasMode::Uniform,
            scale_signals: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Multisine { f_min: f64, f_max: f64, amplitude_rms: f64 },
    SweptSine { f_start: f64, f_end: f64, amplitude: f64 },
    Zero,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    pub name: String,
    /// Samples at the output rate.
    pub n_samples: usize,
    pub signal: SignalSpec,
    /// Multisine periods simulated before the kept one; drops the transient.
    #[serde(default = "one")]
    pub periods: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    /// Bouc-Wen parameter file; required by `datagen`.
    pub params: Option<PathBuf>,
    pub fs_sim: f64,
    pub factor: usize,
    pub integrator: IntegratorOptions,
    pub records: Vec<RecordSpec>,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        let ms = SignalSpec::Multisine {
            f_min: 5.0,
            f_max: 150.0,
            amplitude_rms: 20.0,
        };
        Self {
            params: None,
            fs_sim: 15000.0,
            factor: 20,
            integrator: IntegratorOptions::default(),
            records: vec![
                RecordSpec {
                    name: "train".into(),
                    n_samples: 4096,
                    signal: ms.clone(),
                    periods: 2,
                },
                RecordSpec {
                    name: "validation".into(),
                    n_samples: 1024,
                    signal: ms,
                    periods: 2,
                },
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionsConfig {
    pub limit: usize,
}

impl Default for RegionsConfig {
    fn default() -> Self {
        Self {
            limit: DEFAULT_REGION_LIMIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Feeds the CPD initialization, the holdout split and the excitation
    /// phases; the per-stage seed fields are ignored by the pipeline.
    pub seed: u64,
    /// Rate of the CSV records (Hz).
    pub sample_rate: f64,
    pub paths: PathsConfig,
    pub regressors: RegressorSpec,
    pub poly: PolyConfig,
    pub init: InitConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub datagen: DatagenConfig,
    pub regions: RegionsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: 750.0,
            paths: PathsConfig::default(),
            regressors: RegressorSpec::benchmark(),
            poly: PolyConfig::default(),
            init: InitConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            datagen: DatagenConfig::default(),
            regions: RegionsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads an optional config file and applies `key.path=value` overrides.
    /// Values parse as JSON, falling back to a plain string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&s)?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.regressors.dim();
        if self.regressors.n_y == 0 {
            return Err(Error::invalid("regressors.n_y must be at least 1"));
        }
        if self.init.n == 0 || self.init.n > m {
            return Err(Error::invalid(format!("init.n must be in 1..={m}")));
        }
        if self.net.q < 2 {
            return Err(Error::invalid("net.q must be at least 2"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        Ok(())
    }
}

fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override '{spec}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::invalid(format!("empty key segment in '{key}'")));
        }
        let obj = match node {
            Value::Object(map) => map,
            other => {
                *other = Value::Object(Default::default());
                other.as_object_mut().expect("just set")
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), cfg);
        assert_eq!(cfg.regressors.dim(), 30);
        assert_eq!((cfg.init.n, cfg.net.q), (5, 10));
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "net.q=4".into(),
                "train.jacobian_mode=full".into(),
                "paths.model=out/m.json".into(),
                "regressors={\"n_u\":2,\"n_y\":3}".into(),
                "init.n=2".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.net.q, 4);
        assert_eq!(cfg.train.jacobian_mode, crate::varpro::JacobianMode::Full);
        assert_eq!(cfg.paths.model, PathBuf::from("out/m.json"));
        assert_eq!(cfg.regressors.dim(), 6);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::load(None, &["net.width=3".into()]).is_err());
        assert!(PipelineConfig::load(None, &["net.q=1".into()]).is_err());
        assert!(PipelineConfig::load(None, &["init.n=31".into()]).is_err());
        assert!(PipelineConfig::load(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        for name in ["desk.json", "benchmark.json"] {
            let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
            PipelineConfig::load(Some(&p), &[]).unwrap();
        }
    }
}
