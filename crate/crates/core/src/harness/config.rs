//! Flat TOML configuration files.
//!
//! One table holds both scenario and experiment keys. Scenario keys overlay
//! the chosen preset (`preset = "desk"`, default `full`); experiment keys are
//! listed in [`EXPERIMENT_KEYS`]. Example:
//!
//! ```toml
//! preset = "desk"
//! snr_db = 5.0
//! l2 = [3, 2, 3, 3]
//! sweep = "snr"
//! values = [0, 10, 20]
//! trials = 200
//! seed = 7
//! algorithms = ["dsmdt", "dsmdt_kpn"]
//! output = "snr.csv"
//! ```

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use super::experiment::{ExperimentSpec, SweepKind};
use crate::dsmdt::Algorithm;
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

pub const EXPERIMENT_KEYS: [&str; 10] = [
    "preset",
    "sweep",
    "values",
    "trials",
    "seed",
    "algorithms",
    "output",
    "dump",
    "workers",
    "progress",
];

/// Parsed configuration file, split into scenario overrides and experiment
/// settings. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub scenario: Table,
    pub sweep: Option<SweepKind>,
    pub values: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub algorithms: Option<Vec<Algorithm>>,
    pub output: Option<PathBuf>,
    pub dump: Option<PathBuf>,
    pub workers: Option<usize>,
    pub progress: Option<bool>,
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {msg}"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| cfg_err(key, "expected a string"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_integer()
        .filter(|&i| i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| cfg_err(key, "expected a non-negative integer"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(cfg_err(key, "expected a number")),
    }
}

fn one_or_many(v: &Value) -> Vec<&Value> {
    match v {
        Value::Array(a) => a.iter().collect(),
        other => vec![other],
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut out = ConfigFile::default();
        for (key, v) in table {
            match key.as_str() {
                "preset" => out.preset = Some(as_str(&key, &v)?.to_string()),
                "sweep" => out.sweep = Some(SweepKind::parse(as_str(&key, &v)?)?),
                "values" => {
                    out.values = Some(
                        one_or_many(&v)
                            .into_iter()
                            .map(|x| as_f64(&key, x))
                            .collect::<Result<_>>()?,
                    )
                }
                "trials" => out.trials = Some(as_usize(&key, &v)?),
                "seed" => out.seed = Some(as_usize(&key, &v)? as u64),
                "algorithms" => {
                    out.algorithms = Some(
                        one_or_many(&v)
                            .into_iter()
                            .map(|x| Algorithm::parse(as_str(&key, x)?))
                            .collect::<Result<_>>()?,
                    )
                }
                "output" => out.output = Some(PathBuf::from(as_str(&key, &v)?)),
                "dump" => out.dump = Some(PathBuf::from(as_str(&key, &v)?)),
                "workers" => out.workers = Some(as_usize(&key, &v)?),
                "progress" => {
                    out.progress = Some(
                        v.as_bool()
                            .ok_or_else(|| cfg_err(&key, "expected true or false"))?,
                    )
                }
                _ => {
                    out.scenario.insert(key, v);
                }
            }
        }
        // surface unknown scenario keys now rather than at first use
        out.scenario_config()?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Preset with the scenario keys of this file applied.
    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        let base = ScenarioConfig::preset(self.preset.as_deref().unwrap_or("full"))?;
        overlay(&base, &self.scenario)
    }

    /// Experiment spec from this file; `sweep`, `values` and `seed` must be
    /// present.
    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let sweep = self
            .sweep
            .ok_or_else(|| Error::Config("missing `sweep`".into()))?;
        let values = self
            .values
            .clone()
            .ok_or_else(|| Error::Config("missing `values`".into()))?;
        let seed = self
            .seed
            .ok_or_else(|| Error::Config("missing `seed`".into()))?;
        let mut spec = ExperimentSpec::new(
            self.scenario_config()?,
            sweep,
            values,
            self.trials.unwrap_or(100),
            seed,
        );
        if let Some(a) = &self.algorithms {
            spec.algorithms = a.clone();
        }
        spec.output_path = self.output.clone();
        spec.dump_path = self.dump.clone();
        spec.workers = self.workers;
        spec.progress = self.progress.unwrap_or(false);
        spec.validate()?;
        Ok(spec)
    }
}

/// `base` with the given keys replaced; unknown keys and bad values are
/// configuration errors.
pub fn overlay(base: &ScenarioConfig, keys: &Table) -> Result<ScenarioConfig> {
    let mut table = Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in keys {
        table.insert(k.clone(), v.clone());
    }
    let cfg: ScenarioConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies one `key=value` override given on the command line; the value
/// uses TOML syntax (`snr_db=5`, `l2=[3,2]`, `noise_reference="per_ue"`).
/// Bare words are taken as strings.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` must look like key=value")))?;
    let key = k.trim().to_string();
    let parsed: std::result::Result<Table, _> = format!("v = {}", v.trim()).parse();
    let value = match parsed {
        Ok(mut t) => t.remove("v").expect("key v present"),
        Err(_) => Value::String(v.trim().to_string()),
    };
    Ok((key, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_keys_overlay_preset() {
        let c = ConfigFile::parse(
            "preset = \"desk\"\nsnr_db = 5\nl2 = [3, 2, 3, 3]\nnoise_reference = \"per_ue\"\n",
        )
        .unwrap();
        let s = c.scenario_config().unwrap();
        assert_eq!(s.m, 32);
        assert_eq!(s.snr_db, 5.0);
        assert_eq!(s.l2, vec![3, 2, 3, 3]);
        assert_eq!(s.noise_reference, crate::scenario::NoiseReference::PerUe);
    }

    #[test]
    fn experiment_keys_parsed() {
        let text = "sweep = \"p\"\nvalues = [32, 64]\ntrials = 3\nseed = 9\nalgorithms = \"dsmdt_kpn\"\noutput = \"a.csv\"\nworkers = 2\n";
        let spec = ConfigFile::parse(text).unwrap().experiment().unwrap();
        assert_eq!(spec.sweep, SweepKind::P);
        assert_eq!(spec.values, vec![32.0, 64.0]);
        assert_eq!(spec.trials, 3);
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.algorithms, vec![Algorithm::DsmdtKpn]);
        assert_eq!(spec.output_path, Some(PathBuf::from("a.csv")));
        assert_eq!(spec.workers, Some(2));
        assert_eq!(spec.base, ScenarioConfig::full());
    }

    #[test]
    fn every_scenario_field_addressable() {
        let base = ScenarioConfig::full();
        let table = Table::try_from(&base).unwrap();
        for key in table.keys() {
            assert!(
                !EXPERIMENT_KEYS.contains(&key.as_str()),
                "{key} clashes with an experiment key"
            );
        }
        let text = "m = 16\nn1 = 4\nn2 = 4\nk = 2\np = 32\nq = 8\nl1 = 2\nl2 = 2\ncarrier_freq = 3.5e9\ndist_bs = 10.0\n\
                    dist_ue_min = 5.0\ndist_ue_max = 9.0\nsnr_db = -3.0\nl2_overestimate = 3\nnoise_reference = \"per_ue\"\n";
        let parsed: Table = text.parse().unwrap();
        assert_eq!(parsed.len(), table.len(), "test must touch every field");
        let s = ConfigFile::parse(text).unwrap().scenario_config().unwrap();
        assert_eq!(
            (s.m, s.n1, s.n2, s.k, s.p, s.q, s.l1),
            (16, 4, 4, 2, 32, 8, 2)
        );
        assert_eq!(s.l2, vec![2]);
        assert_eq!(
            (
                s.carrier_freq,
                s.dist_bs,
                s.dist_ue_min,
                s.dist_ue_max,
                s.snr_db
            ),
            (3.5e9, 10.0, 5.0, 9.0, -3.0)
        );
        assert_eq!(s.l2_overestimate, 3);
    }

    #[test]
    fn bad_input_rejected() {
        assert!(matches!(ConfigFile::parse("mm = 3"), Err(Error::Config(_))));
        assert!(matches!(
            ConfigFile::parse("trials = -1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(ConfigFile::parse("m = ["), Err(Error::Parse(_))));
        assert!(ConfigFile::parse("sweep = \"x\"").is_err());
        assert!(ConfigFile::parse("trials = 3")
            .unwrap()
            .experiment()
            .is_err());
    }

    #[test]
    fn overrides_parse_toml_values() {
        assert_eq!(
            parse_override("snr_db=5").unwrap(),
            ("snr_db".into(), Value::Integer(5))
        );
        assert_eq!(
            parse_override("noise_reference=per_ue").unwrap().1,
            Value::String("per_ue".into())
        );
        let (_, v) = parse_override("l2=[3,2]").unwrap();
        assert_eq!(v, Value::Array(vec![Value::Integer(3), Value::Integer(2)]));
        assert!(parse_override("novalue").is_err());
    }
}
