//! Experiment configuration documents.
//!
//! One TOML format feeds every command. Matrices carry explicit shape
//! declarations so that a transposed or truncated data block fails loudly
//! instead of being reinterpreted. Channel states are 1-based in documents
//! (`s1`, `s2`, ...).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsmc::FsmcModel;
use crate::lqr::PlantSpec;

/// Row-major matrix literal with an explicit shape.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Config(format!(
                "{field}: declared shape {}x{} needs {} entries, found {}",
                self.rows,
                self.cols,
                self.rows * self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// A gain entry is either a flat row (single-input plants) or a shaped
/// matrix.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GainSpec {
    Flat(Vec<f64>),
    Shaped(MatrixSpec),
}

impl GainSpec {
    fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>> {
        match self {
            GainSpec::Flat(row) => Ok(DMatrix::from_row_slice(1, row.len(), row)),
            GainSpec::Shaped(spec) => spec.to_matrix(field),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlantDoc {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub sigma_w: MatrixSpec,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    /// Diagonal of the dropout compensation matrix.
    pub phi: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelDoc {
    pub p_c: MatrixSpec,
    pub delta_hat: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct RunDoc {
    pub horizon: Option<usize>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub noise_traces: Option<usize>,
    pub channel_traces: Option<usize>,
    pub theta_init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentDoc {
    pub plant: PlantDoc,
    pub channel: ChannelDoc,
    #[serde(default)]
    pub run: RunDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<BTreeMap<String, GainSpec>>,
}

/// Standalone gain document (`--gains` files).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GainsDoc {
    pub gains: BTreeMap<String, GainSpec>,
}

/// Validated, typed experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub channel: FsmcModel,
    pub run: RunSettings,
    /// Externally supplied gains keyed by channel state, if the document
    /// carried a `[gains]` section.
    pub imported_gains: Option<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub horizon: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub noise_traces: usize,
    pub channel_traces: usize,
    pub theta_init: DVector<f64>,
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig> {
    let doc: ExperimentDoc =
        toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
    experiment_from_doc(&doc)
}

pub fn experiment_from_doc(doc: &ExperimentDoc) -> Result<ExperimentConfig> {
    let a = doc.plant.a.to_matrix("plant.a")?;
    let n_x = a.nrows();
    let b = doc.plant.b.to_matrix("plant.b")?;
    let n_u = b.ncols();
    let plant = PlantSpec::new(
        a,
        b,
        doc.plant.sigma_w.to_matrix("plant.sigma_w")?,
        doc.plant.q.to_matrix("plant.q")?,
        doc.plant.r.to_matrix("plant.r")?,
        DVector::from_row_slice(&doc.plant.phi),
        DVector::from_row_slice(&doc.plant.x0),
    )
    .map_err(|e| Error::Config(format!("plant: {e}")))?;

    let p_c = doc.channel.p_c.to_matrix("channel.p_c")?;
    let n_states = p_c.nrows();
    let channel = FsmcModel::new(p_c, DVector::from_row_slice(&doc.channel.delta_hat))
        .map_err(|e| Error::Config(format!("channel: {e}")))?;

    let theta_init = match &doc.run.theta_init {
        Some(v) => {
            if v.len() != n_states {
                return Err(Error::Config(format!(
                    "run.theta_init has length {}, channel has {n_states} states",
                    v.len()
                )));
            }
            DVector::from_row_slice(v)
        }
        None => DVector::from_element(n_states, 1.0 / n_states as f64),
    };
    if (theta_init.sum() - 1.0).abs() > 1e-10 || theta_init.iter().any(|&p| p < 0.0) {
        return Err(Error::Config(
            "run.theta_init must be a probability vector".into(),
        ));
    }
    let run = RunSettings {
        horizon: doc.run.horizon.unwrap_or(720),
        epsilon: doc.run.epsilon.unwrap_or(f64::EPSILON),
        seed: doc.run.seed.unwrap_or(0),
        noise_traces: doc.run.noise_traces.unwrap_or(50),
        channel_traces: doc.run.channel_traces.unwrap_or(200),
        theta_init,
    };
    if !(0.0 < run.epsilon && run.epsilon < 1.0) {
        return Err(Error::Config("run.epsilon must lie in (0, 1)".into()));
    }

    let imported_gains = match &doc.gains {
        Some(map) => Some(gains_from_map(map, n_states, n_u, n_x)?),
        None => None,
    };

    Ok(ExperimentConfig {
        plant,
        channel,
        run,
        imported_gains,
    })
}

pub fn experiment_to_doc(cfg: &ExperimentConfig) -> ExperimentDoc {
    ExperimentDoc {
        plant: PlantDoc {
            a: MatrixSpec::from_matrix(cfg.plant.a()),
            b: MatrixSpec::from_matrix(cfg.plant.b()),
            sigma_w: MatrixSpec::from_matrix(cfg.plant.sigma_w()),
            q: MatrixSpec::from_matrix(cfg.plant.q()),
            r: MatrixSpec::from_matrix(cfg.plant.r()),
            phi: cfg.plant.phi().iter().copied().collect(),
            x0: cfg.plant.x0().iter().copied().collect(),
        },
        channel: ChannelDoc {
            p_c: MatrixSpec::from_matrix(cfg.channel.tpm()),
            delta_hat: cfg.channel.delivery().iter().copied().collect(),
        },
        run: RunDoc {
            horizon: Some(cfg.run.horizon),
            epsilon: Some(cfg.run.epsilon),
            seed: Some(cfg.run.seed),
            noise_traces: Some(cfg.run.noise_traces),
            channel_traces: Some(cfg.run.channel_traces),
            theta_init: Some(cfg.run.theta_init.iter().copied().collect()),
        },
        gains: cfg.imported_gains.as_ref().map(|gains| {
            gains
                .iter()
                .enumerate()
                .map(|(i, g)| (format!("s{}", i + 1), shaped_or_flat(g)))
                .collect()
        }),
    }
}

pub fn serialize_experiment(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(&experiment_to_doc(cfg)).expect("experiment doc serializes")
}

fn shaped_or_flat(g: &DMatrix<f64>) -> GainSpec {
    if g.nrows() == 1 {
        GainSpec::Flat(g.row(0).iter().copied().collect())
    } else {
        GainSpec::Shaped(MatrixSpec::from_matrix(g))
    }
}

/// Parse a standalone gain document. Keys are `s1`..`sN`, or a single `all`
/// applied to every channel state.
pub fn parse_gains(text: &str, n_states: usize, n_u: usize, n_x: usize) -> Result<Vec<DMatrix<f64>>> {
    let doc: GainsDoc =
        toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
    gains_from_map(&doc.gains, n_states, n_u, n_x)
}

fn gains_from_map(
    map: &BTreeMap<String, GainSpec>,
    n_states: usize,
    n_u: usize,
    n_x: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let check = |g: DMatrix<f64>, key: &str| -> Result<DMatrix<f64>> {
        if g.nrows() != n_u || g.ncols() != n_x {
            return Err(Error::Config(format!(
                "gain {key} must be {n_u}x{n_x}, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        Ok(g)
    };
    if let Some(all) = map.get("all") {
        if map.len() != 1 {
            return Err(Error::Config(
                "gain key `all` cannot be combined with per-state keys".into(),
            ));
        }
        let g = check(all.to_matrix("gains.all")?, "all")?;
        return Ok(vec![g; n_states]);
    }
    let mut gains = Vec::with_capacity(n_states);
    for i in 1..=n_states {
        let key = format!("s{i}");
        let spec = map
            .get(&key)
            .ok_or_else(|| Error::Config(format!("missing gain for channel state {key}")))?;
        gains.push(check(spec.to_matrix(&key)?, &key)?);
    }
    if map.len() != n_states {
        return Err(Error::Config(format!(
            "gain document has {} entries, expected {n_states} (s1..s{n_states}) or a single `all`",
            map.len()
        )));
    }
    Ok(gains)
}

/// Serialize a stationary gain set keyed by channel state.
pub fn serialize_gains(gains: &[DMatrix<f64>]) -> String {
    let doc = GainsDoc {
        gains: gains
            .iter()
            .enumerate()
            .map(|(i, g)| (format!("s{}", i + 1), shaped_or_flat(g)))
            .collect(),
    };
    toml::to_string_pretty(&doc).expect("gains doc serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pendulum;

    fn pendulum_config() -> ExperimentConfig {
        ExperimentConfig {
            plant: pendulum::plant(),
            channel: pendulum::channel(),
            run: RunSettings {
                horizon: 720,
                epsilon: f64::EPSILON,
                seed: 1,
                noise_traces: 50,
                channel_traces: 200,
                theta_init: DVector::from_element(4, 0.25),
            },
            imported_gains: Some(vec![pendulum::bernoullian_gain(); 4]),
        }
    }

    #[test]
    fn roundtrip_preserves_models() {
        let cfg = pendulum_config();
        let text = serialize_experiment(&cfg);
        let parsed = parse_experiment(&text).unwrap();
        assert_eq!(parsed.plant, cfg.plant);
        assert_eq!(parsed.channel, cfg.channel);
        assert_eq!(parsed.run, cfg.run);
        assert_eq!(parsed.imported_gains, cfg.imported_gains);
        // And the serialized form itself is stable.
        let text2 = serialize_experiment(&parsed);
        assert_eq!(text, text2);
    }

    #[test]
    fn shape_mismatch_is_loud() {
        let cfg = pendulum_config();
        let mut doc = experiment_to_doc(&cfg);
        doc.plant.a.cols = 3;
        let text = toml::to_string_pretty(&doc).unwrap();
        let err = parse_experiment(&text).unwrap_err();
        assert!(err.to_string().contains("plant.a"), "{err}");
    }

    #[test]
    fn gains_all_key_replicates() {
        let text = "[gains]\nall = [1.0, 2.0, 3.0, 4.0]\n";
        let gains = parse_gains(text, 4, 1, 4).unwrap();
        assert_eq!(gains.len(), 4);
        assert_eq!(gains[0], gains[3]);
        assert_eq!(gains[0][(0, 1)], 2.0);
    }

    #[test]
    fn gains_missing_state_is_an_error() {
        let text = "[gains]\ns1 = [1.0, 2.0, 3.0, 4.0]\n";
        assert!(parse_gains(text, 2, 1, 4).is_err());
    }

    #[test]
    fn gains_wrong_width_is_an_error() {
        let text = "[gains]\nall = [1.0, 2.0]\n";
        assert!(parse_gains(text, 2, 1, 4).is_err());
    }

    #[test]
    fn run_defaults_fill_in() {
        let cfg = pendulum_config();
        let mut doc = experiment_to_doc(&cfg);
        doc.run = RunDoc::default();
        doc.gains = None;
        let parsed = parse_experiment(&toml::to_string_pretty(&doc).unwrap()).unwrap();
        assert_eq!(parsed.run.horizon, 720);
        assert_eq!(parsed.run.epsilon, f64::EPSILON);
        assert_eq!(parsed.run.theta_init, DVector::from_element(4, 0.25));
    }
}
