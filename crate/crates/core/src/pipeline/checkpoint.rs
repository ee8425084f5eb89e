//! Single-document JSON checkpoints with base64 little-endian tensors.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{read_to_string, write_atomic};
use crate::began::{build_discriminator, build_generator, BeganConfig, BeganTrainState};
use crate::diffcore::{DType, Element, Init, NetworkSpec, ParamTable, Tensor};
use crate::error::{Error, Result};
use crate::lgen::{build_lgen, LGenConfig, LGenModel};
use crate::optim::AdamState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Began,
    Lgen,
}

/// One tensor: name, shape, element type and raw little-endian bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamRecord {
    pub t: u64,
    pub m: Vec<TensorRecord>,
    pub v: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LGenCheckpointConfig {
    pub n_z: usize,
    pub landmark_count: usize,
    pub lgen: LGenConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointDoc {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub config: serde_json::Value,
    pub step: u64,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<ChaCha8Rng>,
    pub parameters: Vec<TensorRecord>,
    #[serde(default)]
    pub adam: BTreeMap<String, AdamRecord>,
}

fn encode_table<T: Element>(table: &ParamTable<T>) -> Vec<TensorRecord> {
    table
        .iter()
        .map(|(name, t)| {
            let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size_of());
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
            TensorRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: T::DTYPE,
                data: B64.encode(bytes),
            }
        })
        .collect()
}

fn decode_record<T: Element>(r: &TensorRecord) -> Result<Tensor<T>> {
    let payload = |msg: String| Error::CheckpointPayload {
        name: r.name.clone(),
        msg,
    };
    if r.dtype != T::DTYPE {
        return Err(Error::Config(format!(
            "{} is stored as {}, run precision is {}",
            r.name,
            r.dtype,
            T::DTYPE
        )));
    }
    let bytes = B64.decode(&r.data).map_err(|e| payload(e.to_string()))?;
    let width = T::DTYPE.size_of();
    let n: usize = r.shape.iter().product();
    if bytes.len() != n * width {
        return Err(payload(format!(
            "{} bytes for shape {:?} of {}",
            bytes.len(),
            r.shape,
            r.dtype
        )));
    }
    let data = bytes.chunks_exact(width).map(T::read_le).collect();
    Tensor::new(r.shape.clone(), data).map_err(|e| payload(e.to_string()))
}

/// Decodes `records` against the expected names and shapes.
fn decode_table<T: Element>(
    records: &[TensorRecord],
    expected: &[(String, Vec<usize>)],
    what: &str,
) -> Result<ParamTable<T>> {
    let found: Vec<(String, Vec<usize>)> = records
        .iter()
        .map(|r| (r.name.clone(), r.shape.clone()))
        .collect();
    let mut sorted = found.clone();
    sorted.sort();
    if sorted != expected {
        let missing: Vec<&String> = expected
            .iter()
            .filter(|e| !found.contains(e))
            .map(|(n, _)| n)
            .collect();
        return Err(Error::CheckpointShape(format!(
            "{what}: {} tensors stored, {} expected; mismatched: {missing:?}",
            found.len(),
            expected.len()
        )));
    }
    records
        .iter()
        .map(|r| Ok((r.name.clone(), decode_record::<T>(r)?)))
        .collect()
}

fn encode_adam<T: Element>(s: &AdamState<T>) -> AdamRecord {
    AdamRecord {
        t: s.t,
        m: encode_table(&s.m),
        v: encode_table(&s.v),
    }
}

fn decode_adam<T: Element>(
    r: &AdamRecord,
    expected: &[(String, Vec<usize>)],
    what: &str,
) -> Result<AdamState<T>> {
    Ok(AdamState {
        m: decode_table(&r.m, expected, &format!("{what}.m"))?,
        v: decode_table(&r.v, expected, &format!("{what}.v"))?,
        t: r.t,
    })
}

fn write_doc(path: &Path, doc: &CheckpointDoc) -> Result<()> {
    let mut text = serde_json::to_string(doc).expect("checkpoint serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Parses a checkpoint file, separating version, truncation and format
/// failures.
pub fn read_doc(path: &Path) -> Result<CheckpointDoc> {
    let text = read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        if e.is_eof() {
            Error::CheckpointTruncated(format!("{}: {e}", path.display()))
        } else {
            Error::Format {
                path: path.into(),
                msg: e.to_string(),
            }
        }
    })?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format {
            path: path.into(),
            msg: "missing format_version".into(),
        })?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::CheckpointVersion {
            found: found as u32,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn expect_kind(doc: &CheckpointDoc, kind: CheckpointKind) -> Result<()> {
    if doc.kind != kind {
        return Err(Error::Config(format!(
            "expected a {kind:?} checkpoint, found {:?}",
            doc.kind
        )));
    }
    Ok(())
}

pub fn save_began<T: Element>(state: &BeganTrainState<T>, path: &Path) -> Result<()> {
    let mut params = encode_table(state.disc.params());
    params.extend(encode_table(state.gen.params()));
    let doc = CheckpointDoc {
        format_version: FORMAT_VERSION,
        kind: CheckpointKind::Began,
        config: serde_json::to_value(&state.cfg).expect("config serializes"),
        step: state.step,
        k: state.k,
        rng: Some(state.rng.clone()),
        parameters: params,
        adam: [
            ("disc".to_string(), encode_adam(&state.adam_d)),
            ("gen".to_string(), encode_adam(&state.adam_g)),
        ]
        .into_iter()
        .collect(),
    };
    write_doc(path, &doc)
}

/// The architecture-defining part of a BEGAN config.
fn architecture(c: &BeganConfig) -> (usize, usize, usize, usize, usize, usize) {
    (
        c.image_size,
        c.image_channels,
        c.base_channels,
        c.stages,
        c.convs_per_stage,
        c.n_z,
    )
}

/// Restores a training state. When `expected` is given, its architecture
/// must match the stored one; training hyperparameters come from the file.
pub fn load_began<T: Element>(
    path: &Path,
    expected: Option<&BeganConfig>,
) -> Result<BeganTrainState<T>> {
    let doc = read_doc(path)?;
    expect_kind(&doc, CheckpointKind::Began)?;
    let cfg: BeganConfig =
        serde_json::from_value(doc.config.clone()).map_err(|e| Error::Format {
            path: path.into(),
            msg: format!("config: {e}"),
        })?;
    cfg.validate()?;
    if let Some(want) = expected {
        if architecture(want) != architecture(&cfg) {
            return Err(Error::Config(format!(
                "checkpoint architecture (size {}, base {}, stages {}, n_z {}) does not match the run (size {}, base {}, stages {}, n_z {})",
                cfg.image_size, cfg.base_channels, cfg.stages, cfg.n_z,
                want.image_size, want.base_channels, want.stages, want.n_z
            )));
        }
    }
    // zero-initialized skeletons provide the expected names and shapes
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let disc = build_discriminator::<T>(&cfg, Init::Zeros, &mut rng)?;
    let gen = build_generator::<T>(&cfg, Init::Zeros, &mut rng)?;
    let mut expected_all = disc.params().shapes();
    expected_all.extend(gen.params().shapes());
    expected_all.sort();
    let all = decode_table::<T>(&doc.parameters, &expected_all, "parameters")?;
    let split = |net: &NetworkSpec<T>| -> ParamTable<T> {
        net.params()
            .keys()
            .map(|k| (k.clone(), all.get(k).unwrap().clone()))
            .collect()
    };
    let (pd, pg) = (split(&disc), split(&gen));
    let mut disc = disc;
    let mut gen = gen;
    disc.set_params(pd)?;
    gen.set_params(pg)?;
    let adam_rec = |name: &str| {
        doc.adam
            .get(name)
            .ok_or_else(|| Error::CheckpointShape(format!("missing Adam state `{name}`")))
    };
    let adam_d = decode_adam(adam_rec("disc")?, &disc.params().shapes(), "adam.disc")?;
    let adam_g = decode_adam(adam_rec("gen")?, &gen.params().shapes(), "adam.gen")?;
    if !(0.0..=1.0).contains(&doc.k) {
        return Err(Error::Format {
            path: path.into(),
            msg: format!("k = {} outside [0, 1]", doc.k),
        });
    }
    let mut state = BeganTrainState::from_networks(cfg, disc, gen)?;
    state.k = doc.k;
    state.step = doc.step;
    state.adam_d = adam_d;
    state.adam_g = adam_g;
    if let Some(rng) = doc.rng {
        state.rng = rng;
    }
    Ok(state)
}

pub fn save_lgen<T: Element>(
    model: &LGenModel<T>,
    cfg: &LGenConfig,
    epochs_run: u64,
    path: &Path,
) -> Result<()> {
    let config = LGenCheckpointConfig {
        n_z: model.n_z(),
        landmark_count: model.landmark_count(),
        lgen: cfg.clone(),
    };
    let doc = CheckpointDoc {
        format_version: FORMAT_VERSION,
        kind: CheckpointKind::Lgen,
        config: serde_json::to_value(&config).expect("config serializes"),
        step: epochs_run,
        k: 0.0,
        rng: None,
        parameters: encode_table(model.net.params()),
        adam: BTreeMap::new(),
    };
    write_doc(path, &doc)
}

pub fn load_lgen<T: Element>(path: &Path) -> Result<(LGenModel<T>, LGenCheckpointConfig)> {
    let doc = read_doc(path)?;
    expect_kind(&doc, CheckpointKind::Lgen)?;
    let cfg: LGenCheckpointConfig =
        serde_json::from_value(doc.config.clone()).map_err(|e| Error::Format {
            path: path.into(),
            msg: format!("config: {e}"),
        })?;
    let mut model = build_lgen::<T>(cfg.n_z, cfg.landmark_count, Init::Zeros, 0)?;
    let mut expected = model.net.params().shapes();
    expected.sort();
    let params = decode_table::<T>(&doc.parameters, &expected, "parameters")?;
    model.net.set_params(params)?;
    Ok((model, cfg))
}

/// Stored precision of a checkpoint's tensors.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let doc = read_doc(path)?;
    Ok(doc.parameters.first().map_or(DType::F32, |r| r.dtype))
}
