//! `DSQC` checkpoints.
//!
//! Layout: magic `DSQC`, u32 version, u32 header length, UTF-8 JSON header,
//! then the concatenated little-endian f32 payloads of every parameter in
//! store order. Integers are little-endian; offsets in the header are byte
//! offsets from the start of the payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{build_network, Network};
use super::params::{ParamKind, ParameterStore};
use super::spec::NetworkSpec;
use crate::dataset::SplitConfig;
use crate::error::{Error, Result};
use crate::tensor::Element;

pub const DSQC_MAGIC: [u8; 4] = *b"DSQC";
pub const DSQC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub offset: u64,
}

/// Provenance carried alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub epochs_completed: usize,
    /// Optimizer label of every completed epoch.
    pub optimizers: Vec<String>,
    pub split: Option<SplitConfig>,
    pub final_val_accuracy: Option<f64>,
    pub final_val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub classes: Vec<String>,
    pub params: Vec<ParamEntry>,
    pub training: TrainingMetadata,
}

/// A decoded checkpoint: the rebuilt network with its stored weights.
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub network: Network,
    pub store: ParameterStore<T>,
}

pub fn write_checkpoint<T: Element>(
    mut w: impl Write,
    network: &Network,
    store: &ParameterStore<T>,
    seed: u64,
    classes: &[String],
    training: &TrainingMetadata,
) -> Result<()> {
    let mut offset = 0u64;
    let mut params = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            kind: p.kind,
            shape: p.tensor.dims().to_vec(),
            trainable: p.trainable,
            offset,
        });
        offset += 4 * p.tensor.len() as u64;
    }
    let header = CheckpointHeader {
        spec: network.spec().clone(),
        seed,
        classes: classes.to_vec(),
        params,
        training: training.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header_len =
        u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header exceeds 4 GiB".into()))?;

    w.write_all(&DSQC_MAGIC)?;
    w.write_all(&DSQC_VERSION.to_le_bytes())?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&json)?;
    for (_, p) in store.iter() {
        let bytes: Vec<u8> = p
            .tensor
            .data()
            .iter()
            .flat_map(|v| (v.widen() as f32).to_le_bytes())
            .collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    network: &Network,
    store: &ParameterStore<T>,
    seed: u64,
    classes: &[String],
    training: &TrainingMetadata,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = BufWriter::new(File::create(path)?);
    write_checkpoint(f, network, store, seed, classes, training)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<T: Element>(mut r: impl Read) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("cannot read magic: {e}")))?;
    if magic != DSQC_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != DSQC_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    let (network, mut store) = build_network::<T>(&header.spec, header.seed)?;
    if store.len() != header.params.len() {
        return Err(Error::Mismatch(format!(
            "spec builds {} parameters, checkpoint lists {}",
            store.len(),
            header.params.len()
        )));
    }
    let mut offset = 0u64;
    let ids: Vec<_> = store.ids().collect();
    for (id, entry) in ids.into_iter().zip(&header.params) {
        let p = store.get_mut(id);
        if p.name != entry.name || p.tensor.dims() != entry.shape.as_slice() || p.kind != entry.kind
        {
            return Err(Error::Mismatch(format!(
                "parameter {:?} {:?} does not match checkpoint entry {:?} {:?}",
                p.name,
                p.tensor.dims(),
                entry.name,
                entry.shape
            )));
        }
        if entry.offset != offset {
            return Err(Error::Checkpoint(format!(
                "non-contiguous offset for {}",
                entry.name
            )));
        }
        let mut bytes = vec![0u8; 4 * p.tensor.len()];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated payload at {}: {e}", entry.name)))?;
        for (dst, c) in p.tensor.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = T::cast(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        }
        p.trainable = entry.trainable;
        offset += bytes.len() as u64;
    }
    Ok(Checkpoint {
        header,
        network,
        store,
    })
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(f))
}
