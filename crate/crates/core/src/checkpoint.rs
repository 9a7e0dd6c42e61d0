//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic `HISDCKPT`, `u32` format version, `u64` header
//! length, a JSON header, then the raw array data. All integers and array
//! elements are little-endian. The header lists every array with its table,
//! name, dtype, shape and byte offset into the data section.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};
use crate::hierarchy::{TagConfig, TagSchema};
use crate::net::{ModelConfig, NetworkBundle, ParamStore};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"HISDCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub const MAIN_TABLE: &str = "main";
pub const EMA_TABLE: &str = "ema";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<i64>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableIndex {
    pub name: String,
    pub entries: Vec<ArrayEntry>,
}

/// Sampler rng position, so a resumed run replays the same draws.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || HisdError::Checkpoint("malformed rng state".into());
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad())?.try_into().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub schema_fingerprint: String,
    pub schema: Vec<TagConfig>,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub iteration: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub rng: Option<RngState>,
    /// Optimizer name → parameter name → step count.
    #[serde(default)]
    pub optimizer_steps: BTreeMap<String, BTreeMap<String, i64>>,
    pub tables: Vec<TableIndex>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tables: BTreeMap<String, ParamStore>,
}

impl Checkpoint {
    pub fn schema(&self) -> Result<TagSchema> {
        let schema = TagSchema::from_config(&self.header.schema, None)?;
        if schema.fingerprint() != self.header.schema_fingerprint {
            return Err(HisdError::Checkpoint("schema does not match its recorded fingerprint".into()));
        }
        Ok(schema)
    }

    pub fn table(&self, name: &str) -> Result<&ParamStore> {
        self.tables.get(name).ok_or_else(|| HisdError::Checkpoint(format!("missing table `{name}`")))
    }

    /// Main table is the generator side plus the discriminator.
    pub fn from_bundle(bundle: &NetworkBundle, iteration: u64) -> Self {
        let mut main = ParamStore::new();
        for (k, v) in bundle.gen_params.iter().chain(bundle.dis_params.iter()) {
            main.insert(k.clone(), v.shallow_clone());
        }
        let mut ema = ParamStore::new();
        for (k, v) in bundle.ema_params.iter() {
            ema.insert(k.clone(), v.shallow_clone());
        }
        let mut tables = BTreeMap::new();
        tables.insert(MAIN_TABLE.to_string(), main);
        tables.insert(EMA_TABLE.to_string(), ema);
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                schema_fingerprint: bundle.schema.fingerprint(),
                schema: bundle.schema.to_config(),
                model: bundle.config.clone(),
                train: None,
                iteration,
                seed: None,
                rng: None,
                optimizer_steps: BTreeMap::new(),
                tables: vec![],
            },
            tables,
        }
    }

    /// Reassembles a full bundle (main, EMA and D).
    pub fn to_bundle(&self) -> Result<NetworkBundle> {
        let schema = self.schema()?;
        let main = self.table(MAIN_TABLE)?;
        let (mut gen, mut dis) = (ParamStore::new(), ParamStore::new());
        for (k, v) in main.iter() {
            let t = v.detach().copy().set_requires_grad(true);
            if k.starts_with("discriminator.") {
                dis.insert(k.clone(), t);
            } else {
                gen.insert(k.clone(), t);
            }
        }
        let ema = self.table(EMA_TABLE)?.deep_copy(false);
        NetworkBundle::from_params(&schema, &self.header.model, gen, ema, dis)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut header = self.header.clone();
        header.format_version = FORMAT_VERSION;
        header.tables.clear();
        let mut offset = 0u64;
        let mut blobs: Vec<Vec<f32>> = Vec::new();
        for (tname, store) in &self.tables {
            let mut entries = Vec::with_capacity(store.len());
            for (name, t) in store.iter() {
                let data = Vec::<f32>::try_from(t.detach().to_kind(Kind::Float).contiguous().flatten(0, -1))?;
                entries.push(ArrayEntry { name: name.clone(), dtype: "f32".into(), shape: t.size(), offset });
                offset += 4 * data.len() as u64;
                blobs.push(data);
            }
            header.tables.push(TableIndex { name: tname.clone(), entries });
        }
        let json = serde_json::to_vec(&header)?;
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes())?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            for blob in &blobs {
                for v in blob {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(HisdError::Checkpoint(format!("{} is not a checkpoint", path.display())));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(HisdError::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let mut json = vec![0u8; u64::from_le_bytes(u64b) as usize];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut tables = BTreeMap::new();
        for table in &header.tables {
            let mut store = ParamStore::new();
            for e in &table.entries {
                if e.dtype != "f32" {
                    return Err(HisdError::Checkpoint(format!("array `{}` has unsupported dtype {}", e.name, e.dtype)));
                }
                let n: i64 = e.shape.iter().product();
                let start = e.offset as usize;
                let end = start + 4 * n as usize;
                let bytes = data
                    .get(start..end)
                    .ok_or_else(|| HisdError::Checkpoint(format!("array `{}` runs past the end of the file", e.name)))?;
                let vals: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                store.insert(e.name.clone(), Tensor::from_slice(&vals).view(e.shape.as_slice()));
            }
            tables.insert(table.name.clone(), store);
        }
        Ok(Self { header, tables })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_state_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let _: u64 = rng.gen();
        let mut back = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.gen::<u64>(), back.gen::<u64>());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.hisd");
        std::fs::write(&p, b"NOTACKPT\x01\x00\x00\x00").unwrap();
        assert!(matches!(Checkpoint::read(&p), Err(HisdError::Checkpoint(_))));
    }
}
