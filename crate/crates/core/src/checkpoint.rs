//! Training snapshots: a text header followed by raw little-endian `f64`s.
//!
//! Layout: the magic line, a decimal header length line, the TOML header of
//! that many bytes, then every section's values back to back.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learner::mlp::{Mlp, MlpSpec};
use crate::learner::optim::OptimState;

const MAGIC: &str = "GAZEGYM-CHECKPOINT 1";

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since TOML integers stop at 63 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        // validated by Checkpoint::load
        hex::decode_to_slice(&self.seed, &mut seed).expect("rng seed is 32 hex bytes");
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().expect("rng word position is decimal"));
        rng
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut seed = [0u8; 32];
        hex::decode_to_slice(&self.seed, &mut seed).map_err(|e| format!("rng seed: {e}"))?;
        self.word_pos
            .parse::<u128>()
            .map_err(|e| format!("rng word_pos `{}`: {e}", self.word_pos))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    iteration: u64,
    env_steps: u64,
    sha256: String,
    rng: RngState,
    #[serde(default)]
    counters: BTreeMap<String, u64>,
    #[serde(default)]
    nets: BTreeMap<String, MlpSpec>,
    sections: Vec<SectionInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub iteration: u64,
    pub env_steps: u64,
    pub rng: RngState,
    pub counters: BTreeMap<String, u64>,
    pub nets: BTreeMap<String, MlpSpec>,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, iteration: u64, env_steps: u64, rng: RngState) -> Self {
        Self {
            kind: kind.to_string(),
            iteration,
            env_steps,
            rng,
            counters: BTreeMap::new(),
            nets: BTreeMap::new(),
            sections: Vec::new(),
        }
    }

    pub fn add_section(&mut self, name: &str, values: &[f64]) {
        self.sections.push((name.to_string(), values.to_vec()));
    }

    pub fn section(&self, name: &str) -> Result<&[f64]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| self.err(format!("missing section `{name}`")))
    }

    pub fn add_net(&mut self, name: &str, net: &Mlp) {
        self.nets.insert(name.to_string(), net.spec.clone());
        self.add_section(name, &net.params);
    }

    pub fn load_net(&self, name: &str, net: &mut Mlp) -> Result<()> {
        let spec = self.nets.get(name).ok_or_else(|| self.err(format!("missing network `{name}`")))?;
        if *spec != net.spec {
            return Err(self.err(format!("network `{name}` shape {spec:?} differs from {:?}", net.spec)));
        }
        *net = Mlp::from_params(spec.clone(), self.section(name)?.to_vec())?;
        Ok(())
    }

    /// Rebuilds a network from its stored shape.
    pub fn net(&self, name: &str) -> Result<Mlp> {
        let spec = self.nets.get(name).ok_or_else(|| self.err(format!("missing network `{name}`")))?;
        Mlp::from_params(spec.clone(), self.section(name)?.to_vec())
    }

    pub fn add_optim(&mut self, name: &str, opt: &OptimState) {
        self.counters.insert(format!("{name}.opt_step"), opt.step);
        self.add_section(&format!("{name}.m"), &opt.m);
        self.add_section(&format!("{name}.v"), &opt.v);
    }

    pub fn load_optim(&self, name: &str, opt: &mut OptimState) -> Result<()> {
        let key = format!("{name}.opt_step");
        let step = *self.counters.get(&key).ok_or_else(|| self.err(format!("missing counter `{key}`")))?;
        let m = self.section(&format!("{name}.m"))?;
        let v = self.section(&format!("{name}.v"))?;
        if m.len() != opt.m.len() || v.len() != opt.v.len() {
            return Err(self.err(format!("optimizer `{name}` holds {} moments, expected {}", m.len(), opt.m.len())));
        }
        opt.m = m.to_vec();
        opt.v = v.to_vec();
        opt.step = step;
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(self.err(format!("checkpoint kind `{}` where `{kind}` was expected", self.kind)));
        }
        Ok(())
    }

    fn err(&self, message: String) -> Error {
        Error::Checkpoint {
            path: format!("<{} checkpoint>", self.kind).into(),
            message,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::with_capacity(8 * self.sections.iter().map(|(_, v)| v.len()).sum::<usize>());
        for (_, values) in &self.sections {
            for v in values {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            iteration: self.iteration,
            env_steps: self.env_steps,
            sha256: hex::encode(Sha256::digest(&data)),
            rng: self.rng.clone(),
            counters: self.counters.clone(),
            nets: self.nets.clone(),
            sections: self
                .sections
                .iter()
                .map(|(name, v)| SectionInfo {
                    name: name.clone(),
                    len: v.len(),
                })
                .collect(),
        };
        let text = toml::to_string(&header).expect("checkpoint header serializes");
        let mut out = format!("{MAGIC}\n{}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let magic_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("no magic line".into()))?;
        if &bytes[..magic_end] != MAGIC.as_bytes() {
            return Err(bad("bad magic line".into()));
        }
        let rest = &bytes[magic_end + 1..];
        let len_end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("no header length".into()))?;
        let header_len: usize = std::str::from_utf8(&rest[..len_end])
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("unreadable header length".into()))?;
        let rest = &rest[len_end + 1..];
        if rest.len() < header_len {
            return Err(bad(format!("truncated header: {} of {header_len} bytes", rest.len())));
        }
        let text = std::str::from_utf8(&rest[..header_len]).map_err(|e| bad(format!("header is not UTF-8: {e}")))?;
        let header: Header = toml::from_str(text).map_err(|e| bad(format!("header: {e}")))?;
        header.rng.validate().map_err(bad)?;
        let data = &rest[header_len..];
        let expected: usize = header.sections.iter().map(|s| s.len * 8).sum();
        if data.len() != expected {
            return Err(bad(format!("data holds {} bytes, header declares {expected}", data.len())));
        }
        if hex::encode(Sha256::digest(data)) != header.sha256 {
            return Err(bad("data checksum mismatch".into()));
        }
        let mut sections = Vec::with_capacity(header.sections.len());
        let mut off = 0;
        for s in &header.sections {
            let values = data[off..off + s.len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            off += s.len * 8;
            sections.push((s.name.clone(), values));
        }
        Ok(Self {
            kind: header.kind,
            iteration: header.iteration,
            env_steps: header.env_steps,
            rng: header.rng,
            counters: header.counters,
            nets: header.nets,
            sections,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
