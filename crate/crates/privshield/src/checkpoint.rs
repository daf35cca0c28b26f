//! Parameter files and training run directories.
//!
//! A parameter file (`.ckpt`) is, in order, all integers little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic | the 8 bytes `PSHIELD\0` |
//! | version | u32, currently 1 |
//! | spec length | u32, then that many bytes of network spec JSON |
//! | init seed | u64 |
//! | array count | u32 |
//!
//! followed by each array: name length (u32) and UTF-8 name, rank (u32),
//! each dimension (u64), then the values as f32. Loading checks the arrays
//! against the embedded network description, so a file always yields a consistent network.
//!
//! A training run writes `step_{n}/{enc,f,dec,disc}.ckpt` every
//! `checkpoint_every` alternations and after the last one, and rewrites
//! `history.csv` alongside.

use std::fs;
use std::path::{Path, PathBuf};

use privshield_core::nets::{Model, ModelParams, NetSpec, Param};
use privshield_core::trainer::{CheckpointSink, Phase, ProtectorNets, TrainHistory};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PSHIELD\0";
pub const VERSION: u32 = 1;
pub const HISTORY_FILE: &str = "history.csv";

pub fn encode_model(model: &Model<f32>) -> Vec<u8> {
    let spec = serde_json::to_vec(&model.spec).expect("specs serialize");
    let mut out = Vec::with_capacity(64 + spec.len() + 4 * model.params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&model.params.init_seed.to_le_bytes());
    out.extend_from_slice(&(model.params.params.len() as u32).to_le_bytes());
    for p in &model.params.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> std::result::Result<Model<f32>, String> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)? != MAGIC {
        return Err("not a parameter file".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n = c.u32()? as usize;
    let spec: NetSpec = serde_json::from_slice(c.take(n)?).map_err(|e| format!("spec: {e}"))?;
    let init_seed = c.u64()?;
    let count = c.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| "array name is not UTF-8")?.to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len.checked_mul(4).ok_or("array too large")?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(Param { name, shape, data });
    }
    if c.at != bytes.len() {
        return Err("trailing bytes".into());
    }
    Model::from_params(spec, ModelParams { init_seed, params }).map_err(|e| e.to_string())
}

pub fn save_model(path: &Path, model: &Model<f32>) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(Error::io(path))
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_model(&bytes).map_err(|m| Error::format(path, m))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const HISTORY_HEADER: &str = "step,phase,utility,pixel,perceptual,gan_gen,gan_disc,objective";

/// One row per optimizer step; absent terms are empty cells.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in &history.records {
        let phase = match r.phase {
            Phase::Adversary => "adversary",
            Phase::Protector => "protector",
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            phase,
            opt(r.utility),
            opt(r.pixel),
            opt(r.perceptual),
            opt(r.gan_gen),
            opt(r.gan_disc),
            r.objective
        ));
    }
    s
}

pub fn step_dir(run: &Path, alternation: usize) -> PathBuf {
    run.join(format!("step_{alternation}"))
}

/// Checkpoint sink writing the run directory layout.
pub struct DirCheckpoints {
    pub root: PathBuf,
    pub saved: Vec<usize>,
    /// The IO error behind a failed save; the trainer only sees a summary.
    pub failure: Option<Error>,
}

impl DirCheckpoints {
    pub fn new(root: &Path) -> Self {
        DirCheckpoints { root: root.to_path_buf(), saved: Vec::new(), failure: None }
    }

    /// Directory of the most recent checkpoint.
    pub fn last(&self) -> Option<PathBuf> {
        self.saved.last().map(|&a| step_dir(&self.root, a))
    }

    fn write(&mut self, alternation: usize, nets: &ProtectorNets<f32>, history: &TrainHistory) -> Result<()> {
        let dir = step_dir(&self.root, alternation);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        save_model(&dir.join("enc.ckpt"), &nets.enc)?;
        save_model(&dir.join("f.ckpt"), &nets.f)?;
        save_model(&dir.join("dec.ckpt"), &nets.dec)?;
        if let Some(d) = &nets.disc {
            save_model(&dir.join("disc.ckpt"), d)?;
        }
        let h = self.root.join(HISTORY_FILE);
        fs::write(&h, history_csv(history)).map_err(Error::io(&h))?;
        self.saved.push(alternation);
        Ok(())
    }
}

impl CheckpointSink<f32> for DirCheckpoints {
    fn save(&mut self, alternation: usize, nets: &ProtectorNets<f32>, history: &TrainHistory) -> privshield_core::Result<()> {
        self.write(alternation, nets, history).map_err(|e| {
            let summary = privshield_core::Error::Params(format!("writing checkpoint: {e}"));
            self.failure = Some(e);
            summary
        })
    }
}
