//! Binary checkpoint: `PLAB` magic, version, config hash, tagged
//! length-prefixed sections and a SHA-256 trailer. The byte layout is
//! described in `docs/checkpoint-format.md`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::curriculum::{BufferEntry, LevelBuffer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PLAB";
pub const VERSION: u32 = 1;

const SEC_META: u32 = 1;
const SEC_PARAMS: u32 = 2;
const SEC_PROX: u32 = 3;
const SEC_ADAM: u32 = 4;
const SEC_VENV: u32 = 5;
const SEC_BUFFER: u32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSnapshot {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSnapshot {
    pub level_seed: u64,
    pub episodes: u64,
    pub episode_return: f64,
    pub assigned_level: Option<u64>,
    pub obs: Vec<f64>,
    pub state: Vec<u64>,
}

/// Everything needed to continue a run bit for bit. Random streams are
/// counter-based and keyed by the run seed, update index and per-slot episode
/// counters, so those counters are the stream state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub update_index: u64,
    pub env_steps: u64,
    /// Data rows of the metrics log written so far.
    pub metrics_rows: u64,
    pub last_solve_rate: f64,
    pub params: Vec<f64>,
    /// EWMA decay and proximal parameters.
    pub prox: Option<(f64, Vec<f64>)>,
    pub adam: AdamSnapshot,
    pub venv_seed: u64,
    pub slots: Vec<SlotSnapshot>,
    pub buffer: Option<LevelBuffer>,
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.u64(x.to_bits());
    }
    fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        xs.iter().for_each(|&x| self.f64(x));
    }
    fn u64s(&mut self, xs: &[u64]) {
        self.u64(xs.len() as u64);
        xs.iter().for_each(|&x| self.u64(x));
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Dec<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(self.fail("length prefix exceeds section"));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len()?;
        (0..n).map(|_| self.u64()).collect()
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail("trailing bytes in section"));
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut sections: Vec<(u32, Vec<u8>)> = Vec::new();

        let mut e = Enc::default();
        e.u64(self.update_index);
        e.u64(self.env_steps);
        e.u64(self.metrics_rows);
        e.f64(self.last_solve_rate);
        sections.push((SEC_META, e.0));

        let mut e = Enc::default();
        e.f64s(&self.params);
        sections.push((SEC_PARAMS, e.0));

        if let Some((beta, prox)) = &self.prox {
            let mut e = Enc::default();
            e.f64(*beta);
            e.f64s(prox);
            sections.push((SEC_PROX, e.0));
        }

        let mut e = Enc::default();
        let a = &self.adam;
        e.u64(a.t);
        for x in [a.lr, a.beta1, a.beta2, a.eps] {
            e.f64(x);
        }
        e.f64s(&a.m);
        e.f64s(&a.v);
        sections.push((SEC_ADAM, e.0));

        let mut e = Enc::default();
        e.u64(self.venv_seed);
        e.u64(self.slots.len() as u64);
        for s in &self.slots {
            e.u64(s.level_seed);
            e.u64(s.episodes);
            e.f64(s.episode_return);
            match s.assigned_level {
                Some(l) => {
                    e.u64(1);
                    e.u64(l);
                }
                None => {
                    e.u64(0);
                    e.u64(0);
                }
            }
            e.f64s(&s.obs);
            e.u64s(&s.state);
        }
        sections.push((SEC_VENV, e.0));

        if let Some(b) = &self.buffer {
            let mut e = Enc::default();
            e.u64(b.capacity as u64);
            e.u64(b.entries.len() as u64);
            for x in &b.entries {
                e.u64(x.level_seed);
                e.f64(x.score);
                e.u64(x.scored_at as u64);
            }
            sections.push((SEC_BUFFER, e.0));
        }

        let mut out = Enc::default();
        out.0.extend_from_slice(MAGIC);
        out.u32(VERSION);
        out.u64(self.config_hash);
        out.u32(sections.len() as u32);
        for (tag, body) in sections {
            out.u32(tag);
            out.u64(body.len() as u64);
            out.0.extend_from_slice(&body);
        }
        let digest = Sha256::digest(&out.0);
        out.0.extend_from_slice(&digest);
        out.0
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 4 + 4 + 8 + 4 + 32 {
            return Err(fail("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail("bad magic bytes"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(fail("payload digest mismatch"));
        }
        let mut d = Dec { buf: body, pos: 4, path };
        let version = d.u32()?;
        if version != VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let config_hash = d.u64()?;
        let n_sections = d.u32()?;

        let mut ck = Checkpoint {
            config_hash,
            update_index: 0,
            env_steps: 0,
            metrics_rows: 0,
            last_solve_rate: f64::NAN,
            params: Vec::new(),
            prox: None,
            adam: AdamSnapshot {
                t: 0,
                lr: 0.0,
                beta1: 0.0,
                beta2: 0.0,
                eps: 0.0,
                m: Vec::new(),
                v: Vec::new(),
            },
            venv_seed: 0,
            slots: Vec::new(),
            buffer: None,
        };
        let mut seen = Vec::new();
        for _ in 0..n_sections {
            let tag = d.u32()?;
            let len = d.u64()? as usize;
            let sec = d.take(len)?;
            if seen.contains(&tag) {
                return Err(fail(&format!("duplicate section {tag}")));
            }
            seen.push(tag);
            let mut s = Dec { buf: sec, pos: 0, path };
            match tag {
                SEC_META => {
                    ck.update_index = s.u64()?;
                    ck.env_steps = s.u64()?;
                    ck.metrics_rows = s.u64()?;
                    ck.last_solve_rate = s.f64()?;
                }
                SEC_PARAMS => ck.params = s.f64s()?,
                SEC_PROX => {
                    let beta = s.f64()?;
                    ck.prox = Some((beta, s.f64s()?));
                }
                SEC_ADAM => {
                    ck.adam.t = s.u64()?;
                    ck.adam.lr = s.f64()?;
                    ck.adam.beta1 = s.f64()?;
                    ck.adam.beta2 = s.f64()?;
                    ck.adam.eps = s.f64()?;
                    ck.adam.m = s.f64s()?;
                    ck.adam.v = s.f64s()?;
                }
                SEC_VENV => {
                    ck.venv_seed = s.u64()?;
                    let n = s.len()?;
                    for _ in 0..n {
                        let level_seed = s.u64()?;
                        let episodes = s.u64()?;
                        let episode_return = s.f64()?;
                        let has = s.u64()?;
                        let l = s.u64()?;
                        ck.slots.push(SlotSnapshot {
                            level_seed,
                            episodes,
                            episode_return,
                            assigned_level: (has == 1).then_some(l),
                            obs: s.f64s()?,
                            state: s.u64s()?,
                        });
                    }
                }
                SEC_BUFFER => {
                    let capacity = s.u64()? as usize;
                    let n = s.len()?;
                    let mut entries = Vec::with_capacity(n);
                    for _ in 0..n {
                        entries.push(BufferEntry {
                            level_seed: s.u64()?,
                            score: s.f64()?,
                            scored_at: s.u64()? as usize,
                        });
                    }
                    ck.buffer = Some(LevelBuffer { capacity, entries });
                }
                other => return Err(fail(&format!("unknown section {other}"))),
            }
            s.done()?;
        }
        d.done()?;
        for required in [SEC_META, SEC_PARAMS, SEC_ADAM, SEC_VENV] {
            if !seen.contains(&required) {
                return Err(fail(&format!("missing section {required}")));
            }
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Writes to a temporary sibling, syncs it, then renames over `path`.
    pub fn save_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_hash: 0xdead_beef,
            update_index: 7,
            env_steps: 7 * 256,
            metrics_rows: 8,
            last_solve_rate: 0.375,
            params: vec![0.1, -2.5, f64::MIN_POSITIVE],
            prox: Some((32.0 / 33.0, vec![0.0, 1.0, -0.0])),
            adam: AdamSnapshot {
                t: 56,
                lr: 3e-4,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![1e-3; 3],
                v: vec![1e-6; 3],
            },
            venv_seed: 11,
            slots: vec![
                SlotSnapshot {
                    level_seed: 3,
                    episodes: 2,
                    episode_return: -0.5,
                    assigned_level: Some(9),
                    obs: vec![0.25; 6],
                    state: vec![1, 2, 3],
                },
                SlotSnapshot {
                    level_seed: 4,
                    episodes: 1,
                    episode_return: 0.0,
                    assigned_level: None,
                    obs: vec![0.5; 6],
                    state: vec![],
                },
            ],
            buffer: Some(LevelBuffer {
                capacity: 2,
                entries: vec![BufferEntry {
                    level_seed: 5,
                    score: 0.25,
                    scored_at: 0,
                }],
            }),
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let c = sample();
        let bytes = c.encode();
        let back = Checkpoint::decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.params[2].to_bits(), f64::MIN_POSITIVE.to_bits());
        assert_eq!(back.prox.as_ref().unwrap().1[2].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corruption_detected() {
        let bytes = sample().encode();
        let p = Path::new("x");
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(Checkpoint::decode(&flipped, p).is_err());
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1], p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic, p).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.plab");
        sample().save_atomic(&p).unwrap();
        let mut c = sample();
        c.update_index = 8;
        c.save_atomic(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap().update_index, 8);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
