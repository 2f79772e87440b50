//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! body:    magic "OODKDCP\0" | version u32 | config digest (str)
//!          | section count u32 | sections
//! section: label (str) | kind u8 | entry count u32
//! entry:   name (str) | rank u32 | dims u64 x rank | values f64 x prod(dims)
//! str:     byte length u32 | utf-8 bytes
//! footer:  sha-256 of the body (32 bytes)
//! ```
//!
//! Loads are all-or-nothing: the footer checksum is verified before any
//! parsing, so a file corrupted anywhere (truncation, bit flips, appended
//! garbage) is rejected outright; structural errors report the byte offset
//! where decoding failed, and unknown versions are refused. The embedded
//! config digest travels with the weights so a consumer can detect
//! checkpoints produced under a different configuration.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::diffcore::Adam;
use crate::error::{Error, Result};
use crate::models::{digest_entries, Net, StateEntry};

pub const MAGIC: &[u8; 8] = b"OODKDCP\0";
pub const VERSION: u32 = 1;
const FOOTER_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectionKind {
    Network,
    Optimizer,
}

#[derive(Clone, Debug)]
pub struct Section {
    pub label: String,
    pub kind: SectionKind,
    pub entries: Vec<StateEntry>,
}

impl Section {
    /// Digest over this section's entries (same scheme as network digests).
    pub fn digest(&self) -> String {
        digest_entries(self.entries.iter())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub config_digest: String,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new(config_digest: &str) -> Checkpoint {
        Checkpoint {
            config_digest: config_digest.to_string(),
            sections: Vec::new(),
        }
    }

    pub fn section(&self, label: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.label == label)
    }

    /// Snapshot a network's full state (parameters, then any normalization
    /// buffers) under its own label.
    pub fn push_net(&mut self, net: &dyn Net) {
        self.sections.push(Section {
            label: net.label().to_string(),
            kind: SectionKind::Network,
            entries: net.state_entries(),
        });
    }

    /// Snapshot optimizer moments and the step counter. The step lives in a
    /// one-element entry named `step`; per-parameter moments are stored as
    /// `<param>.m` / `<param>.v`.
    pub fn push_optimizer(&mut self, label: &str, opt: &Adam) {
        let mut entries = vec![StateEntry {
            name: "step".into(),
            shape: vec![1],
            values: vec![opt.state.step as f64],
        }];
        for (idx, (name, _)) in opt.params().iter().enumerate() {
            entries.push(StateEntry {
                name: format!("{name}.m"),
                shape: vec![opt.state.m[idx].len()],
                values: opt.state.m[idx].clone(),
            });
            entries.push(StateEntry {
                name: format!("{name}.v"),
                shape: vec![opt.state.v[idx].len()],
                values: opt.state.v[idx].clone(),
            });
        }
        self.sections.push(Section {
            label: label.to_string(),
            kind: SectionKind::Optimizer,
            entries,
        });
    }

    /// Restore a network from its section; the section must exist and match
    /// the network's state layout exactly.
    pub fn load_net(&self, net: &mut dyn Net) -> Result<()> {
        let section = self.section(net.label()).ok_or_else(|| {
            Error::invalid(format!("checkpoint has no section {:?}", net.label()))
        })?;
        net.load_state(&section.entries)
    }

    /// Restore optimizer moments recorded by [`Checkpoint::push_optimizer`].
    pub fn load_optimizer(&self, label: &str, opt: &mut Adam) -> Result<()> {
        let section = self
            .section(label)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no section {label:?}")))?;
        let lookup = |name: &str| -> Result<&StateEntry> {
            section
                .entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::invalid(format!("optimizer section missing {name:?}")))
        };
        let step = lookup("step")?.values[0];
        let names: Vec<String> = opt.params().iter().map(|(n, _)| n.clone()).collect();
        let mut ms = Vec::with_capacity(names.len());
        let mut vs = Vec::with_capacity(names.len());
        for (idx, name) in names.iter().enumerate() {
            let m = lookup(&format!("{name}.m"))?;
            let v = lookup(&format!("{name}.v"))?;
            let want = opt.state.m[idx].len();
            if m.values.len() != want || v.values.len() != want {
                return Err(Error::invalid(format!(
                    "optimizer moments for {name:?} hold {} values, expected {want}",
                    m.values.len()
                )));
            }
            ms.push(m.values.clone());
            vs.push(v.values.clone());
        }
        opt.state.step = step as u64;
        opt.state.m = ms;
        opt.state.v = vs;
        Ok(())
    }

    /// `Some(found_digest)` when the checkpoint was produced under a
    /// different configuration; callers warn and record rather than abort.
    pub fn digest_mismatch(&self, expected: &str) -> Option<String> {
        (self.config_digest != expected).then(|| self.config_digest.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_str(&mut out, &self.config_digest);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for section in &self.sections {
            write_str(&mut out, &section.label);
            out.push(match section.kind {
                SectionKind::Network => 0,
                SectionKind::Optimizer => 1,
            });
            out.extend_from_slice(&(section.entries.len() as u32).to_le_bytes());
            for entry in &section.entries {
                write_str(&mut out, &entry.name);
                out.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
                for &d in &entry.shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in &entry.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let footer: [u8; FOOTER_LEN] = Sha256::digest(&out).into();
        out.extend_from_slice(&footer);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < FOOTER_LEN {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                detail: format!(
                    "file holds {} bytes, too short for the {FOOTER_LEN}-byte integrity footer",
                    bytes.len()
                ),
            });
        }
        let (body, footer) = bytes.split_at(bytes.len() - FOOTER_LEN);
        let want: [u8; FOOTER_LEN] = Sha256::digest(body).into();
        if footer != want {
            return Err(Error::Format {
                offset: body.len() as u64,
                detail: "integrity checksum mismatch: checkpoint is corrupted".into(),
            });
        }
        let bytes = body;
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic header")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: "not a checkpoint file (bad magic)".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: (MAGIC.len()) as u64,
                detail: format!("unsupported checkpoint version {version} (expected {VERSION})"),
            });
        }
        let config_digest = r.string("config digest")?;
        let n_sections = r.u32("section count")? as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let label = r.string("section label")?;
            let kind = match r.byte("section kind")? {
                0 => SectionKind::Network,
                1 => SectionKind::Optimizer,
                other => {
                    return Err(Error::Format {
                        offset: r.pos as u64 - 1,
                        detail: format!("unknown section kind {other}"),
                    })
                }
            };
            let n_entries = r.u32("entry count")? as usize;
            let mut entries = Vec::with_capacity(n_entries);
            for _ in 0..n_entries {
                let name = r.string("entry name")?;
                let rank = r.u32("entry rank")? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(r.u64("entry dim")? as usize);
                }
                let len: usize = shape.iter().product();
                let mut values = Vec::with_capacity(len);
                for _ in 0..len {
                    values.push(f64::from_le_bytes(
                        r.take(8, "entry value")?.try_into().unwrap(),
                    ));
                }
                entries.push(StateEntry { name, shape, values });
            }
            sections.push(Section { label, kind, entries });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                detail: format!("{} trailing bytes after checkpoint body", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            config_digest,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn byte(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let start = self.pos as u64;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::Format {
            offset: start,
            detail: format!("{what} is not utf-8: {e}"),
        })
    }
}
