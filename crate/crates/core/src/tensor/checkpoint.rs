//! Checkpoint container: named parameters plus Adam state, stored as a
//! [`crate::archive`] record with magic `DNCK`.

use std::path::Path;

use super::params::Slot;
use super::ParamStore;
use crate::archive::{Archive, Entry};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters, optimizer state, and an opaque JSON metadata blob (model config).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub metadata: String,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        a.push("metadata", Entry::Text(self.metadata.clone()));
        a.push("adam.step", Entry::U64 { rows: 1, cols: 1, data: vec![self.params.step] });
        for (name, slot) in &self.params.slots {
            a.push(format!("param/{name}"), Entry::F64(slot.value.clone()));
            a.push(format!("adam.m/{name}"), Entry::F64(slot.m.clone()));
            a.push(format!("adam.v/{name}"), Entry::F64(slot.v.clone()));
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let metadata = a.text("metadata")?.to_string();
        let step = a.u64s("adam.step")?.first().copied().unwrap_or(0);
        let mut params = ParamStore::new();
        params.step = step;
        for (key, entry) in a.entries() {
            let Some(name) = key.strip_prefix("param/") else { continue };
            let Entry::F64(value) = entry else {
                return Err(Error::Format(format!("`{key}` is not a float tensor")));
            };
            let m = a.tensor(&format!("adam.m/{name}"))?.clone();
            let v = a.tensor(&format!("adam.v/{name}"))?.clone();
            if m.shape() != value.shape() || v.shape() != value.shape() {
                return Err(Error::Format(format!("moment buffers of `{name}` do not match its shape")));
            }
            params.slots.insert(
                name.to_string(),
                Slot {
                    value: value.clone(),
                    m,
                    v,
                },
            );
        }
        Ok(Checkpoint { params, metadata })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ck.to_archive().write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_archive(&Archive::read(path)?)
}

