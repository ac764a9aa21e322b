//! One training record: template, skinned garment, body, simulated drape.
//!
//! Stored as an archive record with magic `DNSM`, version 1, entries:
//!
//! ```text
//! meta               text   JSON {template_id, shape, pose, sim_steps}
//! template.vertices  f64    n×3  garment rest shape
//! garment.faces      u64    f×3  shared by template, skinned and drape
//! skinned.vertices   f64    n×3  DQS-skinned garment M
//! drape.vertices     f64    n×3  simulated ground truth G
//! body.vertices      f64    b×3
//! body.faces         u64    c×3
//! condition          f64    1×k  optional
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{Archive, Entry};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::sim::{BodyPose, BodyShape};
use crate::tensor::Tensor;

pub const SAMPLE_MAGIC: [u8; 4] = *b"DNSM";
pub const SAMPLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SampleMeta {
    template_id: String,
    shape: BodyShape,
    pose: BodyPose,
    sim_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrapeSample {
    pub template_id: String,
    pub template: TriMesh,
    pub shape: BodyShape,
    pub pose: BodyPose,
    pub body: TriMesh,
    pub skinned: TriMesh,
    pub drape: TriMesh,
    pub condition: Option<Vec<f64>>,
    pub sim_steps: usize,
}

fn faces_entry(faces: &[[usize; 3]]) -> Entry {
    Entry::U64 {
        rows: faces.len(),
        cols: 3,
        data: faces.iter().flat_map(|f| f.iter().map(|&i| i as u64)).collect(),
    }
}

fn faces_from(a: &Archive, name: &str) -> Result<Vec<[usize; 3]>> {
    let (rows, cols, data) = a.u64_matrix(name)?;
    if cols != 3 && rows > 0 {
        return Err(Error::Format(format!("`{name}` must have 3 columns")));
    }
    Ok(data.chunks(3).map(|c| [c[0] as usize, c[1] as usize, c[2] as usize]).collect())
}

impl DrapeSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.template.vertex_count();
        for m in [&self.skinned, &self.drape] {
            if m.vertex_count() != n {
                return Err(Error::CountMismatch(n, m.vertex_count()));
            }
            if m.faces != self.template.faces {
                return Err(Error::FaceMismatch);
            }
            m.validate()?;
        }
        self.template.validate()?;
        self.body.validate()
    }

    pub fn to_archive(&self) -> Result<Archive> {
        self.validate()?;
        let meta = SampleMeta {
            template_id: self.template_id.clone(),
            shape: self.shape.clone(),
            pose: self.pose.clone(),
            sim_steps: self.sim_steps,
        };
        let mut a = Archive::new(SAMPLE_MAGIC, SAMPLE_VERSION);
        a.push("meta", Entry::Text(serde_json::to_string(&meta)?));
        a.push("template.vertices", Entry::F64(Tensor::from_points(&self.template.vertices)));
        a.push("garment.faces", faces_entry(&self.template.faces));
        a.push("skinned.vertices", Entry::F64(Tensor::from_points(&self.skinned.vertices)));
        a.push("drape.vertices", Entry::F64(Tensor::from_points(&self.drape.vertices)));
        a.push("body.vertices", Entry::F64(Tensor::from_points(&self.body.vertices)));
        a.push("body.faces", faces_entry(&self.body.faces));
        if let Some(c) = &self.condition {
            a.push("condition", Entry::F64(Tensor::from_vec(1, c.len(), c.clone())?));
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect(SAMPLE_MAGIC, SAMPLE_VERSION)?;
        let meta: SampleMeta = serde_json::from_str(a.text("meta")?)?;
        let faces = faces_from(a, "garment.faces")?;
        let mesh = |name: &str| -> Result<TriMesh> {
            Ok(TriMesh {
                vertices: a.tensor(name)?.to_points()?,
                faces: faces.clone(),
            })
        };
        let sample = DrapeSample {
            template_id: meta.template_id,
            template: mesh("template.vertices")?,
            shape: meta.shape,
            pose: meta.pose,
            body: TriMesh {
                vertices: a.tensor("body.vertices")?.to_points()?,
                faces: faces_from(a, "body.faces")?,
            },
            skinned: mesh("skinned.vertices")?,
            drape: mesh("drape.vertices")?,
            condition: match a.get("condition") {
                Some(_) => Some(a.tensor("condition")?.data().to_vec()),
                None => None,
            },
            sim_steps: meta.sim_steps,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::read(path)?)
    }
}
