//! Synthetic dataset generation and the manifest that indexes it.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::DrapeSample;
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::sim::{drape, generate_body, generate_garment_template, BodyPose, BodyShape, GarmentSpec, SimConfig, Tessellation};
use crate::skinning::dqs;

pub const MANIFEST_FORMAT: &str = "drapenet-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}` (expected train, val or test)")))
    }
}

/// Uniform sampling ranges for pose angles, radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseRanges {
    pub arm_down: [f64; 2],
    pub elbow: [f64; 2],
    pub torso_twist: [f64; 2],
    pub torso_lean: [f64; 2],
    pub head_tilt: [f64; 2],
}

impl Default for PoseRanges {
    fn default() -> Self {
        PoseRanges {
            arm_down: [0.3, 1.0],
            elbow: [0.0, 0.6],
            torso_twist: [-0.3, 0.3],
            torso_lean: [-0.1, 0.1],
            head_tilt: [-0.15, 0.15],
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

impl PoseRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("arm_down", self.arm_down),
            ("elbow", self.elbow),
            ("torso_twist", self.torso_twist),
            ("torso_lean", self.torso_lean),
            ("head_tilt", self.head_tilt),
        ] {
            if !(r[0] <= r[1]) || !r.iter().all(|x| x.is_finite()) {
                return Err(Error::Config(format!("pose range `{name}` must be [low, high] with low <= high")));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> BodyPose {
        BodyPose {
            arm_down_left: uniform(rng, self.arm_down),
            arm_down_right: uniform(rng, self.arm_down),
            elbow_left: uniform(rng, self.elbow),
            elbow_right: uniform(rng, self.elbow),
            torso_twist: uniform(rng, self.torso_twist),
            torso_lean: uniform(rng, self.torso_lean),
            head_tilt: uniform(rng, self.head_tilt),
            root_translation: [0.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(*f >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must be nonnegative and sum to 1".into()));
        }
        Ok(())
    }

    /// Contiguous assignment of `n` samples: train first, then val, then test.
    pub fn assign(&self, n: usize) -> Vec<Split> {
        let n_train = (self.train * n as f64).round() as usize;
        let n_val = ((self.val * n as f64).round() as usize).min(n - n_train.min(n));
        (0..n)
            .map(|i| {
                if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                }
            })
            .collect()
    }
}

/// Dataset generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    /// Samples requested; non-converged simulations are dropped.
    pub count: usize,
    pub splits: SplitFractions,
    pub garment: GarmentSpec,
    /// Falloff (meters) of the distance-based skinning weights.
    pub weight_falloff: f64,
    /// Sample body proportions uniformly from [`BodyShape::RANGES`]; otherwise
    /// every body uses the default shape.
    pub vary_shape: bool,
    pub pose: PoseRanges,
    /// When positive, each sample's template is scaled horizontally by a factor
    /// drawn from `[1 - v, 1 + v]`, stored as a one-entry condition vector.
    pub size_variation: f64,
    pub tessellation: Tessellation,
    pub sim: SimConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            count: 60,
            splits: SplitFractions::default(),
            garment: GarmentSpec::default(),
            weight_falloff: 0.08,
            vary_shape: true,
            pose: PoseRanges::default(),
            size_variation: 0.0,
            tessellation: Tessellation::default(),
            sim: SimConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be positive".into()));
        }
        if !(self.weight_falloff > 0.0) {
            return Err(Error::Config("weight_falloff must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.size_variation) {
            return Err(Error::Config("size_variation must lie in [0, 0.5)".into()));
        }
        if self.tessellation.around < 3 {
            return Err(Error::Config("tessellation.around must be at least 3".into()));
        }
        self.splits.validate()?;
        self.pose.validate()?;
        self.sim.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRange {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest directory.
    pub file: String,
    pub split: Split,
    /// Position in the generation sequence (dropped samples leave gaps).
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub template_id: String,
    pub config: GenConfig,
    pub shape_ranges: Vec<ShapeRange>,
    pub samples: Vec<ManifestEntry>,
    /// Generation indices whose simulation did not converge.
    pub dropped: Vec<usize>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "{}: not a version {MANIFEST_VERSION} {MANIFEST_FORMAT} manifest",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    /// Checks that file names are unique and every file exists and parses.
    pub fn validate(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.samples {
            if !seen.insert(&e.file) {
                return Err(Error::Format(format!("manifest lists `{}` twice", e.file)));
            }
            DrapeSample::read(dir.join(&e.file))?;
        }
        Ok(())
    }
}

/// A manifest plus the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Opens a dataset from its directory or its manifest file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (dir, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
        };
        Ok(Dataset {
            manifest: DatasetManifest::read(file)?,
            dir,
        })
    }

    pub fn load(&self, split: Split) -> Result<Vec<(ManifestEntry, DrapeSample)>> {
        let entries: Vec<&ManifestEntry> = self.manifest.entries(split).collect();
        entries
            .par_iter()
            .map(|e| Ok(((*e).clone(), DrapeSample::read(self.dir.join(&e.file))?)))
            .collect()
    }
}

struct SampleParams {
    index: usize,
    shape: BodyShape,
    pose: BodyPose,
    scale: Option<f64>,
}

fn scaled_template(template: &TriMesh, center: Vec3, s: f64) -> TriMesh {
    let vertices = template
        .vertices
        .iter()
        .map(|v| {
            let d = v - center;
            center + Vec3::new(d.x * s, d.y, d.z * s)
        })
        .collect();
    TriMesh {
        vertices,
        faces: template.faces.clone(),
    }
}

/// Generates `cfg.count` samples into `out_dir` and writes the manifest.
/// Parameters are drawn sequentially from one seeded stream and each
/// simulation is single-threaded, so the output does not depend on the
/// number of worker threads.
pub fn generate_dataset(cfg: &GenConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let sample_dir = out_dir.join("samples");
    std::fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;

    let template = generate_garment_template(&cfg.garment, cfg.weight_falloff)?;
    let template_id = cfg.garment.id();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params: Vec<SampleParams> = (0..cfg.count)
        .map(|index| {
            let shape = if cfg.vary_shape {
                let mut v = [0.0; 6];
                for (x, (_, lo, hi)) in v.iter_mut().zip(BodyShape::RANGES) {
                    *x = rng.gen_range(lo..hi);
                }
                BodyShape::from_vec(v)
            } else {
                BodyShape::default()
            };
            let pose = cfg.pose.sample(&mut rng);
            let scale = (cfg.size_variation > 0.0)
                .then(|| rng.gen_range(1.0 - cfg.size_variation..1.0 + cfg.size_variation));
            SampleParams {
                index,
                shape,
                pose,
                scale,
            }
        })
        .collect();

    let center = template.mesh.vertices.iter().sum::<Vec3>() / template.mesh.vertex_count() as f64;
    let results: Vec<Result<Option<(usize, String)>>> = params
        .par_iter()
        .map(|p| {
            let rest = match p.scale {
                Some(s) => scaled_template(&template.mesh, center, s),
                None => template.mesh.clone(),
            };
            let body = generate_body(&p.shape, &p.pose, &cfg.tessellation)?;
            let skeleton = body.skeleton.retargeted(&template.rest_joints)?;
            let skinned = dqs(&rest, &skeleton, &template.weights)?;
            let result = drape(&skinned, &rest, &body, &cfg.sim)?;
            if !result.converged {
                log::warn!(
                    "sample {} dropped: simulation did not converge in {} steps (last displacement {:.3e} m)",
                    p.index,
                    result.steps,
                    result.last_displacement
                );
                return Ok(None);
            }
            let sample = DrapeSample {
                template_id: template_id.clone(),
                template: rest,
                shape: p.shape.clone(),
                pose: p.pose.clone(),
                body: body.mesh,
                skinned,
                drape: result.mesh,
                condition: p.scale.map(|s| vec![s]),
                sim_steps: result.steps,
            };
            let file = format!("samples/sample_{:05}.dnsm", p.index);
            sample.write(out_dir.join(&file))?;
            log::info!("sample {} draped in {} steps", p.index, result.steps);
            Ok(Some((p.index, file)))
        })
        .collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (p, r) in params.iter().zip(results) {
        match r? {
            Some(k) => kept.push(k),
            None => dropped.push(p.index),
        }
    }
    let splits = cfg.splits.assign(kept.len());
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        template_id,
        config: cfg.clone(),
        shape_ranges: BodyShape::RANGES
            .iter()
            .map(|(name, low, high)| ShapeRange {
                name: name.to_string(),
                low: *low,
                high: *high,
            })
            .collect(),
        samples: kept
            .into_iter()
            .zip(splits)
            .map(|((index, file), split)| ManifestEntry { file, split, index })
            .collect(),
        dropped,
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
