//! Two-stream draping network: a point-cloud body stream, a mesh garment
//! stream and a per-vertex fusion network predicting translations that are
//! added to the skinned garment.

mod conv;
mod layers;
mod pooling;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::skinning::{dqs, PoseSkeleton, SkinWeights};
use crate::tensor::{Checkpoint, Graph, ParamStore, Tensor, Var};

pub use conv::{feastnet_conv, ConvPlan};
pub use layers::{InitRule, ParamSource};
pub use pooling::{local_body_pooling, select_seeds, LocalPoolingPlan};

use layers::{linear, mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Point-wise garment features only.
    Late,
    /// Mesh convolutions plus global body features.
    Global,
    /// `Global` plus nearest-neighbor pooled body features.
    Local,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Late, Variant::Global, Variant::Local];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Late => "late",
            Variant::Global => "global",
            Variant::Local => "local",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "late" => Ok(Variant::Late),
            "global" => Ok(Variant::Global),
            "local" => Ok(Variant::Local),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected late, global or local)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub leaky_slope: f64,
    /// Shared per-point layers of each spatial transformer.
    pub stn_shared: Vec<usize>,
    /// Layers applied to the pooled transformer feature before the matrix head.
    pub stn_head: Vec<usize>,
    pub body_block1: Vec<usize>,
    pub body_block2: Vec<usize>,
    pub global_body_dim: usize,
    pub garment_point: Vec<usize>,
    pub conv_width: usize,
    pub residual_blocks: usize,
    pub heads: usize,
    pub garment_global_dim: usize,
    /// Hidden fusion widths; a final zero-initialized layer maps to 3.
    pub fusion: Vec<usize>,
    pub knn_k: usize,
    pub body_downscale: usize,
    pub pool_neighbors: usize,
    pub pool_seed: u64,
    pub condition_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Local,
            leaky_slope: 0.1,
            stn_shared: vec![64, 128],
            stn_head: vec![128],
            body_block1: vec![64],
            body_block2: vec![128, 512],
            global_body_dim: 512,
            garment_point: vec![64],
            conv_width: 64,
            residual_blocks: 6,
            heads: 8,
            garment_global_dim: 256,
            fusion: vec![512, 256, 128],
            knn_k: 15,
            body_downscale: 10,
            pool_neighbors: 16,
            pool_seed: 0,
            condition_dim: 0,
        }
    }
}

impl ModelConfig {
    /// Very small widths for gradient checks and unit tests.
    pub fn tiny(variant: Variant) -> Self {
        ModelConfig {
            variant,
            stn_shared: vec![4],
            stn_head: vec![4],
            body_block1: vec![4],
            body_block2: vec![6],
            global_body_dim: 5,
            garment_point: vec![4],
            conv_width: 4,
            residual_blocks: 1,
            heads: 2,
            garment_global_dim: 4,
            fusion: vec![6, 5, 4],
            knn_k: 3,
            body_downscale: 3,
            pool_neighbors: 4,
            ..Default::default()
        }
    }

    /// Reduced widths that train in minutes on one CPU core. The fixed
    /// structural values (6 residual blocks, 15 neighbors, factor 10, 16-point
    /// average pooling, leaky slope) are kept.
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            stn_shared: vec![16, 32],
            stn_head: vec![32],
            body_block1: vec![16],
            body_block2: vec![32, 64],
            global_body_dim: 64,
            garment_point: vec![32],
            conv_width: 32,
            residual_blocks: 6,
            heads: 4,
            garment_global_dim: 64,
            fusion: vec![128, 64, 32],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("stn_shared", &self.stn_shared),
            ("stn_head", &self.stn_head),
            ("body_block1", &self.body_block1),
            ("body_block2", &self.body_block2),
            ("garment_point", &self.garment_point),
            ("fusion", &self.fusion),
        ];
        for (name, l) in lists {
            if l.is_empty() || l.contains(&0) {
                return Err(Error::Config(format!("model.{name} must be a non-empty list of positive widths")));
            }
        }
        let scalars = [
            ("global_body_dim", self.global_body_dim),
            ("conv_width", self.conv_width),
            ("heads", self.heads),
            ("garment_global_dim", self.garment_global_dim),
            ("knn_k", self.knn_k),
            ("body_downscale", self.body_downscale),
            ("pool_neighbors", self.pool_neighbors),
        ];
        for (name, v) in scalars {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("model.leaky_slope must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Spatial transformer: predicts a `d×d` matrix from the rows of `x` and
/// returns `x · (I + Δ)`. `Δ` comes from a zero-initialized layer, so a fresh
/// transformer is the identity.
pub fn stn(g: &mut Graph, p: &mut ParamSource, name: &str, x: Var, cfg: &ModelConfig) -> Result<Var> {
    let d = g.value(x).cols();
    if g.value(x).rows() == 0 {
        return Err(Error::shape("stn", "input has no rows"));
    }
    let h = mlp(g, p, &format!("{name}.shared"), x, &cfg.stn_shared, cfg.leaky_slope)?;
    let pooled = g.row_max_pool(h)?;
    let z = mlp(g, p, &format!("{name}.head"), pooled, &cfg.stn_head, cfg.leaky_slope)?;
    let delta = linear(g, p, &format!("{name}.out"), z, d * d, InitRule::Zeros)?;
    let delta = g.reshape(delta, d, d)?;
    let eye = g.input(Tensor::identity(d));
    let t = g.add(delta, eye)?;
    g.matmul(x, t)
}

#[derive(Clone, Copy, Debug)]
pub struct BodyFeatures {
    pub pointwise: Var,
    /// `1 × global_body_dim`.
    pub global: Var,
}

/// Point-cloud body encoder with a skip from the first transformer's output
/// to the second block.
pub fn body_stream(g: &mut Graph, p: &mut ParamSource, body: Var, cfg: &ModelConfig) -> Result<BodyFeatures> {
    if g.value(body).cols() != 3 || g.value(body).rows() == 0 {
        return Err(Error::shape("body_stream", format!("body must be n×3 with n ≥ 1, got {:?}", g.value(body).shape())));
    }
    let slope = cfg.leaky_slope;
    let x = stn(g, p, "body.stn1", body, cfg)?;
    let f1 = mlp(g, p, "body.block1", x, &cfg.body_block1, slope)?;
    let f1 = stn(g, p, "body.stn2", f1, cfg)?;
    let cat = g.concat_cols(&[f1, x])?;
    let pointwise = mlp(g, p, "body.block2", cat, &cfg.body_block2, slope)?;
    let pooled = g.row_max_pool(pointwise)?;
    let global = mlp(g, p, "body.global", pooled, &[cfg.global_body_dim], slope)?;
    Ok(BodyFeatures { pointwise, global })
}

#[derive(Clone, Copy, Debug)]
pub struct GarmentFeatures {
    pub pointwise: Var,
    /// Absent in the `Late` variant.
    pub patchwise: Option<Var>,
    /// `1 × garment_global_dim`.
    pub global: Var,
}

/// Garment encoder: transformer and point-wise block, residual mesh
/// convolution blocks (skipped for `Late`), then a global max pool. The
/// global body feature is appended to every row at each block input.
pub fn garment_stream(
    g: &mut Graph,
    p: &mut ParamSource,
    positions: Var,
    conv_plan: Option<&ConvPlan>,
    body_global: Var,
    cfg: &ModelConfig,
) -> Result<GarmentFeatures> {
    let n = g.value(positions).rows();
    if g.value(positions).cols() != 3 || n == 0 {
        return Err(Error::shape("garment_stream", "garment must be n×3 with n ≥ 1"));
    }
    let slope = cfg.leaky_slope;
    let body_rows = g.repeat_rows(body_global, n)?;
    let x = stn(g, p, "garment.stn", positions, cfg)?;
    let cat = g.concat_cols(&[x, body_rows])?;
    let pointwise = mlp(g, p, "garment.point", cat, &cfg.garment_point, slope)?;

    let patchwise = if cfg.variant == Variant::Late {
        None
    } else {
        let plan = conv_plan.ok_or_else(|| Error::Config("mesh convolution needs a conv plan".into()))?;
        let mut h = pointwise;
        if g.value(h).cols() != cfg.conv_width {
            h = linear(g, p, "garment.conv_proj", h, cfg.conv_width, InitRule::Uniform(1.0))?;
        }
        for b in 0..cfg.residual_blocks {
            let name = format!("garment.res{b}");
            let inp = g.concat_cols(&[h, body_rows])?;
            let c1 = feastnet_conv(g, p, &format!("{name}.conv1"), inp, positions, plan, cfg.heads, cfg.conv_width)?;
            let a = g.leaky_relu(c1, slope);
            let c2 = feastnet_conv(g, p, &format!("{name}.conv2"), a, positions, plan, cfg.heads, cfg.conv_width)?;
            h = g.add(h, c2)?;
        }
        Some(h)
    };

    let mut parts = vec![pointwise];
    parts.extend(patchwise);
    parts.push(body_rows);
    let cat = g.concat_cols(&parts)?;
    let h = mlp(g, p, "garment.global", cat, &[cfg.garment_global_dim], slope)?;
    let global = g.row_max_pool(h)?;
    Ok(GarmentFeatures {
        pointwise,
        patchwise,
        global,
    })
}

/// Four shared per-vertex layers mapping concatenated features (plus the
/// condition vector on every row) to `n×3` translations. The last layer is
/// zero-initialized.
pub fn fusion(
    g: &mut Graph,
    p: &mut ParamSource,
    features: Var,
    condition: Option<&[f64]>,
    cfg: &ModelConfig,
) -> Result<Var> {
    let n = g.value(features).rows();
    let got = condition.map_or(0, <[f64]>::len);
    if got != cfg.condition_dim {
        return Err(Error::ConditionLength {
            expected: cfg.condition_dim,
            got,
        });
    }
    let x = match condition {
        Some(c) if !c.is_empty() => {
            let row = g.input(Tensor::from_vec(1, c.len(), c.to_vec())?);
            let rows = g.repeat_rows(row, n)?;
            g.concat_cols(&[features, rows])?
        }
        _ => features,
    };
    let h = mlp(g, p, "fusion", x, &cfg.fusion, cfg.leaky_slope)?;
    linear(g, p, "fusion.out", h, 3, InitRule::Zeros)
}

/// Parameter-independent inputs for one garment/body pair.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub skinned: Tensor,
    pub faces: Vec<[usize; 3]>,
    pub body: Tensor,
    pub conv: Option<Arc<ConvPlan>>,
    pub local: Option<Arc<LocalPoolingPlan>>,
    pub condition: Option<Vec<f64>>,
}

impl ModelInput {
    pub fn new(cfg: &ModelConfig, skinned: &TriMesh, body_points: &[Vec3], condition: Option<Vec<f64>>) -> Result<Self> {
        let conv = (cfg.variant != Variant::Late).then(|| Arc::new(ConvPlan::new(skinned)));
        Self::with_conv_plan(cfg, skinned, body_points, condition, conv)
    }

    /// Reuses a conv plan built for the same template topology.
    pub fn with_conv_plan(
        cfg: &ModelConfig,
        skinned: &TriMesh,
        body_points: &[Vec3],
        condition: Option<Vec<f64>>,
        conv: Option<Arc<ConvPlan>>,
    ) -> Result<Self> {
        if body_points.is_empty() || skinned.vertices.is_empty() {
            return Err(Error::InvalidMesh("garment and body need at least one point".into()));
        }
        let local = if cfg.variant == Variant::Local {
            Some(Arc::new(LocalPoolingPlan::new(
                &skinned.vertices,
                body_points,
                cfg.body_downscale,
                cfg.pool_neighbors,
                cfg.knn_k,
                cfg.pool_seed,
            )?))
        } else {
            None
        };
        Ok(ModelInput {
            skinned: Tensor::from_points(&skinned.vertices),
            faces: skinned.faces.clone(),
            body: Tensor::from_points(body_points),
            conv,
            local,
            condition,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.skinned.rows()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub body: BodyFeatures,
    pub garment: GarmentFeatures,
    pub local: Option<Var>,
    pub translations: Var,
    /// Skinned garment plus translations.
    pub prediction: Var,
}

pub fn forward(g: &mut Graph, p: &mut ParamSource, cfg: &ModelConfig, input: &ModelInput) -> Result<ForwardVars> {
    let skinned = g.input(input.skinned.clone());
    let body_pts = g.input(input.body.clone());
    let body = body_stream(g, p, body_pts, cfg)?;
    let garment = garment_stream(g, p, skinned, input.conv.as_deref(), body.global, cfg)?;
    let n = input.vertex_count();
    let local = match (cfg.variant, &input.local) {
        (Variant::Local, Some(plan)) => Some(local_body_pooling(g, plan, body.pointwise)?),
        (Variant::Local, None) => return Err(Error::Config("local variant needs a pooling plan".into())),
        _ => None,
    };
    let gg = g.repeat_rows(garment.global, n)?;
    let bg = g.repeat_rows(body.global, n)?;
    let mut parts = vec![garment.pointwise];
    parts.extend(garment.patchwise);
    parts.push(gg);
    parts.push(bg);
    parts.extend(local);
    let cat = g.concat_cols(&parts)?;
    let translations = fusion(g, p, cat, input.condition.as_deref(), cfg)?;
    let prediction = g.add(skinned, translations)?;
    Ok(ForwardVars {
        body,
        garment,
        local,
        translations,
        prediction,
    })
}

/// Configuration plus trained parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Declares every parameter by running the network once on a small
    /// placeholder scene.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let garment = placeholder_garment();
        let body: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i % 2) as f64, ((i / 2) % 2) as f64, (i / 4) as f64 - 0.5))
            .collect();
        let cond = (config.condition_dim > 0).then(|| vec![0.0; config.condition_dim]);
        let input = ModelInput::new(&config, &garment, &body, cond)?;
        let mut g = Graph::new();
        forward(
            &mut g,
            &mut ParamSource::Init {
                store: &mut params,
                rng: &mut rng,
            },
            &config,
            &input,
        )?;
        Ok(Model { config, params })
    }

    pub fn prepare(&self, skinned: &TriMesh, body_points: &[Vec3], condition: Option<Vec<f64>>) -> Result<ModelInput> {
        ModelInput::new(&self.config, skinned, body_points, condition)
    }

    /// Predicted garment for prepared inputs.
    pub fn run(&self, input: &ModelInput) -> Result<TriMesh> {
        let mut g = Graph::new();
        let out = forward(&mut g, &mut ParamSource::Use(&self.params), &self.config, input)?;
        let vertices = g.value(out.prediction).to_points()?;
        Ok(TriMesh {
            vertices,
            faces: input.faces.clone(),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            params: self.params.clone(),
            metadata: serde_json::to_string(&self.config)?,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&ck.metadata)?;
        config.validate()?;
        let reference = Model::new(config.clone(), 0)?;
        for name in reference.params.names() {
            let want = reference.params.get(name).unwrap().shape();
            match ck.params.get(name) {
                Some(t) if t.shape() == want => {}
                Some(t) => {
                    return Err(Error::Format(format!(
                        "checkpoint parameter `{name}` is {:?}, config expects {want:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Format(format!("checkpoint lacks parameter `{name}`"))),
            }
        }
        if ck.params.len() != reference.params.len() {
            return Err(Error::Format("checkpoint has parameters the config does not use".into()));
        }
        Ok(Model {
            config,
            params: ck.params,
        })
    }
}

fn placeholder_garment() -> TriMesh {
    let vertices = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(1.0, 1.0, 0.2),
    ];
    TriMesh {
        vertices,
        faces: vec![[0, 1, 3], [0, 3, 2]],
    }
}

/// Skins `template` to the pose and adds the network's translations.
pub fn predict(
    template: &TriMesh,
    body: &TriMesh,
    pose: &PoseSkeleton,
    weights: &SkinWeights,
    model: &Model,
    condition: Option<Vec<f64>>,
) -> Result<TriMesh> {
    let skinned = dqs(template, pose, weights)?;
    let input = model.prepare(&skinned, &body.vertices, condition)?;
    model.run(&input)
}
