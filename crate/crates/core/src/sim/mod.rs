//! Quasi-static position-based cloth draping on capsule bodies. Produces the
//! ground-truth drapes used for training and evaluation.

mod body;
mod garment;
mod revolve;


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{two_ring_pairs, TriMesh, Vec3};

pub use body::{
    generate_body, BodyPose, BodyProxy, BodyShape, Capsule, Tessellation, CHEST, HEAD_TOP, JOINT_NAMES, L_ELBOW,
    L_SHOULDER, L_WRIST, NECK, PELVIS, R_ELBOW, R_SHOULDER, R_WRIST,
};
pub use garment::{generate_garment_template, grid_xz, GarmentSpec, GarmentTemplate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Constraint sweeps per outer step.
    pub iterations: usize,
    /// Outer step cap.
    pub max_steps: usize,
    /// Convergence threshold on the largest per-step vertex displacement, meters.
    pub tolerance: f64,
    pub gravity: [f64; 3],
    /// Outer step duration; gravity moves a free vertex by `g·dt²` per step.
    pub time_step: f64,
    pub stretch_stiffness: f64,
    pub bend_stiffness: f64,
    /// Contact friction coefficient. A contact removes up to `friction` times
    /// its normal push from the vertex's tangential motion over the step.
    pub friction: f64,
    /// Distance kept between cloth vertices and the body surface. `None` uses
    /// 0.2 × the average edge length of the body tessellation.
    pub collision_margin: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            iterations: 40,
            max_steps: 2000,
            tolerance: 1e-5,
            gravity: [0.0, -9.81, 0.0],
            time_step: 1.0 / 30.0,
            stretch_stiffness: 1.0,
            bend_stiffness: 0.05,
            friction: 0.8,
            collision_margin: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("sim iterations must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("sim max_steps must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("sim tolerance must be positive".into()));
        }
        if !(self.time_step > 0.0) || !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Config("sim time_step must be positive and gravity finite".into()));
        }
        for (name, k) in [("stretch_stiffness", self.stretch_stiffness), ("bend_stiffness", self.bend_stiffness)] {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::Config(format!("sim {name} must lie in [0, 1], got {k}")));
            }
        }
        if !(self.friction >= 0.0) {
            return Err(Error::Config("sim friction must be nonnegative".into()));
        }
        if let Some(m) = self.collision_margin {
            if !(m >= 0.0) {
                return Err(Error::Config("sim collision_margin must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn margin_for(&self, body: &BodyProxy) -> Result<f64> {
        match self.collision_margin {
            Some(m) => Ok(m),
            None => Ok(0.2 * body.mesh.avg_edge_length()?),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DrapeResult {
    pub mesh: TriMesh,
    pub converged: bool,
    pub steps: usize,
    /// Largest vertex displacement of the last outer step.
    pub last_displacement: f64,
}

/// Penetration below the margin tolerated by the final settling pass, meters.
const SETTLE_SLACK: f64 = 1e-7;

const COLLISION_ROUNDS: usize = 4;

struct Constraint {
    a: usize,
    b: usize,
    rest: f64,
    stiffness: f64,
}

fn project_distance(p: &mut [Vec3], c: &Constraint) {
    let d = p[c.b] - p[c.a];
    let len = d.norm();
    if len < 1e-15 {
        return;
    }
    let corr = d * (0.5 * c.stiffness * (len - c.rest) / len);
    p[c.a] += corr;
    p[c.b] -= corr;
}

/// Pushes `p` out to the margin surface of the closest capsule, then damps its
/// tangential motion relative to `start`. A push can land inside a neighboring
/// capsule, so this repeats a few times. Returns whether it moved.
fn project_collision(p: &mut Vec3, start: &Vec3, body: &BodyProxy, margin: f64, friction: f64) -> bool {
    let mut moved = false;
    for _ in 0..COLLISION_ROUNDS {
        let (d, dir) = body.closest(p);
        if d >= margin {
            break;
        }
        moved = true;
        let push = margin - d;
        *p += dir * push;
        if friction > 0.0 {
            let motion = *p - start;
            let tangential = motion - dir * motion.dot(&dir);
            let t = tangential.norm();
            if t > 0.0 {
                *p -= tangential * (friction * push / t).min(1.0);
            }
        }
    }
    moved
}

/// A push out of one capsule can land inside a neighbor; settle those.
fn settle(p: &mut [Vec3], body: &BodyProxy, margin: f64) {
    for _ in 0..64 {
        let mut moved = false;
        for v in p.iter_mut() {
            if body.signed_distance(v) < margin - SETTLE_SLACK {
                moved |= project_collision(v, &Vec3::zeros(), body, margin, 0.0);
            }
        }
        if !moved {
            break;
        }
    }
}

/// Drapes `initial` on `body`. Edge and two-ring rest lengths are taken from
/// `rest`, which must share the topology of `initial`. Constraints are
/// processed in a fixed order, so the result is a deterministic function of
/// the inputs.
pub fn drape(initial: &TriMesh, rest: &TriMesh, body: &BodyProxy, cfg: &SimConfig) -> Result<DrapeResult> {
    cfg.validate()?;
    initial.validate()?;
    if initial.faces != rest.faces || initial.vertex_count() != rest.vertex_count() {
        return Err(Error::FaceMismatch);
    }
    let margin = cfg.margin_for(body)?;
    let dist = |a: usize, b: usize| (rest.vertices[a] - rest.vertices[b]).norm();
    let mut constraints: Vec<Constraint> = rest
        .edges()
        .into_iter()
        .map(|(a, b)| Constraint {
            a,
            b,
            rest: dist(a, b),
            stiffness: cfg.stretch_stiffness,
        })
        .collect();
    if cfg.bend_stiffness > 0.0 {
        constraints.extend(two_ring_pairs(rest).into_iter().map(|(a, b)| Constraint {
            a,
            b,
            rest: dist(a, b),
            stiffness: cfg.bend_stiffness,
        }));
    }
    let g = Vec3::from(cfg.gravity) * (cfg.time_step * cfg.time_step);

    let mut p = initial.vertices.clone();
    let mut prev = p.clone();
    let mut before = p.clone();
    let mut converged = false;
    let mut steps = 0;
    let mut last = f64::INFINITY;
    while steps < cfg.max_steps {
        steps += 1;
        before.copy_from_slice(&prev);
        prev.copy_from_slice(&p);
        for v in p.iter_mut() {
            *v += g;
        }
        for _ in 0..cfg.iterations {
            for c in &constraints {
                project_distance(&mut p, c);
            }
            for (v, s) in p.iter_mut().zip(&prev) {
                project_collision(v, s, body, margin, cfg.friction);
            }
        }
        // Contact and friction can make the step map flip between two states;
        // a step that reverses the previous one is replaced by the midpoint.
        // Convergence is judged on the raw step.
        last = p.iter().zip(&prev).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let reversal: f64 = p.iter().zip(&prev).zip(&before).map(|((a, b), c)| (a - b).dot(&(b - c))).sum();
        if reversal < 0.0 && last >= cfg.tolerance {
            for (a, b) in p.iter_mut().zip(&prev) {
                *a = (*a + b) * 0.5;
            }
        }
        // Every step starts from a settled state, so the state returned at
        // convergence is unchanged by the final settle.
        settle(&mut p, body, margin);
        if !last.is_finite() {
            return Err(Error::InvalidMesh("cloth simulation diverged".into()));
        }
        if last < cfg.tolerance {
            converged = true;
            break;
        }
    }
    // The state at rest is the one whose step moved less than the tolerance.
    // Returning it (not the state after that step) makes a re-run stop after
    // repeating the same step.
    if converged {
        p.copy_from_slice(&prev);
    }
    settle(&mut p, body, margin);
    if !converged {
        log::debug!("drape stopped at the step cap, last displacement {last:.3e}");
    }
    Ok(DrapeResult {
        mesh: initial.with_vertices(p)?,
        converged,
        steps,
        last_displacement: last,
    })
}
