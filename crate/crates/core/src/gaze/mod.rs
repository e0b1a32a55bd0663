//! Ground-truth saliency from gaze logs.
//!
//! Each session is segmented into fixations, every fixation is cast into the mesh as a
//! narrow cone of rays with Gaussian angular weights, and the weights that land on faces
//! are accumulated into a density that is finally normalized to a distribution.

mod bvh;
mod fixation;
mod script;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bvh::{degenerate_triangle_tests, intersect_ray_triangle, Bvh, RayHit, TriangleHit, T_EPSILON};
pub use fixation::{
    classifier_registry, DispersionThreshold, Fixation, FixationClassifier, FixationConfig, GazeSample,
    VelocityThreshold,
};
pub use script::{scripted_gaze_log, ScriptOptions, ScriptedFixation};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriMesh;
use crate::saliency::{MapKind, Normalization, SaliencyMap};

/// One row of a gaze log, in the capture (world) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    pub t: f64,
    pub ox: f64,
    pub oy: f64,
    pub oz: f64,
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
    /// Model rotation about +Y at capture time, in degrees.
    pub yaw_deg: f64,
}

impl GazeRecord {
    /// Undoes the model's yaw so the ray is expressed in the model frame.
    pub fn to_model_frame(&self) -> Result<GazeSample> {
        let undo = -self.yaw_deg.to_radians();
        let unit = |v: Vec3, what: &str| {
            v.try_normalize()
                .ok_or_else(|| Error::Numeric(format!("zero {what} direction at t={}", self.t)))
        };
        let direction = unit(Vec3::new(self.gx, self.gy, self.gz), "gaze")?;
        let head = unit(Vec3::new(self.hx, self.hy, self.hz), "head")?;
        Ok(GazeSample {
            t: self.t,
            origin: Vec3::new(self.ox, self.oy, self.oz).rotate_y(undo),
            direction: direction.rotate_y(undo),
            head: head.rotate_y(undo),
        })
    }
}

pub fn parse_gaze_csv(text: &str) -> Result<Vec<GazeRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let expected = ["t", "ox", "oy", "oz", "gx", "gy", "gz", "hx", "hy", "hz", "yaw_deg"];
    let headers = reader.headers().map_err(|e| csv_error(&e))?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format {
            line: 1,
            message: format!("gaze log header must be '{}'", expected.join(",")),
        });
    }
    reader.deserialize().map(|r| r.map_err(|e| csv_error(&e))).collect()
}

pub fn load_gaze_log(path: &Path) -> Result<Vec<GazeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gaze_csv(&text)
}

pub fn write_gaze_csv(records: &[GazeRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| csv_error(&e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: &csv::Error) -> Error {
    Error::Format {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeConfig {
    /// Cone half-angle in degrees.
    pub aperture_deg: f64,
    /// Gaussian angular falloff; `None` means half the aperture.
    pub sigma_deg: Option<f64>,
    pub ray_count: usize,
}

impl Default for ConeConfig {
    fn default() -> Self {
        ConeConfig {
            aperture_deg: 1.0,
            sigma_deg: None,
            ray_count: 64,
        }
    }
}

impl ConeConfig {
    pub fn sigma(&self) -> f64 {
        self.sigma_deg.unwrap_or(self.aperture_deg / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct GazeConfig {
    pub fixation: FixationConfig,
    pub cone: ConeConfig,
    pub bvh_leaf_size: Option<usize>,
}

/// Ray directions of the cone around `axis` with weights summing to one.
///
/// Ray 0 is the axis; the rest follow a golden-angle spiral whose radius grows with the
/// square root of the index, giving roughly uniform coverage of the cone's disc.
pub fn cone_rays(axis: Vec3, cone: &ConeConfig) -> Result<Vec<(Vec3, f64)>> {
    if !(cone.aperture_deg > 0.0) || !(cone.sigma() > 0.0) || cone.ray_count == 0 {
        return Err(Error::Config(format!(
            "cone needs aperture > 0, sigma > 0 and at least one ray (got {}, {}, {})",
            cone.aperture_deg,
            cone.sigma(),
            cone.ray_count
        )));
    }
    let axis = axis
        .try_normalize()
        .ok_or_else(|| Error::Numeric("zero cone axis".into()))?;
    let e1 = axis.any_orthonormal();
    let e2 = axis.cross(e1);
    let half = cone.aperture_deg.to_radians();
    let sigma = cone.sigma().to_radians();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let n = cone.ray_count;
    let mut rays: Vec<(Vec3, f64)> = (0..n)
        .map(|k| {
            let r = half * (k as f64 / n as f64).sqrt();
            let phi = golden * k as f64;
            let radial = e1 * phi.cos() + e2 * phi.sin();
            let dir = axis * r.cos() + radial * r.sin();
            (dir, (-r * r / (2.0 * sigma * sigma)).exp())
        })
        .collect();
    let total: f64 = rays.iter().map(|r| r.1).sum();
    rays.iter_mut().for_each(|r| r.1 /= total);
    Ok(rays)
}

/// Casts the fixation's axis; fills `hit_face`/`hit_point`.
pub fn locate_fixation(bvh: &Bvh, fixation: &mut Fixation) {
    let hit = bvh.cast(fixation.mean_origin, fixation.mean_direction);
    fixation.hit_face = hit.map(|h| h.face);
    fixation.hit_point = hit.map(|h| h.point);
}

/// Per-ray `(face, weight)` increments; empty when the fixation has no hit.
pub fn splat_fixation_cone(bvh: &Bvh, fixation: &Fixation, cone: &ConeConfig) -> Result<Vec<(usize, f64)>> {
    let rays = cone_rays(fixation.mean_direction, cone)?;
    if fixation.hit_face.is_none() {
        return Ok(Vec::new());
    }
    Ok(rays
        .into_iter()
        .filter_map(|(dir, w)| bvh.cast(fixation.mean_origin, dir).map(|h| (h.face, w)))
        .collect())
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub raw: SaliencyMap,
    pub normalized: SaliencyMap,
    pub fixations: Vec<Fixation>,
}

impl GroundTruth {
    pub fn fixations_hit(&self) -> usize {
        self.fixations.iter().filter(|f| f.hit_face.is_some()).count()
    }
}

/// Sums cone splats over every fixation of every session.
///
/// Each face's contributions are summed in sorted order, so the result does not depend on
/// session order or thread scheduling.
pub fn build_saliency_map(
    mesh: &TriMesh,
    bvh: &Bvh,
    sessions: &[Vec<GazeSample>],
    cfg: &GazeConfig,
) -> Result<GroundTruth> {
    if sessions.is_empty() {
        return Err(Error::Config("at least one gaze session is required".into()));
    }
    let classifier = classifier_registry().create(&cfg.fixation.classifier, &cfg.fixation)?;
    let mut fixations = Vec::new();
    for s in sessions {
        fixations.extend(classifier.classify(s)?);
    }
    fixations.par_iter_mut().for_each(|f| locate_fixation(bvh, f));
    let splats: Vec<Vec<(usize, f64)>> = fixations
        .par_iter()
        .map(|f| splat_fixation_cone(bvh, f, &cfg.cone))
        .collect::<Result<_>>()?;

    let mut per_face: Vec<Vec<f64>> = vec![Vec::new(); mesh.face_count()];
    for (face, w) in splats.into_iter().flatten() {
        per_face[face].push(w);
    }
    let raw_values: Vec<f64> = per_face
        .into_iter()
        .map(|mut ws| {
            ws.sort_by(f64::total_cmp);
            ws.iter().fold(0.0, |acc, w| acc + w)
        })
        .collect();
    let total: f64 = raw_values.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoFixationHits);
    }

    let annotate = |m: SaliencyMap| {
        m.with_param("classifier", &cfg.fixation.classifier)
            .with_param("velocity_threshold_deg", cfg.fixation.velocity_threshold_deg)
            .with_param("min_duration", cfg.fixation.min_duration)
            .with_param("aperture_deg", cfg.cone.aperture_deg)
            .with_param("sigma_deg", cfg.cone.sigma())
            .with_param("ray_count", cfg.cone.ray_count)
            .with_param("fixations", fixations.len())
    };
    let normalized = raw_values.iter().map(|v| v / total).collect();
    Ok(GroundTruth {
        raw: annotate(SaliencyMap::new(raw_values, MapKind::GroundTruth, Normalization::Raw)?),
        normalized: annotate(SaliencyMap::new(
            normalized,
            MapKind::GroundTruth,
            Normalization::Distribution,
        )?),
        fixations,
    })
}
