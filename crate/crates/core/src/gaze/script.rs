use super::GazeRecord;
use crate::geom::Vec3;
use crate::mesh::TriMesh;

/// Look straight at `face` for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedFixation {
    pub face: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptOptions {
    /// Viewer distance from the face center along its normal.
    pub distance: f64,
    pub rate_hz: f64,
    /// Samples spent looking away between fixations.
    pub saccade_samples: usize,
    /// Angle of the look-away, in degrees.
    pub saccade_deg: f64,
    /// Model yaw recorded in the log; rays are rotated into the capture frame by it.
    pub yaw_deg: f64,
}

impl Default for ScriptOptions {
    fn default() -> Self {
        ScriptOptions {
            distance: 2.0,
            rate_hz: 120.0,
            saccade_samples: 3,
            saccade_deg: 25.0,
            yaw_deg: 0.0,
        }
    }
}

/// Synthetic gaze log: steady fixations on the scripted faces separated by brief
/// look-aways fast enough to register as saccades.
pub fn scripted_gaze_log(mesh: &TriMesh, script: &[ScriptedFixation], opts: &ScriptOptions) -> Vec<GazeRecord> {
    let dt = 1.0 / opts.rate_hz;
    let yaw = opts.yaw_deg.to_radians();
    let mut t = 0.0;
    let mut out = Vec::new();
    let mut push = |origin: Vec3, dir: Vec3, t: f64| {
        let (o, d) = (origin.rotate_y(yaw), dir.rotate_y(yaw));
        out.push(GazeRecord {
            t,
            ox: o.x,
            oy: o.y,
            oz: o.z,
            gx: d.x,
            gy: d.y,
            gz: d.z,
            hx: d.x,
            hy: d.y,
            hz: d.z,
            yaw_deg: opts.yaw_deg,
        });
    };
    for (k, s) in script.iter().enumerate() {
        let n = mesh.face_normal(s.face);
        let origin = mesh.face_center(s.face) + n * opts.distance;
        let dir = -n;
        if k > 0 {
            let away = rotate_about(dir, dir.any_orthonormal(), opts.saccade_deg.to_radians());
            for _ in 0..opts.saccade_samples {
                push(origin, away, t);
                t += dt;
            }
        }
        let samples = (s.duration * opts.rate_hz).round() as usize + 1;
        for _ in 0..samples {
            push(origin, dir, t);
            t += dt;
        }
    }
    out
}

fn rotate_about(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}
