//! Fixation/saccade segmentation of gaze samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::registry::Registry;

/// One gaze record, already transformed into the model frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub t: f64,
    pub origin: Vec3,
    pub direction: Vec3,
    pub head: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixation {
    pub start: f64,
    pub end: f64,
    pub mean_origin: Vec3,
    pub mean_direction: Vec3,
    pub hit_face: Option<usize>,
    pub hit_point: Option<Vec3>,
}

impl Fixation {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    fn from_run(run: &[GazeSample]) -> Option<Fixation> {
        let n = run.len() as f64;
        let origin = run.iter().fold(Vec3::ZERO, |acc, s| acc + s.origin) / n;
        let direction = run
            .iter()
            .fold(Vec3::ZERO, |acc, s| acc + s.direction)
            .try_normalize()?;
        Some(Fixation {
            start: run[0].t,
            end: run[run.len() - 1].t,
            mean_origin: origin,
            mean_direction: direction,
            hit_face: None,
            hit_point: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixationConfig {
    pub classifier: String,
    /// I-VT threshold in degrees per second.
    pub velocity_threshold_deg: f64,
    /// Minimum fixation duration in seconds.
    pub min_duration: f64,
    /// I-DT dispersion limit in degrees.
    pub dispersion_deg: f64,
}

impl Default for FixationConfig {
    fn default() -> Self {
        FixationConfig {
            classifier: "ivt".into(),
            velocity_threshold_deg: 30.0,
            min_duration: 0.1,
            dispersion_deg: 1.0,
        }
    }
}

pub trait FixationClassifier: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fixations in chronological order, without hits.
    fn classify(&self, samples: &[GazeSample]) -> Result<Vec<Fixation>>;
}

fn check_timestamps(samples: &[GazeSample]) -> Result<()> {
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(Error::Config(format!(
                "gaze timestamps must increase strictly (sample {} at {} after {})",
                i + 1,
                w[1].t,
                w[0].t
            )));
        }
    }
    Ok(())
}

/// Durations are compared with this slack so sampled runs of exactly the minimum qualify.
const DURATION_SLACK: f64 = 1e-9;

/// Velocity threshold: a sample is a fixation sample when the angular speed of the step
/// leading into it (the first sample uses the step leaving it) is below the threshold.
#[derive(Debug, Clone)]
pub struct VelocityThreshold {
    pub threshold_deg: f64,
    pub min_duration: f64,
}

impl FixationClassifier for VelocityThreshold {
    fn name(&self) -> &'static str {
        "ivt"
    }

    fn classify(&self, samples: &[GazeSample]) -> Result<Vec<Fixation>> {
        check_timestamps(samples)?;
        if samples.len() < 2 {
            return Ok(Vec::new());
        }
        let speed: Vec<f64> = samples
            .windows(2)
            .map(|w| w[0].direction.angle_to(w[1].direction).to_degrees() / (w[1].t - w[0].t))
            .collect();
        let slow = |i: usize| speed[i.saturating_sub(1).min(speed.len() - 1)] < self.threshold_deg;
        let mut out = Vec::new();
        let mut i = 0;
        while i < samples.len() {
            if !slow(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i < samples.len() && slow(i) {
                i += 1;
            }
            let run = &samples[start..i];
            if run[run.len() - 1].t - run[0].t + DURATION_SLACK >= self.min_duration {
                out.extend(Fixation::from_run(run));
            }
        }
        Ok(out)
    }
}

/// Dispersion threshold: grows windows whose directions stay within `dispersion_deg`
/// of their running mean.
#[derive(Debug, Clone)]
pub struct DispersionThreshold {
    pub dispersion_deg: f64,
    pub min_duration: f64,
}

impl DispersionThreshold {
    fn dispersed(&self, window: &[GazeSample]) -> bool {
        let Some(mean) = window.iter().fold(Vec3::ZERO, |a, s| a + s.direction).try_normalize() else {
            return true;
        };
        window
            .iter()
            .any(|s| s.direction.angle_to(mean).to_degrees() > self.dispersion_deg)
    }
}

impl FixationClassifier for DispersionThreshold {
    fn name(&self) -> &'static str {
        "idt"
    }

    fn classify(&self, samples: &[GazeSample]) -> Result<Vec<Fixation>> {
        check_timestamps(samples)?;
        let mut out = Vec::new();
        let mut start = 0;
        while start < samples.len() {
            let mut end = start + 1;
            while end < samples.len() && samples[end].t - samples[start].t + DURATION_SLACK < self.min_duration {
                end += 1;
            }
            if end >= samples.len() || self.dispersed(&samples[start..=end]) {
                start += 1;
                continue;
            }
            while end + 1 < samples.len() && !self.dispersed(&samples[start..=end + 1]) {
                end += 1;
            }
            out.extend(Fixation::from_run(&samples[start..=end]));
            start = end + 1;
        }
        Ok(out)
    }
}

pub fn classifier_registry() -> Registry<FixationConfig, dyn FixationClassifier> {
    let mut r: Registry<FixationConfig, dyn FixationClassifier> = Registry::new("fixation classifier");
    r.register("ivt", |c: &FixationConfig| {
        Ok(Box::new(VelocityThreshold {
            threshold_deg: c.velocity_threshold_deg,
            min_duration: c.min_duration,
        }))
    });
    r.register("idt", |c: &FixationConfig| {
        Ok(Box::new(DispersionThreshold {
            dispersion_deg: c.dispersion_deg,
            min_duration: c.min_duration,
        }))
    });
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, yaw_deg: f64) -> GazeSample {
        let d = Vec3::new(0.0, 0.0, -1.0).rotate_y(yaw_deg.to_radians());
        GazeSample {
            t,
            origin: Vec3::ZERO,
            direction: d,
            head: d,
        }
    }

    fn ivt() -> VelocityThreshold {
        VelocityThreshold {
            threshold_deg: 30.0,
            min_duration: 0.1,
        }
    }

    #[test]
    fn constant_direction_is_one_fixation() {
        let s: Vec<_> = (0..36).map(|i| sample(i as f64 / 120.0, 0.0)).collect();
        let f = ivt().classify(&s).unwrap();
        assert_eq!(f.len(), 1);
        assert!((f[0].mean_direction.length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fast_sweep_has_no_fixation() {
        let s: Vec<_> = (0..120)
            .map(|i| sample(i as f64 / 120.0, 90.0 * i as f64 / 120.0))
            .collect();
        assert!(ivt().classify(&s).unwrap().is_empty());
    }

    #[test]
    fn empty_and_single_sample() {
        assert!(ivt().classify(&[]).unwrap().is_empty());
        assert!(ivt().classify(&[sample(0.0, 0.0)]).unwrap().is_empty());
    }

    #[test]
    fn non_increasing_time_is_rejected() {
        let s = vec![sample(0.0, 0.0), sample(0.0, 0.0)];
        assert!(ivt().classify(&s).is_err());
    }

    #[test]
    fn dispersion_finds_stable_segments() {
        let mut s: Vec<_> = (0..30).map(|i| sample(i as f64 / 120.0, 0.0)).collect();
        s.extend((30..60).map(|i| sample(i as f64 / 120.0, 20.0)));
        let idt = DispersionThreshold {
            dispersion_deg: 1.0,
            min_duration: 0.1,
        };
        let f = idt.classify(&s).unwrap();
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn registry_knows_both() {
        let r = classifier_registry();
        assert_eq!(r.names(), vec!["ivt", "idt"]);
        assert_eq!(r.create("ivt", &FixationConfig::default()).unwrap().name(), "ivt");
    }
}
