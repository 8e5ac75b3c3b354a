//! Emulated DVS recordings of moving shapes, and static shape images.
//!
//! A shape is rendered onto a luminance grid at a sequence of render steps.
//! Each pixel keeps a reference log-luminance; whenever the current value
//! rises (falls) past the reference by the on (off) contrast threshold the
//! pixel emits positive (negative) events and moves its reference by one
//! threshold per event.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Event, EventStream, StaticImage};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Bar,
    Box,
    Disc,
}

/// Geometry of one rendered shape. Coordinates are continuous, with pixel
/// `(i, j)` covering `[i, i+1) x [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMotion {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    /// Displacement per render step.
    pub velocity: (f64, f64),
    pub size: f64,
    /// Rotation of the shape's own axes, radians.
    pub orientation: f64,
    /// Length-to-width ratio for bars and discs (ellipses when > 1).
    pub aspect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: u16,
    pub height: u16,
    pub classes: usize,
    pub duration_us: u32,
    pub render_steps: usize,
    pub theta_on: f64,
    pub theta_off: f64,
    /// Expected background noise events per pixel over the recording.
    pub noise_rate: f64,
    /// Pixels per render step.
    pub speed: f64,
    pub speed_jitter: f64,
    pub angle_jitter_deg: f64,
    pub position_jitter: f64,
    /// Shape size as a fraction of the smaller sensor side.
    pub size_fraction: f64,
    pub size_jitter: f64,
    /// Channels of static images.
    pub channels: usize,
    /// Standard deviation of additive pixel noise on static images.
    pub static_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            classes: 10,
            duration_us: 100_000,
            render_steps: 16,
            theta_on: 0.25,
            theta_off: 0.25,
            noise_rate: 0.05,
            speed: 0.75,
            speed_jitter: 0.2,
            angle_jitter_deg: 10.0,
            position_jitter: 3.0,
            size_fraction: 0.3,
            size_jitter: 0.15,
            channels: 1,
            static_noise: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::config(format!(
                "synthetic sensor {}x{} is degenerate",
                self.width, self.height
            )));
        }
        if self.duration_us == 0 || self.render_steps == 0 {
            return Err(Error::config("synthetic duration must be positive"));
        }
        if self.classes == 0 || self.channels == 0 {
            return Err(Error::config("need at least one class and one channel"));
        }
        if !(self.theta_on > 0.0 && self.theta_off > 0.0) {
            return Err(Error::config("contrast thresholds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

const BACKGROUND: f64 = 0.15;
const FOREGROUND: f64 = 1.0;
const SUPERSAMPLE: usize = 3;

fn inside(m: &ShapeMotion, center: (f64, f64), px: f64, py: f64) -> bool {
    let (dx, dy) = (px - center.0, py - center.1);
    let (s, c) = m.orientation.sin_cos();
    // coordinates in the shape frame
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    let half = m.size / 2.0;
    match m.kind {
        ShapeKind::Bar => u.abs() <= half / m.aspect.max(1.0) && v.abs() <= half * 2.0,
        ShapeKind::Box => u.abs() <= half && v.abs() <= half,
        ShapeKind::Disc => {
            let a = half;
            let b = half / m.aspect.max(1.0);
            (v / a).powi(2) + (u / b).powi(2) <= 1.0
        }
    }
}

/// Luminance of every pixel with the shape at `center`, row-major.
fn render(m: &ShapeMotion, center: (f64, f64), w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![BACKGROUND; w * h];
    let reach = m.size * 1.5 + 2.0;
    let y0 = ((center.1 - reach).floor().max(0.0)) as usize;
    let y1 = ((center.1 + reach).ceil().min(h as f64)).max(0.0) as usize;
    let x0 = ((center.0 - reach).floor().max(0.0)) as usize;
    let x1 = ((center.0 + reach).ceil().min(w as f64)).max(0.0) as usize;
    let sub = SUPERSAMPLE as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / sub;
                    let py = y as f64 + (sy as f64 + 0.5) / sub;
                    if inside(m, center, px, py) {
                        hits += 1;
                    }
                }
            }
            let cover = hits as f64 / (sub * sub);
            out[y * w + x] = BACKGROUND + (FOREGROUND - BACKGROUND) * cover;
        }
    }
    out
}

/// Emulates a DVS observing `motion` over `cfg.render_steps` steps.
pub fn render_events(
    motion: &ShapeMotion,
    cfg: &SynthConfig,
    label: u32,
    rng: &mut Rng,
) -> Result<EventStream> {
    cfg.validate()?;
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let steps = cfg.render_steps;
    let step_us = cfg.duration_us as f64 / steps as f64;
    let mut reference: Vec<f64> = render(motion, motion.center, w, h)
        .into_iter()
        .map(f64::ln)
        .collect();
    let mut timed: Vec<(f64, Event)> = Vec::new();
    for k in 1..=steps {
        let center = (
            motion.center.0 + motion.velocity.0 * k as f64,
            motion.center.1 + motion.velocity.1 * k as f64,
        );
        let lum = render(motion, center, w, h);
        for (i, l) in lum.iter().enumerate() {
            let log_l = l.ln();
            let diff = log_l - reference[i];
            let (count, polarity, theta) = if diff >= cfg.theta_on {
                ((diff / cfg.theta_on).floor() as usize, 1u8, cfg.theta_on)
            } else if -diff >= cfg.theta_off {
                ((-diff / cfg.theta_off).floor() as usize, 0u8, -cfg.theta_off)
            } else {
                continue;
            };
            reference[i] += theta * count as f64;
            for _ in 0..count {
                let t = ((k - 1) as f64 + rng.uniform()) * step_us;
                timed.push((
                    t,
                    Event {
                        t_us: 0,
                        x: (i % w) as u16,
                        y: (i / w) as u16,
                        polarity,
                    },
                ));
            }
        }
        if cfg.noise_rate > 0.0 {
            let p = cfg.noise_rate / steps as f64;
            for i in 0..w * h {
                if rng.bernoulli(p) {
                    let t = ((k - 1) as f64 + rng.uniform()) * step_us;
                    let polarity = u8::from(rng.bernoulli(0.5));
                    timed.push((
                        t,
                        Event {
                            t_us: 0,
                            x: (i % w) as u16,
                            y: (i / w) as u16,
                            polarity,
                        },
                    ));
                }
            }
        }
    }
    timed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let events = timed
        .into_iter()
        .map(|(t, mut e)| {
            e.t_us = (t.floor() as u32).min(cfg.duration_us.saturating_sub(1));
            e
        })
        .collect();
    EventStream::new(cfg.width, cfg.height, events, label)
}

fn kind_of(class_id: usize) -> ShapeKind {
    [ShapeKind::Bar, ShapeKind::Box, ShapeKind::Disc][class_id % 3]
}

/// Class-conditioned moving shape: the shape kind cycles with the class and
/// the motion direction is spread evenly over the circle; position, speed,
/// direction and size are jittered per sample.
pub fn synth_moving_shape(class_id: usize, cfg: &SynthConfig, rng: &mut Rng) -> Result<EventStream> {
    cfg.validate()?;
    if class_id >= cfg.classes {
        return Err(Error::config(format!(
            "class {class_id} out of range for {} classes",
            cfg.classes
        )));
    }
    let direction = 2.0 * PI * class_id as f64 / cfg.classes as f64
        + (rng.uniform() * 2.0 - 1.0) * cfg.angle_jitter_deg.to_radians();
    let speed = cfg.speed * (1.0 + (rng.uniform() * 2.0 - 1.0) * cfg.speed_jitter);
    let velocity = (speed * direction.cos(), speed * direction.sin());
    let side = cfg.width.min(cfg.height) as f64;
    let size = side * cfg.size_fraction * (1.0 + (rng.uniform() * 2.0 - 1.0) * cfg.size_jitter);
    let travel = cfg.render_steps as f64 / 2.0;
    let center = (
        cfg.width as f64 / 2.0 - velocity.0 * travel
            + (rng.uniform() * 2.0 - 1.0) * cfg.position_jitter,
        cfg.height as f64 / 2.0 - velocity.1 * travel
            + (rng.uniform() * 2.0 - 1.0) * cfg.position_jitter,
    );
    let motion = ShapeMotion {
        kind: kind_of(class_id),
        center,
        velocity,
        size,
        orientation: direction + PI / 2.0,
        aspect: 3.0,
    };
    render_events(&motion, cfg, class_id as u32, rng)
}

/// Class-conditioned still image of a shape with additive noise.
///
/// The class fixes the shape kind and an orientation in `[0, pi/2)`; discs
/// are drawn as ellipses so orientation is visible for every kind.
pub fn synth_static_shape(class_id: usize, cfg: &SynthConfig, rng: &mut Rng) -> Result<StaticImage> {
    cfg.validate()?;
    if class_id >= cfg.classes {
        return Err(Error::config(format!(
            "class {class_id} out of range for {} classes",
            cfg.classes
        )));
    }
    let per_kind = cfg.classes.div_ceil(3);
    let orientation = PI / 2.0 * (class_id / 3) as f64 / per_kind as f64
        + (rng.uniform() * 2.0 - 1.0) * cfg.angle_jitter_deg.to_radians() * 0.5;
    let side = cfg.width.min(cfg.height) as f64;
    let size = side * cfg.size_fraction * 1.6 * (1.0 + (rng.uniform() * 2.0 - 1.0) * cfg.size_jitter);
    let center = (
        cfg.width as f64 / 2.0 + (rng.uniform() * 2.0 - 1.0) * cfg.position_jitter,
        cfg.height as f64 / 2.0 + (rng.uniform() * 2.0 - 1.0) * cfg.position_jitter,
    );
    let motion = ShapeMotion {
        kind: kind_of(class_id),
        center,
        velocity: (0.0, 0.0),
        size,
        orientation,
        aspect: 2.5,
    };
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let lum = render(&motion, center, w, h);
    let contrast = 0.6 + 0.4 * rng.uniform();
    let mut data = Vec::with_capacity(cfg.channels * w * h);
    for _ in 0..cfg.channels {
        for &l in &lum {
            let base = (l - BACKGROUND) / (FOREGROUND - BACKGROUND) * contrast;
            data.push((base + cfg.static_noise * rng.normal()) as f32);
        }
    }
    StaticImage::new(Tensor::new(vec![cfg.channels, h, w], data)?, class_id as u32)
}
