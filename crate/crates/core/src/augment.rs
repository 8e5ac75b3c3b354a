//! Defensive data augmentation: event dropping on raw streams, geometric
//! augmentation with CutMix on frame stacks, and flip/crop/resize on static
//! images.
//!
//! Tensor operations act on the two trailing `[H, W]` axes and apply the
//! same transform to every leading slice, so all frames of a sample move
//! together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventdata::{Event, EventStream, FrameTensor, StaticImage};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    #[default]
    None,
    EventDrop,
    Nda,
    StaticBasic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    /// Per-sample drop ratio is drawn from `{0.1, ..., 0.9} * max_drop_ratio`.
    pub max_drop_ratio: f64,
    pub max_shift: usize,
    pub max_rotation_deg: f64,
    /// Largest cutout box as a fraction of the frame area.
    pub max_cutout_area: f64,
    pub max_shear: f64,
    /// CutMix mixing weight is drawn from `Beta(alpha, alpha)`.
    pub cutmix_alpha: f64,
    pub flip_prob: f64,
    /// Smallest crop side as a fraction of the image side.
    pub min_crop_scale: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            kind: AugmentKind::None,
            max_drop_ratio: 0.5,
            max_shift: 5,
            max_rotation_deg: 15.0,
            max_cutout_area: 0.25,
            max_shear: 0.2,
            cutmix_alpha: 1.0,
            flip_prob: 0.5,
            min_crop_scale: 0.8,
        }
    }
}

impl AugmentPolicy {
    pub fn of_kind(kind: AugmentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_open_unit(self.max_drop_ratio) {
            return Err(Error::config(format!(
                "max_drop_ratio {} must lie in (0, 1)",
                self.max_drop_ratio
            )));
        }
        if !in_open_unit(self.max_cutout_area) {
            return Err(Error::config("max_cutout_area must lie in (0, 1)"));
        }
        if !(self.min_crop_scale > 0.0 && self.min_crop_scale <= 1.0) {
            return Err(Error::config("min_crop_scale must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("flip_prob must lie in [0, 1]"));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_shear >= 0.0) {
            return Err(Error::config("geometric magnitudes must be non-negative"));
        }
        if !(self.cutmix_alpha > 0.0) {
            return Err(Error::config("cutmix_alpha must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- events

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropBranch {
    Time,
    Area,
    Random,
    Identity,
}

/// Removes events with `t0 <= t < t0 + ratio * span`, where `span` is the
/// stream's last minus first timestamp.
pub fn drop_by_time(stream: &EventStream, ratio: f64, t0: f64) -> EventStream {
    let span = stream_span(stream);
    let t1 = t0 + ratio * span;
    keep(stream, |e| {
        let t = e.t_us as f64;
        !(t >= t0 && t < t1)
    })
}

/// Removes events inside the box `[x0, x0 + bw) x [y0, y0 + bh)` whose sides
/// are `sqrt(ratio)` of the sensor sides.
pub fn drop_by_area(stream: &EventStream, ratio: f64, x0: f64, y0: f64) -> EventStream {
    let (bw, bh) = area_box(stream, ratio);
    keep(stream, |e| {
        let (x, y) = (e.x as f64, e.y as f64);
        !(x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh)
    })
}

/// Removes a uniform sample of `floor(ratio * n)` events.
pub fn drop_random(stream: &EventStream, ratio: f64, rng: &mut Rng) -> EventStream {
    let n = stream.len();
    let k = (ratio * n as f64).floor() as usize;
    let mut dropped = vec![false; n];
    for i in rng.sample_indices(n, k.min(n)) {
        dropped[i] = true;
    }
    let events = stream
        .events()
        .iter()
        .zip(&dropped)
        .filter(|(_, &d)| !d)
        .map(|(e, _)| *e)
        .collect();
    stream.with_events(events)
}

fn stream_span(stream: &EventStream) -> f64 {
    match (stream.events().first(), stream.events().last()) {
        (Some(a), Some(b)) => (b.t_us - a.t_us) as f64,
        _ => 0.0,
    }
}

fn area_box(stream: &EventStream, ratio: f64) -> (f64, f64) {
    let side = ratio.sqrt();
    (stream.width() as f64 * side, stream.height() as f64 * side)
}

fn keep(stream: &EventStream, pred: impl Fn(&Event) -> bool) -> EventStream {
    stream.with_events(stream.events().iter().copied().filter(pred).collect())
}

/// Applies the given branch with a uniformly placed window or box.
pub fn event_drop_with(
    stream: &EventStream,
    branch: DropBranch,
    ratio: f64,
    rng: &mut Rng,
) -> EventStream {
    match branch {
        DropBranch::Identity => stream.clone(),
        DropBranch::Random => drop_random(stream, ratio, rng),
        DropBranch::Time => {
            let first = stream.events().first().map_or(0.0, |e| e.t_us as f64);
            let span = stream_span(stream);
            let t0 = first + rng.uniform() * (1.0 - ratio) * span;
            drop_by_time(stream, ratio, t0)
        }
        DropBranch::Area => {
            let (bw, bh) = area_box(stream, ratio);
            let x0 = rng.uniform() * (stream.width() as f64 - bw);
            let y0 = rng.uniform() * (stream.height() as f64 - bh);
            drop_by_area(stream, ratio, x0, y0)
        }
    }
}

/// Picks one of drop-by-time, drop-by-area, drop-random or identity
/// uniformly, with a ratio from `{0.1, ..., 0.9} * max_drop_ratio`.
pub fn event_drop(stream: &EventStream, policy: &AugmentPolicy, rng: &mut Rng) -> EventStream {
    let branch = [
        DropBranch::Time,
        DropBranch::Area,
        DropBranch::Random,
        DropBranch::Identity,
    ][rng.below(4)];
    let ratio = (rng.below(9) + 1) as f64 / 10.0 * policy.max_drop_ratio;
    event_drop_with(stream, branch, ratio, rng)
}

// ---------------------------------------------------------------- frames

fn plane_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(Error::shape(format!(
            "spatial augmentation needs [.., H, W], got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((t.len() / (h * w), h, w))
}

/// Builds a new tensor whose every plane pixel is `f(plane, x, y)`.
fn map_planes(t: &Tensor, f: impl Fn(&[f32], usize, usize) -> f32) -> Result<Tensor> {
    let (planes, h, w) = plane_dims(t)?;
    let mut out = Vec::with_capacity(t.len());
    for p in 0..planes {
        let plane = &t.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                out.push(f(plane, x, y));
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Bilinear sample with zero outside the plane.
fn bilinear(plane: &[f32], h: usize, w: usize, fx: f64, fy: f64) -> f32 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (ax, ay) = (fx - x0, fy - y0);
    let at = |x: f64, y: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            0.0
        } else {
            plane[y as usize * w + x as usize] as f64
        }
    };
    let v = at(x0, y0) * (1.0 - ax) * (1.0 - ay)
        + at(x0 + 1.0, y0) * ax * (1.0 - ay)
        + at(x0, y0 + 1.0) * (1.0 - ax) * ay
        + at(x0 + 1.0, y0 + 1.0) * ax * ay;
    v as f32
}

pub fn flip_horizontal(t: &Tensor) -> Result<Tensor> {
    let (_, _, w) = plane_dims(t)?;
    map_planes(t, |p, x, y| p[y * w + (w - 1 - x)])
}

/// Cyclic shift by `(dx, dy)` pixels.
pub fn roll(t: &Tensor, dx: isize, dy: isize) -> Result<Tensor> {
    let (_, h, w) = plane_dims(t)?;
    map_planes(t, |p, x, y| {
        let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
        let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
        p[sy * w + sx]
    })
}

/// Rotation about the plane centre, bilinear, zero fill.
pub fn rotate(t: &Tensor, degrees: f64) -> Result<Tensor> {
    let (_, h, w) = plane_dims(t)?;
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    map_planes(t, |p, x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        bilinear(p, h, w, c * dx + s * dy + cx, -s * dx + c * dy + cy)
    })
}

/// Horizontal shear `x' = x + factor * (y - cy)`, bilinear, zero fill.
pub fn shear(t: &Tensor, factor: f64) -> Result<Tensor> {
    let (_, h, w) = plane_dims(t)?;
    let cy = (h as f64 - 1.0) / 2.0;
    map_planes(t, |p, x, y| {
        bilinear(p, h, w, x as f64 - factor * (y as f64 - cy), y as f64)
    })
}

/// Zeroes the box `[x0, x0 + bw) x [y0, y0 + bh)`.
pub fn cutout(t: &Tensor, x0: usize, y0: usize, bw: usize, bh: usize) -> Result<Tensor> {
    let (_, _, w) = plane_dims(t)?;
    map_planes(t, |p, x, y| {
        if x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh {
            0.0
        } else {
            p[y * w + x]
        }
    })
}

/// Box of roughly `area_fraction` of the plane, uniformly placed.
fn random_box(h: usize, w: usize, area_fraction: f64, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let side = area_fraction.clamp(0.0, 1.0).sqrt();
    let bw = ((w as f64 * side).round() as usize).min(w);
    let bh = ((h as f64 * side).round() as usize).min(h);
    let x0 = rng.below(w - bw + 1);
    let y0 = rng.below(h - bh + 1);
    (x0, y0, bw, bh)
}

/// Pastes the box `[x0, x0 + bw) x [y0, y0 + bh)` of `b` into `a`. Returns
/// the mixed tensor and the fraction of `a` that survives.
pub fn cutmix(
    a: &Tensor,
    b: &Tensor,
    x0: usize,
    y0: usize,
    bw: usize,
    bh: usize,
) -> Result<(Tensor, f64)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "cutmix partners differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (planes, h, w) = plane_dims(a)?;
    if x0 + bw > w || y0 + bh > h {
        return Err(Error::shape("cutmix box exceeds the frame"));
    }
    let mut out = a.clone();
    let data = out.data_mut();
    for p in 0..planes {
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let i = (p * h + y) * w + x;
                data[i] = b.data()[i];
            }
        }
    }
    Ok((out, 1.0 - (bw * bh) as f64 / (w * h) as f64))
}

/// `lambda * y1 + (1 - lambda) * y2` over one-hot labels.
pub fn mix_labels(y1: u32, y2: u32, classes: usize, lambda: f64) -> Vec<f32> {
    let mut soft = vec![0f32; classes];
    soft[y1 as usize] += lambda as f32;
    soft[y2 as usize] += (1.0 - lambda) as f32;
    soft
}

pub fn one_hot(label: u32, classes: usize) -> Vec<f32> {
    let mut v = vec![0f32; classes];
    v[label as usize] = 1.0;
    v
}

/// Flip with probability `flip_prob`, one of roll, rotation, cutout or
/// shear chosen uniformly, then CutMix with `second`. Every transform acts
/// on all frames alike. Returns the augmented frames (labelled as `first`)
/// and the soft label.
pub fn nda_augment(
    first: &FrameTensor,
    second: &FrameTensor,
    classes: usize,
    policy: &AugmentPolicy,
    rng: &mut Rng,
) -> Result<(FrameTensor, Vec<f32>)> {
    if first.tensor.shape() != second.tensor.shape() {
        return Err(Error::shape(format!(
            "NDA pair differs in shape: {:?} vs {:?}",
            first.tensor.shape(),
            second.tensor.shape()
        )));
    }
    let label_ok = |l: u32| (l as usize) < classes;
    if !label_ok(first.label) || !label_ok(second.label) {
        return Err(Error::shape(format!("labels exceed {classes} classes")));
    }
    let (_, h, w) = plane_dims(&first.tensor)?;
    let mut t = if rng.bernoulli(policy.flip_prob) {
        flip_horizontal(&first.tensor)?
    } else {
        first.tensor.clone()
    };
    t = match rng.below(4) {
        0 => {
            let m = policy.max_shift as isize;
            let dx = rng.below(2 * policy.max_shift + 1) as isize - m;
            let dy = rng.below(2 * policy.max_shift + 1) as isize - m;
            roll(&t, dx, dy)?
        }
        1 => rotate(&t, rng.uniform_range(-1.0, 1.0) * policy.max_rotation_deg)?,
        2 => {
            let (x0, y0, bw, bh) = random_box(h, w, rng.uniform() * policy.max_cutout_area, rng);
            cutout(&t, x0, y0, bw, bh)?
        }
        _ => shear(&t, rng.uniform_range(-1.0, 1.0) * policy.max_shear)?,
    };
    let lambda = rng.beta(policy.cutmix_alpha, policy.cutmix_alpha);
    let (x0, y0, bw, bh) = random_box(h, w, 1.0 - lambda, rng);
    let (mixed, lambda) = cutmix(&t, &second.tensor, x0, y0, bw, bh)?;
    let soft = mix_labels(first.label, second.label, classes, lambda);
    Ok((FrameTensor::new(mixed, first.label)?, soft))
}

// ---------------------------------------------------------------- static

/// Crops `[x0, x0 + cw) x [y0, y0 + ch)` and resizes it back to the plane
/// size with bilinear interpolation (corner-aligned).
pub fn crop_resize(t: &Tensor, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<Tensor> {
    let (_, h, w) = plane_dims(t)?;
    if cw == 0 || ch == 0 || x0 + cw > w || y0 + ch > h {
        return Err(Error::shape("crop window outside the image"));
    }
    let scale = |out: usize, inp: usize| {
        if out > 1 {
            (inp as f64 - 1.0) / (out as f64 - 1.0)
        } else {
            0.0
        }
    };
    let (sx, sy) = (scale(w, cw), scale(h, ch));
    map_planes(t, |p, x, y| {
        let fx = x0 as f64 + x as f64 * sx;
        let fy = y0 as f64 + y as f64 * sy;
        // clamp to the crop so the far edge never reads past it
        let fx = fx.min((x0 + cw - 1) as f64);
        let fy = fy.min((y0 + ch - 1) as f64);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (ax, ay) = (fx - ix as f64, fy - iy as f64);
        let nx = (ix + 1).min(x0 + cw - 1);
        let ny = (iy + 1).min(y0 + ch - 1);
        let v = |xx: usize, yy: usize| p[yy * w + xx] as f64;
        (v(ix, iy) * (1.0 - ax) * (1.0 - ay)
            + v(nx, iy) * ax * (1.0 - ay)
            + v(ix, ny) * (1.0 - ax) * ay
            + v(nx, ny) * ax * ay) as f32
    })
}

/// Flip with probability `flip_prob`, then a random crop with side scale in
/// `[min_crop_scale, 1]` resized back to the original size.
pub fn static_augment(img: &StaticImage, policy: &AugmentPolicy, rng: &mut Rng) -> Result<StaticImage> {
    let (_, h, w) = plane_dims(&img.tensor)?;
    let t = if rng.bernoulli(policy.flip_prob) {
        flip_horizontal(&img.tensor)?
    } else {
        img.tensor.clone()
    };
    let s = rng.uniform_range(policy.min_crop_scale, 1.0);
    let cw = ((w as f64 * s).round() as usize).clamp(1, w);
    let ch = ((h as f64 * s).round() as usize).clamp(1, h);
    let x0 = rng.below(w - cw + 1);
    let y0 = rng.below(h - ch + 1);
    StaticImage::new(crop_resize(&t, x0, y0, cw, ch)?, img.label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn ev(t: u32, x: u16, y: u16) -> Event {
        Event {
            t_us: t,
            x,
            y,
            polarity: 1,
        }
    }

    fn four() -> EventStream {
        EventStream::new(4, 4, vec![ev(0, 0, 0), ev(10, 1, 1), ev(20, 2, 2), ev(30, 3, 3)], 0)
            .unwrap()
    }

    #[test]
    fn identity_branch() {
        let s = four();
        assert_eq!(event_drop_with(&s, DropBranch::Identity, 0.5, &mut Rng::new(0)), s);
    }

    #[test]
    fn drop_random_count() {
        assert_eq!(drop_random(&four(), 0.5, &mut Rng::new(3)).len(), 2);
    }

    #[test]
    fn drop_time_window() {
        let out = drop_by_time(&four(), 0.25, 0.0);
        let ts: Vec<u32> = out.events().iter().map(|e| e.t_us).collect();
        assert_eq!(ts, vec![10, 20, 30]);
    }

    #[test]
    fn drop_area_box() {
        // 0.25 of a 4x4 sensor is a 2x2 box
        let out = drop_by_area(&four(), 0.25, 0.0, 0.0);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn flip_mirrors_index() {
        let t = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(flip_horizontal(&t).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let mut rng = Rng::new(1);
        let t = Tensor::new(vec![2, 2, 3, 4], (0..48).map(|_| rng.uniform() as f32).collect()).unwrap();
        assert_eq!(roll(&t, 0, 0).unwrap(), t);
        assert_eq!(rotate(&t, 0.0).unwrap(), t);
        assert_eq!(shear(&t, 0.0).unwrap(), t);
        let other = Tensor::zeros(t.shape());
        let (m, lambda) = cutmix(&t, &other, 0, 0, 0, 0).unwrap();
        assert_eq!(m, t);
        assert_eq!(lambda, 1.0);
        assert_eq!(mix_labels(2, 0, 3, lambda), one_hot(2, 3));
    }

    #[test]
    fn cutmix_soft_label() {
        let a = Tensor::full(&[1, 2, 4, 4], 1.0);
        let b = Tensor::full(&[1, 2, 4, 4], 3.0);
        let (m, lambda) = cutmix(&a, &b, 1, 1, 2, 2).unwrap();
        assert_eq!(lambda, 0.75);
        assert_eq!(mix_labels(0, 1, 4, lambda), vec![0.75, 0.25, 0.0, 0.0]);
        assert_eq!(m.sum(), 32.0 + 2.0 * 4.0 * 2.0);
        assert!(cutmix(&a, &Tensor::zeros(&[1, 2, 4, 3]), 0, 0, 1, 1).is_err());
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = StaticImage::new(Tensor::new(vec![1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(), 0).unwrap();
        assert_eq!(flip_horizontal(&flip_horizontal(&img.tensor).unwrap()).unwrap(), img.tensor);
    }

    #[test]
    fn full_crop_is_identity() {
        let mut rng = Rng::new(5);
        let t = Tensor::new(vec![3, 5, 7], (0..105).map(|_| rng.uniform() as f32).collect()).unwrap();
        let out = crop_resize(&t, 0, 0, 7, 5).unwrap();
        assert!(out.max_abs_diff(&t).unwrap() <= 1e-6);
        let policy = AugmentPolicy {
            kind: AugmentKind::StaticBasic,
            flip_prob: 0.0,
            min_crop_scale: 1.0,
            ..AugmentPolicy::default()
        };
        let img = StaticImage::new(t.clone(), 2).unwrap();
        let aug = static_augment(&img, &policy, &mut rng).unwrap();
        assert!(aug.tensor.max_abs_diff(&t).unwrap() <= 1e-6);
    }

    #[test]
    fn constant_survives_crop() {
        let img = StaticImage::new(Tensor::full(&[1, 8, 8], 0.4), 0).unwrap();
        let policy = AugmentPolicy {
            min_crop_scale: 0.3,
            ..AugmentPolicy::default()
        };
        let mut rng = Rng::new(2);
        for _ in 0..10 {
            let out = static_augment(&img, &policy, &mut rng).unwrap();
            assert!(out.tensor.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy::default().validate().is_ok());
        let bad = AugmentPolicy {
            max_drop_ratio: 1.0,
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"kind": "nda", "max_shift": 3}"#;
        let p: AugmentPolicy = serde_json::from_str(json).unwrap();
        assert_eq!(p.kind, AugmentKind::Nda);
        assert_eq!(p.max_shift, 3);
    }

    fn random_stream(seed: u64, n: usize) -> EventStream {
        let mut rng = Rng::new(seed);
        let events = (0..n)
            .map(|_| Event {
                t_us: rng.below(1000) as u32,
                x: rng.below(8) as u16,
                y: rng.below(6) as u16,
                polarity: rng.below(2) as u8,
            })
            .collect();
        EventStream::new(8, 6, events, 1).unwrap()
    }

    fn is_subsequence(sub: &[Event], full: &[Event]) -> bool {
        let mut it = full.iter();
        sub.iter().all(|e| it.any(|f| f == e))
    }

    proptest! {
        #[test]
        fn event_drop_yields_subset(seed in 0u64..500, n in 1usize..120) {
            let s = random_stream(seed, n);
            let policy = AugmentPolicy::of_kind(AugmentKind::EventDrop);
            let mut rng = Rng::new(seed + 1);
            for branch in [DropBranch::Time, DropBranch::Area, DropBranch::Random] {
                let out = event_drop_with(&s, branch, 0.4, &mut rng);
                prop_assert!(out.len() <= s.len());
                prop_assert!(is_subsequence(out.events(), s.events()));
            }
            let a = event_drop(&s, &policy, &mut Rng::new(seed));
            let b = event_drop(&s, &policy, &mut Rng::new(seed));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn nda_preserves_shape_and_sign(seed in 0u64..300) {
            let mut rng = Rng::new(seed);
            let mk = |rng: &mut Rng, label| {
                let data = (0..3 * 2 * 6 * 6).map(|_| rng.below(4) as f32).collect();
                FrameTensor::new(Tensor::new(vec![3, 2, 6, 6], data).unwrap(), label).unwrap()
            };
            let a = mk(&mut rng, 1);
            let b = mk(&mut rng, 4);
            let policy = AugmentPolicy::of_kind(AugmentKind::Nda);
            let (out, soft) = nda_augment(&a, &b, 5, &policy, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(out.tensor.shape(), a.tensor.shape());
            prop_assert!(out.tensor.data().iter().all(|&v| v >= 0.0));
            prop_assert!((soft.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            let (again, soft2) = nda_augment(&a, &b, 5, &policy, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(again, out);
            prop_assert_eq!(soft2, soft);
        }
    }
}
