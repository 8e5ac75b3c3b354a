//! Event streams, frame accumulation, static images, synthetic data, and
//! the target/shadow splits.

mod io;
mod split;
mod synth;

pub use io::{
    read_event_dataset, read_events, read_idx_images, read_idx_labels, read_labeled_images,
    write_event_dataset, write_events, write_labeled_images, EVT1_MAGIC,
};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{
    render_events, synth_moving_shape, synth_static_shape, ShapeKind, ShapeMotion, SynthConfig,
};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One DVS event. `polarity` is 1 for brightness increase, 0 for decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t_us: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: u8,
}

/// Time-sorted events from one recording, with its class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
    label: u32,
}

impl EventStream {
    /// Validates bounds and polarity; events are stably sorted by timestamp.
    pub fn new(width: u16, height: u16, mut events: Vec<Event>, label: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("event sensor dims must be positive"));
        }
        for (i, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::shape(format!(
                    "event {i} at ({}, {}) outside {width}x{height} sensor",
                    e.x, e.y
                )));
            }
            if e.polarity > 1 {
                return Err(Error::shape(format!(
                    "event {i} has polarity {}",
                    e.polarity
                )));
            }
        }
        events.sort_by_key(|e| e.t_us);
        Ok(Self {
            width,
            height,
            events,
            label,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn label(&self) -> u32 {
        self.label
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Same sensor and label, different events (kept in the given order,
    /// which must already be sorted).
    pub(crate) fn with_events(&self, events: Vec<Event>) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0].t_us <= w[1].t_us));
        Self {
            width: self.width,
            height: self.height,
            events,
            label: self.label,
        }
    }
}

/// `[T, 2, H, W]` event counts of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pub tensor: Tensor,
    pub label: u32,
}

impl FrameTensor {
    pub fn new(tensor: Tensor, label: u32) -> Result<Self> {
        if tensor.ndim() != 4 || tensor.shape()[1] != 2 {
            return Err(Error::shape(format!(
                "frame tensor must be [T, 2, H, W], got {:?}",
                tensor.shape()
            )));
        }
        if tensor.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::shape("frame counts must be non-negative"));
        }
        Ok(Self { tensor, label })
    }

    pub fn time_steps(&self) -> usize {
        self.tensor.shape()[0]
    }
}

/// `[C, H, W]` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticImage {
    pub tensor: Tensor,
    pub label: u32,
}

impl StaticImage {
    /// Clamps values into `[0, 1]`.
    pub fn new(mut tensor: Tensor, label: u32) -> Result<Self> {
        if tensor.ndim() != 3 {
            return Err(Error::shape(format!(
                "static image must be [C, H, W], got {:?}",
                tensor.shape()
            )));
        }
        tensor.check_finite("static image")?;
        tensor
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Self { tensor, label })
    }
}

/// Accumulates events into `T` frames of equal event count; the first
/// `n mod T` bins take one extra event.
pub fn accumulate_frames(stream: &EventStream, time_steps: usize) -> Result<FrameTensor> {
    let n = stream.len();
    if n == 0 {
        return Err(Error::shape("cannot accumulate an empty event stream"));
    }
    if time_steps == 0 {
        return Err(Error::config("time steps must be >= 1"));
    }
    if time_steps > n {
        return Err(Error::shape(format!(
            "{time_steps} frames requested from only {n} events"
        )));
    }
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut t = Tensor::zeros(&[time_steps, 2, h, w]);
    let data = t.data_mut();
    let base = n / time_steps;
    let extra = n % time_steps;
    let mut cursor = 0;
    for bin in 0..time_steps {
        let size = base + usize::from(bin < extra);
        for e in &stream.events[cursor..cursor + size] {
            let idx = ((bin * 2 + e.polarity as usize) * h + e.y as usize) * w + e.x as usize;
            data[idx] += 1.0;
        }
        cursor += size;
    }
    FrameTensor::new(t, stream.label)
}

/// Divides every frame cell by the largest count seen at its
/// `(polarity, y, x)` location across all frames and all batch members.
/// Silent locations map to 0. Returns one normalized `[T, 2, H, W]` stack
/// per input.
pub fn normalize_frame_batch(batch: &[FrameTensor]) -> Result<Vec<Tensor>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::shape("cannot normalize an empty batch"))?;
    let shape = first.tensor.shape().to_vec();
    for f in batch {
        if f.tensor.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "batch mixes frame shapes {:?} and {:?}",
                shape,
                f.tensor.shape()
            )));
        }
    }
    let t_steps = shape[0];
    let loc = shape[1] * shape[2] * shape[3];
    let mut max = vec![0f32; loc];
    for f in batch {
        for t in 0..t_steps {
            let frame = &f.tensor.data()[t * loc..(t + 1) * loc];
            for (m, &v) in max.iter_mut().zip(frame) {
                *m = m.max(v);
            }
        }
    }
    Ok(batch
        .iter()
        .map(|f| {
            let mut out = f.tensor.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let m = max[i % loc];
                *v = if m > 0.0 { *v / m } else { 0.0 };
            }
            out
        })
        .collect())
}

/// Splits normalized frame stacks into two-channel images, one per frame,
/// each carrying its parent's label.
pub fn normalize_frames_for_ann(batch: &[FrameTensor]) -> Result<Vec<StaticImage>> {
    let stacks = normalize_frame_batch(batch)?;
    let mut out = Vec::new();
    for (stack, parent) in stacks.iter().zip(batch) {
        for t in 0..stack.shape()[0] {
            out.push(StaticImage::new(stack.slice_outer(t)?, parent.label)?);
        }
    }
    Ok(out)
}

/// Repeats a static image over `T` steps: `[T, C, H, W]`.
pub fn replicate_static_for_snn(img: &StaticImage, time_steps: usize) -> Result<Tensor> {
    if time_steps == 0 {
        return Err(Error::config("time steps must be >= 1"));
    }
    Tensor::stack(&vec![img.tensor.clone(); time_steps])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: u32, x: u16, y: u16, p: u8) -> Event {
        Event {
            t_us: t,
            x,
            y,
            polarity: p,
        }
    }

    fn stream(n: usize) -> EventStream {
        let events = (0..n)
            .map(|i| ev(i as u32 * 10, (i % 4) as u16, (i / 4 % 4) as u16, (i % 2) as u8))
            .collect();
        EventStream::new(4, 4, events, 3).unwrap()
    }

    fn bin_sizes(f: &FrameTensor) -> Vec<f64> {
        (0..f.time_steps())
            .map(|t| f.tensor.slice_outer(t).unwrap().sum())
            .collect()
    }

    #[test]
    fn equal_count_bins() {
        let f = accumulate_frames(&stream(8), 4).unwrap();
        assert_eq!(bin_sizes(&f), vec![2.0; 4]);
        assert_eq!(f.tensor.sum(), 8.0);
        assert_eq!(f.label, 3);
    }

    #[test]
    fn remainder_goes_to_leading_bins() {
        let f = accumulate_frames(&stream(10), 4).unwrap();
        assert_eq!(bin_sizes(&f), vec![3.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn single_event_cell() {
        let s = EventStream::new(4, 2, vec![ev(0, 1, 0, 1)], 0).unwrap();
        let f = accumulate_frames(&s, 1).unwrap();
        assert_eq!(f.tensor.shape(), &[1, 2, 2, 4]);
        // [0, 1, 0, 1] in [T, P, H, W]
        let idx = ((0 * 2 + 1) * 2 + 0) * 4 + 1;
        for (i, &v) in f.tensor.data().iter().enumerate() {
            assert_eq!(v, if i == idx { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn accumulate_errors() {
        assert!(accumulate_frames(&EventStream::new(2, 2, vec![], 0).unwrap(), 1).is_err());
        assert!(accumulate_frames(&stream(3), 4).is_err());
        assert!(accumulate_frames(&stream(3), 0).is_err());
    }

    #[test]
    fn stream_rejects_out_of_bounds() {
        assert!(EventStream::new(4, 4, vec![ev(0, 4, 0, 0)], 0).is_err());
        assert!(EventStream::new(4, 4, vec![ev(0, 0, 0, 2)], 0).is_err());
    }

    #[test]
    fn normalization_divides_by_location_max() {
        let mut t = Tensor::zeros(&[1, 2, 1, 1]);
        t.data_mut()[0] = 2.0;
        let mut u = Tensor::zeros(&[1, 2, 1, 1]);
        u.data_mut()[0] = 4.0;
        let a = FrameTensor::new(t, 0).unwrap();
        let b = FrameTensor::new(u, 1).unwrap();
        let out = normalize_frames_for_ann(&[a, b]).unwrap();
        assert_eq!(out[0].tensor.data(), &[0.5, 0.0]);
        assert_eq!(out[1].tensor.data(), &[1.0, 0.0]);
    }

    #[test]
    fn normalization_of_silence_is_zero() {
        let z = FrameTensor::new(Tensor::zeros(&[3, 2, 2, 2]), 0).unwrap();
        let out = normalize_frames_for_ann(&[z.clone(), z]).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|i| i.tensor.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn normalization_labels_every_frame() {
        let a = accumulate_frames(&EventStream::new(4, 4, stream(6).events, 7).unwrap(), 2).unwrap();
        let b = accumulate_frames(&EventStream::new(4, 4, stream(6).events, 9).unwrap(), 2).unwrap();
        let out = normalize_frames_for_ann(&[a, b]).unwrap();
        let labels: Vec<u32> = out.iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![7, 7, 9, 9]);
        assert!(out.iter().all(|i| i.tensor.shape() == [2, 4, 4]));
    }

    #[test]
    fn normalization_rejects_mixed_shapes() {
        let a = FrameTensor::new(Tensor::zeros(&[2, 2, 2, 2]), 0).unwrap();
        let b = FrameTensor::new(Tensor::zeros(&[3, 2, 2, 2]), 0).unwrap();
        assert!(normalize_frames_for_ann(&[a, b]).is_err());
    }

    #[test]
    fn replication() {
        let img = StaticImage::new(Tensor::new(vec![1, 1, 2], vec![0.25, 0.5]).unwrap(), 1).unwrap();
        let r = replicate_static_for_snn(&img, 3).unwrap();
        assert_eq!(r.shape(), &[3, 1, 1, 2]);
        for t in 0..3 {
            assert_eq!(r.slice_outer(t).unwrap(), img.tensor);
        }
        assert_eq!(r.sum(), 3.0 * img.tensor.sum());
        let one = replicate_static_for_snn(&img, 1).unwrap();
        assert_eq!(one.data(), img.tensor.data());
    }

    #[test]
    fn static_image_clamps() {
        let img = StaticImage::new(Tensor::new(vec![1, 1, 2], vec![-0.5, 1.5]).unwrap(), 0).unwrap();
        assert_eq!(img.tensor.data(), &[0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn accumulation_conserves_counts_per_polarity(
            raw in proptest::collection::vec((0u32..1000, 0u16..6, 0u16..5, 0u8..2), 1..200),
            t in 1usize..8,
        ) {
            prop_assume!(t <= raw.len());
            let events: Vec<Event> = raw.iter().map(|&(t, x, y, p)| ev(t, x, y, p)).collect();
            let pos = events.iter().filter(|e| e.polarity == 1).count() as f64;
            let s = EventStream::new(6, 5, events, 0).unwrap();
            let f = accumulate_frames(&s, t).unwrap();
            let plane = 30;
            let mut pos_sum = 0.0;
            for b in 0..t {
                pos_sum += f.tensor.data()[(b * 2 + 1) * plane..(b * 2 + 2) * plane]
                    .iter().map(|&v| v as f64).sum::<f64>();
            }
            prop_assert_eq!(pos_sum, pos);
            prop_assert_eq!(f.tensor.sum(), raw.len() as f64);
        }

        #[test]
        fn normalized_values_in_unit_interval(
            counts in proptest::collection::vec(0u8..6, 2 * 2 * 2 * 3 * 3),
        ) {
            let data: Vec<f32> = counts.iter().map(|&c| c as f32).collect();
            let half = data.len() / 2;
            let a = FrameTensor::new(Tensor::new(vec![2, 2, 3, 3], data[..half].to_vec()).unwrap(), 0).unwrap();
            let b = FrameTensor::new(Tensor::new(vec![2, 2, 3, 3], data[half..].to_vec()).unwrap(), 1).unwrap();
            let out = normalize_frame_batch(&[a, b]).unwrap();
            let all: Vec<f32> = out.iter().flat_map(|t| t.data().to_vec()).collect();
            prop_assert!(all.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if counts.iter().any(|&c| c > 0) {
                prop_assert!(all.iter().any(|&v| v == 1.0));
            }
        }
    }
}
