//! Dataset loading and the per-part example sources used by training,
//! conversion and feature extraction.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::{event_drop, nda_augment, one_hot, static_augment, AugmentKind, AugmentPolicy};
use crate::error::{Error, Result};
use crate::eventdata::{
    accumulate_frames, normalize_frame_batch, normalize_frames_for_ann, read_event_dataset, read_idx_images,
    read_idx_labels, read_labeled_images, write_event_dataset, write_labeled_images, replicate_static_for_snn, synth_moving_shape, synth_static_shape,
    EventStream, FrameTensor, StaticImage, SynthConfig,
};
use crate::numerics::{Rng, Tensor};
use crate::training::{DataSource, Example};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Moving shapes rendered as DVS events; sample `i` has class `i mod K`.
    SyntheticEvents {
        #[serde(default)]
        synth: SynthConfig,
        samples: usize,
    },
    /// Still shapes as images; sample `i` has class `i mod K`.
    SyntheticStatic {
        #[serde(default)]
        synth: SynthConfig,
        samples: usize,
    },
    /// Concatenated EVT1 records.
    EventFile {
        path: PathBuf,
        #[serde(default)]
        predefined_train: Option<usize>,
    },
    /// FT32 image tensor with a `.labels` sidecar.
    ImageFile {
        path: PathBuf,
        #[serde(default)]
        predefined_train: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        predefined_train: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::SyntheticEvents {
            synth: SynthConfig::default(),
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Events(Vec<EventStream>),
    Static(Vec<StaticImage>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Samples,
    pub classes: usize,
    /// Leading samples that form the original training set, if any.
    pub predefined_train: Option<usize>,
}

impl DatasetSpec {
    pub fn is_events(&self) -> bool {
        matches!(self, DatasetSpec::SyntheticEvents { .. } | DatasetSpec::EventFile { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::SyntheticEvents { synth, samples } | DatasetSpec::SyntheticStatic { synth, samples } => {
                synth.validate()?;
                if *samples < 4 {
                    return Err(Error::config("synthetic datasets need at least 4 samples"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn load(&self, rng: &Rng) -> Result<Dataset> {
        self.validate()?;
        let dataset = match self {
            DatasetSpec::SyntheticEvents { synth, samples } => Dataset {
                samples: Samples::Events(
                    (0..*samples)
                        .map(|i| synth_moving_shape(i % synth.classes, synth, &mut rng.split(i as u64)))
                        .collect::<Result<_>>()?,
                ),
                classes: synth.classes,
                predefined_train: None,
            },
            DatasetSpec::SyntheticStatic { synth, samples } => Dataset {
                samples: Samples::Static(
                    (0..*samples)
                        .map(|i| synth_static_shape(i % synth.classes, synth, &mut rng.split(i as u64)))
                        .collect::<Result<_>>()?,
                ),
                classes: synth.classes,
                predefined_train: None,
            },
            DatasetSpec::EventFile { path, predefined_train } => {
                let streams = read_event_dataset(path)?;
                let classes = streams.iter().map(|s| s.label() as usize + 1).max().unwrap_or(0);
                Dataset {
                    samples: Samples::Events(streams),
                    classes,
                    predefined_train: *predefined_train,
                }
            }
            DatasetSpec::ImageFile { path, predefined_train } => {
                let images = read_labeled_images(path)?;
                Dataset {
                    classes: images.iter().map(|s| s.label as usize + 1).max().unwrap_or(0),
                    samples: Samples::Static(images),
                    predefined_train: *predefined_train,
                }
            }
            DatasetSpec::Idx {
                images,
                labels,
                predefined_train,
            } => {
                let t = read_idx_images(images)?;
                let l = read_idx_labels(labels)?;
                if l.len() != t.shape()[0] {
                    return Err(Error::shape(format!("{} labels for {} IDX images", l.len(), t.shape()[0])));
                }
                let images = l
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| StaticImage::new(t.slice_outer(i)?, y))
                    .collect::<Result<Vec<_>>>()?;
                Dataset {
                    classes: l.iter().map(|&y| y as usize + 1).max().unwrap_or(0),
                    samples: Samples::Static(images),
                    predefined_train: *predefined_train,
                }
            }
        };
        if dataset.len() < 4 || dataset.classes < 2 {
            return Err(Error::config("dataset needs at least 4 samples and 2 classes"));
        }
        Ok(dataset)
    }
}

impl Dataset {
    /// Writes the samples as an EVT1 event file or an FT32 image file (with
    /// `.labels` sidecar) and returns a spec that loads them back.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<DatasetSpec> {
        let path = path.as_ref().to_path_buf();
        match &self.samples {
            Samples::Events(s) => {
                write_event_dataset(&path, s)?;
                Ok(DatasetSpec::EventFile {
                    path,
                    predefined_train: self.predefined_train,
                })
            }
            Samples::Static(s) => {
                write_labeled_images(&path, s)?;
                Ok(DatasetSpec::ImageFile {
                    path,
                    predefined_train: self.predefined_train,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Events(s) => s.len(),
            Samples::Static(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<u32> {
        match &self.samples {
            Samples::Events(s) => s.iter().map(EventStream::label).collect(),
            Samples::Static(s) => s.iter().map(|i| i.label).collect(),
        }
    }

    /// Per-step input shape: `[2, H, W]` for events, `[C, H, W]` for images.
    pub fn input_shape(&self) -> Result<Vec<usize>> {
        match &self.samples {
            Samples::Events(s) => {
                let f = s.first().ok_or_else(|| Error::config("empty dataset"))?;
                if s.iter().any(|x| x.width() != f.width() || x.height() != f.height()) {
                    return Err(Error::shape("event streams differ in sensor size"));
                }
                Ok(vec![2, f.height() as usize, f.width() as usize])
            }
            Samples::Static(s) => {
                let f = s.first().ok_or_else(|| Error::config("empty dataset"))?;
                if s.iter().any(|x| x.tensor.shape() != f.tensor.shape()) {
                    return Err(Error::shape("images differ in shape"));
                }
                Ok(f.tensor.shape().to_vec())
            }
        }
    }
}

/// How samples are presented to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Backprop SNN: raw event-count frames, or images repeated `T` times.
    Spiking,
    /// ANN: frames normalized per batch; trained frame by frame, evaluated
    /// on the whole stack.
    Ann,
    /// Converted SNN: the ANN's normalized input held for `repeat` steps per
    /// frame (events) or repeated `repeat` times (images).
    Converted { repeat: usize },
}

/// One part (e.g. target train) of a dataset.
pub struct PartSource<'a> {
    data: &'a Dataset,
    indices: Vec<usize>,
    mode: InputMode,
    time_steps: usize,
    augment: AugmentPolicy,
    frames: Vec<FrameTensor>,
    labels: Vec<u32>,
}

impl<'a> PartSource<'a> {
    pub fn new(
        data: &'a Dataset,
        indices: &[usize],
        mode: InputMode,
        time_steps: usize,
        augment: &AugmentPolicy,
    ) -> Result<Self> {
        if time_steps == 0 {
            return Err(Error::config("time steps must be >= 1"));
        }
        match (&data.samples, augment.kind) {
            (Samples::Static(_), AugmentKind::EventDrop | AugmentKind::Nda) => {
                return Err(Error::config("event augmentations need event data"));
            }
            (Samples::Events(_), AugmentKind::StaticBasic) => {
                return Err(Error::config("static augmentation needs image data"));
            }
            _ => {}
        }
        let frames = match &data.samples {
            Samples::Events(s) => indices
                .iter()
                .map(|&i| accumulate_frames(&s[i], time_steps))
                .collect::<Result<_>>()?,
            Samples::Static(_) => Vec::new(),
        };
        let all = data.labels();
        Ok(Self {
            data,
            labels: indices.iter().map(|&i| all[i]).collect(),
            indices: indices.to_vec(),
            mode,
            time_steps,
            augment: augment.clone(),
            frames,
        })
    }

    /// Same part, no augmentation.
    pub fn plain(data: &'a Dataset, indices: &[usize], mode: InputMode, time_steps: usize) -> Result<Self> {
        Self::new(data, indices, mode, time_steps, &AugmentPolicy::default())
    }

    fn classes(&self) -> usize {
        self.data.classes
    }

    fn augmented_frames(&self, local: usize, rng: &mut Rng) -> Result<(FrameTensor, Vec<f32>)> {
        let frames = &self.frames[local];
        let hard = one_hot(frames.label, self.classes());
        match self.augment.kind {
            AugmentKind::EventDrop => {
                let Samples::Events(s) = &self.data.samples else { unreachable!() };
                let stream = &s[self.indices[local]];
                let dropped = event_drop(stream, &self.augment, rng);
                // too few events left for T frames: keep the original
                if dropped.len() < self.time_steps {
                    Ok((frames.clone(), hard))
                } else {
                    Ok((accumulate_frames(&dropped, self.time_steps)?, hard))
                }
            }
            AugmentKind::Nda => {
                let partner = &self.frames[rng.below(self.frames.len())];
                nda_augment(frames, partner, self.classes(), &self.augment, rng)
            }
            _ => Ok((frames.clone(), hard)),
        }
    }

    fn static_item(&self, local: usize, augment: bool, rng: &mut Rng) -> Result<StaticImage> {
        let Samples::Static(s) = &self.data.samples else { unreachable!() };
        let img = &s[self.indices[local]];
        if augment && self.augment.kind == AugmentKind::StaticBasic {
            static_augment(img, &self.augment, rng)
        } else {
            Ok(img.clone())
        }
    }

    fn examples(&self, locals: &[usize], augment: bool, per_frame: bool, rng: &mut Rng) -> Result<Vec<Example>> {
        let classes = self.classes();
        match &self.data.samples {
            Samples::Static(_) => locals
                .iter()
                .map(|&l| {
                    let img = self.static_item(l, augment, rng)?;
                    let input = match self.mode {
                        InputMode::Spiking => replicate_static_for_snn(&img, self.time_steps)?,
                        InputMode::Ann => replicate_static_for_snn(&img, 1)?,
                        InputMode::Converted { repeat } => replicate_static_for_snn(&img, repeat)?,
                    };
                    Ok(Example {
                        input,
                        target: one_hot(img.label, classes),
                        label: img.label,
                    })
                })
                .collect(),
            Samples::Events(_) => {
                let mut items = Vec::with_capacity(locals.len());
                for &l in locals {
                    items.push(if augment {
                        self.augmented_frames(l, rng)?
                    } else {
                        (self.frames[l].clone(), one_hot(self.frames[l].label, classes))
                    });
                }
                match self.mode {
                    InputMode::Spiking => Ok(items
                        .into_iter()
                        .map(|(f, target)| Example {
                            label: f.label,
                            input: f.tensor,
                            target,
                        })
                        .collect()),
                    InputMode::Ann if per_frame => {
                        let frames: Vec<FrameTensor> = items.iter().map(|i| i.0.clone()).collect();
                        let images = normalize_frames_for_ann(&frames)?;
                        let t = self.time_steps;
                        images
                            .into_iter()
                            .enumerate()
                            .map(|(k, img)| {
                                Ok(Example {
                                    input: replicate_static_for_snn(&img, 1)?,
                                    target: items[k / t].1.clone(),
                                    label: img.label,
                                })
                            })
                            .collect()
                    }
                    InputMode::Ann | InputMode::Converted { .. } => {
                        let frames: Vec<FrameTensor> = items.iter().map(|i| i.0.clone()).collect();
                        let stacks = normalize_frame_batch(&frames)?;
                        let repeat = match self.mode {
                            InputMode::Converted { repeat } => repeat,
                            _ => 1,
                        };
                        stacks
                            .into_iter()
                            .zip(items)
                            .map(|(s, (f, target))| {
                                Ok(Example {
                                    input: hold_frames(&s, repeat)?,
                                    target,
                                    label: f.label,
                                })
                            })
                            .collect()
                    }
                }
            }
        }
    }

    /// All per-sample inputs in order, without augmentation.
    pub fn inputs(&self, chunk: usize) -> Result<Vec<Tensor>> {
        let locals: Vec<usize> = (0..self.len()).collect();
        let mut out = Vec::with_capacity(self.len());
        for part in locals.chunks(chunk.max(1)) {
            out.extend(self.eval_batch(part)?.into_iter().map(|e| e.input));
        }
        Ok(out)
    }
}

/// Repeats every step of `[T, ...]` `repeat` times in place order.
fn hold_frames(stack: &Tensor, repeat: usize) -> Result<Tensor> {
    if repeat <= 1 {
        return Ok(stack.clone());
    }
    let mut steps = Vec::with_capacity(stack.shape()[0] * repeat);
    for t in 0..stack.shape()[0] {
        let s = stack.slice_outer(t)?;
        for _ in 0..repeat {
            steps.push(s.clone());
        }
    }
    Tensor::stack(&steps)
}

impl DataSource for PartSource<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    fn batch(&self, indices: &[usize], augment: bool, rng: &mut Rng) -> Result<Vec<Example>> {
        let augment = augment && self.augment.kind != AugmentKind::None;
        self.examples(indices, augment, true, rng)
    }

    fn eval_batch(&self, indices: &[usize]) -> Result<Vec<Example>> {
        self.examples(indices, false, false, &mut Rng::new(0))
    }
}
