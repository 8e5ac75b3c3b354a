//! MDL1 checkpoints: `"MDL1"`, u32 LE header length, a JSON header, then
//! every parameter tensor as an FT32 blob in layer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Family, LayerSpec, NetworkModel, Origin};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MDL1_MAGIC: &[u8; 4] = b"MDL1";

#[derive(Serialize, Deserialize)]
struct Header {
    family: Family,
    preset: String,
    origin: Origin,
    seed: u64,
    time_steps: usize,
    classes: usize,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

pub fn write_model<W: Write>(model: &NetworkModel, w: &mut W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        family: model.family,
        preset: model.preset.clone(),
        origin: model.origin,
        seed: model.seed,
        time_steps: model.time_steps,
        classes: model.classes,
        input_shape: model.input_shape.clone(),
        layers: model.layers.clone(),
    })?;
    let io = |e| Error::io("<mdl1 stream>", e);
    w.write_all(MDL1_MAGIC).map_err(io)?;
    let len = u32::try_from(header.len()).map_err(|_| Error::shape("MDL1 header too large"))?;
    w.write_u32::<LittleEndian>(len).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for p in model.params.iter().flatten() {
        p.write_ft32(w)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<NetworkModel> {
    let trunc = |_| Error::parse("MDL1", "truncated header");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MDL1_MAGIC {
        return Err(Error::parse(
            "MDL1",
            format!("bad magic {magic:?}, expected `MDL1`"),
        ));
    }
    let len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(trunc)?;
    let h: Header = serde_json::from_slice(&buf).map_err(|e| Error::parse("MDL1", e.to_string()))?;
    let mut params = Vec::with_capacity(h.layers.len());
    for layer in &h.layers {
        let mut ps = Vec::new();
        for shape in layer.param_shapes() {
            let t = Tensor::read_ft32(r)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::parse(
                    "MDL1",
                    format!("{} parameter {:?} does not match {shape:?}", layer.name(), t.shape()),
                ));
            }
            ps.push(t);
        }
        params.push(ps);
    }
    let model = NetworkModel {
        family: h.family,
        layers: h.layers,
        params,
        input_shape: h.input_shape,
        classes: h.classes,
        time_steps: h.time_steps,
        preset: h.preset,
        seed: h.seed,
        origin: h.origin,
    };
    model.validate().map_err(|e| Error::parse("MDL1", e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_model(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut BufReader::new(f))
}
