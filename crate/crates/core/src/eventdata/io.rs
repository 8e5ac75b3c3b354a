//! Binary formats: EVT1 event records, labeled FT32 image sets, and IDX
//! image/label import.
//!
//! EVT1 (little-endian): `"EVT1"`, u16 width, u16 height, u32 label,
//! u64 count, then per event u32 t_us, u16 x, u16 y, u8 polarity, u8 pad.
//! An event dataset file is a concatenation of EVT1 records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Event, EventStream, StaticImage};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";

const EVENT_BYTES: u64 = 10;

pub fn write_events<W: Write>(stream: &EventStream, w: &mut W) -> Result<()> {
    let io = |e| Error::io("<evt1 stream>", e);
    w.write_all(EVT1_MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(stream.width()).map_err(io)?;
    w.write_u16::<LittleEndian>(stream.height()).map_err(io)?;
    w.write_u32::<LittleEndian>(stream.label()).map_err(io)?;
    w.write_u64::<LittleEndian>(stream.len() as u64).map_err(io)?;
    for e in stream.events() {
        w.write_u32::<LittleEndian>(e.t_us).map_err(io)?;
        w.write_u16::<LittleEndian>(e.x).map_err(io)?;
        w.write_u16::<LittleEndian>(e.y).map_err(io)?;
        w.write_u8(e.polarity).map_err(io)?;
        w.write_u8(0).map_err(io)?;
    }
    Ok(())
}

pub fn read_events<R: Read>(r: &mut R) -> Result<EventStream> {
    let trunc = |_| Error::parse("EVT1", "truncated record");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != EVT1_MAGIC {
        return Err(Error::parse(
            "EVT1",
            format!("bad magic {magic:?}, expected `EVT1`"),
        ));
    }
    let width = r.read_u16::<LittleEndian>().map_err(trunc)?;
    let height = r.read_u16::<LittleEndian>().map_err(trunc)?;
    let label = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let count = r.read_u64::<LittleEndian>().map_err(trunc)?;
    // guard the allocation against absurd counts in corrupt headers
    let cap = count.min(1 << 24) as usize;
    let mut events = Vec::with_capacity(cap);
    let mut buf = [0u8; EVENT_BYTES as usize];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(trunc)?;
        let mut b = &buf[..];
        let t_us = b.read_u32::<LittleEndian>().map_err(trunc)?;
        let x = b.read_u16::<LittleEndian>().map_err(trunc)?;
        let y = b.read_u16::<LittleEndian>().map_err(trunc)?;
        let polarity = b.read_u8().map_err(trunc)?;
        events.push(Event { t_us, x, y, polarity });
    }
    EventStream::new(width, height, events, label).map_err(|e| Error::parse("EVT1", e.to_string()))
}

pub fn write_event_dataset(path: impl AsRef<Path>, streams: &[EventStream]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in streams {
        write_events(s, &mut w)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_event_dataset(path: impl AsRef<Path>) -> Result<Vec<EventStream>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut out = Vec::new();
    loop {
        let at_end = r.fill_buf().map_err(|e| Error::io(path, e))?.is_empty();
        if at_end {
            break;
        }
        out.push(read_events(&mut r)?);
    }
    Ok(out)
}

fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

/// Stores images as one FT32 `[N, C, H, W]` tensor at `path` and their
/// labels as little-endian u32 at `path` + `.labels`.
pub fn write_labeled_images(path: impl AsRef<Path>, images: &[StaticImage]) -> Result<()> {
    let path = path.as_ref();
    let parts: Vec<Tensor> = images.iter().map(|i| i.tensor.clone()).collect();
    Tensor::stack(&parts)?.save(path)?;
    let lp = labels_path(path);
    let f = File::create(&lp).map_err(|e| Error::io(&lp, e))?;
    let mut w = BufWriter::new(f);
    for img in images {
        w.write_u32::<LittleEndian>(img.label)
            .map_err(|e| Error::io(&lp, e))?;
    }
    w.flush().map_err(|e| Error::io(&lp, e))
}

pub fn read_labeled_images(path: impl AsRef<Path>) -> Result<Vec<StaticImage>> {
    let path = path.as_ref();
    let t = Tensor::load(path)?;
    if t.ndim() != 4 {
        return Err(Error::parse(
            "labeled images",
            format!("expected [N, C, H, W], got {:?}", t.shape()),
        ));
    }
    let lp = labels_path(path);
    let mut bytes = Vec::new();
    File::open(&lp)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&lp, e))?;
    if bytes.len() != 4 * t.shape()[0] {
        return Err(Error::parse(
            "labeled images",
            format!("{} label bytes for {} images", bytes.len(), t.shape()[0]),
        ));
    }
    let labels = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    labels
        .enumerate()
        .map(|(i, l)| StaticImage::new(t.slice_outer(i)?, l))
        .collect()
}

fn read_idx_header(r: &mut impl Read, magic: u32, what: &'static str) -> Result<Vec<usize>> {
    let trunc = |_| Error::parse(what, "truncated header");
    let m = r.read_u32::<BigEndian>().map_err(trunc)?;
    if m != magic {
        return Err(Error::parse(what, format!("bad magic {m:#x}, expected {magic:#x}")));
    }
    let ndim = (magic & 0xff) as usize;
    (0..ndim)
        .map(|_| Ok(r.read_u32::<BigEndian>().map_err(trunc)? as usize))
        .collect()
}

/// Reads an IDX3 unsigned-byte image file as `[N, 1, H, W]` scaled to `[0, 1]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let dims = read_idx_header(&mut r, 0x0803, "IDX images")?;
    let n = dims[0] * dims[1] * dims[2];
    let mut raw = vec![0u8; n];
    r.read_exact(&mut raw)
        .map_err(|_| Error::parse("IDX images", "truncated payload"))?;
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let dims = read_idx_header(&mut r, 0x0801, "IDX labels")?;
    let mut raw = vec![0u8; dims[0]];
    r.read_exact(&mut raw)
        .map_err(|_| Error::parse("IDX labels", "truncated payload"))?;
    Ok(raw.into_iter().map(u32::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventStream {
        let events = vec![
            Event { t_us: 5, x: 1, y: 0, polarity: 1 },
            Event { t_us: 9, x: 3, y: 2, polarity: 0 },
        ];
        EventStream::new(4, 3, events, 6).unwrap()
    }

    #[test]
    fn evt1_round_trip() {
        let mut buf = Vec::new();
        write_events(&sample(), &mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 2 * 10);
        assert_eq!(read_events(&mut buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn evt1_bad_magic() {
        let mut buf = Vec::new();
        write_events(&sample(), &mut buf).unwrap();
        buf[0] = b'X';
        let err = read_events(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("EVT1"));
    }

    #[test]
    fn evt1_truncated() {
        let mut buf = Vec::new();
        write_events(&sample(), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_events(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn evt1_out_of_bounds_event() {
        let mut buf = Vec::new();
        write_events(&sample(), &mut buf).unwrap();
        // first event x := width
        buf[20 + 4] = 4;
        assert!(read_events(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn dataset_and_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ev.bin");
        let streams = vec![sample(), EventStream::new(2, 2, vec![], 1).unwrap()];
        write_event_dataset(&p, &streams).unwrap();
        assert_eq!(read_event_dataset(&p).unwrap(), streams);

        let q = dir.path().join("img.ft32");
        let imgs: Vec<StaticImage> = (0..3)
            .map(|i| StaticImage::new(Tensor::full(&[1, 2, 2], i as f32 * 0.25), i).unwrap())
            .collect();
        write_labeled_images(&q, &imgs).unwrap();
        assert_eq!(read_labeled_images(&q).unwrap(), imgs);
    }

    #[test]
    fn idx_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("images.idx");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        bytes.extend([0u8, 255, 51, 102]);
        std::fs::write(&p, bytes).unwrap();
        let t = read_idx_images(&p).unwrap();
        assert_eq!(t.shape(), &[2, 1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);

        let l = dir.path().join("labels.idx");
        std::fs::write(&l, [0u8, 0, 8, 1, 0, 0, 0, 2, 7, 3]).unwrap();
        assert_eq!(read_idx_labels(&l).unwrap(), vec![7, 3]);
        assert!(read_idx_labels(&p).is_err());
    }
}
