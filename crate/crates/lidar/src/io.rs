//! Binary raster, batch and angle-table files. All integers and floats are
//! little-endian.
//!
//! Raster record: `"DSTY"`, u16 version, u16 H, u16 W, f32 x_min_m,
//! f32 x_max_m, f32 drop value, then H·W f32 values row-major.
//!
//! Batch: `"DSTB"`, u16 version, u32 count, then `count` raster records.
//!
//! Angle table: `"DSTA"`, u16 version, u16 H, u16 W, then H·W f32
//! elevations and H·W f32 azimuths (radians).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::angles::AngleTable;
use crate::error::{LidarError, Result};
use crate::normalize::NormalizationSpec;
use crate::raster::RasterMap;

pub const RASTER_MAGIC: &[u8; 4] = b"DSTY";
pub const BATCH_MAGIC: &[u8; 4] = b"DSTB";
pub const ANGLES_MAGIC: &[u8; 4] = b"DSTA";
pub const FORMAT_VERSION: u16 = 1;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => LidarError::Format(format!("truncated {what}")),
        _ => LidarError::Io(e),
    })
}

fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let mut b = [0; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m, what)?;
    if &m != magic {
        return Err(LidarError::Format(format!(
            "bad {what} magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = read_u16(r, what)?;
    if v != FORMAT_VERSION {
        return Err(LidarError::Format(format!("unsupported {what} version {v}")));
    }
    Ok(())
}

fn dim_u16(n: usize, what: &str) -> Result<u16> {
    u16::try_from(n).map_err(|_| LidarError::Format(format!("{what} {n} does not fit the format")))
}

pub fn write_raster<W: Write>(r: &RasterMap, out: &mut W) -> Result<()> {
    out.write_all(RASTER_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&dim_u16(r.height(), "height")?.to_le_bytes())?;
    out.write_all(&dim_u16(r.width(), "width")?.to_le_bytes())?;
    out.write_all(&r.norm().x_min_m.to_le_bytes())?;
    out.write_all(&r.norm().x_max_m.to_le_bytes())?;
    out.write_all(&r.drop_value().to_le_bytes())?;
    for v in r.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raster<R: Read>(input: &mut R) -> Result<RasterMap> {
    read_header(input, RASTER_MAGIC, "raster")?;
    let h = read_u16(input, "raster")? as usize;
    let w = read_u16(input, "raster")? as usize;
    let head = read_f32s(input, 3, "raster")?;
    let norm = NormalizationSpec::new(head[0], head[1]).map_err(|e| LidarError::Format(e.to_string()))?;
    let values = read_f32s(input, h * w, "raster values")?;
    RasterMap::with_drop_value(h, w, values, head[2], norm).map_err(|e| LidarError::Format(e.to_string()))
}

pub fn save_raster(path: &Path, r: &RasterMap) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_raster(r, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Reads a single raster and rejects trailing bytes.
pub fn load_raster(path: &Path) -> Result<RasterMap> {
    let mut input = BufReader::new(File::open(path)?);
    let r = read_raster(&mut input)?;
    if input.read(&mut [0u8])? != 0 {
        return Err(LidarError::Format("trailing bytes after raster".into()));
    }
    Ok(r)
}

pub fn write_batch<W: Write>(rasters: &[RasterMap], out: &mut W) -> Result<()> {
    out.write_all(BATCH_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let count = u32::try_from(rasters.len()).map_err(|_| LidarError::Format("too many rasters".into()))?;
    out.write_all(&count.to_le_bytes())?;
    for r in rasters {
        write_raster(r, out)?;
    }
    Ok(())
}

pub fn save_batch(path: &Path, rasters: &[RasterMap]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_batch(rasters, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Streams the records of a batch file; yields exactly `count` items.
pub struct BatchReader<R> {
    input: R,
    remaining: u32,
    count: u32,
}

impl<R: Read> BatchReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        read_header(&mut input, BATCH_MAGIC, "batch")?;
        let count = read_u32(&mut input, "batch")?;
        Ok(Self {
            input,
            remaining: count,
            count,
        })
    }

    pub fn total(&self) -> usize {
        self.count as usize
    }
}

impl<R: Read> Iterator for BatchReader<R> {
    type Item = Result<RasterMap>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let r = read_raster(&mut self.input);
        if r.is_err() {
            self.remaining = 0;
        }
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

pub fn load_batch(path: &Path) -> Result<Vec<RasterMap>> {
    BatchReader::new(BufReader::new(File::open(path)?))?.collect()
}

pub fn write_angle_table<W: Write>(a: &AngleTable, out: &mut W) -> Result<()> {
    out.write_all(ANGLES_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&dim_u16(a.height, "height")?.to_le_bytes())?;
    out.write_all(&dim_u16(a.width, "width")?.to_le_bytes())?;
    for v in a.elevation.iter().chain(&a.azimuth) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_angle_table<R: Read>(input: &mut R) -> Result<AngleTable> {
    read_header(input, ANGLES_MAGIC, "angle table")?;
    let h = read_u16(input, "angle table")? as usize;
    let w = read_u16(input, "angle table")? as usize;
    let elevation = read_f32s(input, h * w, "elevations")?;
    let azimuth = read_f32s(input, h * w, "azimuths")?;
    AngleTable::new(h, w, elevation, azimuth).map_err(|e| LidarError::Format(e.to_string()))
}

pub fn save_angle_table(path: &Path, a: &AngleTable) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_angle_table(a, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_angle_table(path: &Path) -> Result<AngleTable> {
    read_angle_table(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RasterMap {
        RasterMap::new(2, 3, vec![0.5, -1.0, 0.25, 1.0, -0.75, 0.0], NormalizationSpec::default()).unwrap()
    }

    #[test]
    fn raster_bytes_round_trip_bitwise() {
        let r = sample();
        let mut buf = Vec::new();
        write_raster(&r, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 2 + 2 + 12 + 6 * 4);
        assert_eq!(&buf[..4], b"DSTY");
        let back = read_raster(&mut &buf[..]).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let mut buf = Vec::new();
        write_raster(&sample(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_raster(&mut &bad[..]), Err(LidarError::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_raster(&mut &bad[..]), Err(LidarError::Format(_))));
        assert!(matches!(read_raster(&mut &buf[..buf.len() - 1]), Err(LidarError::Format(_))));
    }

    #[test]
    fn batch_yields_exactly_count_items() {
        let rs = vec![sample(); 5];
        let mut buf = Vec::new();
        write_batch(&rs, &mut buf).unwrap();
        let reader = BatchReader::new(&buf[..]).unwrap();
        assert_eq!(reader.total(), 5);
        let back: Vec<_> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(back, rs);

        let mut empty = Vec::new();
        write_batch(&[], &mut empty).unwrap();
        assert_eq!(BatchReader::new(&empty[..]).unwrap().total(), 0);
    }

    #[test]
    fn angle_table_round_trip() {
        let a = AngleTable::synthetic(4, 8);
        let mut buf = Vec::new();
        write_angle_table(&a, &mut buf).unwrap();
        assert_eq!(read_angle_table(&mut &buf[..]).unwrap(), a);
    }
}
