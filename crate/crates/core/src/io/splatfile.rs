//! Binary splat file: `HOGS`, version u32, count u64, then 14 little-endian f32
//! per splat (position, log scale, rotation wxyz, opacity logit, base color).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::FormatError;
use crate::geometry::{Splat, Vec3};

pub const SPLAT_MAGIC: [u8; 4] = *b"HOGS";
pub const SPLAT_VERSION: u32 = 1;
pub const SPLAT_HEADER_BYTES: u64 = 16;
pub const FLOATS_PER_SPLAT: usize = 14;
/// Per-splat floats of a layout carrying degree-3 spherical harmonics:
/// position 3, scale 3, rotation 4, opacity 1, 16 x 3 SH coefficients.
pub const SH3_FLOATS_PER_SPLAT: usize = 59;

pub fn splat_file_size(count: usize) -> u64 {
    SPLAT_HEADER_BYTES + 4 * (FLOATS_PER_SPLAT * count) as u64
}

/// Size of the same splats stored with degree-3 SH colors.
pub fn sh3_file_size(count: usize) -> u64 {
    SPLAT_HEADER_BYTES + 4 * (SH3_FLOATS_PER_SPLAT * count) as u64
}

fn splat_floats(s: &Splat) -> [f64; FLOATS_PER_SPLAT] {
    let p = &s.position;
    let l = &s.log_scale;
    let r = &s.rotation;
    let c = &s.base_color;
    [p.x, p.y, p.z, l.x, l.y, l.z, r[0], r[1], r[2], r[3], s.opacity_logit, c.x, c.y, c.z]
}

pub fn write_splats(splats: &[Splat], mut w: impl Write) -> Result<(), FormatError> {
    w.write_all(&SPLAT_MAGIC)?;
    w.write_u32::<LE>(SPLAT_VERSION)?;
    w.write_u64::<LE>(splats.len() as u64)?;
    for s in splats {
        for v in splat_floats(s) {
            w.write_f32::<LE>(v as f32)?;
        }
    }
    Ok(())
}

pub fn read_splats(mut r: impl Read) -> Result<Vec<Splat>, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != SPLAT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: SPLAT_MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LE>()?;
    if version != SPLAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = r.read_u64::<LE>()?;
    let floats = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(FLOATS_PER_SPLAT))
        .ok_or_else(|| FormatError::Invalid(format!("splat count {count} too large")))?;
    let mut payload = Vec::new();
    r.take(4 * floats as u64).read_to_end(&mut payload)?;
    if payload.len() != 4 * floats {
        return Err(FormatError::Invalid(format!(
            "truncated payload: {count} splats need {} bytes, found {}",
            4 * floats,
            payload.len()
        )));
    }
    let mut buf = vec![0f32; floats];
    payload.as_slice().read_f32_into::<LE>(&mut buf)?;
    Ok(buf
        .chunks_exact(FLOATS_PER_SPLAT)
        .map(|f| {
            let f: Vec<f64> = f.iter().map(|&v| v as f64).collect();
            Splat {
                position: Vec3::new(f[0], f[1], f[2]),
                log_scale: Vec3::new(f[3], f[4], f[5]),
                rotation: [f[6], f[7], f[8], f[9]],
                opacity_logit: f[10],
                base_color: Vec3::new(f[11], f[12], f[13]),
            }
        })
        .collect())
}

pub fn save_splats(splats: &[Splat], path: &Path) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_splats(splats, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_splats(path: &Path) -> Result<Vec<Splat>, FormatError> {
    read_splats(BufReader::new(File::open(path)?))
}

/// Rounds every parameter to f32, the precision the file stores.
pub fn to_file_precision(s: &Splat) -> Splat {
    let r = |v: f64| v as f32 as f64;
    Splat {
        position: s.position.map(r),
        log_scale: s.log_scale.map(r),
        rotation: s.rotation.map(r),
        opacity_logit: r(s.opacity_logit),
        base_color: s.base_color.map(r),
    }
}
