//! Binary field checkpoint: `HOGF` header followed by f32 weights.
//!
//! Layout (little endian): magic, version u32, levels u32, log2 table size u32,
//! features u32, density layer count u32 + sizes u32, color layer count u32 +
//! sizes u32, base resolution f64, max resolution f64, density bias f64,
//! scene center 3 x f64, scene radius f64, color mode u32, weight count u64,
//! weights f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{ColorMode, FieldConfig, FieldParams};
use crate::geometry::SceneFrame;
use crate::io::FormatError;

pub const FIELD_MAGIC: [u8; 4] = *b"HOGF";
pub const FIELD_VERSION: u32 = 1;

pub fn write_field(field: &FieldParams, mut w: impl Write) -> Result<(), FormatError> {
    w.write_all(&FIELD_MAGIC)?;
    w.write_u32::<LE>(FIELD_VERSION)?;
    let c = &field.config;
    w.write_u32::<LE>(c.levels as u32)?;
    w.write_u32::<LE>(c.log2_table_size)?;
    w.write_u32::<LE>(c.features_per_level as u32)?;
    for net in [field.density_net(), field.color_net()] {
        w.write_u32::<LE>(net.sizes.len() as u32)?;
        for &s in &net.sizes {
            w.write_u32::<LE>(s as u32)?;
        }
    }
    for v in [c.base_resolution, c.max_resolution, c.density_bias] {
        w.write_f64::<LE>(v)?;
    }
    for v in field.frame.center {
        w.write_f64::<LE>(v)?;
    }
    w.write_f64::<LE>(field.frame.radius)?;
    w.write_u32::<LE>(match field.color_mode {
        ColorMode::Residual => 0,
        ColorMode::FieldOnly => 1,
    })?;
    w.write_u64::<LE>(field.weights.len() as u64)?;
    for &v in &field.weights {
        w.write_f32::<LE>(v as f32)?;
    }
    Ok(())
}

fn read_sizes(r: &mut impl Read) -> Result<Vec<usize>, FormatError> {
    let n = r.read_u32::<LE>()? as usize;
    if !(2..=16).contains(&n) {
        return Err(FormatError::Invalid(format!("implausible layer count {n}")));
    }
    (0..n).map(|_| Ok(r.read_u32::<LE>()? as usize)).collect()
}

pub fn read_field(mut r: impl Read) -> Result<FieldParams, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != FIELD_MAGIC {
        return Err(FormatError::BadMagic {
            expected: FIELD_MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LE>()?;
    if version != FIELD_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let levels = r.read_u32::<LE>()? as usize;
    let log2_table_size = r.read_u32::<LE>()?;
    let features_per_level = r.read_u32::<LE>()? as usize;
    if levels == 0 || features_per_level == 0 || log2_table_size > 30 {
        return Err(FormatError::Invalid("bad grid dimensions".into()));
    }
    let density = read_sizes(&mut r)?;
    let color = read_sizes(&mut r)?;
    if density.len() != 3 {
        return Err(FormatError::Invalid("density network must have one hidden layer".into()));
    }
    let color_hidden = color[1];
    if color[1..color.len() - 1].iter().any(|&s| s != color_hidden) {
        return Err(FormatError::Invalid("color network hidden layers must share a width".into()));
    }
    let base_resolution = r.read_f64::<LE>()?;
    let max_resolution = r.read_f64::<LE>()?;
    let density_bias = r.read_f64::<LE>()?;
    let center = [r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?];
    let radius = r.read_f64::<LE>()?;
    let color_mode = match r.read_u32::<LE>()? {
        0 => ColorMode::Residual,
        1 => ColorMode::FieldOnly,
        m => return Err(FormatError::Invalid(format!("unknown color mode {m}"))),
    };
    let config = FieldConfig {
        levels,
        log2_table_size,
        features_per_level,
        base_resolution,
        max_resolution,
        density_hidden: density[1],
        color_hidden,
        color_hidden_layers: color.len() - 2,
        density_bias,
    };
    let mut field = FieldParams::zeros(config, SceneFrame { center, radius }, color_mode);
    if field.density_net().sizes != density || field.color_net().sizes != color {
        return Err(FormatError::Invalid("layer sizes disagree with grid dimensions".into()));
    }
    let count = r.read_u64::<LE>()?;
    if count != field.weights.len() as u64 {
        return Err(FormatError::Invalid(format!(
            "weight count {count} does not match layout ({})",
            field.weights.len()
        )));
    }
    let mut buf = vec![0f32; field.weights.len()];
    r.read_f32_into::<LE>(&mut buf)?;
    for (w, v) in field.weights.iter_mut().zip(buf) {
        *w = v as f64;
    }
    Ok(field)
}

pub fn save_field(field: &FieldParams, path: &Path) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<FieldParams, FormatError> {
    read_field(BufReader::new(File::open(path)?))
}

/// Size in bytes of the checkpoint `write_field` produces.
pub fn field_file_size(field: &FieldParams) -> u64 {
    let header = 4 + 4 * 4 + 4 * (2 + field.density_net().sizes.len() + field.color_net().sizes.len()) + 8 * 7 + 4 + 8;
    header as u64 + 4 * field.weights.len() as u64
}
