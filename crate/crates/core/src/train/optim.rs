//! Adam for splats (per-parameter-group rates) and for the dense field weights,
//! plus the binary optimizer-state file.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::config::AdamConfig;
use crate::geometry::Splat;
use crate::io::FormatError;
use crate::raster::SplatGradients;

/// Optimizer slots per splat: position 3, log-scale 3, rotation 4, opacity 1, base color 3.
pub const SLOTS: usize = 14;
const OPACITY_SLOT: usize = 10;

pub const OPTIM_MAGIC: [u8; 4] = *b"HOGO";
pub const OPTIM_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub base_color: f64,
}

impl SplatRates {
    fn slot(&self, k: usize) -> f64 {
        match k {
            0..3 => self.position,
            3..6 => self.scale,
            6..10 => self.rotation,
            10 => self.opacity,
            _ => self.base_color,
        }
    }
}

pub fn splat_params(s: &Splat) -> [f64; SLOTS] {
    let p = &s.position;
    let l = &s.log_scale;
    let r = &s.rotation;
    let c = &s.base_color;
    [p.x, p.y, p.z, l.x, l.y, l.z, r[0], r[1], r[2], r[3], s.opacity_logit, c.x, c.y, c.z]
}

fn set_splat_params(s: &mut Splat, v: &[f64; SLOTS]) {
    s.position = [v[0], v[1], v[2]].into();
    s.log_scale = [v[3], v[4], v[5]].into();
    s.rotation = [v[6], v[7], v[8], v[9]];
    s.opacity_logit = v[10];
    s.base_color = [v[11], v[12], v[13]].into();
}

pub fn splat_grad(g: &SplatGradients, i: usize) -> [f64; SLOTS] {
    let p = &g.position[i];
    let l = &g.log_scale[i];
    let r = &g.rotation[i];
    let c = &g.base_color[i];
    [p.x, p.y, p.z, l.x, l.y, l.z, r[0], r[1], r[2], r[3], g.opacity_logit[i], c.x, c.y, c.z]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatAdam {
    pub step: u64,
    pub m: Vec<[f64; SLOTS]>,
    pub v: Vec<[f64; SLOTS]>,
}

impl SplatAdam {
    pub fn new(count: usize) -> Self {
        Self {
            step: 0,
            m: vec![[0.0; SLOTS]; count],
            v: vec![[0.0; SLOTS]; count],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One Adam step. Rotations are renormalized only when they changed, so a
    /// zero-rate step leaves every parameter bit-identical.
    pub fn update(&mut self, splats: &mut [Splat], grads: &SplatGradients, rates: &SplatRates, adam: &AdamConfig) {
        assert_eq!(splats.len(), self.len(), "moment buffers out of sync with splats");
        assert_eq!(grads.len(), self.len());
        self.step += 1;
        let bc1 = 1.0 - adam.beta1.powi(self.step as i32);
        let bc2 = 1.0 - adam.beta2.powi(self.step as i32);
        for (i, s) in splats.iter_mut().enumerate() {
            let g = splat_grad(grads, i);
            let mut p = splat_params(s);
            let before = p;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..SLOTS {
                m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
                v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
                let lr = rates.slot(k);
                if lr != 0.0 {
                    p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + adam.epsilon);
                }
            }
            if p != before {
                set_splat_params(s, &p);
                if p[6..10] != before[6..10] {
                    s.normalize_rotation();
                }
            }
        }
    }

    /// Rebuilds the buffers after a densifier edit: kept splats carry their
    /// moments, new ones start at zero.
    pub fn remap(&mut self, origins: &[Option<usize>]) {
        let pick = |buf: &[[f64; SLOTS]]| origins.iter().map(|o| o.map_or([0.0; SLOTS], |i| buf[i])).collect();
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    pub fn extend_zeros(&mut self, count: usize) {
        self.m.resize(self.m.len() + count, [0.0; SLOTS]);
        self.v.resize(self.v.len() + count, [0.0; SLOTS]);
    }

    pub fn reset_opacity_moments(&mut self) {
        for (m, v) in self.m.iter_mut().zip(&mut self.v) {
            m[OPACITY_SLOT] = 0.0;
            v[OPACITY_SLOT] = 0.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseAdam {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl DenseAdam {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, adam: &AdamConfig) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - adam.beta1.powi(self.step as i32);
        let bc2 = 1.0 - adam.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
            *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
            if lr != 0.0 {
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + adam.epsilon);
            }
        }
    }
}

/// Both optimizers, as stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub splats: SplatAdam,
    pub field: DenseAdam,
}

fn write_f64s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, FormatError> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

/// Layout: magic, version u32, splat step u64, splat count u64, splat m and v
/// (f64, 14 per splat), field step u64, field length u64, field m and v (f64).
pub fn write_optimizer(state: &OptimizerState, mut w: impl Write) -> Result<(), FormatError> {
    w.write_all(&OPTIM_MAGIC)?;
    w.write_u32::<LittleEndian>(OPTIM_VERSION)?;
    let s = &state.splats;
    w.write_u64::<LittleEndian>(s.step)?;
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    write_f64s(&mut w, s.m.iter().flatten().copied())?;
    write_f64s(&mut w, s.v.iter().flatten().copied())?;
    let f = &state.field;
    w.write_u64::<LittleEndian>(f.step)?;
    w.write_u64::<LittleEndian>(f.m.len() as u64)?;
    write_f64s(&mut w, f.m.iter().copied())?;
    write_f64s(&mut w, f.v.iter().copied())?;
    Ok(())
}

pub fn read_optimizer(mut r: impl Read) -> Result<OptimizerState, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != OPTIM_MAGIC {
        return Err(FormatError::BadMagic {
            expected: OPTIM_MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != OPTIM_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let step = r.read_u64::<LittleEndian>()?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let rows = |flat: Vec<f64>| flat.chunks_exact(SLOTS).map(|c| c.try_into().unwrap()).collect();
    let m = rows(read_f64s(&mut r, count * SLOTS)?);
    let v = rows(read_f64s(&mut r, count * SLOTS)?);
    let splats = SplatAdam { step, m, v };
    let step = r.read_u64::<LittleEndian>()?;
    let len = r.read_u64::<LittleEndian>()? as usize;
    let field = DenseAdam {
        step,
        m: read_f64s(&mut r, len)?,
        v: read_f64s(&mut r, len)?,
    };
    Ok(OptimizerState { splats, field })
}

pub fn save_optimizer(state: &OptimizerState, path: &Path) -> Result<(), FormatError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_optimizer(state, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_optimizer(path: &Path) -> Result<OptimizerState, FormatError> {
    read_optimizer(std::io::BufReader::new(std::fs::File::open(path)?))
}
