//! Tabulated smooth remainder of the kernel with bicubic (4x4 Lagrange)
//! interpolation, and its binary file format.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use super::green::{kernel_remainder, GreenSplitConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SEKTAB01";
const VERSION: u32 = 2;
/// Nodes added on each side of the fundamental cell.
const PAD: usize = 2;

/// Remainder `K - (1/2π) x⊥/|x|²` sampled on a uniform grid covering
/// `[-1/2 - 2h, 1/2 + 2h]²`, `h = 1/size`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    size: usize,
    cfg: GreenSplitConfig,
    /// `(size + 2 PAD + 1)²` pairs, row-major in `(i1, i2)`.
    values: Vec<[f64; 2]>,
}

impl KernelTable {
    pub fn build(size: usize, cfg: &GreenSplitConfig) -> Result<Self> {
        if size < 16 {
            return Err(Error::config("kernel.table_size", "must be at least 16"));
        }
        cfg.validate()?;
        let count = size + 2 * PAD + 1;
        let h = 1.0 / size as f64;
        let values: Vec<[f64; 2]> = (0..count * count)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / count, idx % count);
                let x = [
                    -0.5 + (i as f64 - PAD as f64) * h,
                    -0.5 + (j as f64 - PAD as f64) * h,
                ];
                kernel_remainder(x, cfg)
            })
            .collect();
        Ok(Self {
            size,
            cfg: *cfg,
            values,
        })
    }

    /// Shared table for `(size, default config)`, built once per process.
    pub fn cached(size: usize) -> Result<Arc<KernelTable>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<KernelTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("kernel table cache poisoned");
        if let Some(t) = guard.get(&size) {
            return Ok(t.clone());
        }
        let table = Arc::new(KernelTable::build(size, &GreenSplitConfig::default())?);
        guard.insert(size, table.clone());
        Ok(table)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn config(&self) -> &GreenSplitConfig {
        &self.cfg
    }

    /// Interpolated remainder at a wrapped point.
    #[inline]
    pub fn remainder(&self, x: [f64; 2]) -> [f64; 2] {
        let count = self.size + 2 * PAD + 1;
        let nf = self.size as f64;
        let s1 = (x[0] + 0.5) * nf + PAD as f64;
        let s2 = (x[1] + 0.5) * nf + PAD as f64;
        let f1 = (s1.floor() as usize).clamp(1, count - 3);
        let f2 = (s2.floor() as usize).clamp(1, count - 3);
        let w1 = lagrange_weights(s1 - f1 as f64);
        let w2 = lagrange_weights(s2 - f2 as f64);
        let mut out = [0.0, 0.0];
        for (a, wa) in w1.iter().enumerate() {
            let row = (f1 + a - 1) * count;
            let mut acc = [0.0, 0.0];
            for (b, wb) in w2.iter().enumerate() {
                let v = self.values[row + f2 + b - 1];
                acc[0] += wb * v[0];
                acc[1] += wb * v[1];
            }
            out[0] += wa * acc[0];
            out[1] += wa * acc[1];
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.size as u64).to_le_bytes())?;
        w.write_all(&self.cfg.fourier_cutoff.to_le_bytes())?;
        w.write_all(&self.cfg.image_cutoff.to_le_bytes())?;
        w.write_all(&self.cfg.tail_tolerance.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for v in &self.values {
            buf.extend_from_slice(&v[0].to_le_bytes());
            buf.extend_from_slice(&v[1].to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a kernel table".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let size = read_u64(&mut r)? as usize;
        if !(16..=1 << 16).contains(&size) {
            return Err(Error::Format(format!("implausible table size {size}")));
        }
        let cfg = GreenSplitConfig {
            fourier_cutoff: read_u32(&mut r)?,
            image_cutoff: read_u32(&mut r)?,
            tail_tolerance: read_f64(&mut r)?,
        };
        let count = size + 2 * PAD + 1;
        let mut bytes = vec![0u8; count * count * 16];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(16)
            .map(|c| {
                [
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                ]
            })
            .collect();
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after table".into()));
        }
        Ok(Self {
            size,
            cfg,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Cubic Lagrange weights on nodes `-1, 0, 1, 2` at offset `t ∈ [0, 1)`.
#[inline]
fn lagrange_weights(t: f64) -> [f64; 4] {
    let tm1 = t - 1.0;
    let tm2 = t - 2.0;
    let tp1 = t + 1.0;
    [
        -t * tm1 * tm2 / 6.0,
        tp1 * tm1 * tm2 / 2.0,
        -tp1 * t * tm2 / 2.0,
        tp1 * t * tm1 / 6.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_reproduce_cubics() {
        for &t in &[0.0, 0.3, 0.77] {
            let w = lagrange_weights(t);
            let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
            let v: f64 = w
                .iter()
                .zip([-1.0, 0.0, 1.0, 2.0])
                .map(|(w, x)| w * p(x))
                .sum();
            assert!((v - p(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolation_matches_direct_remainder() {
        let table = KernelTable::cached(128).unwrap();
        let cfg = GreenSplitConfig::default();
        for &x in &[[0.123, -0.377], [0.4999, 0.4999], [-0.5, -0.5], [0.0, 0.01]] {
            let a = table.remainder(x);
            let b = kernel_remainder(x, &cfg);
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8, "{x:?}");
        }
    }

    #[test]
    fn binary_round_trip() {
        let table = KernelTable::build(16, &GreenSplitConfig::default()).unwrap();
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        let back = KernelTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.size, table.size);
        assert_eq!(back.values, table.values);
        assert_eq!(back.cfg, table.cfg);
        buf[0] = b'X';
        assert!(matches!(KernelTable::read_from(buf.as_slice()), Err(Error::Format(_))));
    }
}
