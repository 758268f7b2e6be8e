//! Marker positions over time and realizations, with binary and CSV output.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::torus::{marker_labels, torus_dist};

const MAGIC: &[u8; 8] = b"SEFLOW01";
const VERSION: u32 = 1;

/// Positions of an `n x n` marker grid for a block of realizations at
/// uniformly spaced record times `0, record_dt, ..., records * record_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    n: usize,
    realizations: usize,
    realization_start: u64,
    record_dt: f64,
    seed: u64,
    /// Flat `[(time * realizations + realization) * n² + marker]`.
    positions: Vec<[f64; 2]>,
}

impl FlowState {
    /// Identity flow held at every record time.
    pub fn identity(n: usize, realizations: usize, realization_start: u64, record_dt: f64, intervals: usize, seed: u64) -> Self {
        let labels = marker_labels(n);
        let mut positions = Vec::with_capacity((intervals + 1) * realizations * n * n);
        for _ in 0..=intervals {
            for _ in 0..realizations {
                positions.extend_from_slice(&labels);
            }
        }
        Self {
            n,
            realizations,
            realization_start,
            record_dt,
            seed,
            positions,
        }
    }

    pub fn from_parts(
        n: usize,
        realizations: usize,
        realization_start: u64,
        record_dt: f64,
        seed: u64,
        positions: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let per_time = realizations * n * n;
        if per_time == 0 || !positions.len().is_multiple_of(per_time) || positions.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions do not fill {realizations} realizations of {n}x{n} markers",
                positions.len()
            )));
        }
        Ok(Self {
            n,
            realizations,
            realization_start,
            record_dt,
            seed,
            positions,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn markers(&self) -> usize {
        self.n * self.n
    }

    pub fn realizations(&self) -> usize {
        self.realizations
    }

    pub fn realization_start(&self) -> u64 {
        self.realization_start
    }

    pub fn record_dt(&self) -> f64 {
        self.record_dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of stored time records (intervals + 1).
    pub fn records(&self) -> usize {
        self.positions.len() / (self.realizations * self.markers())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.records()).map(|t| t as f64 * self.record_dt).collect()
    }

    pub fn labels(&self) -> Vec<[f64; 2]> {
        marker_labels(self.n)
    }

    #[inline]
    fn offset(&self, t: usize, r: usize) -> usize {
        (t * self.realizations + r) * self.markers()
    }

    /// Marker positions at record `t` for local realization `r`.
    pub fn at(&self, t: usize, r: usize) -> &[[f64; 2]] {
        let o = self.offset(t, r);
        &self.positions[o..o + self.markers()]
    }

    pub fn at_mut(&mut self, t: usize, r: usize) -> &mut [[f64; 2]] {
        let o = self.offset(t, r);
        let m = self.markers();
        &mut self.positions[o..o + m]
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Trajectory of one realization: slices for each record.
    pub fn realization_path(&self, r: usize) -> Vec<&[[f64; 2]]> {
        (0..self.records()).map(|t| self.at(t, r)).collect()
    }

    /// Keep every `stride`-th record.
    pub fn subsampled(&self, stride: usize) -> Result<Self> {
        if stride == 0 || !(self.records() - 1).is_multiple_of(stride) {
            return Err(Error::ShapeMismatch(format!(
                "stride {stride} does not divide {} intervals",
                self.records() - 1
            )));
        }
        let mut positions = Vec::new();
        for t in (0..self.records()).step_by(stride) {
            for r in 0..self.realizations {
                positions.extend_from_slice(self.at(t, r));
            }
        }
        Ok(Self {
            record_dt: self.record_dt * stride as f64,
            positions,
            ..self.clone()
        })
    }

    fn check_compatible(&self, other: &FlowState) -> Result<()> {
        if self.n != other.n || self.realizations != other.realizations || self.records() != other.records() {
            return Err(Error::ShapeMismatch(format!(
                "flows differ in shape: ({}, {}, {}) vs ({}, {}, {})",
                self.n,
                self.realizations,
                self.records(),
                other.n,
                other.realizations,
                other.records()
            )));
        }
        Ok(())
    }

    /// Mean torus distance per record.
    pub fn distance_profile(&self, other: &FlowState) -> Result<Vec<f64>> {
        self.check_compatible(other)?;
        let per = self.realizations * self.markers();
        Ok(self
            .positions
            .chunks(per)
            .zip(other.positions.chunks(per))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| torus_dist(*p, *q)).sum::<f64>() / per as f64)
            .collect())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [
            self.n as u64,
            self.realizations as u64,
            self.realization_start,
            self.records() as u64,
            self.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.record_dt.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.positions.len() * 16);
        for p in &self.positions {
            buf.extend_from_slice(&p[0].to_le_bytes());
            buf.extend_from_slice(&p[1].to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a flow snapshot".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != VERSION {
            return Err(Error::Format("unsupported flow snapshot version".into()));
        }
        let mut head = [0u64; 5];
        for h in head.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *h = u64::from_le_bytes(b);
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let record_dt = f64::from_le_bytes(b);
        let [n, realizations, start, records, seed] = head;
        let count = (n as usize)
            .checked_mul(n as usize)
            .and_then(|v| v.checked_mul(realizations as usize))
            .and_then(|v| v.checked_mul(records as usize))
            .ok_or_else(|| Error::Format("snapshot header overflows".into()))?;
        let mut bytes = vec![0u8; count * 16];
        r.read_exact(&mut bytes)?;
        let positions = bytes
            .chunks_exact(16)
            .map(|c| {
                [
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                ]
            })
            .collect();
        Self::from_parts(n as usize, realizations as usize, start, record_dt, seed, positions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Per-record summary: time, mean displacement from the labels, and the
    /// largest displacement.
    pub fn summary_csv(&self) -> String {
        let labels = self.labels();
        let mut out = String::from("time,mean_displacement,max_displacement\n");
        for t in 0..self.records() {
            let mut sum = 0.0;
            let mut max = 0.0f64;
            for r in 0..self.realizations {
                for (p, l) in self.at(t, r).iter().zip(&labels) {
                    let d = torus_dist(*p, *l);
                    sum += d;
                    max = max.max(d);
                }
            }
            let mean = sum / (self.realizations * self.markers()) as f64;
            out.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", t as f64 * self.record_dt, mean, max));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_shape_and_round_trip() {
        let f = FlowState::identity(4, 3, 10, 0.1, 5, 7);
        assert_eq!(f.records(), 6);
        assert_eq!(f.at(2, 1), f.labels().as_slice());
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = FlowState::read_from(buf.as_slice()).unwrap();
        assert_eq!(f, g);
        buf[3] = 0;
        assert!(FlowState::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn subsampling() {
        let f = FlowState::identity(2, 1, 0, 0.1, 4, 0);
        let g = f.subsampled(2).unwrap();
        assert_eq!(g.records(), 3);
        assert!((g.record_dt() - 0.2).abs() < 1e-15);
        assert!(f.subsampled(3).is_err());
    }
}
