use crate::error::{ensure, Result};
use serde::{Deserialize, Serialize};

/// Levels `l0..=L` with `2^l` shifts each, plus `2^l0` approximation indices.
///
/// Flat order: approximation block, then detail levels ascending with shifts
/// ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiresIndexSet {
    l0: u32,
    l_max: u32,
}

impl MultiresIndexSet {
    pub fn new(l0: u32, l_max: u32) -> Result<Self> {
        ensure!(l_max >= l0, Config, "L = {l_max} must be >= l0 = {l0}");
        ensure!(l_max <= 30, Config, "L = {l_max} too large");
        Ok(MultiresIndexSet { l0, l_max })
    }

    pub fn l0(&self) -> u32 {
        self.l0
    }
    pub fn l_max(&self) -> u32 {
        self.l_max
    }
    pub fn levels(&self) -> std::ops::RangeInclusive<u32> {
        self.l0..=self.l_max
    }
    pub fn num_levels(&self) -> usize {
        (self.l_max - self.l0 + 1) as usize
    }
    pub fn approx_len(&self) -> usize {
        1usize << self.l0
    }
    /// `s_L`: number of detail indices.
    pub fn detail_len(&self) -> usize {
        (1usize << (self.l_max + 1)) - (1usize << self.l0)
    }
    pub fn total_len(&self) -> usize {
        self.approx_len() + self.detail_len()
    }
    /// Offset of level `l` inside the detail block.
    pub fn level_offset(&self, level: u32) -> usize {
        (1usize << level) - (1usize << self.l0)
    }
    /// Detail position of `(l, k)` with 1-based `k`.
    pub fn detail_position(&self, level: u32, k: usize) -> Option<usize> {
        if level < self.l0 || level > self.l_max || k == 0 || k > 1usize << level {
            return None;
        }
        Some(self.level_offset(level) + k - 1)
    }
    /// Inverse of [`detail_position`](Self::detail_position).
    pub fn detail_index(&self, pos: usize) -> (u32, usize) {
        let abs = pos + (1usize << self.l0);
        let level = usize::BITS - 1 - abs.leading_zeros();
        (level, abs - (1usize << level) + 1)
    }
    /// Same index set truncated at `l_max`.
    pub fn truncate(&self, l_max: u32) -> Result<Self> {
        Self::new(self.l0, l_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiresCoefficients {
    index_set: MultiresIndexSet,
    approx: Vec<f64>,
    detail: Vec<f64>,
}

impl MultiresCoefficients {
    pub fn zeros(index_set: MultiresIndexSet) -> Self {
        MultiresCoefficients {
            index_set,
            approx: vec![0.0; index_set.approx_len()],
            detail: vec![0.0; index_set.detail_len()],
        }
    }

    pub fn from_parts(index_set: MultiresIndexSet, approx: Vec<f64>, detail: Vec<f64>) -> Result<Self> {
        ensure!(approx.len() == index_set.approx_len(), Argument, "approx length {} != {}", approx.len(), index_set.approx_len());
        ensure!(detail.len() == index_set.detail_len(), Argument, "detail length {} != {}", detail.len(), index_set.detail_len());
        ensure!(
            approx.iter().chain(&detail).all(|v| v.is_finite()),
            Argument,
            "coefficients must be finite"
        );
        Ok(MultiresCoefficients { index_set, approx, detail })
    }

    pub fn index_set(&self) -> &MultiresIndexSet {
        &self.index_set
    }
    pub fn approx(&self) -> &[f64] {
        &self.approx
    }
    pub fn approx_mut(&mut self) -> &mut [f64] {
        &mut self.approx
    }
    pub fn detail(&self) -> &[f64] {
        &self.detail
    }
    pub fn detail_mut(&mut self) -> &mut [f64] {
        &mut self.detail
    }
    pub fn level(&self, level: u32) -> &[f64] {
        let off = self.index_set.level_offset(level);
        &self.detail[off..off + (1usize << level)]
    }
    pub fn level_mut(&mut self, level: u32) -> &mut [f64] {
        let off = self.index_set.level_offset(level);
        &mut self.detail[off..off + (1usize << level)]
    }
    /// Detail coefficient `(l, k)`, 1-based `k`; zero outside the index set.
    pub fn get(&self, level: u32, k: usize) -> f64 {
        self.index_set.detail_position(level, k).map_or(0.0, |p| self.detail[p])
    }
    pub fn set(&mut self, level: u32, k: usize, value: f64) -> Result<()> {
        let p = self.index_set.detail_position(level, k).ok_or_else(|| {
            crate::FdpError::Argument(format!("({level}, {k}) outside the index set"))
        })?;
        self.detail[p] = value;
        Ok(())
    }

    /// Copy restricted or zero-extended to another index set with the same `l0`.
    pub fn resized(&self, index_set: MultiresIndexSet) -> Result<Self> {
        ensure!(index_set.l0() == self.index_set.l0(), Argument, "l0 mismatch");
        let mut out = Self::zeros(index_set);
        out.approx.copy_from_slice(&self.approx);
        let n = out.detail.len().min(self.detail.len());
        out.detail[..n].copy_from_slice(&self.detail[..n]);
        Ok(out)
    }

    /// `approx . approx + detail . detail`.
    pub fn sq_norm(&self) -> f64 {
        self.approx.iter().chain(&self.detail).map(|v| v * v).sum()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        ensure!(self.index_set == other.index_set, Argument, "index set mismatch");
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Ok(MultiresCoefficients {
            index_set: self.index_set,
            approx: zip(&self.approx, &other.approx),
            detail: zip(&self.detail, &other.detail),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinality_and_positions() {
        let idx = MultiresIndexSet::new(2, 5).unwrap();
        assert_eq!(idx.approx_len(), 4);
        assert_eq!(idx.detail_len(), 4 + 8 + 16 + 32);
        let mut pos = 0;
        for l in idx.levels() {
            for k in 1..=(1usize << l) {
                assert_eq!(idx.detail_position(l, k), Some(pos));
                assert_eq!(idx.detail_index(pos), (l, k));
                pos += 1;
            }
        }
        assert_eq!(pos, idx.detail_len());
        assert_eq!(idx.detail_position(1, 1), None);
        assert_eq!(idx.detail_position(2, 5), None);
        assert!(MultiresIndexSet::new(3, 2).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let idx = MultiresIndexSet::new(0, 1).unwrap();
        assert!(MultiresCoefficients::from_parts(idx, vec![1.0], vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(MultiresCoefficients::from_parts(idx, vec![1.0], vec![0.0; 2]).is_err());
    }
}
