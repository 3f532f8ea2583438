//! Binary masks on a row-major pixel grid.
//!
//! A mask stores one byte per pixel (0 = background, 1 = foreground).
//! Row `r`, column `c` maps to image coordinates x = c, y = r with the
//! origin at the top-left corner.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    /// All-background mask of the given size.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    /// Build from a raw bit vector; `bits.len()` must equal `height * width`
    /// and every entry must be 0 or 1.
    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Self {
        assert_eq!(bits.len(), height * width, "bit array does not match grid");
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value as u8;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.same_shape(other)
            && self
                .bits
                .iter()
                .zip(other.bits.iter())
                .all(|(&a, &b)| a == 0 || b == 1)
    }

    /// Row-major iterator over foreground pixel coordinates `(row, col)`.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Foreground pixels that touch the background 4-neighbourhood or the
    /// image border.
    pub fn boundary_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.get(r, c) {
                    continue;
                }
                let on_border =
                    r == 0 || c == 0 || r + 1 == self.height || c + 1 == self.width;
                let exposed = on_border
                    || !self.get(r - 1, c)
                    || !self.get(r + 1, c)
                    || !self.get(r, c - 1)
                    || !self.get(r, c + 1);
                if exposed {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Mask of [`Self::boundary_pixels`].
    pub fn boundary_mask(&self) -> BinaryMask {
        let mut m = BinaryMask::zeros(self.height, self.width);
        for (r, c) in self.boundary_pixels() {
            m.set(r, c, true);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_and_count() {
        let mut a = BinaryMask::zeros(3, 3);
        a.set(1, 1, true);
        let mut b = a.clone();
        b.set(0, 0, true);
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        assert_eq!(b.count(), 2);
    }

    #[test]
    fn boundary_of_solid_block() {
        let mut m = BinaryMask::zeros(5, 5);
        for r in 1..4 {
            for c in 1..4 {
                m.set(r, c, true);
            }
        }
        let b = m.boundary_pixels();
        // 3x3 block: all but the centre pixel are exposed.
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(2, 2)));
    }

    #[test]
    fn full_mask_boundary_is_border_ring() {
        let m = BinaryMask::from_bits(4, 4, vec![1; 16]);
        assert_eq!(m.boundary_pixels().len(), 12);
    }
}
