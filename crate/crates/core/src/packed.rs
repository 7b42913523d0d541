//! Fixed-width bit-packed cell array over atomic words.
//!
//! Cells are laid out back to back, so a cell may straddle two words. Writes
//! through [`PackedCells::store_shared`] use a compare-and-swap per word, which
//! keeps neighbouring cells intact when several threads write to the same word.

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug)]
pub struct PackedCells {
    words: Vec<AtomicU64>,
    width: u32,
    mask: u64,
    len: usize,
}

impl PackedCells {
    /// `len` cells of `width` bits, all holding `fill`.
    pub fn new(len: usize, width: u32, fill: u64) -> Self {
        assert!((1..=32).contains(&width), "cell width {width} unsupported");
        let mask = (1u64 << width) - 1;
        assert!(fill <= mask);
        let n_words = Self::words_for(len, width);
        let mut cells = Self {
            words: (0..n_words).map(|_| AtomicU64::new(0)).collect(),
            width,
            mask,
            len,
        };
        if fill != 0 {
            cells.fill(fill);
        }
        cells
    }

    pub fn words_for(len: usize, width: u32) -> usize {
        (len * width as usize).div_ceil(64)
    }

    pub(crate) fn from_words(words: Vec<u64>, len: usize, width: u32) -> Option<Self> {
        if words.len() != Self::words_for(len, width) || !(1..=32).contains(&width) {
            return None;
        }
        Some(Self {
            words: words.into_iter().map(AtomicU64::new).collect(),
            width,
            mask: (1u64 << width) - 1,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Heap bytes used by the cell words.
    pub fn memory_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }

    pub(crate) fn word_values(&self) -> impl Iterator<Item = u64> + '_ {
        self.words.iter().map(|w| w.load(Ordering::Relaxed))
    }

    pub fn fill(&mut self, value: u64) {
        for i in 0..self.len {
            self.store(i, value);
        }
    }

    #[inline]
    pub fn get(&self, index: usize) -> u64 {
        debug_assert!(index < self.len);
        let pos = index * self.width as usize;
        let base = pos / 64;
        let offset = (pos % 64) as u32;
        let lo = self.words[base].load(Ordering::Relaxed) >> offset;
        if offset + self.width <= 64 {
            lo & self.mask
        } else {
            let hi = self.words[base + 1].load(Ordering::Relaxed) << (64 - offset);
            (lo | hi) & self.mask
        }
    }

    /// Calls `f` with each value in `range`, decoding the words in order.
    pub fn for_each_in(&self, range: std::ops::Range<usize>, mut f: impl FnMut(u64)) {
        if range.is_empty() {
            return;
        }
        debug_assert!(range.end <= self.len);
        let width = self.width;
        let pos = range.start * width as usize;
        let mut next = pos / 64 + 1;
        let skip = (pos % 64) as u32;
        let mut buf = u128::from(self.words[next - 1].load(Ordering::Relaxed) >> skip);
        let mut avail = 64 - skip;
        for _ in range {
            if avail < width {
                buf |= u128::from(self.words[next].load(Ordering::Relaxed)) << avail;
                avail += 64;
                next += 1;
            }
            f(buf as u64 & self.mask);
            buf >>= width;
            avail -= width;
        }
    }

    /// Write a cell while other threads may write other cells of the same words.
    #[inline]
    pub fn store_shared(&self, index: usize, value: u64) {
        debug_assert!(index < self.len && value <= self.mask);
        let pos = index * self.width as usize;
        let base = pos / 64;
        let offset = (pos % 64) as u32;
        update_bits(&self.words[base], self.mask << offset, value << offset);
        if offset + self.width > 64 {
            let shift = 64 - offset;
            update_bits(&self.words[base + 1], self.mask >> shift, value >> shift);
        }
    }

    /// Write a cell with exclusive access.
    #[inline]
    pub fn store(&mut self, index: usize, value: u64) {
        debug_assert!(index < self.len && value <= self.mask);
        let pos = index * self.width as usize;
        let base = pos / 64;
        let offset = (pos % 64) as u32;
        let w = self.words[base].get_mut();
        *w = (*w & !(self.mask << offset)) | (value << offset);
        if offset + self.width > 64 {
            let shift = 64 - offset;
            let w = self.words[base + 1].get_mut();
            *w = (*w & !(self.mask >> shift)) | (value >> shift);
        }
    }
}

#[inline]
fn update_bits(word: &AtomicU64, mask: u64, bits: u64) {
    let mut current = word.load(Ordering::Relaxed);
    loop {
        let next = (current & !mask) | bits;
        if next == current {
            return;
        }
        match word.compare_exchange_weak(current, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => current = seen,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rayon::prelude::*;

    #[test]
    fn exact_footprint() {
        let cells = PackedCells::new(1 << 20, 10, 600);
        assert_eq!(cells.memory_bytes() * 8, (1 << 20) * 10);
        assert!((0..cells.len()).step_by(997).all(|i| cells.get(i) == 600));
    }

    #[test]
    fn concurrent_writes_keep_neighbours() {
        let cells = PackedCells::new(10_000, 7, 0);
        (0..cells.len())
            .into_par_iter()
            .for_each(|i| cells.store_shared(i, (i % 128) as u64));
        for i in 0..cells.len() {
            assert_eq!(cells.get(i), (i % 128) as u64);
        }
    }

    proptest! {
        #[test]
        fn matches_plain_vec(
            width in 1u32..=20,
            ops in prop::collection::vec((0usize..300, any::<u64>(), any::<bool>()), 0..400),
            (start, end) in (0usize..=300, 0usize..=300),
        ) {
            let mask = (1u64 << width) - 1;
            let mut cells = PackedCells::new(300, width, 0);
            let mut model = vec![0u64; 300];
            for (i, v, shared) in ops {
                let v = v & mask;
                if shared { cells.store_shared(i, v) } else { cells.store(i, v) }
                model[i] = v;
            }
            for (i, &v) in model.iter().enumerate() {
                prop_assert_eq!(cells.get(i), v);
            }
            let range = start.min(end)..start.max(end);
            let mut decoded = Vec::new();
            cells.for_each_in(range.clone(), |v| decoded.push(v));
            prop_assert_eq!(&decoded[..], &model[range]);
        }
    }
}
