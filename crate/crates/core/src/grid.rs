//! Row-major 2D grids and the binary-mask helpers shared by every stage.

use std::collections::VecDeque;

/// A dense row-major raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps an existing buffer. Returns `None` when the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Row/column of a flat index.
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// In-bounds 8-neighbours of a pixel.
    pub fn neighbors8(&self, row: usize, col: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        const OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        OFFSETS.iter().filter_map(move |&(dr, dc)| {
            let r = row as isize + dr;
            let c = col as isize + dc;
            (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
                .then_some((r as usize, c as usize))
        })
    }
}

/// Binary raster; `true` marks a member pixel.
pub type Mask = Grid<bool>;

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert!(self.same_shape(other));
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        debug_assert!(self.same_shape(other));
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect(),
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    /// Intersection-over-union; two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Dilation by a Euclidean disk of the given radius.
    pub fn dilate_disk(&self, radius: usize) -> Mask {
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
            .filter(|&(dr, dc)| dr * dr + dc * dc <= r * r)
            .collect();
        let mut out = Grid::filled(self.width, self.height, false);
        for idx in self.indices() {
            let (row, col) = self.coords(idx);
            for &(dr, dc) in &offsets {
                let rr = row as isize + dr;
                let cc = col as isize + dc;
                if rr >= 0 && cc >= 0 && (rr as usize) < self.height && (cc as usize) < self.width {
                    out.set(rr as usize, cc as usize, true);
                }
            }
        }
        out
    }

    /// 8-connected components, each a sorted list of flat indices, in raster
    /// order of their first pixel.
    pub fn components8(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.data.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut members = Vec::new();
            while let Some(idx) = queue.pop_front() {
                members.push(idx);
                let (row, col) = self.coords(idx);
                for (r, c) in self.neighbors8(row, col) {
                    let n = self.index(r, c);
                    if self.data[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Builds a mask holding exactly the given flat indices.
    pub fn from_indices(width: usize, height: usize, indices: &[usize]) -> Mask {
        let mut out = Grid::filled(width, height, false);
        for &i in indices {
            out.data[i] = true;
        }
        out
    }
}

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl BoundingBox {
    pub fn of_indices(width: usize, indices: &[usize]) -> Option<Self> {
        let mut it = indices.iter().map(|&i| (i / width, i % width));
        let (r0, c0) = it.next()?;
        let mut bb = BoundingBox {
            min_row: r0,
            min_col: c0,
            max_row: r0,
            max_col: c0,
        };
        for (r, c) in it {
            bb.min_row = bb.min_row.min(r);
            bb.max_row = bb.max_row.max(r);
            bb.min_col = bb.min_col.min(c);
            bb.max_col = bb.max_col.max(c);
        }
        Some(bb)
    }

    /// True when `other` lies within this box grown by `margin` pixels.
    pub fn contains_with_margin(&self, other: &BoundingBox, margin: usize) -> bool {
        other.min_row + margin >= self.min_row
            && other.min_col + margin >= self.min_col
            && other.max_row <= self.max_row + margin
            && other.max_col <= self.max_col + margin
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.min_row <= other.max_row
            && other.min_row <= self.max_row
            && self.min_col <= other.max_col
            && other.min_col <= self.max_col
    }
}
