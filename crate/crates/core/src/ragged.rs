/// Per-path, per-node vectors of fixed width stored contiguously; path `p`
/// holds `len(p)` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Ragged {
    offsets: Vec<usize>,
    width: usize,
    pub data: Vec<f64>,
}

impl Ragged {
    pub fn zeros(lens: &[usize], width: usize) -> Self {
        let mut offsets = Vec::with_capacity(lens.len() + 1);
        offsets.push(0);
        for &n in lens {
            offsets.push(offsets.last().unwrap() + n);
        }
        let total = *offsets.last().unwrap();
        Ragged {
            offsets,
            width,
            data: vec![0.0; total * width],
        }
    }

    /// Builds from per-path node vectors (each of length `len * width`).
    pub fn from_paths(paths: Vec<Vec<f64>>, width: usize) -> Self {
        let lens: Vec<usize> = paths.iter().map(|v| v.len() / width).collect();
        let mut r = Ragged::zeros(&[], width);
        r.offsets = Vec::with_capacity(lens.len() + 1);
        r.offsets.push(0);
        for n in &lens {
            r.offsets.push(r.offsets.last().unwrap() + n);
        }
        r.data = paths.concat();
        r
    }

    pub fn n_paths(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn lens(&self) -> Vec<usize> {
        (0..self.n_paths()).map(|p| self.len(p)).collect()
    }

    pub fn at(&self, p: usize, i: usize) -> &[f64] {
        let s = (self.offsets[p] + i) * self.width;
        &self.data[s..s + self.width]
    }

    pub fn at_mut(&mut self, p: usize, i: usize) -> &mut [f64] {
        let s = (self.offsets[p] + i) * self.width;
        &mut self.data[s..s + self.width]
    }

    pub fn path(&self, p: usize) -> &[f64] {
        &self.data[self.offsets[p] * self.width..self.offsets[p + 1] * self.width]
    }

    pub fn same_shape(&self, other: &Ragged) -> bool {
        self.width == other.width && self.offsets == other.offsets
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing() {
        let mut r = Ragged::zeros(&[2, 3], 2);
        r.at_mut(1, 2).copy_from_slice(&[5.0, 6.0]);
        assert_eq!(r.at(1, 2), &[5.0, 6.0]);
        assert_eq!(r.path(0), &[0.0; 4]);
        let s = Ragged::from_paths(vec![vec![1.0, 2.0], vec![3.0, 4.0, 5.0, 6.0]], 2);
        assert_eq!(s.lens(), vec![1, 2]);
        assert_eq!(s.at(1, 1), &[5.0, 6.0]);
    }
}
