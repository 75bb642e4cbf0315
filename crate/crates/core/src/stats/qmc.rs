//! Sobol low-discrepancy sequence (Joe–Kuo direction numbers, Gray-code
//! order) with an optional seeded XOR digital shift.

use rand::Rng;

use crate::error::{Error, Result};

const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2..=16; dimension 1 is van der Corput.
const DIRECTIONS: [(u32, u32, &[u32]); 15] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

pub const MAX_DIMS: usize = DIRECTIONS.len() + 1;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, x) in v.iter_mut().enumerate() {
            *x = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[dim - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Generator of the first points of a `dims`-dimensional Sobol sequence.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl SobolSequence {
    pub fn new(dims: usize) -> Result<Self> {
        if dims == 0 || dims > MAX_DIMS {
            return Err(Error::domain(format!("Sobol sequence supports 1..={MAX_DIMS} dimensions, got {dims}")));
        }
        Ok(Self {
            directions: (0..dims).map(direction_numbers).collect(),
            shift: vec![0; dims],
        })
    }

    /// Randomizes the sequence with a uniform XOR digital shift.
    pub fn scrambled<R: Rng + ?Sized>(dims: usize, rng: &mut R) -> Result<Self> {
        let mut s = Self::new(dims)?;
        for x in &mut s.shift {
            *x = rng.random();
        }
        Ok(s)
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// The first `n` points, row-major, values in `[0, 1)`.
    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let d = self.dims();
        let mut x = vec![0u32; d];
        let scale = 1.0 / (1u64 << BITS) as f64;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                let c = (i - 1).trailing_ones() as usize;
                for (xj, v) in x.iter_mut().zip(&self.directions) {
                    *xj ^= v[c];
                }
            }
            out.push(x.iter().zip(&self.shift).map(|(xj, s)| f64::from(xj ^ s) * scale).collect());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn unscrambled_reference_points() {
        let p = SobolSequence::new(6).unwrap().points(8);
        assert_eq!(p[0], vec![0.0; 6]);
        assert_eq!(p[1], vec![0.5; 6]);
        assert_eq!(p[2], vec![0.75, 0.25, 0.25, 0.25, 0.75, 0.75]);
        assert_eq!(p[5], vec![0.875, 0.875, 0.125, 0.375, 0.875, 0.625]);
        assert_eq!(p[7], vec![0.125, 0.625, 0.375, 0.125, 0.125, 0.375]);
    }

    #[test]
    fn each_coordinate_is_stratified() {
        // the first 2^m points put exactly one point in each dyadic cell
        let p = SobolSequence::new(MAX_DIMS).unwrap().points(1024);
        for d in 0..MAX_DIMS {
            let mut cells: Vec<usize> = p.iter().map(|x| (x[d] * 1024.0) as usize).collect();
            cells.sort_unstable();
            assert_eq!(cells, (0..1024).collect::<Vec<_>>(), "dim {d}");
        }
    }

    #[test]
    fn scrambled_points_stay_stratified() {
        let s = SobolSequence::scrambled(4, &mut rng_from_seed(3)).unwrap();
        let p = s.points(256);
        for d in 0..4 {
            let mut cells: Vec<usize> = p.iter().map(|x| (x[d] * 256.0) as usize).collect();
            cells.sort_unstable();
            assert_eq!(cells, (0..256).collect::<Vec<_>>());
        }
        assert!(SobolSequence::new(MAX_DIMS + 1).is_err());
    }
}
