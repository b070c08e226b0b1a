//! Small dense helpers: row-major symmetric matrices and their Cholesky factors.

/// Lower-triangular Cholesky factor stored row-major (full n x n storage).
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    /// Factorizes the symmetric matrix `a` (row-major, n x n). Returns `None`
    /// when a pivot is not strictly positive.
    pub fn new(a: &[f64], n: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                for k in 0..j {
                    s -= ri[k] * rj[k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Factorizes `a + jitter * I`, escalating jitter from `start` by 10x up to `max`
    /// after an initial unjittered attempt. Returns the factor and the jitter used.
    pub fn with_jitter(a: &[f64], n: usize, start: f64, max: f64) -> Option<(Self, f64)> {
        if let Some(f) = Self::new(a, n) {
            return Some((f, 0.0));
        }
        let mut jitter = start;
        let mut work = a.to_vec();
        while jitter <= max * (1.0 + 1e-9) {
            for i in 0..n {
                work[i * n + i] = a[i * n + i] + jitter;
            }
            if let Some(f) = Self::new(&work, n) {
                return Some((f, jitter));
            }
            jitter *= 10.0;
        }
        None
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Solves `L v = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(a, c)| a * c).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solves `L^T v = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `(L L^T) v = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut v = b.to_vec();
        self.solve_lower_in_place(&mut v);
        self.solve_upper_in_place(&mut v);
        v
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|i| self.l[i * self.n + i].ln())
            .sum::<f64>()
    }
}
