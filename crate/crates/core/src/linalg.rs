//! Normal equations of weighted least squares and their factorization.

use crate::measurement::SparseMatrix;

/// Dense-storage symmetric matrix (both triangles kept in sync).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `max |G - Gᵀ|`
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// `G = JᵀWJ` and `rhs = JᵀWr` restricted to the columns in `active`
/// (`active[c] = Some(k)` maps state column `c` to unknown `k`).
pub fn build_normal_system_masked(
    j: &SparseMatrix,
    w: &[f64],
    r: &[f64],
    active: &[Option<usize>],
    n_unknowns: usize,
) -> (SymmetricMatrix, Vec<f64>) {
    let mut g = SymmetricMatrix::zeros(n_unknowns);
    let mut rhs = vec![0.0; n_unknowns];
    let n = n_unknowns;
    for ((row, &wi), &ri) in j.rows.iter().zip(w).zip(r) {
        let entries: Vec<(usize, f64)> = row
            .cols
            .iter()
            .zip(&row.vals)
            .filter_map(|(&c, &v)| active[c].map(|k| (k, v)))
            .collect();
        for &(a, va) in &entries {
            rhs[a] += va * wi * ri;
            for &(b, vb) in &entries {
                g.data[a * n + b] += va * wi * vb;
            }
        }
    }
    (g, rhs)
}

pub fn build_normal_system(j: &SparseMatrix, w: &[f64], r: &[f64]) -> (SymmetricMatrix, Vec<f64>) {
    let active: Vec<Option<usize>> = (0..j.ncols).map(Some).collect();
    build_normal_system_masked(j, w, r, &active, j.ncols)
}

/// Relative pivot below which a (scaled) matrix is declared singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Envelope (skyline) Cholesky factor `A = LLᵀ`. Fill-in of a symmetric
/// matrix stays inside the profile given by the first nonzero of each row,
/// so only that band is touched.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    first: Vec<usize>,
    l: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &SymmetricMatrix) -> Option<Self> {
        let n = a.n;
        let first: Vec<usize> = (0..n)
            .map(|i| (0..=i).find(|&j| a.get(i, j) != 0.0).unwrap_or(i))
            .collect();
        let mut l = vec![0.0; n * n];
        let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            return None;
        }
        for i in 0..n {
            for j in first[i]..i {
                let lo = first[i].max(first[j]);
                let mut s = a.get(i, j);
                for k in lo..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / l[j * n + j];
            }
            let mut d = a.get(i, i);
            for k in first[i]..i {
                d -= l[i * n + k] * l[i * n + k];
            }
            if !(d > PIVOT_TOL * scale) || !d.is_finite() {
                return None;
            }
            l[i * n + i] = d.sqrt();
        }
        Some(SkylineCholesky { n, first, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            y[i] /= self.l[i * n + i];
            let yi = y[i];
            for k in self.first[i]..i {
                y[k] -= self.l[i * n + k] * yi;
            }
        }
        y
    }
}

/// Solves `G Δ = rhs` with symmetric diagonal (Jacobi) scaling
/// `D G D y = D rhs`, `Δ = D y`, `D = diag(1/√G_ii)`.
pub fn solve_scaled(g: &SymmetricMatrix, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = g.n;
    let mut d = vec![0.0; n];
    for i in 0..n {
        let gi = g.get(i, i);
        if !(gi > 0.0) {
            return None;
        }
        d[i] = 1.0 / gi.sqrt();
    }
    let mut scaled = SymmetricMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            scaled.data[i * n + j] = d[i] * g.get(i, j) * d[j];
        }
    }
    let chol = SkylineCholesky::factor(&scaled)?;
    let b: Vec<f64> = rhs.iter().zip(&d).map(|(r, di)| r * di).collect();
    let y = chol.solve(&b);
    Some(y.iter().zip(&d).map(|(yi, di)| yi * di).collect())
}

/// `λ_max / λ_min` estimated by power iteration on `G` and inverse
/// iteration (through a Cholesky factor) for the smallest eigenvalue.
///
/// Rayleigh quotients bound the extreme eigenvalues from inside, so the
/// estimate never exceeds the true condition number; with 500 iterations and
/// a 1e-12 stopping rule the gap is negligible unless the two extreme
/// eigenvalues are nearly repeated. Returns infinity when `G` is not
/// positive definite.
pub fn condition_estimate(g: &SymmetricMatrix) -> f64 {
    let n = g.n;
    if n == 0 {
        return f64::INFINITY;
    }
    let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i + 1) as f64).sin()).collect();
    let normalize = |v: &mut Vec<f64>| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        norm
    };
    let rayleigh = |v: &[f64]| -> f64 {
        let gv = g.mul_vec(v);
        v.iter().zip(&gv).map(|(a, b)| a * b).sum()
    };

    let mut v = start.clone();
    normalize(&mut v);
    let mut lmax = rayleigh(&v);
    for _ in 0..500 {
        let mut next = g.mul_vec(&v);
        if normalize(&mut next) == 0.0 {
            break;
        }
        v = next;
        let l = rayleigh(&v);
        let done = (l - lmax).abs() <= 1e-12 * l.abs();
        lmax = l;
        if done {
            break;
        }
    }

    let Some(chol) = SkylineCholesky::factor(g) else {
        return f64::INFINITY;
    };
    let mut v = start;
    normalize(&mut v);
    let mut lmin = rayleigh(&v);
    for _ in 0..500 {
        let mut next = chol.solve(&v);
        if normalize(&mut next) == 0.0 {
            break;
        }
        v = next;
        let l = rayleigh(&v);
        let done = (l - lmin).abs() <= 1e-12 * l.abs();
        lmin = l;
        if done {
            break;
        }
    }
    if !(lmin > 0.0) {
        return f64::INFINITY;
    }
    lmax / lmin
}
