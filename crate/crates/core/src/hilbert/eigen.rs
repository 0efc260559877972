//! Dense Hermitian eigensolver (cyclic complex Jacobi).

use super::{dot, LabeledBasis, StateVector, C64};
use crate::error::{Error, Result};

/// Max `|H_ij - conj(H_ji)|` tolerated on construction.
pub const HERMITICITY_TOLERANCE: f64 = 1e-12;
/// Bound on `||H v - lambda v||_inf` for every returned pair.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

/// Dense row-major Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl HermitianMatrix {
    pub fn new(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        let m = Self { dim, data };
        let asymmetry = m.asymmetry();
        if asymmetry > HERMITICITY_TOLERANCE {
            return Err(Error::NotHermitian { asymmetry });
        }
        Ok(m)
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .fold(C64::new(0.0, 0.0), |acc, (h, x)| acc + h * x)
            })
            .collect()
    }

    /// `max_i |(H v)_i - lambda v_i|`.
    pub fn residual(&self, lambda: f64, v: &[C64]) -> f64 {
        self.mul_vec(v)
            .iter()
            .zip(v)
            .map(|(hv, x)| (hv - lambda * x).norm())
            .fold(0.0, f64::max)
    }
}

/// Full eigensystem, ascending eigenvalues. Degenerate eigenvalues are
/// allowed here; [`Eigensystem::into_labeled_basis`] rejects them.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    pub max_residual: f64,
    pub sweeps: usize,
}

impl Eigensystem {
    pub fn into_labeled_basis(self) -> Result<LabeledBasis> {
        let vectors = self
            .vectors
            .into_iter()
            .map(StateVector::new)
            .collect::<Result<Vec<_>>>()?;
        LabeledBasis::new(vectors, self.eigenvalues)
    }
}

/// Diagonalizes `h` by cyclic Jacobi rotations.
///
/// Eigenvectors are gauge-fixed so that their largest-magnitude component is
/// real and positive. Eigenvalues closer than `1e-9 * spectral range` form a
/// degenerate block, which is re-orthonormalized and ordered by the position
/// of each vector's largest-magnitude component.
pub fn hermitian_eigen(h: &HermitianMatrix) -> Result<Eigensystem> {
    let n = h.dim;
    let gauge = real_gauge(h);
    let (diagonal, columns, sweeps, off) = match &gauge {
        Some(g) => {
            let (d, cols, sweeps, off) = jacobi_real(h, g)?;
            // Undo the diagonal gauge: v = G v'.
            let cols = cols
                .into_iter()
                .map(|col| col.iter().zip(g).map(|(x, gk)| gk * x).collect())
                .collect();
            (d, cols, sweeps, off)
        }
        None => jacobi_complex(h)?,
    };

    let (pairs, max_residual) = sorted_pairs(h, diagonal, columns);
    if max_residual > RESIDUAL_TOLERANCE {
        return Err(Error::NoConvergence {
            sweeps,
            off_diagonal: off,
            residual: max_residual,
        });
    }
    debug_assert_eq!(pairs.len(), n);
    let (eigenvalues, vectors) = pairs.into_iter().unzip();
    Ok(Eigensystem {
        eigenvalues,
        vectors,
        max_residual,
        sweeps,
    })
}

type JacobiOutput = (Vec<f64>, Vec<Vec<C64>>, usize, f64);

/// Diagonal phases `g` such that `G^dagger H G` is real, when they exist.
/// Covers real matrices and Hermitian tridiagonal ones.
fn real_gauge(h: &HermitianMatrix) -> Option<Vec<C64>> {
    let n = h.dim;
    let one = C64::new(1.0, 0.0);
    let mut g = vec![one; n];
    let tridiagonal =
        (0..n).all(|i| (0..n).all(|j| i.abs_diff(j) <= 1 || h.get(i, j).norm() == 0.0));
    if tridiagonal {
        for k in 0..n - 1 {
            let sub = h.get(k + 1, k);
            g[k + 1] = if sub.norm() > 0.0 {
                g[k] * sub / sub.norm()
            } else {
                g[k]
            };
        }
    }
    let scale = h.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let real = (0..n)
        .all(|i| (0..n).all(|j| (g[i].conj() * h.get(i, j) * g[j]).im.abs() <= 1e-15 * scale));
    real.then_some(g)
}

fn rows_of<T: Copy>(v: &[T], n: usize) -> Vec<Vec<T>> {
    v.chunks(n).map(<[T]>::to_vec).collect()
}

fn jacobi_complex(h: &HermitianMatrix) -> Result<JacobiOutput> {
    let n = h.dim;
    let mut a = h.data.clone();
    let mut v = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        v[i * n + i] = C64::new(1.0, 0.0);
        a[i * n + i] = C64::new(a[i * n + i].re, 0.0);
    }
    let norm = |z: &C64| z.norm_sqr();
    let scale = a
        .iter()
        .map(norm)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    let mut off = off_diagonal_norm(&a, n, norm);
    while off > 1e-15 * scale {
        if sweeps == MAX_SWEEPS {
            return Err(no_convergence(sweeps, off));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, n, p, q);
            }
        }
        off = off_diagonal_norm(&a, n, norm);
    }
    let diagonal = (0..n).map(|i| a[i * n + i].re).collect();
    Ok((diagonal, rows_of(&v, n), sweeps, off))
}

fn jacobi_real(h: &HermitianMatrix, g: &[C64]) -> Result<JacobiOutput> {
    let n = h.dim;
    let mut a: Vec<f64> = (0..n * n)
        .map(|idx| (g[idx / n].conj() * h.data[idx] * g[idx % n]).re)
        .collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = |x: &f64| x * x;
    let scale = a
        .iter()
        .map(norm)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    let mut off = off_diagonal_norm(&a, n, norm);
    while off > 1e-15 * scale {
        if sweeps == MAX_SWEEPS {
            return Err(no_convergence(sweeps, off));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate_real(&mut a, &mut v, n, p, q);
            }
        }
        off = off_diagonal_norm(&a, n, norm);
    }
    let diagonal = (0..n).map(|i| a[i * n + i]).collect();
    let columns = rows_of(&v, n)
        .into_iter()
        .map(|col| col.into_iter().map(|x| C64::new(x, 0.0)).collect())
        .collect();
    Ok((diagonal, columns, sweeps, off))
}

fn no_convergence(sweeps: usize, off: f64) -> Error {
    Error::NoConvergence {
        sweeps,
        off_diagonal: off,
        residual: f64::NAN,
    }
}

fn off_diagonal_norm<T>(a: &[T], n: usize, norm_sqr: impl Fn(&T) -> f64) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += norm_sqr(&a[i * n + j]);
            }
        }
    }
    s.sqrt()
}

/// Zeroes `a[p][q]` with the unitary `J = [[c, s e^{i phi}], [-s e^{-i phi}, c]]`,
/// `A <- J^dagger A J`, `V <- V J` with `V` stored transposed.
fn rotate(a: &mut [C64], v: &mut [C64], n: usize, p: usize, q: usize) {
    let g = a[p * n + q];
    let gabs = g.norm();
    if gabs == 0.0 {
        return;
    }
    let app = a[p * n + p].re;
    let aqq = a[q * n + q].re;
    // Skip rotations that cannot change the diagonal in floating point.
    if gabs < 1e-300
        || (app.abs() + gabs * 1e17 == app.abs() && aqq.abs() + gabs * 1e17 == aqq.abs())
    {
        a[p * n + q] = C64::new(0.0, 0.0);
        a[q * n + p] = C64::new(0.0, 0.0);
        return;
    }
    let phase = g / gabs;
    let zeta = (aqq - app) / (2.0 * gabs);
    let t = if zeta >= 0.0 {
        1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
    } else {
        -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let s_e = phase * s; // s e^{i phi}
    let s_ec = s_e.conj(); // s e^{-i phi}

    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = akp * c - s_ec * akq;
        a[k * n + q] = s_e * akp + akq * c;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = apk * c - s_e * aqk;
        a[q * n + k] = s_ec * apk + aqk * c;
    }
    a[p * n + q] = C64::new(0.0, 0.0);
    a[q * n + p] = C64::new(0.0, 0.0);
    a[p * n + p] = C64::new(app - t * gabs, 0.0);
    a[q * n + q] = C64::new(aqq + t * gabs, 0.0);

    // `v` holds eigenvector columns as rows.
    let (head, tail) = v.split_at_mut(q * n);
    for (x, y) in head[p * n..(p + 1) * n].iter_mut().zip(&mut tail[..n]) {
        let (vp, vq) = (*x, *y);
        *x = vp * c - s_ec * vq;
        *y = s_e * vp + vq * c;
    }
}

/// Real symmetric counterpart of [`rotate`].
fn rotate_real(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let g = a[p * n + q];
    if g == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    if app.abs() + g.abs() * 1e17 == app.abs() && aqq.abs() + g.abs() * 1e17 == aqq.abs() {
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        return;
    }
    let theta = (aqq - app) / (2.0 * g);
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // Off-block entries of rows p and q, then mirror into the columns.
    let (head, tail) = a.split_at_mut(q * n);
    for (x, y) in head[p * n..(p + 1) * n].iter_mut().zip(&mut tail[..n]) {
        let (apk, aqk) = (*x, *y);
        *x = c * apk - s * aqk;
        *y = s * apk + c * aqk;
    }
    for k in 0..n {
        a[k * n + p] = a[p * n + k];
        a[k * n + q] = a[q * n + k];
    }
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    a[p * n + p] = app - t * g;
    a[q * n + q] = aqq + t * g;
    let (head, tail) = v.split_at_mut(q * n);
    for (x, y) in head[p * n..(p + 1) * n].iter_mut().zip(&mut tail[..n]) {
        let (vp, vq) = (*x, *y);
        *x = c * vp - s * vq;
        *y = s * vp + c * vq;
    }
}

fn sorted_pairs(
    h: &HermitianMatrix,
    diagonal: Vec<f64>,
    columns: Vec<Vec<C64>>,
) -> (Vec<(f64, Vec<C64>)>, f64) {
    let n = h.dim;
    let mut pairs: Vec<(f64, Vec<C64>)> = diagonal.into_iter().zip(columns).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let range = pairs.last().unwrap().0 - pairs[0].0;
    let tol = 1e-9 * range.max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pairs[end].0 - pairs[end - 1].0 <= tol {
            end += 1;
        }
        if end - start > 1 {
            stabilize_block(&mut pairs[start..end]);
        }
        start = end;
    }
    for (_, vec) in pairs.iter_mut() {
        fix_gauge(vec);
    }

    let residual = pairs
        .iter()
        .map(|(l, vec)| h.residual(*l, vec))
        .fold(0.0, f64::max);
    (pairs, residual)
}

fn stabilize_block(block: &mut [(f64, Vec<C64>)]) {
    // Modified Gram-Schmidt inside the block.
    for i in 0..block.len() {
        for j in 0..i {
            let (head, tail) = block.split_at_mut(i);
            let proj = dot(&head[j].1, &tail[0].1);
            for (x, y) in tail[0].1.iter_mut().zip(&head[j].1) {
                *x -= proj * y;
            }
        }
        let norm = block[i].1.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        block[i].1.iter_mut().for_each(|z| *z /= norm);
    }
    block.sort_by_key(|(_, vec)| leading_index(vec));
}

fn leading_index(v: &[C64]) -> usize {
    let mut best = 0;
    for (i, z) in v.iter().enumerate() {
        if z.norm() > v[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    best
}

fn fix_gauge(v: &mut [C64]) {
    let lead = v[leading_index(v)];
    let phase = lead.conj() / lead.norm();
    v.iter_mut().for_each(|z| *z *= phase);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn diagonal_matrix_sorted() {
        let h = HermitianMatrix::from_fn(3, |i, j| {
            if i == j {
                c([2.0, -1.0, 0.5][i], 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
        .unwrap();
        let e = hermitian_eigen(&h).unwrap();
        assert_eq!(e.eigenvalues, vec![-1.0, 0.5, 2.0]);
        assert!((e.vectors[0][1] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((e.vectors[2][0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pauli_x_half() {
        let h = HermitianMatrix::new(2, vec![c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)])
            .unwrap();
        let e = hermitian_eigen(&h).unwrap();
        assert!((e.eigenvalues[0] + 0.5).abs() < 1e-15);
        assert!((e.eigenvalues[1] - 0.5).abs() < 1e-15);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // (|0> - |1>)/sqrt2 and (|0> + |1>)/sqrt2 up to phase.
        let minus = [c(r, 0.0), c(-r, 0.0)];
        let plus = [c(r, 0.0), c(r, 0.0)];
        assert!((dot(&minus, &e.vectors[0]).norm() - 1.0).abs() < 1e-14);
        assert!((dot(&plus, &e.vectors[1]).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spin_one_jx_from_characteristic_polynomial() {
        // J_x for j = 1 has off-diagonals 1/sqrt2; det(J_x - l) = -l^3 + l,
        // roots -1, 0, 1.
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let h = HermitianMatrix::from_fn(3, |i, j| {
            if i.abs_diff(j) == 1 {
                c(r, 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
        .unwrap();
        let e = hermitian_eigen(&h).unwrap();
        for (got, want) in e.eigenvalues.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        assert!(e.max_residual < 1e-12);
    }

    #[test]
    fn complex_hermitian_residuals() {
        let h = HermitianMatrix::from_fn(6, |i, j| {
            let (i, j) = (i as f64, j as f64);
            if i == j {
                c(i * 0.3 - 1.0, 0.0)
            } else if i < j {
                c((i + 2.0 * j).sin(), (i * j + 1.0).cos())
            } else {
                c((j + 2.0 * i).sin(), -(i * j + 1.0).cos())
            }
        })
        .unwrap();
        let e = hermitian_eigen(&h).unwrap();
        assert!(e.max_residual < 1e-12);
        let basis = e.into_labeled_basis().unwrap();
        assert!(basis.orthonormality_deviation() < 1e-12);
    }

    #[test]
    fn degenerate_block_is_deterministic() {
        // diag(1, 1, 2)
        let h = HermitianMatrix::from_fn(3, |i, j| match (i, j) {
            (2, 2) => c(2.0, 0.0),
            (0, 0) | (1, 1) => c(1.0, 0.0),
            _ => c(0.0, 0.0),
        })
        .unwrap();
        let e1 = hermitian_eigen(&h).unwrap();
        let e2 = hermitian_eigen(&h).unwrap();
        assert_eq!(e1.vectors, e2.vectors);
        assert!((e1.vectors[0][0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((e1.vectors[1][1] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(e1.into_labeled_basis().is_err());
    }

    #[test]
    fn non_hermitian_rejected() {
        let err = HermitianMatrix::new(2, vec![c(0.0, 0.0), c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0)])
            .unwrap_err();
        assert!(matches!(err, Error::NotHermitian { .. }));
    }
}
