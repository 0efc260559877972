//! Finite-dimensional Hilbert-space primitives.
//!
//! States are dense complex amplitude lists in a fixed reference basis. A
//! [`LabeledBasis`] is an orthonormal set of such states carrying strictly
//! increasing real eigenvalues; every other module expresses its quantities
//! as functions of those eigenvalues.

mod eigen;

pub use eigen::{hermitian_eigen, Eigensystem, HermitianMatrix};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Inputs whose norm deviates from one by more than this are rejected.
pub const NORM_ACCEPTANCE: f64 = 1e-6;
/// Pairwise orthonormality tolerance of a [`LabeledBasis`].
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { hbar: 1.0 }
    }
}

impl PhysicalConstants {
    pub fn new(hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::invalid("hbar", "must be positive and finite"));
        }
        Ok(Self { hbar })
    }
}

/// A normalized state in the reference basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    amplitudes: Vec<C64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl StateVector {
    /// Accepts amplitudes whose norm is already one to within 1e-6 and
    /// removes the residual deviation.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = l2_norm(&amplitudes);
        if (norm - 1.0).abs() > NORM_ACCEPTANCE || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self::rescaled(amplitudes, norm))
    }

    /// Normalizes an arbitrary nonzero amplitude list.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = l2_norm(&amplitudes);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self::rescaled(amplitudes, norm))
    }

    pub fn basis_state(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(Error::invalid(
                "index",
                format!("{index} >= dimension {dim}"),
            ));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
        amplitudes[index] = C64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            label: None,
        })
    }

    fn rescaled(mut amplitudes: Vec<C64>, norm: f64) -> Self {
        if norm != 1.0 {
            let inv = 1.0 / norm;
            amplitudes.iter_mut().for_each(|z| *z *= inv);
        }
        Self {
            amplitudes,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amplitudes)
    }

    /// Multiplies every amplitude by `exp(i theta)`.
    pub fn with_global_phase(&self, theta: f64) -> Self {
        let f = C64::from_polar(1.0, theta);
        Self {
            amplitudes: self.amplitudes.iter().map(|z| z * f).collect(),
            label: self.label.clone(),
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::DimensionTooSmall(dim))
    } else {
        Ok(())
    }
}

fn l2_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn dot(bra: &[C64], ket: &[C64]) -> C64 {
    bra.iter()
        .zip(ket)
        .fold(C64::new(0.0, 0.0), |acc, (b, k)| acc + b.conj() * k)
}

/// `<psi|phi>`.
pub fn inner(psi: &StateVector, phi: &StateVector) -> Result<C64> {
    if psi.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.dim(),
            found: phi.dim(),
        });
    }
    Ok(dot(&psi.amplitudes, &phi.amplitudes))
}

/// Orthonormal basis with strictly increasing eigenvalues `x_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBasis {
    vectors: Vec<StateVector>,
    eigenvalues: Vec<f64>,
}

impl LabeledBasis {
    pub fn new(vectors: Vec<StateVector>, eigenvalues: Vec<f64>) -> Result<Self> {
        let basis = Self::new_unchecked(vectors, eigenvalues)?;
        let deviation = basis.orthonormality_deviation();
        if deviation > ORTHONORMALITY_TOLERANCE {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(basis)
    }

    /// Validates shapes and eigenvalue ordering but skips the O(d^3)
    /// orthonormality check. Callers must run [`Self::orthonormality_deviation`]
    /// themselves when the vectors are not known to be orthonormal.
    pub fn new_unchecked(vectors: Vec<StateVector>, eigenvalues: Vec<f64>) -> Result<Self> {
        let d = vectors.len();
        check_dim(d)?;
        if eigenvalues.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: eigenvalues.len(),
            });
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.dim(),
            });
        }
        for i in 1..d {
            if !(eigenvalues[i] > eigenvalues[i - 1]) {
                return Err(Error::EigenvaluesNotIncreasing { index: i });
            }
        }
        Ok(Self {
            vectors,
            eigenvalues,
        })
    }

    /// The reference basis itself, labeled by `eigenvalues`.
    pub fn canonical(eigenvalues: Vec<f64>) -> Result<Self> {
        let d = eigenvalues.len();
        let vectors = (0..d)
            .map(|k| StateVector::basis_state(d, k))
            .collect::<Result<Vec<_>>>()?;
        Self::new_unchecked(vectors, eigenvalues)
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &[StateVector] {
        &self.vectors
    }

    pub fn vector(&self, m: usize) -> &StateVector {
        &self.vectors[m]
    }

    /// `x_{m+1} - x_m`; the last point reuses the preceding interval.
    pub fn spacing(&self, m: usize) -> f64 {
        let x = &self.eigenvalues;
        if m + 1 < x.len() {
            x[m + 1] - x[m]
        } else {
            x[m] - x[m - 1]
        }
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|m| self.spacing(m)).collect()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacings().into_iter().fold(0.0, f64::max)
    }

    /// Index of the eigenvalue closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, &xi) in self.eigenvalues.iter().enumerate() {
            if (xi - x).abs() < (self.eigenvalues[best] - x).abs() {
                best = i;
            }
        }
        best
    }

    /// `<m|psi>` for every basis vector, in eigenvalue order.
    pub fn amplitudes_of(&self, psi: &StateVector) -> Result<Vec<C64>> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: psi.dim(),
            });
        }
        Ok(self
            .vectors
            .iter()
            .map(|m| dot(&m.amplitudes, &psi.amplitudes))
            .collect())
    }

    /// `sum_m c_m |m>` in the reference basis (not normalized).
    pub fn synthesize(&self, coefficients: &[C64]) -> Vec<C64> {
        let d = self.dim();
        let mut out = vec![C64::new(0.0, 0.0); d];
        for (c, v) in coefficients.iter().zip(&self.vectors) {
            if *c == C64::new(0.0, 0.0) {
                continue;
            }
            for (o, a) in out.iter_mut().zip(&v.amplitudes) {
                *o += c * a;
            }
        }
        out
    }

    /// Max `|<j|k> - delta_jk|` over all pairs.
    pub fn orthonormality_deviation(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for j in 0..d {
            for k in j..d {
                let g = dot(&self.vectors[j].amplitudes, &self.vectors[k].amplitudes);
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }

    /// Max `|(W W^dagger - 1)_jk|` for the overlap matrix `W_jk = <j|k'>`
    /// between this basis and `other`.
    pub fn change_of_basis_residual(&self, other: &LabeledBasis) -> Result<f64> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let d = self.dim();
        let w: Vec<Vec<C64>> = self
            .vectors
            .iter()
            .map(|j| {
                other
                    .vectors
                    .iter()
                    .map(|k| dot(&j.amplitudes, &k.amplitudes))
                    .collect()
            })
            .collect();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for s in r..d {
                let g = dot(&w[s], &w[r]);
                let target = if r == s { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        Ok(worst)
    }
}

/// `(x_m, <m|psi>)` pairs ordered by eigenvalue.
pub fn expand(psi: &StateVector, basis: &LabeledBasis) -> Result<Vec<(f64, C64)>> {
    let amps = basis.amplitudes_of(psi)?;
    Ok(basis.eigenvalues.iter().copied().zip(amps).collect())
}

/// `sum_m exp(i phase_m) |m><m|`.
#[derive(Debug, Clone)]
pub struct DiagonalUnitary<'a> {
    basis: &'a LabeledBasis,
    phases: Vec<f64>,
}

impl<'a> DiagonalUnitary<'a> {
    pub fn new(basis: &'a LabeledBasis, phases: Vec<f64>) -> Result<Self> {
        if phases.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: phases.len(),
            });
        }
        Ok(Self { basis, phases })
    }

    /// `exp(-i x_m t / hbar)`, the evolution generated by the basis labels.
    pub fn evolution(basis: &'a LabeledBasis, t: f64, constants: PhysicalConstants) -> Self {
        let phases = basis
            .eigenvalues()
            .iter()
            .map(|x| -x * t / constants.hbar)
            .collect();
        Self { basis, phases }
    }

    pub fn basis(&self) -> &LabeledBasis {
        self.basis
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }
}

pub fn apply_diagonal(u: &DiagonalUnitary<'_>, psi: &StateVector) -> Result<StateVector> {
    let amps = u.basis.amplitudes_of(psi)?;
    let rotated: Vec<C64> = amps
        .iter()
        .zip(&u.phases)
        .map(|(a, &p)| a * C64::from_polar(1.0, p))
        .collect();
    let out = StateVector::new(u.basis.synthesize(&rotated))?;
    Ok(match psi.label() {
        Some(l) => out.with_label(l),
        None => out,
    })
}

/// Evolves both states with `exp(-i x_m t / hbar)` over the generator basis.
/// `|<b(t)|a(t)>|` equals `|<b|a>|` for every `t`.
pub fn frame_shift(
    a: &StateVector,
    b: &StateVector,
    generator: &LabeledBasis,
    t: f64,
    constants: PhysicalConstants,
) -> Result<(StateVector, StateVector)> {
    let u = DiagonalUnitary::evolution(generator, t, constants);
    Ok((apply_diagonal(&u, a)?, apply_diagonal(&u, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn plus_x() -> StateVector {
        StateVector::new(vec![c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)]).unwrap()
    }

    fn plus_y() -> StateVector {
        StateVector::new(vec![c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)]).unwrap()
    }

    #[test]
    fn self_overlap_is_one() {
        let z = inner(&plus_y(), &plus_y()).unwrap();
        assert!((z - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn plus_y_plus_x_overlap() {
        // <+y|+x> = (1 - i)/2 by hand.
        let z = inner(&plus_y(), &plus_x()).unwrap();
        assert!((z - c(0.5, -0.5)).norm() < 1e-15);
        assert!((z.norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_pair() {
        let e0 = StateVector::basis_state(3, 0).unwrap();
        let e2 = StateVector::basis_state(3, 2).unwrap();
        assert_eq!(inner(&e0, &e2).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e0 = StateVector::basis_state(3, 0).unwrap();
        let err = inner(&e0, &plus_x()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn construction_guards() {
        assert!(matches!(
            StateVector::new(vec![c(1.0, 0.0)]),
            Err(Error::DimensionTooSmall(1))
        ));
        assert!(matches!(
            StateVector::new(vec![c(1.0, 0.0), c(0.01, 0.0)]),
            Err(Error::NotNormalized { .. })
        ));
        let nearly = StateVector::new(vec![c(1.0 + 5e-7, 0.0), c(0.0, 0.0)]).unwrap();
        assert!((nearly.norm() - 1.0).abs() < 1e-15);
        assert!(matches!(
            StateVector::normalized(vec![c(0.0, 0.0); 2]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn basis_vector_expansion_is_kronecker() {
        let basis = LabeledBasis::canonical(vec![-1.0, 0.0, 2.0]).unwrap();
        let psi = StateVector::basis_state(3, 1).unwrap();
        let e = expand(&psi, &basis).unwrap();
        assert_eq!(e.len(), 3);
        for (k, (x, a)) in e.iter().enumerate() {
            assert_eq!(*x, basis.eigenvalues()[k]);
            let want = if k == 1 { 1.0 } else { 0.0 };
            assert!((a - c(want, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn plus_x_in_z_basis() {
        let basis = LabeledBasis::canonical(vec![-0.5, 0.5]).unwrap();
        let e = expand(&plus_x(), &basis).unwrap();
        assert!((e[0].1 - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((e[1].1 - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn basis_rejects_unordered_or_non_orthonormal() {
        assert!(matches!(
            LabeledBasis::canonical(vec![0.0, 0.0]),
            Err(Error::EigenvaluesNotIncreasing { index: 1 })
        ));
        let err = LabeledBasis::new(vec![plus_x(), plus_y()], vec![0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotOrthonormal { .. }));
    }

    #[test]
    fn spacing_reuses_last_interval() {
        let basis = LabeledBasis::canonical(vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(basis.spacings(), vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn diagonal_identity_and_global_phase() {
        let z = LabeledBasis::canonical(vec![-0.5, 0.5]).unwrap();
        let id = DiagonalUnitary::new(&z, vec![0.0, 0.0]).unwrap();
        let out = apply_diagonal(&id, &plus_x()).unwrap();
        assert!((inner(&out, &plus_x()).unwrap() - c(1.0, 0.0)).norm() < 1e-15);

        let global = DiagonalUnitary::new(&z, vec![0.7, 0.7]).unwrap();
        let out = apply_diagonal(&global, &plus_x()).unwrap();
        let before = inner(&plus_y(), &plus_x()).unwrap().norm();
        let after = inner(&plus_y(), &out).unwrap().norm();
        assert!((before - after).abs() < 1e-15);
    }

    #[test]
    fn aligning_phases_map_plus_x_onto_plus_y() {
        // z basis ordered by eigenvalue: |1> (-1/2) then |0> (+1/2).
        // Phases -pi/4 on |0> and +pi/4 on |1>.
        use std::f64::consts::FRAC_PI_4;
        let z = LabeledBasis::new(
            vec![
                StateVector::basis_state(2, 1).unwrap(),
                StateVector::basis_state(2, 0).unwrap(),
            ],
            vec![-0.5, 0.5],
        )
        .unwrap();
        let u = DiagonalUnitary::new(&z, vec![FRAC_PI_4, -FRAC_PI_4]).unwrap();
        let out = apply_diagonal(&u, &plus_x()).unwrap();
        assert!((inner(&plus_y(), &out).unwrap().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frame_shift_at_zero_is_identity() {
        let z = LabeledBasis::canonical(vec![-0.5, 0.5]).unwrap();
        let (a, b) = frame_shift(&plus_x(), &plus_y(), &z, 0.0, Default::default()).unwrap();
        assert_eq!(a.amplitudes(), plus_x().amplitudes());
        assert_eq!(b.amplitudes(), plus_y().amplitudes());
    }
}
