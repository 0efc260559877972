//! Intermediate measurements: resolution kernels, minimal-decoherence
//! operators, exact joint statistics and the high-resolution regime.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{finite_differences, stationary_points, ActionProfile};
use crate::error::{Error, Result};
use crate::experiments::table::{Cell, ResultTable};
use crate::hilbert::{inner, LabeledBasis, StateVector, C64};

/// Allowed `|sum_r P(r|x_m) - 1|`.
pub const KERNEL_COMPLETENESS_TOLERANCE: f64 = 1e-12;
/// Allowed elementwise deviation of `sum_r M(r)^dag M(r)` from the identity.
pub const POVM_TOLERANCE: f64 = 1e-10;
/// Pass threshold for the kernel-curvature to action-curvature ratio.
pub const DEFAULT_NONDISTURBANCE_THRESHOLD: f64 = 0.1;
/// Guard band between the quantum and least-action regimes.
pub const REGIME_GUARD_FACTOR: f64 = 10.0;
/// Outcomes closer than this many resolutions to a spectrum end are edge outcomes.
pub const EDGE_RESOLUTIONS: f64 = 3.0;

/// Conditional outcome probabilities `P(r|x_m)`, stored as `table[r][m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionKernel {
    pub r_grid: Vec<f64>,
    pub table: Vec<Vec<f64>>,
    /// Gaussian standard deviation; `None` for kernels without one.
    pub resolution: Option<f64>,
    /// Grid the kernel was built on, used for edge flags.
    pub x_grid: Vec<f64>,
    /// `sum_r P(r|x_m)` before renormalization.
    pub raw_row_sums: Vec<f64>,
}

/// Gaussian kernel on the eigenvalue grid,
/// `P(r|x_m) = dx / (sqrt(2 pi) s) exp(-(x_m - x_r)^2 / (2 s^2))`,
/// renormalized over `r` for each `m`. `dx` is the outcome-grid spacing.
pub fn gaussian_kernel(basis: &LabeledBasis, resolution: f64) -> Result<ResolutionKernel> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::invalid("resolution", "must be positive and finite"));
    }
    let x = basis.eigenvalues().to_vec();
    let spacing = basis.spacings();
    let norm = (2.0 * PI).sqrt() * resolution;
    let mut table: Vec<Vec<f64>> = x
        .iter()
        .zip(&spacing)
        .map(|(&xr, &dr)| {
            x.iter()
                .map(|&xm| dr / norm * (-(xm - xr).powi(2) / (2.0 * resolution * resolution)).exp())
                .collect()
        })
        .collect();
    let raw_row_sums = column_sums(&table, x.len());
    for row in &mut table {
        for (p, s) in row.iter_mut().zip(&raw_row_sums) {
            *p /= s;
        }
    }
    Ok(ResolutionKernel {
        r_grid: x.clone(),
        table,
        resolution: Some(resolution),
        x_grid: x,
        raw_row_sums,
    })
}

/// Sharp measurement: `P(r|x_m) = delta_rm`.
pub fn projective_kernel(basis: &LabeledBasis) -> ResolutionKernel {
    let x = basis.eigenvalues().to_vec();
    let d = x.len();
    let table = (0..d)
        .map(|r| (0..d).map(|m| if r == m { 1.0 } else { 0.0 }).collect())
        .collect();
    ResolutionKernel {
        r_grid: x.clone(),
        table,
        resolution: None,
        x_grid: x,
        raw_row_sums: vec![1.0; d],
    }
}

fn column_sums(table: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut sums = vec![0.0; d];
    for row in table {
        for (s, p) in sums.iter_mut().zip(row) {
            *s += p;
        }
    }
    sums
}

impl ResolutionKernel {
    /// Kernel from an explicit table `table[r][m]`.
    pub fn from_table(
        r_grid: Vec<f64>,
        x_grid: Vec<f64>,
        table: Vec<Vec<f64>>,
        resolution: Option<f64>,
    ) -> Result<Self> {
        if table.len() != r_grid.len() {
            return Err(Error::DimensionMismatch {
                expected: r_grid.len(),
                found: table.len(),
            });
        }
        for row in &table {
            if row.len() != x_grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: x_grid.len(),
                    found: row.len(),
                });
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::invalid(
                    "table",
                    "entries must be finite and non-negative",
                ));
            }
        }
        let raw_row_sums = column_sums(&table, x_grid.len());
        let kernel = Self {
            r_grid,
            table,
            resolution,
            x_grid,
            raw_row_sums,
        };
        let deviation = kernel.completeness_deviation();
        if deviation > KERNEL_COMPLETENESS_TOLERANCE {
            return Err(Error::IncompleteKernel { deviation });
        }
        Ok(kernel)
    }

    pub fn outcomes(&self) -> usize {
        self.r_grid.len()
    }

    pub fn dim(&self) -> usize {
        self.x_grid.len()
    }

    /// `max_m |sum_r P(r|x_m) - 1|`.
    pub fn completeness_deviation(&self) -> f64 {
        column_sums(&self.table, self.dim())
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Outcomes within `EDGE_RESOLUTIONS` resolutions of either spectrum end.
    pub fn is_edge(&self, r: usize) -> bool {
        let Some(s) = self.resolution else {
            return false;
        };
        let (lo, hi) = (self.x_grid[0], self.x_grid[self.dim() - 1]);
        let x = self.r_grid[r];
        x - lo < EDGE_RESOLUTIONS * s || hi - x < EDGE_RESOLUTIONS * s
    }

    pub fn nearest_outcome(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, &r) in self.r_grid.iter().enumerate() {
            if (r - x).abs() < (self.r_grid[best] - x).abs() {
                best = i;
            }
        }
        best
    }

    /// Kernel matrix as a table with columns `r, x_r, m, x_m, P`.
    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new("kernel", &["r", "x_r", "m", "x_m", "P"]);
        for (r, row) in self.table.iter().enumerate() {
            for (m, &p) in row.iter().enumerate() {
                t.push_row(vec![
                    r.into(),
                    self.r_grid[r].into(),
                    m.into(),
                    self.x_grid[m].into(),
                    p.into(),
                ])
                .expect("fixed width");
            }
        }
        t
    }
}

/// Minimal-decoherence operators `M(r) = sum_m sqrt(P(r|x_m)) |m><m|`.
#[derive(Debug, Clone)]
pub struct MeasurementOperatorSet {
    pub basis: LabeledBasis,
    pub kernel: ResolutionKernel,
    /// `amplitudes[r][m] = sqrt(P(r|x_m))`.
    pub amplitudes: Vec<Vec<f64>>,
}

pub fn build_measurement(
    kernel: ResolutionKernel,
    basis: &LabeledBasis,
) -> Result<MeasurementOperatorSet> {
    if kernel.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: kernel.dim(),
        });
    }
    let deviation = kernel.completeness_deviation();
    if deviation > KERNEL_COMPLETENESS_TOLERANCE {
        return Err(Error::IncompleteKernel { deviation });
    }
    let amplitudes = kernel
        .table
        .iter()
        .map(|row| row.iter().map(|p| p.sqrt()).collect())
        .collect();
    Ok(MeasurementOperatorSet {
        basis: basis.clone(),
        kernel,
        amplitudes,
    })
}

impl MeasurementOperatorSet {
    /// Largest elementwise deviation of `sum_r M(r)^dag M(r)` from the
    /// identity, evaluated in the reference basis.
    pub fn povm_deviation(&self) -> f64 {
        let d = self.basis.dim();
        let weights = column_sums(&self.kernel.table, d);
        let vectors = self.basis.vectors();
        (0..d)
            .into_par_iter()
            .map(|i| {
                let mut worst: f64 = 0.0;
                for k in 0..d {
                    let mut acc = C64::new(0.0, 0.0);
                    for (v, w) in vectors.iter().zip(&weights) {
                        let a = v.amplitudes();
                        acc += a[i] * a[k].conj() * *w;
                    }
                    if i == k {
                        acc -= 1.0;
                    }
                    worst = worst.max(acc.norm());
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `<b|M(r)|a>` for every outcome `r`.
    pub fn transition_amplitudes(&self, a: &StateVector, b: &StateVector) -> Result<Vec<C64>> {
        let am = self.basis.amplitudes_of(a)?;
        let bm = self.basis.amplitudes_of(b)?;
        let products: Vec<C64> = bm.iter().zip(&am).map(|(b, a)| b.conj() * a).collect();
        Ok(self
            .amplitudes
            .iter()
            .map(|row| row.iter().zip(&products).map(|(s, p)| p * *s).sum())
            .collect())
    }
}

/// Exact statistics of an intermediate measurement followed by a final
/// measurement in a complete basis. Tables are indexed `[r][b]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDistribution {
    pub r_grid: Vec<f64>,
    pub b_grid: Vec<f64>,
    /// `P(r, b | a)`.
    pub table: Vec<Vec<f64>>,
    /// `P(b | a)` without the intermediate measurement.
    pub baseline: Vec<f64>,
    /// `sum_r P(r, b | a)`.
    pub marginal: Vec<f64>,
    /// `P(r | a, b) = P(r, b | a) / sum_r P(r, b | a)`.
    pub conditional: Vec<Vec<f64>>,
    /// `P(r | a, b) P(b | a)`.
    pub factorized: Vec<Vec<f64>>,
    /// `|marginal - baseline|` per `b`.
    pub disturbance: Vec<f64>,
    /// `sum_b |marginal - baseline|`.
    pub total_variation: f64,
    /// `max |P(r, b | a) - P(r | a, b) P(b | a)|`.
    pub factorization_residual: f64,
}

pub fn joint_distribution(
    a: &StateVector,
    final_basis: &LabeledBasis,
    ops: &MeasurementOperatorSet,
) -> Result<JointDistribution> {
    let d = ops.basis.dim();
    if final_basis.dim() != d || a.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if a.dim() != d {
                a.dim()
            } else {
                final_basis.dim()
            },
        });
    }
    let am = ops.basis.amplitudes_of(a)?;
    // overlaps[b][m] = <b|m>
    let overlaps: Vec<Vec<C64>> = final_basis
        .vectors()
        .par_iter()
        .map(|bv| {
            ops.basis
                .vectors()
                .iter()
                .map(|mv| inner(bv, mv).expect("dimensions checked"))
                .collect()
        })
        .collect();
    let weighted: Vec<Vec<C64>> = overlaps
        .iter()
        .map(|row| row.iter().zip(&am).map(|(o, a)| o * a).collect())
        .collect();
    let table: Vec<Vec<f64>> = ops
        .amplitudes
        .par_iter()
        .map(|sq| {
            weighted
                .iter()
                .map(|w| {
                    w.iter()
                        .zip(sq)
                        .map(|(v, s)| v * *s)
                        .sum::<C64>()
                        .norm_sqr()
                })
                .collect()
        })
        .collect();
    let baseline: Vec<f64> = weighted
        .iter()
        .map(|w| w.iter().sum::<C64>().norm_sqr())
        .collect();
    let nb = final_basis.dim();
    let mut marginal = vec![0.0; nb];
    for row in &table {
        for (s, p) in marginal.iter_mut().zip(row) {
            *s += p;
        }
    }
    let conditional: Vec<Vec<f64>> = table
        .iter()
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .map(|(p, s)| if *s > 0.0 { p / s } else { 0.0 })
                .collect()
        })
        .collect();
    let factorized: Vec<Vec<f64>> = conditional
        .iter()
        .map(|row| row.iter().zip(&baseline).map(|(c, p)| c * p).collect())
        .collect();
    let factorization_residual = table
        .iter()
        .zip(&factorized)
        .flat_map(|(t, f)| t.iter().zip(f).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    let disturbance: Vec<f64> = marginal
        .iter()
        .zip(&baseline)
        .map(|(m, b)| (m - b).abs())
        .collect();
    Ok(JointDistribution {
        r_grid: ops.kernel.r_grid.clone(),
        b_grid: final_basis.eigenvalues().to_vec(),
        table,
        baseline,
        marginal,
        conditional,
        factorized,
        total_variation: disturbance.iter().sum(),
        disturbance,
        factorization_residual,
    })
}

impl JointDistribution {
    pub fn total_probability(&self) -> f64 {
        self.table.iter().flatten().sum()
    }

    /// Outcome maximizing `P(r | a, b)` for the final outcome index `b`.
    pub fn most_likely_outcome(&self, b: usize) -> usize {
        let mut best = 0;
        for r in 0..self.table.len() {
            if self.conditional[r][b] > self.conditional[best][b] {
                best = r;
            }
        }
        best
    }

    /// Columns `r, b, P, baseline, factorized, residual`.
    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new(
            "joint_distribution",
            &["r", "b", "P", "baseline", "factorized", "residual"],
        );
        for (r, row) in self.table.iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                let f = self.factorized[r][b];
                t.push_row(vec![
                    self.r_grid[r].into(),
                    self.b_grid[b].into(),
                    p.into(),
                    self.baseline[b].into(),
                    f.into(),
                    (p - f).abs().into(),
                ])
                .expect("fixed width");
            }
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }

    pub fn to_json(&self) -> String {
        self.to_table().to_json()
    }
}

/// Kernel curvature against action curvature at one intermediate point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NondisturbanceEntry {
    pub m: usize,
    pub x_m: f64,
    /// `max_r |d^2 P(r|x_m) / dx_m^2|`.
    pub kernel_curvature: f64,
    /// `|S''| / (2 pi hbar)`.
    pub action_scale: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondisturbanceReport {
    pub entries: Vec<NondisturbanceEntry>,
    /// Points of interest without a usable curvature.
    pub masked: Vec<usize>,
    pub max_ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Compares kernel curvature in `x_m` with `S''/(2 pi hbar)` at the grid
/// points nearest the stationary points, or at every point with a valid
/// curvature when there are none.
pub fn nondisturbance_check(
    kernel: &ResolutionKernel,
    profile: &ActionProfile,
    threshold: f64,
) -> Result<NondisturbanceReport> {
    if kernel.dim() != profile.dim() {
        return Err(Error::DimensionMismatch {
            expected: profile.dim(),
            found: kernel.dim(),
        });
    }
    let points = stationary_points(profile);
    let targets: Vec<(usize, Option<f64>)> = if points.is_empty() {
        (0..profile.dim())
            .map(|m| (m, profile.curvature[m]))
            .collect()
    } else {
        points
            .iter()
            .map(|s| (s.index_star, Some(s.curvature_at)))
            .collect()
    };
    let second: Vec<Vec<Option<f64>>> = kernel
        .table
        .iter()
        .map(|row| {
            let v: Vec<Option<f64>> = row.iter().map(|&p| Some(p)).collect();
            finite_differences(&v, &kernel.x_grid).1
        })
        .collect();
    let mut entries = Vec::new();
    let mut masked = Vec::new();
    for (m, curvature) in targets {
        let column: Option<Vec<f64>> = second.iter().map(|row| row[m]).collect();
        match (curvature, column) {
            (Some(c), Some(col)) if c != 0.0 => {
                let kernel_curvature = col.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let action_scale = c.abs() / (2.0 * PI * profile.hbar);
                entries.push(NondisturbanceEntry {
                    m,
                    x_m: profile.x_grid[m],
                    kernel_curvature,
                    action_scale,
                    ratio: kernel_curvature / action_scale,
                });
            }
            _ => masked.push(m),
        }
    }
    let max_ratio = entries.iter().map(|e| e.ratio).fold(0.0, f64::max);
    Ok(NondisturbanceReport {
        pass: !entries.is_empty() && max_ratio < threshold,
        entries,
        masked,
        max_ratio,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    LeastAction,
    Quantum,
    Boundary,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::LeastAction => "least-action",
            Regime::Quantum => "quantum",
            Regime::Boundary => "boundary",
        }
    }
}

/// Quantum when `1/dx_r > |dS/dx_m| / hbar` at `x_r`, least-action when
/// `1/dx_r < |dS/dx_m| / (10 hbar)`.
pub fn classify_regime(resolution: Option<f64>, gradient: f64, hbar: f64) -> Regime {
    let Some(s) = resolution else {
        return Regime::Quantum;
    };
    let scale = gradient.abs() / hbar;
    let inverse = 1.0 / s;
    if inverse > scale {
        Regime::Quantum
    } else if inverse * REGIME_GUARD_FACTOR < scale {
        Regime::LeastAction
    } else {
        Regime::Boundary
    }
}

pub fn regime_classifier(
    kernel: &ResolutionKernel,
    profile: &ActionProfile,
    r: usize,
) -> Result<Regime> {
    let g = profile.gradient_at(kernel.r_grid[r])?;
    Ok(classify_regime(kernel.resolution, g, profile.hbar))
}

/// Amplitude of a sharp Gaussian measurement at one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HighResolutionAmplitude {
    pub r: usize,
    pub x_r: f64,
    pub gradient: f64,
    /// `exp(-(dx_r dS/dx_m / hbar)^2)`.
    pub suppression: f64,
    /// Local linear-phase sum over the grid.
    pub integral: C64,
    /// Gaussian closed form.
    pub closed_form: C64,
    pub exact: C64,
    pub regime: Regime,
    pub edge: bool,
}

/// `(8 pi dx_r^2 / dx_m^2)^(1/4)`.
pub fn gaussian_prefactor(resolution: f64, spacing: f64) -> f64 {
    (8.0 * PI * resolution * resolution / (spacing * spacing)).powf(0.25)
}

/// Local amplitude `A e^{i S/hbar}` of the profile at grid point `m`, from the
/// envelope and unwrapped action, in the gauge of the triple products.
fn local_amplitude(profile: &ActionProfile, m: usize) -> Result<C64> {
    let (Some(env), Some(s)) = (profile.envelope[m], profile.s_unwrapped[m]) else {
        return Err(Error::NotApplicable(format!(
            "no profile data at index {m}"
        )));
    };
    Ok(C64::from_polar(env, s / profile.hbar))
}

/// Sharp-measurement amplitude at outcome `r`, estimated by summing
/// `sqrt(P(r|x_m)) exp(i g (x_m - x_r) / hbar)` over the grid with the local
/// profile amplitude, by the Gaussian closed form, and exactly.
pub fn high_res_amplitude(
    a: &StateVector,
    b: &StateVector,
    ops: &MeasurementOperatorSet,
    profile: &ActionProfile,
    r: usize,
) -> Result<HighResolutionAmplitude> {
    let kernel = &ops.kernel;
    let Some(resolution) = kernel.resolution else {
        return Err(Error::NotApplicable(
            "kernel has no Gaussian resolution".into(),
        ));
    };
    let x_r = kernel.r_grid[r];
    let gradient = profile.gradient_at(x_r)?;
    let h = profile.hbar;
    let regime = classify_regime(Some(resolution), gradient, h);
    if regime == Regime::LeastAction {
        return Err(Error::NotApplicable(format!(
            "outcome {x_r} lies in the least-action regime"
        )));
    }
    let m_r = profile
        .x_grid
        .iter()
        .position(|&x| x == x_r)
        .unwrap_or_else(|| ops.basis.nearest_index(x_r));
    let local = local_amplitude(profile, m_r)?;
    let integral: C64 = ops.amplitudes[r]
        .iter()
        .zip(&profile.x_grid)
        .map(|(s, &x)| C64::from_polar(*s, gradient * (x - x_r) / h))
        .sum::<C64>()
        * local;
    let suppression = (-(resolution * gradient / h).powi(2)).exp();
    let closed_form = local * gaussian_prefactor(resolution, profile.spacing[m_r]) * suppression;
    // Same gauge as the profile's triple products.
    let ba = profile.overlap;
    let gauge = if ba.norm() > 0.0 {
        ba.conj() / ba.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let exact = ops.transition_amplitudes(a, b)?[r] * gauge;
    Ok(HighResolutionAmplitude {
        r,
        x_r,
        gradient,
        suppression,
        integral,
        closed_form,
        exact,
        regime,
        edge: kernel.is_edge(r),
    })
}

/// Action gradient inferred from a measured amplitude magnitude at one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveredGradient {
    pub r: usize,
    pub x_r: f64,
    /// `|amplitude| / (|A| (8 pi dx_r^2/dx_m^2)^(1/4))`.
    pub suppression: f64,
    /// `hbar sqrt(-ln suppression) / dx_r`; `None` when the ratio exceeds one.
    pub magnitude: Option<f64>,
    pub profile_gradient: Option<f64>,
    pub edge: bool,
}

/// Inverts the Gaussian suppression of `|<b|M(r)|a>|` to recover `|dS/dx_m|`
/// at each outcome. `amplitudes` are indexed by outcome.
pub fn action_gradient_recovery(
    amplitudes: &[C64],
    kernel: &ResolutionKernel,
    profile: &ActionProfile,
) -> Result<Vec<RecoveredGradient>> {
    let Some(resolution) = kernel.resolution else {
        return Err(Error::NotApplicable(
            "kernel has no Gaussian resolution".into(),
        ));
    };
    if amplitudes.len() != kernel.outcomes() {
        return Err(Error::DimensionMismatch {
            expected: kernel.outcomes(),
            found: amplitudes.len(),
        });
    }
    let h = profile.hbar;
    Ok(amplitudes
        .iter()
        .enumerate()
        .map(|(r, amp)| {
            let x_r = kernel.r_grid[r];
            let m = profile
                .x_grid
                .iter()
                .position(|&x| x == x_r)
                .unwrap_or_else(|| nearest(&profile.x_grid, x_r));
            let suppression = profile.envelope[m]
                .filter(|&e| e > 0.0)
                .map(|e| amp.norm() / (e * gaussian_prefactor(resolution, profile.spacing[m])))
                .unwrap_or(f64::NAN);
            let magnitude = (suppression > 0.0 && suppression <= 1.0)
                .then(|| h * (-suppression.ln()).sqrt() / resolution);
            RecoveredGradient {
                r,
                x_r,
                suppression,
                magnitude,
                profile_gradient: profile.gradient_at(x_r).ok(),
                edge: kernel.is_edge(r),
            }
        })
        .collect())
}

fn nearest(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &g) in grid.iter().enumerate() {
        if (g - x).abs() < (grid[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Result rows for one kernel applied to a profile: per-outcome regime and
/// edge flags.
pub fn regime_table(kernel: &ResolutionKernel, profile: &ActionProfile) -> ResultTable {
    let mut t = ResultTable::new("regimes", &["r", "x_r", "gradient", "regime", "edge"]);
    for r in 0..kernel.outcomes() {
        let g = profile.gradient_at(kernel.r_grid[r]).ok();
        let regime = g.map(|g| classify_regime(kernel.resolution, g, profile.hbar));
        t.push_row(vec![
            r.into(),
            kernel.r_grid[r].into(),
            g.into(),
            regime.map_or(Cell::Missing, |x| x.label().into()),
            kernel.is_edge(r).into(),
        ])
        .expect("fixed width");
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{action_profile, ProfileOptions};
    use crate::hilbert::PhysicalConstants;
    use crate::models::{qubit_system, spin_system_shared};

    fn grid(d: usize) -> LabeledBasis {
        LabeledBasis::canonical((0..d).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn narrow_gaussian_is_projective() {
        let k = gaussian_kernel(&grid(20), 0.01).unwrap();
        for (r, row) in k.table.iter().enumerate() {
            for (m, &p) in row.iter().enumerate() {
                let target = if r == m { 1.0 } else { 0.0 };
                assert!((p - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_rows_symmetric_and_normalized() {
        let k = gaussian_kernel(&grid(41), 2.0).unwrap();
        assert!(k.completeness_deviation() < 1e-12);
        let m = 20;
        let column: Vec<f64> = k.table.iter().map(|row| row[m]).collect();
        let top = (0..41)
            .max_by(|&i, &j| column[i].total_cmp(&column[j]))
            .unwrap();
        assert_eq!(top, m);
        for d in 1..=20 {
            assert!((column[m - d] - column[m + d]).abs() < 1e-12);
        }
        // Interior raw sums reproduce the continuum normalization.
        for s in [2.0, 3.0] {
            let k = gaussian_kernel(&grid(61), s).unwrap();
            assert!((k.raw_row_sums[30] - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn rejects_incomplete_and_negative_tables() {
        let x = vec![0.0, 1.0];
        let bad = vec![vec![0.5, 0.5], vec![0.4, 0.5]];
        assert!(matches!(
            ResolutionKernel::from_table(x.clone(), x.clone(), bad, None),
            Err(Error::IncompleteKernel { .. })
        ));
        let negative = vec![vec![1.5, 0.0], vec![-0.5, 1.0]];
        assert!(ResolutionKernel::from_table(x.clone(), x, negative, None).is_err());
        assert!(gaussian_kernel(&grid(3), 0.0).is_err());
    }

    fn binary_kernel(q: f64) -> ResolutionKernel {
        let x = vec![-0.5, 0.5];
        // Outcome +1/2 reports |0> (the +1/2 state) with probability 1 - q.
        let table = vec![vec![1.0 - q, q], vec![q, 1.0 - q]];
        ResolutionKernel::from_table(x.clone(), x, table, None).unwrap()
    }

    #[test]
    fn qubit_binary_operator_elements() {
        let sys = qubit_system();
        let z = sys.basis("z").unwrap();
        let a = sys.eigenstate("x", 0.5).unwrap();
        let b = sys.eigenstate("y", 0.5).unwrap();
        for q in [0.0, 0.1, 0.3, 0.5] {
            let ops = build_measurement(binary_kernel(q), z).unwrap();
            assert!(ops.povm_deviation() < 1e-12);
            let amp = ops.transition_amplitudes(&a, &b).unwrap()[1];
            let expected = C64::new((1.0 - q).sqrt() / 2.0, -q.sqrt() / 2.0);
            assert!((amp - expected).norm() < 1e-12, "q={q}: {amp}");
        }
    }

    #[test]
    fn qubit_disturbance_cases() {
        let sys = qubit_system();
        let z = sys.basis("z").unwrap();
        let a = sys.eigenstate("x", 0.5).unwrap();
        for q in [0.0, 0.2, 0.5] {
            let ops = build_measurement(binary_kernel(q), z).unwrap();
            let jd = joint_distribution(&a, sys.basis("y").unwrap(), &ops).unwrap();
            assert!((jd.marginal[1] - 0.5).abs() < 1e-12);
            assert!((jd.baseline[1] - 0.5).abs() < 1e-12);
            assert!(jd.total_variation < 1e-12);
            assert!((jd.total_probability() - 1.0).abs() < 1e-12);
        }
        let ops = build_measurement(projective_kernel(z), z).unwrap();
        let jd = joint_distribution(&a, sys.basis("x").unwrap(), &ops).unwrap();
        assert!((jd.baseline[1] - 1.0).abs() < 1e-12);
        assert!((jd.marginal[1] - 0.5).abs() < 1e-12);
        assert!((jd.disturbance[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projective_limit_matches_two_step_statistics() {
        let sys = spin_system_shared(3.0).unwrap();
        let z = sys.basis("z").unwrap();
        let y = sys.basis("y").unwrap();
        let a = sys.eigenstate("x", 1.0).unwrap();
        let ops = build_measurement(gaussian_kernel(z, 0.01).unwrap(), z).unwrap();
        let jd = joint_distribution(&a, y, &ops).unwrap();
        for (r, row) in jd.table.iter().enumerate() {
            let ma = inner(z.vector(r), &a).unwrap().norm_sqr();
            for (k, &p) in row.iter().enumerate() {
                let bm = inner(y.vector(k), z.vector(r)).unwrap().norm_sqr();
                assert!((p - bm * ma).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn csv_has_joint_columns() {
        let sys = qubit_system();
        let z = sys.basis("z").unwrap();
        let ops = build_measurement(binary_kernel(0.2), z).unwrap();
        let a = sys.eigenstate("x", 0.5).unwrap();
        let jd = joint_distribution(&a, sys.basis("y").unwrap(), &ops).unwrap();
        let csv = jd.to_csv();
        assert!(csv.starts_with("r,b,P,baseline,factorized,residual\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn regime_boundaries() {
        assert_eq!(classify_regime(Some(5.0), 0.0, 1.0), Regime::Quantum);
        assert_eq!(classify_regime(None, 3.0, 1.0), Regime::Quantum);
        assert_eq!(classify_regime(Some(1e6), 0.1, 1.0), Regime::LeastAction);
        assert_eq!(classify_regime(Some(2.0), 1.0, 1.0), Regime::Boundary);
        // Scaling hbar with the gradient leaves the label unchanged.
        assert_eq!(classify_regime(Some(2.0), 2.0, 2.0), Regime::Boundary);
    }

    #[test]
    fn coarse_kernel_passes_projective_fails() {
        let sys = spin_system_shared(20.0).unwrap();
        let z = sys.basis("z").unwrap();
        let a = sys.eigenstate("x", 10.0).unwrap();
        let b = sys.eigenstate("y", 10.0).unwrap();
        let c = PhysicalConstants::default();
        let p = action_profile(&a, z, &b, c, ProfileOptions::adaptive()).unwrap();
        let dxm = stationary_points(&p)[0].delta_x_m;
        let mut last = f64::INFINITY;
        for f in [1.0, 2.0, 4.0, 8.0] {
            let k = gaussian_kernel(z, f * dxm).unwrap();
            let rep = nondisturbance_check(&k, &p, DEFAULT_NONDISTURBANCE_THRESHOLD).unwrap();
            assert!(rep.max_ratio < last);
            last = rep.max_ratio;
        }
        let coarse = gaussian_kernel(z, 10.0 * dxm).unwrap();
        assert!(nondisturbance_check(&coarse, &p, 0.1).unwrap().pass);
        let sharp = nondisturbance_check(&projective_kernel(z), &p, 0.1).unwrap();
        assert!(!sharp.pass && sharp.max_ratio > 1.0);
    }
}
