//! Action phases `S = hbar Arg(<b|m><m|a><a|b>)`, their profiles over an
//! intermediate basis, stationary points and the identities built on them.
//!
//! A profile can optionally be coarse-grained with a Gaussian window before
//! its phase is read. Systems whose intermediate amplitudes carry two
//! interfering branches (spin) produce a raw phase that jumps by multiples
//! of `pi/2` between neighbours; the window isolates the slowly varying
//! branch phase. The window's effect on a locally Gaussian-chirp branch is
//! inverted in closed form, so the reported gradient, curvature and
//! envelope refer to the unsmoothed branch.

use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::table::{Cell, ResultTable};
use crate::hilbert::{
    dot, inner, DiagonalUnitary, LabeledBasis, PhysicalConstants, StateVector, C64,
};

/// Triple products with smaller magnitude have no usable phase.
pub const ABSOLUTE_PHASE_FLOOR: f64 = 1e-12;
/// Smoothed points are masked when the part of their window cut off by the
/// grid ends could contribute more than this fraction of the smoothed value.
pub const TRUNCATION_TOLERANCE: f64 = 1e-2;
/// Smoothed points whose window attenuates the branch by more than this
/// factor are masked.
pub const MAX_WINDOW_SUPPRESSION: f64 = 1e6;
/// Default relative mask threshold for profiles.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 1e-10;

/// `<b|m><m|a><a|b>`.
pub fn triple_product(a: &StateVector, m: &StateVector, b: &StateVector) -> Result<C64> {
    Ok(inner(b, m)? * inner(m, a)? * inner(a, b)?)
}

/// `hbar Arg(<b|m><m|a><a|b>)` in `(-pi hbar, pi hbar]`.
pub fn action_phase(
    a: &StateVector,
    m: &StateVector,
    b: &StateVector,
    constants: PhysicalConstants,
) -> Result<f64> {
    let t = triple_product(a, m, b)?;
    if t.norm() < ABSOLUTE_PHASE_FLOOR {
        return Err(Error::UndefinedPhase {
            magnitude: t.norm(),
        });
    }
    Ok(constants.hbar * principal(t.arg()))
}

/// Maps an angle into `(-pi, pi]`.
pub fn principal(theta: f64) -> f64 {
    let r = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// How the profile phase is read off the triple products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Smoothing {
    /// Point by point.
    None,
    /// Gaussian window of fixed standard deviation (eigenvalue units).
    Fixed { width: f64 },
    /// Window width tied to the resolution limit of the dominant stationary
    /// point, `width = fraction * delta_x_m`, found by fixed-point iteration.
    Adaptive { fraction: f64 },
}

/// Default `fraction` for [`Smoothing::Adaptive`].
pub const DEFAULT_ADAPTIVE_FRACTION: f64 = 0.28;
const ADAPTIVE_MAX_ITERATIONS: usize = 12;
const ADAPTIVE_RELATIVE_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOptions {
    /// Points with `|<b|m><m|a>|` below this fraction of the maximum are masked.
    pub validity_threshold: f64,
    pub smoothing: Smoothing,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            validity_threshold: DEFAULT_VALIDITY_THRESHOLD,
            smoothing: Smoothing::None,
        }
    }
}

impl ProfileOptions {
    pub fn smoothed(width: f64) -> Self {
        Self {
            smoothing: Smoothing::Fixed { width },
            ..Self::default()
        }
    }

    pub fn adaptive() -> Self {
        Self {
            smoothing: Smoothing::Adaptive {
                fraction: DEFAULT_ADAPTIVE_FRACTION,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.validity_threshold >= 0.0 && self.validity_threshold < 1.0) {
            return Err(Error::invalid("validity_threshold", "must lie in [0, 1)"));
        }
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, "must be positive and finite"))
            }
        };
        match self.smoothing {
            Smoothing::None => Ok(()),
            Smoothing::Fixed { width } => positive("smoothing.width", width),
            Smoothing::Adaptive { fraction } => positive("smoothing.fraction", fraction),
        }
    }
}

/// Action and density data over the eigenvalue grid of an intermediate basis.
///
/// Phase-derived columns are `None` on masked points. Actions, gradients and
/// curvatures carry a factor `hbar`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionProfile {
    pub hbar: f64,
    pub x_grid: Vec<f64>,
    pub spacing: Vec<f64>,
    pub s_raw: Vec<Option<f64>>,
    pub s_unwrapped: Vec<Option<f64>>,
    /// `|<b|m><m|a>|`.
    pub magnitude: Vec<f64>,
    pub valid: Vec<bool>,
    pub gradient: Vec<Option<f64>>,
    pub curvature: Vec<Option<f64>>,
    pub rho_a: Vec<f64>,
    pub rho_b: Vec<f64>,
    /// Slowly varying amplitude of `<b|m><m|a>`; equals `magnitude` without smoothing.
    pub envelope: Vec<Option<f64>>,
    pub overlap: C64,
    /// Width of the coarse-graining window actually used.
    pub smoothing_width: Option<f64>,
    /// `<b|m><m|a> exp(-i Arg<b|a>)`, summing to `|<b|a>|`.
    #[serde(skip)]
    pub(crate) series: Vec<C64>,
}

/// Builds the action profile of `a -> M -> b`.
pub fn action_profile(
    a: &StateVector,
    basis: &LabeledBasis,
    b: &StateVector,
    constants: PhysicalConstants,
    options: ProfileOptions,
) -> Result<ActionProfile> {
    options.validate()?;
    let am = basis.amplitudes_of(a)?; // <m|a>
    let bm = basis.amplitudes_of(b)?; // <m|b>
    let overlap = inner(b, a)?;
    let gauge = if overlap.norm() > 0.0 {
        overlap.conj() / overlap.norm()
    } else {
        C64::new(0.0, 0.0)
    };
    let series: Vec<C64> = am
        .iter()
        .zip(&bm)
        .map(|(ma, mb)| mb.conj() * ma * gauge)
        .collect();
    let x = basis.eigenvalues().to_vec();
    let spacing = basis.spacings();
    let magnitude: Vec<f64> = am
        .iter()
        .zip(&bm)
        .map(|(p, q)| p.norm() * q.norm())
        .collect();
    let rho_a = am
        .iter()
        .zip(&spacing)
        .map(|(p, dx)| p.norm_sqr() / dx)
        .collect();
    let rho_b = bm
        .iter()
        .zip(&spacing)
        .map(|(p, dx)| p.norm_sqr() / dx)
        .collect();

    let base = ActionProfile {
        hbar: constants.hbar,
        x_grid: x,
        spacing,
        s_raw: Vec::new(),
        s_unwrapped: Vec::new(),
        magnitude,
        valid: Vec::new(),
        gradient: Vec::new(),
        curvature: Vec::new(),
        rho_a,
        rho_b,
        envelope: Vec::new(),
        overlap,
        smoothing_width: None,
        series,
    };
    let threshold = options.validity_threshold;
    match options.smoothing {
        Smoothing::None => base.read_phases(None, threshold),
        Smoothing::Fixed { width } => base.read_phases(Some(width), threshold),
        Smoothing::Adaptive { fraction } => {
            let mut width = 2.0 * base.spacing.iter().copied().fold(0.0, f64::max);
            let mut profile = base.read_phases(Some(width), threshold)?;
            for _ in 0..ADAPTIVE_MAX_ITERATIONS {
                let Some(dominant) = stationary_points(&profile).into_iter().next() else {
                    break;
                };
                let next = fraction * dominant.delta_x_m;
                if (next - width).abs() <= ADAPTIVE_RELATIVE_STEP * width {
                    break;
                }
                match base.read_phases(Some(next), threshold) {
                    Ok(p) => {
                        profile = p;
                        width = next;
                    }
                    Err(_) => break,
                }
            }
            Ok(profile)
        }
    }
}

impl ActionProfile {
    /// Fills the phase-derived columns of a profile whose densities and
    /// triple products are already set.
    fn read_phases(&self, width: Option<f64>, threshold: f64) -> Result<Self> {
        let phased = match width {
            None => raw_phases(&self.series, &self.x_grid, threshold)?,
            Some(w) => smoothed_phases(&self.series, &self.x_grid, &self.spacing, w, threshold)?,
        };
        let h = self.hbar;
        let scale = |v: Vec<Option<f64>>| v.into_iter().map(|o| o.map(|s| s * h)).collect();
        let s_unwrapped: Vec<Option<f64>> = scale(phased.phase);
        let s_raw = s_unwrapped
            .iter()
            .map(|o| o.map(|s| h * principal(s / h)))
            .collect();
        let valid = s_unwrapped.iter().map(Option::is_some).collect();
        let envelope = match width {
            None => self.magnitude.iter().map(|&v| Some(v)).collect(),
            Some(_) => phased.envelope,
        };
        Ok(Self {
            s_raw,
            s_unwrapped,
            valid,
            gradient: scale(phased.gradient),
            curvature: scale(phased.curvature),
            envelope,
            smoothing_width: width,
            ..self.clone()
        })
    }
}

/// Phase columns in radians.
struct Phased {
    phase: Vec<Option<f64>>,
    gradient: Vec<Option<f64>>,
    curvature: Vec<Option<f64>>,
    envelope: Vec<Option<f64>>,
}

fn mask(values: &[C64], threshold: f64) -> Vec<bool> {
    let top = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    values
        .iter()
        .map(|z| {
            let m = z.norm();
            m > 0.0
                && m >= threshold * top
                && m >= ABSOLUTE_PHASE_FLOOR * top.max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Maximal runs of consecutive `true` entries as half-open ranges.
pub fn segments(valid: &[bool]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in valid.iter().chain(std::iter::once(&false)).enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn longest_segment(valid: &[bool]) -> usize {
    segments(valid).iter().map(|r| r.len()).max().unwrap_or(0)
}

/// Unwraps principal phases within one segment, keeping `anchor` at its
/// principal value and choosing each neighbour's multiple of `2 pi` to
/// minimize the jump.
pub fn unwrap_from(principal_phases: &[f64], anchor: usize) -> Vec<f64> {
    let n = principal_phases.len();
    let mut out = principal_phases.to_vec();
    for i in anchor + 1..n {
        out[i] = out[i - 1] + principal(principal_phases[i] - out[i - 1]);
    }
    for i in (0..anchor).rev() {
        out[i] = out[i + 1] + principal(principal_phases[i] - out[i + 1]);
    }
    out
}

fn unwrap_segments(values: &[C64], valid: &[bool]) -> Vec<Option<f64>> {
    let mut out = vec![None; values.len()];
    for seg in segments(valid) {
        let principal_phases: Vec<f64> = values[seg.clone()].iter().map(|z| z.arg()).collect();
        for (k, p) in unwrap_from(&principal_phases, 0).into_iter().enumerate() {
            out[seg.start + k] = Some(p);
        }
    }
    out
}

/// Three-point first and second derivatives on a non-uniform grid, defined
/// where the whole stencil is present.
pub fn finite_differences(
    values: &[Option<f64>],
    x: &[f64],
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let n = values.len();
    let mut d1 = vec![None; n];
    let mut d2 = vec![None; n];
    for i in 1..n.saturating_sub(1) {
        let (Some(f0), Some(f1), Some(f2)) = (values[i - 1], values[i], values[i + 1]) else {
            continue;
        };
        let h1 = x[i] - x[i - 1];
        let h2 = x[i + 1] - x[i];
        d1[i] = Some(
            -h2 / (h1 * (h1 + h2)) * f0 + (h2 - h1) / (h1 * h2) * f1 + h1 / (h2 * (h1 + h2)) * f2,
        );
        d2[i] = Some(2.0 * (f0 / (h1 * (h1 + h2)) - f1 / (h1 * h2) + f2 / (h2 * (h1 + h2))));
    }
    (d1, d2)
}

/// A usable profile needs one three-point stencil, or every point of a
/// two-level system.
fn check_sparsity(valid: &[bool]) -> Result<()> {
    let longest = longest_segment(valid);
    if longest < 3.min(valid.len()) {
        return Err(Error::ProfileTooSparse { longest });
    }
    Ok(())
}

fn raw_phases(series: &[C64], x: &[f64], threshold: f64) -> Result<Phased> {
    let valid = mask(series, threshold);
    check_sparsity(&valid)?;
    let phase = unwrap_segments(series, &valid);
    let (gradient, curvature) = finite_differences(&phase, x);
    Ok(Phased {
        phase,
        gradient,
        curvature,
        envelope: Vec::new(),
    })
}

/// Window weights `w(x_r, x_m)` normalized so `sum_m w = 1` for each `r`,
/// and per row the estimated amplitude lost where the window runs past the
/// grid ends.
fn window(x: &[f64], spacing: &[f64], width: f64, series: &[C64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let alpha = 1.0 / (4.0 * width * width);
    let n = x.len();
    let (first, last) = (series[0].norm(), series[n - 1].norm());
    let (h0, h1) = (spacing[0], spacing[n - 1]);
    x.iter()
        .map(|&xr| {
            let row: Vec<f64> = x
                .iter()
                .zip(spacing)
                .map(|(&xm, dx)| dx * (-(xr - xm).powi(2) * alpha).exp())
                .collect();
            let total: f64 = row.iter().sum();
            // Mass a full window would place beyond each end, continuing the
            // grid with the end spacing and the end amplitude.
            let tail = |d: f64, h: f64| -> f64 {
                (1..=64)
                    .map(|k| h * (-(d + k as f64 * h).powi(2) * alpha).exp())
                    .sum()
            };
            let missing = tail(xr - x[0], h0) * first + tail(x[n - 1] - xr, h1) * last;
            (
                row.into_iter().map(|w| w / total).collect(),
                missing / total,
            )
        })
        .unzip()
}

fn smoothed_phases(
    series: &[C64],
    x: &[f64],
    spacing: &[f64],
    width: f64,
    threshold: f64,
) -> Result<Phased> {
    let (rows, truncation) = window(x, spacing, width, series);
    let phased = invert_window(series, x, &rows, &truncation, width, threshold);
    check_sparsity(&phased.phase.iter().map(Option::is_some).collect::<Vec<_>>())?;
    Ok(phased)
}

/// Undoes a normalized Gaussian window `exp(-alpha v^2)` on a local
/// `exp(L0 + lambda v + mu v^2)`. Takes the windowed log `L_eff` and its
/// complex slope and half-curvature; returns `(L0, lambda, mu)`, or `None`
/// when the window integral would diverge or the window has suppressed the
/// branch beyond recovery.
fn deconvolve(log_eff: C64, lambda_eff: C64, mu_eff: C64, alpha: f64) -> Option<(C64, C64, C64)> {
    // The window maps the branch to
    // exp(L0 + ...) sqrt(alpha/(alpha - mu)) exp(lambda^2 / (4(alpha - mu)))
    // with lambda_eff = lambda alpha/(alpha - mu), mu_eff = mu alpha/(alpha - mu).
    let denom = alpha + mu_eff;
    if denom.norm() < 1e-12 * alpha {
        return None;
    }
    let mu = mu_eff * alpha / denom;
    let gap = alpha - mu;
    if gap.re <= 0.0 {
        return None;
    }
    let lambda = lambda_eff * gap / alpha;
    let log_true =
        log_eff - 0.5 * (C64::new(alpha, 0.0) / gap).ln() - lambda * lambda / (4.0 * gap);
    let attenuation = (log_eff.re - log_true.re).exp();
    if attenuation * MAX_WINDOW_SUPPRESSION < 1.0 {
        return None;
    }
    Some((log_true, lambda, mu))
}

fn invert_window(
    series: &[C64],
    x: &[f64],
    rows: &[Vec<f64>],
    truncation: &[f64],
    width: f64,
    threshold: f64,
) -> Phased {
    let smooth: Vec<C64> = rows
        .iter()
        .map(|row| row.iter().zip(series).map(|(wi, z)| z * *wi).sum())
        .collect();
    let valid = mask(&smooth, threshold);
    let eff_phase = unwrap_segments(&smooth, &valid);
    let eff_log_amp: Vec<Option<f64>> = smooth
        .iter()
        .zip(&valid)
        .map(|(z, &v)| v.then(|| z.norm().ln()))
        .collect();
    let (g_eff, c_eff) = finite_differences(&eff_phase, x);
    let (lg_eff, lc_eff) = finite_differences(&eff_log_amp, x);
    let alpha = 1.0 / (4.0 * width * width);
    let n = x.len();
    let mut out = Phased {
        phase: vec![None; n],
        gradient: vec![None; n],
        curvature: vec![None; n],
        envelope: vec![None; n],
    };
    for i in 0..n {
        // The closed form assumes an untruncated window.
        if truncation[i] > TRUNCATION_TOLERANCE * smooth[i].norm() {
            continue;
        }
        let (Some(p), Some(g), Some(c), Some(la), Some(lg), Some(lc)) = (
            eff_phase[i],
            g_eff[i],
            c_eff[i],
            eff_log_amp[i],
            lg_eff[i],
            lc_eff[i],
        ) else {
            continue;
        };
        let Some((log_true, lambda, mu)) = deconvolve(
            C64::new(la, p),
            C64::new(lg, g),
            C64::new(lc, c) / 2.0,
            alpha,
        ) else {
            continue;
        };
        out.phase[i] = Some(log_true.im);
        out.envelope[i] = Some(log_true.re.exp());
        out.gradient[i] = Some(lambda.im);
        out.curvature[i] = Some(2.0 * mu.im);
    }
    out
}

impl ActionProfile {
    pub fn dim(&self) -> usize {
        self.x_grid.len()
    }

    /// Re-unwraps the principal phases of the segment containing `anchor`.
    pub fn unwrap_from(&self, anchor: usize) -> Result<Vec<f64>> {
        let seg = segments(&self.valid)
            .into_iter()
            .find(|r| r.contains(&anchor))
            .ok_or(Error::UndefinedPhase {
                magnitude: self.magnitude.get(anchor).copied().unwrap_or(0.0),
            })?;
        let p: Vec<f64> = self.s_raw[seg.clone()]
            .iter()
            .map(|s| s.expect("valid segment") / self.hbar)
            .collect();
        Ok(unwrap_from(&p, anchor - seg.start)
            .into_iter()
            .map(|s| s * self.hbar)
            .collect())
    }

    /// Largest `|S_{m+1} - S_m|` between consecutive valid points.
    pub fn max_step(&self) -> f64 {
        self.s_unwrapped
            .windows(2)
            .filter_map(|w| Some((w[1]? - w[0]?).abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new(
            "action_profile",
            &[
                "index",
                "x_m",
                "S_raw",
                "S_unwrapped",
                "magnitude",
                "valid",
                "gradient",
                "curvature",
                "rho_a",
                "rho_b",
            ],
        );
        for i in 0..self.dim() {
            t.push_row(vec![
                Cell::Int(i as i64),
                Cell::Num(self.x_grid[i]),
                self.s_raw[i].into(),
                self.s_unwrapped[i].into(),
                Cell::Num(self.magnitude[i]),
                Cell::Flag(self.valid[i]),
                self.gradient[i].into(),
                self.curvature[i].into(),
                Cell::Num(self.rho_a[i]),
                Cell::Num(self.rho_b[i]),
            ])
            .expect("fixed column count");
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serialization is infallible")
    }

    /// Gradient linearly interpolated at `x`.
    pub fn gradient_at(&self, x: f64) -> Result<f64> {
        let g = &self.gradient;
        let grid = &self.x_grid;
        for i in 0..self.dim() {
            if grid[i] == x {
                if let Some(v) = g[i] {
                    return Ok(v);
                }
            }
            if i + 1 < self.dim() && grid[i] < x && x < grid[i + 1] {
                if let (Some(g0), Some(g1)) = (g[i], g[i + 1]) {
                    let f = (x - grid[i]) / (grid[i + 1] - grid[i]);
                    return Ok(g0 + f * (g1 - g0));
                }
            }
        }
        Err(Error::OutsideSupport { x })
    }
}

/// A point where the action gradient vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub x_star: f64,
    pub index_star: usize,
    pub curvature_at: f64,
    /// `sqrt(2 pi hbar / |S''|)`.
    pub delta_x_m: f64,
    /// `delta_x_m / dx_m`, the number of states inside the resolution limit.
    pub delta_n: f64,
    pub weak_value_magnitude: f64,
    pub action_at: f64,
    pub amplitude_at: f64,
    /// Magnitude of the part of `<b|a>` carried by this point's branch.
    pub branch_overlap: f64,
    /// Interpolated gradient at `x_star`.
    pub residual_gradient: f64,
}

impl StationaryPoint {
    /// Curvature predicted from the weak value,
    /// `(2 pi hbar / dx^2) |weak value|^2`.
    pub fn weak_value_curvature(&self, spacing: f64, hbar: f64) -> f64 {
        2.0 * PI * hbar / (spacing * spacing) * self.weak_value_magnitude.powi(2)
    }

    /// Relative disagreement between the profile curvature and the
    /// weak-value prediction.
    pub fn curvature_mismatch(&self, spacing: f64, hbar: f64) -> f64 {
        self.weak_value_curvature(spacing, hbar) / self.curvature_at.abs() - 1.0
    }

    /// `delta_n * |weak value|`; one when both routes agree.
    pub fn cross_route_product(&self) -> f64 {
        self.delta_n * self.weak_value_magnitude
    }
}

/// All sign changes of the gradient, refined by the vertex of the local
/// parabola, sorted by `|curvature|` descending.
pub fn stationary_points(p: &ActionProfile) -> Vec<StationaryPoint> {
    let n = p.dim();
    let mut picks: Vec<usize> = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let (Some(g0), Some(g1)) = (p.gradient[i], p.gradient[i + 1]) else {
            continue;
        };
        if g0 == 0.0 || g0.signum() != g1.signum() || g1 == 0.0 {
            let k = if g0.abs() <= g1.abs() { i } else { i + 1 };
            if picks.last() != Some(&k) {
                picks.push(k);
            }
        }
    }

    let mut points: Vec<(usize, f64)> = picks
        .into_iter()
        .filter_map(|k| {
            let g = p.gradient[k]?;
            let c = p.curvature[k]?;
            let mut x = p.x_grid[k];
            if c != 0.0 {
                let shift = -g / c;
                let cell = if shift >= 0.0 {
                    p.spacing[k]
                } else {
                    p.x_grid[k] - p.x_grid[k.saturating_sub(1)]
                };
                if shift.abs() <= cell {
                    x += shift;
                }
            }
            Some((k, x))
        })
        .collect();
    points.dedup_by(|a, b| a.1 == b.1);

    let branch = branch_overlaps(p, &points.iter().map(|q| q.1).collect::<Vec<_>>());
    let mut out: Vec<StationaryPoint> = points
        .iter()
        .zip(branch)
        .map(|(&(k, x), branch_overlap)| {
            let g = p.gradient[k].unwrap();
            let c = p.curvature[k].unwrap();
            let u = x - p.x_grid[k];
            let action_at = p.s_unwrapped[k].unwrap() + g * u + 0.5 * c * u * u;
            let amplitude_at = p.envelope[k].unwrap_or(p.magnitude[k]);
            let delta_x_m = (2.0 * PI * p.hbar / c.abs()).sqrt();
            StationaryPoint {
                x_star: x,
                index_star: nearest(&p.x_grid, x),
                curvature_at: c,
                delta_x_m,
                delta_n: delta_x_m / p.spacing[k],
                weak_value_magnitude: amplitude_at / branch_overlap,
                action_at,
                amplitude_at,
                branch_overlap,
                residual_gradient: p.gradient_at(x).unwrap_or(g + c * u),
            }
        })
        .collect();
    out.sort_by(|a, b| b.curvature_at.abs().total_cmp(&a.curvature_at.abs()));
    out
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

/// Share of `|<b|a>|` attributed to each stationary point.
///
/// Without smoothing every point sees the full overlap. With smoothing each
/// grid point's contribution is split between the points in proportion to
/// how much of its window falls in each point's nearest-neighbour cell.
fn branch_overlaps(p: &ActionProfile, xs: &[f64]) -> Vec<f64> {
    let total = p.overlap.norm();
    let Some(width) = p.smoothing_width else {
        return vec![total; xs.len()];
    };
    if xs.len() < 2 {
        return vec![total; xs.len()];
    }
    let cell_of = |x: f64| {
        let mut best = 0;
        for (k, &s) in xs.iter().enumerate() {
            if (x - s).abs() < (x - xs[best]).abs() {
                best = k;
            }
        }
        best
    };
    let cells: Vec<usize> = p.x_grid.iter().map(|&x| cell_of(x)).collect();
    let mut sums = vec![C64::new(0.0, 0.0); xs.len()];
    for (m, &xm) in p.x_grid.iter().enumerate() {
        let weights: Vec<f64> = p
            .x_grid
            .iter()
            .map(|&xr| (-(xr - xm).powi(2) / (4.0 * width * width)).exp())
            .collect();
        let norm: f64 = weights.iter().sum();
        let mut share = vec![0.0; xs.len()];
        for (r, w) in weights.iter().enumerate() {
            share[cells[r]] += w / norm;
        }
        for (k, s) in share.iter().enumerate() {
            sums[k] += p.series[m] * *s;
        }
    }
    sums.into_iter().map(|z| z.norm()).collect()
}

/// `(2 pi hbar / dx_m^2) |<b|m><m|a> / <b|a>|^2`.
pub fn curvature_weak_value(
    a: &StateVector,
    m: &StateVector,
    spacing: f64,
    b: &StateVector,
    constants: PhysicalConstants,
) -> Result<f64> {
    let ba = inner(b, a)?;
    if ba.norm() < ABSOLUTE_PHASE_FLOOR {
        return Err(Error::NotApplicable(
            "<b|a> vanishes; weak value undefined".into(),
        ));
    }
    if !(spacing > 0.0) {
        return Err(Error::invalid("spacing", "must be positive"));
    }
    let weak = (inner(b, m)? * inner(m, a)? / ba).norm();
    Ok(2.0 * PI * constants.hbar / (spacing * spacing) * weak * weak)
}

/// Diagonal unitary with phases `-S(a,m,b)/hbar` wherever the triple
/// product is nonzero and zero elsewhere, together with the achieved
/// `|<b|U|a>|`.
pub fn aligned_unitary<'a>(
    a: &StateVector,
    basis: &'a LabeledBasis,
    b: &StateVector,
    constants: PhysicalConstants,
) -> Result<(DiagonalUnitary<'a>, f64)> {
    let am = basis.amplitudes_of(a)?;
    let bm = basis.amplitudes_of(b)?;
    let ab = inner(a, b)?;
    let triples: Vec<C64> = am.iter().zip(&bm).map(|(p, q)| q.conj() * p * ab).collect();
    // Every nonzero term is aligned, however small: leaving masked terms at
    // phase zero costs more than 1e-12 of the maximum at j = 200.
    let valid: Vec<bool> = triples.iter().map(|t| t.norm() > 0.0).collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::UndefinedPhase { magnitude: 0.0 });
    }
    let phases: Vec<f64> = triples
        .iter()
        .zip(&valid)
        .map(|(t, &v)| {
            if v {
                -action_of(*t, constants) / constants.hbar
            } else {
                0.0
            }
        })
        .collect();
    let achieved = diagonal_overlap(&am, &bm, &phases).norm();
    Ok((DiagonalUnitary::new(basis, phases)?, achieved))
}

fn action_of(t: C64, constants: PhysicalConstants) -> f64 {
    constants.hbar * principal(t.arg())
}

/// `<b|U|a>` for `U = sum_m exp(i phase_m)|m><m|`, from the amplitudes
/// `<m|a>`, `<m|b>`.
pub fn diagonal_overlap(am: &[C64], bm: &[C64], phases: &[f64]) -> C64 {
    let rotated: Vec<C64> = am
        .iter()
        .zip(phases)
        .map(|(p, &th)| p * C64::from_polar(1.0, th))
        .collect();
    dot(bm, &rotated)
}

/// Stationary-phase reconstruction of `<b|a>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapEstimate {
    /// Estimate carrying the global phase of the exact overlap.
    pub estimate: C64,
    pub exact: C64,
    /// `|estimate| / |exact|`.
    pub magnitude_ratio: f64,
    /// `| |estimate| - |exact| | / |exact|`.
    pub relative_error: f64,
    /// Phase of the estimate relative to `Arg<b|a>`, radians.
    pub relative_phase: f64,
}

/// `sum_k (A_k / dx_k) sqrt(2 pi hbar / |S''_k|) exp(i(S_k/hbar + sgn(S''_k) pi/4))`,
/// with `A_k / dx_k = sqrt(rho_a rho_b)` at the point.
pub fn stationary_phase_overlap(
    p: &ActionProfile,
    points: &[StationaryPoint],
) -> Result<OverlapEstimate> {
    if points.is_empty() {
        return Err(Error::NotApplicable("no stationary points".into()));
    }
    let h = p.hbar;
    let relative: C64 = points
        .iter()
        .map(|s| {
            let density = s.amplitude_at / p.spacing[s.index_star];
            let width = (2.0 * PI * h / s.curvature_at.abs()).sqrt();
            let phase = s.action_at / h + FRAC_PI_4 * s.curvature_at.signum();
            C64::from_polar(density * width, phase)
        })
        .sum();
    let exact = p.overlap;
    let global = if exact.norm() > 0.0 {
        exact / exact.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let ratio = relative.norm() / exact.norm();
    Ok(OverlapEstimate {
        estimate: relative * global,
        exact,
        magnitude_ratio: ratio,
        relative_error: (ratio - 1.0).abs(),
        relative_phase: relative.arg(),
    })
}

/// `dS/dx_m` at `x`, linearly interpolated.
pub fn propagation_time(p: &ActionProfile, x: f64) -> Result<f64> {
    p.gradient_at(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::qubit_system;

    fn hbar(h: f64) -> PhysicalConstants {
        PhysicalConstants::new(h).unwrap()
    }

    #[test]
    fn qubit_golden_actions() {
        let q = qubit_system();
        let a = q.eigenstate("x", 0.5).unwrap();
        let b = q.eigenstate("y", 0.5).unwrap();
        let up = q.eigenstate("z", 0.5).unwrap();
        let down = q.eigenstate("z", -0.5).unwrap();
        let c = PhysicalConstants::default();
        assert!((action_phase(&a, &up, &b, c).unwrap() - FRAC_PI_4).abs() < 1e-15);
        assert!((action_phase(&a, &down, &b, c).unwrap() + FRAC_PI_4).abs() < 1e-15);
        // a is itself an eigenvector of the intermediate basis.
        assert!(action_phase(&a, &a, &b, c).unwrap().abs() < 1e-15);
        // Orthogonal intermediate state has no phase.
        let minus_x = q.eigenstate("x", -0.5).unwrap();
        assert!(matches!(
            action_phase(&a, &minus_x, &b, c),
            Err(Error::UndefinedPhase { .. })
        ));
    }

    #[test]
    fn principal_range() {
        assert_eq!(principal(PI), PI);
        assert_eq!(principal(-PI), PI);
        assert!((principal(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn qubit_profile_values() {
        let q = qubit_system();
        let a = q.eigenstate("x", 0.5).unwrap();
        let b = q.eigenstate("y", 0.5).unwrap();
        let p = action_profile(
            &a,
            q.basis("z").unwrap(),
            &b,
            PhysicalConstants::default(),
            ProfileOptions::default(),
        )
        .unwrap();
        // Ascending order: |1> (-1/2) then |0> (+1/2).
        assert!((p.s_raw[0].unwrap() + FRAC_PI_4).abs() < 1e-15);
        assert!((p.s_raw[1].unwrap() - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(p.s_raw, p.s_unwrapped);
        assert!(p.gradient.iter().all(Option::is_none));
        assert!(stationary_points(&p).is_empty());
    }

    #[test]
    fn sparse_profile_rejected() {
        let x: Vec<f64> = (0..6).map(f64::from).collect();
        let basis = LabeledBasis::canonical(x).unwrap();
        let r = 0.5f64.sqrt();
        let z = C64::new(0.0, 0.0);
        let a = StateVector::new(vec![C64::new(r, 0.0), z, z, C64::new(r, 0.0), z, z]).unwrap();
        let b = StateVector::new(vec![C64::new(r, 0.0), C64::new(r, 0.0), z, z, z, z]).unwrap();
        let err = action_profile(&a, &basis, &b, hbar(1.0), ProfileOptions::default()).unwrap_err();
        assert_eq!(err, Error::ProfileTooSparse { longest: 1 });
    }

    #[test]
    fn qubit_aligned_unitary_reaches_one() {
        let q = qubit_system();
        let a = q.eigenstate("x", 0.5).unwrap();
        let b = q.eigenstate("y", 0.5).unwrap();
        let (u, achieved) =
            aligned_unitary(&a, q.basis("z").unwrap(), &b, PhysicalConstants::default()).unwrap();
        assert!((achieved - 1.0).abs() < 1e-15);
        // Basis order is (-1/2, +1/2): phases (+pi/4, -pi/4).
        assert!((u.phases()[0] - FRAC_PI_4).abs() < 1e-15);
        assert!((u.phases()[1] + FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn finite_differences_exact_on_parabola() {
        let x = [0.0, 0.5, 1.5, 3.0, 3.2];
        let f: Vec<Option<f64>> = x.iter().map(|&v| Some(2.0 * v * v - v + 1.0)).collect();
        let (d1, d2) = finite_differences(&f, &x);
        assert!(d1[0].is_none() && d1[4].is_none());
        for i in 1..4 {
            assert!((d1[i].unwrap() - (4.0 * x[i] - 1.0)).abs() < 1e-12);
            assert!((d2[i].unwrap() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unwrap_independent_of_anchor() {
        let truth: Vec<f64> = (0..40)
            .map(|k| 0.02 * (k as f64).powi(2) - 0.3 * k as f64)
            .collect();
        let wrapped: Vec<f64> = truth.iter().map(|&t| principal(t)).collect();
        let base = unwrap_from(&wrapped, 0);
        for anchor in [7, 20, 39] {
            let other = unwrap_from(&wrapped, anchor);
            let shift = other[0] - base[0];
            assert!((shift / (2.0 * PI) - (shift / (2.0 * PI)).round()).abs() < 1e-12);
            for (u, v) in base.iter().zip(&other) {
                assert!((v - u - shift).abs() < 1e-12);
            }
        }
        for (u, t) in base.iter().zip(&truth) {
            assert!((u - t - (base[0] - truth[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn segments_split_on_masks() {
        let v = [true, true, false, true, true, true, false];
        assert_eq!(segments(&v), vec![0..2, 3..6]);
    }

    /// Chirped Gaussian amplitudes with known gradient and curvature.
    fn chirp_profile(width: Option<f64>) -> ActionProfile {
        let x: Vec<f64> = (0..401).map(|k| k as f64 - 200.0).collect();
        let basis = LabeledBasis::canonical(x.clone()).unwrap();
        // <m|a> real Gaussian, <m|b> chirped so S(x) = g0 x + c x^2 / 2.
        let (g0, c) = (0.3, -0.01);
        let env = |v: f64| (-(v * v) / 80000.0).exp();
        let a =
            StateVector::normalized(x.iter().map(|&v| C64::new(env(v), 0.0)).collect()).unwrap();
        let b = StateVector::normalized(
            x.iter()
                .map(|&v| C64::from_polar(env(v), -(g0 * v + 0.5 * c * v * v)))
                .collect(),
        )
        .unwrap();
        let options = match width {
            Some(w) => ProfileOptions::smoothed(w),
            None => ProfileOptions::default(),
        };
        action_profile(&a, &basis, &b, hbar(1.0), options).unwrap()
    }

    #[test]
    fn chirp_gradient_and_stationary_point() {
        for width in [None, Some(2.0)] {
            let p = chirp_profile(width);
            let i = 200 + 10;
            assert!((p.gradient[i].unwrap() - 0.2).abs() < 1e-3, "{width:?}");
            assert!(
                (p.curvature[i].unwrap() / -0.01 - 1.0).abs() < 1e-2,
                "{width:?}"
            );
            let pts = stationary_points(&p);
            assert_eq!(pts.len(), 1, "{width:?}");
            assert!((pts[0].x_star - 30.0).abs() < 0.05, "{}", pts[0].x_star);
            assert!(pts[0].residual_gradient.abs() < 1e-3);
            let est = stationary_phase_overlap(&p, &pts).unwrap();
            assert!(est.relative_error < 0.01, "{width:?} {est:?}");
        }
    }

    #[test]
    fn smoothing_recovers_envelope_and_phase() {
        let raw = chirp_profile(None);
        let smooth = chirp_profile(Some(2.0));
        for i in 100..300 {
            let e = smooth.envelope[i].unwrap();
            assert!((e / raw.magnitude[i] - 1.0).abs() < 1e-6, "{i}");
            let ds = smooth.s_unwrapped[i].unwrap() - raw.s_unwrapped[i].unwrap();
            let k = (ds / (2.0 * PI)).round();
            assert!((ds - 2.0 * PI * k).abs() < 1e-6, "{i} {ds}");
            assert!((smooth.gradient[i].unwrap() - raw.gradient[i].unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_phase_has_no_stationary_point() {
        let d = 50;
        let x: Vec<f64> = (0..d).map(|k| k as f64).collect();
        let basis = LabeledBasis::canonical(x.clone()).unwrap();
        let amp = 1.0 / (d as f64).sqrt();
        let a = StateVector::new(vec![C64::new(amp, 0.0); d]).unwrap();
        let b =
            StateVector::new(x.iter().map(|&v| C64::from_polar(amp, 0.1 * v)).collect()).unwrap();
        let p = action_profile(&a, &basis, &b, hbar(1.0), ProfileOptions::default()).unwrap();
        assert!(stationary_points(&p).is_empty());
        assert!((propagation_time(&p, 10.5).unwrap() + 0.1).abs() < 1e-12);
        assert!(propagation_time(&p, 0.0).is_err());
        assert!(propagation_time(&p, -3.0).is_err());
    }

    #[test]
    fn density_normalization() {
        let p = chirp_profile(None);
        let s: f64 = p.rho_a.iter().zip(&p.spacing).map(|(r, dx)| r * dx).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hbar_scales_actions() {
        let d = 30;
        let x: Vec<f64> = (0..d).map(|k| k as f64).collect();
        let basis = LabeledBasis::canonical(x.clone()).unwrap();
        let a = StateVector::normalized(x.iter().map(|&v| C64::new(1.0 + 0.01 * v, 0.0)).collect())
            .unwrap();
        let b = StateVector::normalized(
            x.iter()
                .map(|&v| C64::from_polar(1.0, 0.01 * v * v))
                .collect(),
        )
        .unwrap();
        let p1 = action_profile(&a, &basis, &b, hbar(1.0), ProfileOptions::default()).unwrap();
        let p2 = action_profile(&a, &basis, &b, hbar(2.0), ProfileOptions::default()).unwrap();
        for i in 0..d {
            if let (Some(s1), Some(s2)) = (p1.s_unwrapped[i], p2.s_unwrapped[i]) {
                assert!((2.0 * s1 - s2).abs() < 1e-12);
            }
            assert_eq!(p1.rho_a[i], p2.rho_a[i]);
        }
    }

    #[test]
    fn csv_has_declared_columns() {
        let p = chirp_profile(None);
        let csv = p.to_csv();
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(
            header,
            "index,x_m,S_raw,S_unwrapped,magnitude,valid,gradient,curvature,rho_a,rho_b"
        );
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 402);
    }
}
