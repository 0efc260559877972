//! Module invariants as data: each check yields one row with its metric,
//! threshold and verdict. Failures never abort the suite.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelConfig};
use super::table::ResultTable;
use super::{run_resolution_sweep, Setup};
use crate::action::{
    action_phase, action_profile, aligned_unitary, diagonal_overlap, principal, segments,
    stationary_points, ProfileOptions,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    expand, frame_shift, hermitian_eigen, inner, LabeledBasis, PhysicalConstants, StateVector, C64,
};
use crate::measurement::{
    build_measurement, gaussian_kernel, high_res_amplitude, joint_distribution, projective_kernel,
    Regime,
};
use crate::models::{
    qubit_system, ring_system, spin_classical_intermediate, spin_matrices, spin_system_shared,
    ModelSystem, RingParameters, BASIS_RESIDUAL_TOLERANCE,
};

pub const SUITE_MODULES: [&str; 5] = ["hilbert", "models", "action", "measurement", "experiments"];

/// Tolerances shared with the acceptance harness.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const EIGEN_RESIDUAL_TOLERANCE: f64 = 1e-9;
pub const PROBABILITY_TOLERANCE: f64 = 1e-10;
pub const CROSS_ROUTE_TOLERANCE: f64 = 0.10;
pub const HIGH_RES_TOLERANCE: f64 = 0.02;
pub const RANDOM_UNITARY_SAMPLES: usize = 1000;
/// High-resolution checks keep outcomes this many kernel widths away from
/// grid edges and classical turning points.
pub const TURNING_POINT_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SuiteScope {
    #[default]
    All,
    Modules(Vec<String>),
}

impl SuiteScope {
    pub fn parse(names: &[String]) -> Result<Self> {
        if names.is_empty() || names.iter().any(|n| n == "all") {
            return Ok(SuiteScope::All);
        }
        for n in names {
            if !SUITE_MODULES.contains(&n.as_str()) {
                return Err(Error::invalid(
                    "scope",
                    format!("unknown module `{n}`; expected one of {SUITE_MODULES:?}"),
                ));
            }
        }
        Ok(SuiteScope::Modules(names.to_vec()))
    }

    pub fn includes(&self, module: &str) -> bool {
        match self {
            SuiteScope::All => true,
            SuiteScope::Modules(m) => m.iter().any(|n| n == module),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub module: &'static str,
    pub metric: f64,
    pub threshold: f64,
    /// `"<="` or `"<"`.
    pub comparison: &'static str,
    pub pass: bool,
    /// Recorded rows document known semiclassical limits; their verdict is
    /// reported but does not count as a suite failure.
    pub asserted: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(
        module: &'static str,
        name: impl Into<String>,
        metric: f64,
        threshold: f64,
    ) -> Self {
        Self {
            name: name.into(),
            module,
            metric,
            threshold,
            comparison: "<=",
            pass: metric <= threshold,
            asserted: true,
            detail: String::new(),
        }
    }

    pub fn below(
        module: &'static str,
        name: impl Into<String>,
        metric: f64,
        threshold: f64,
    ) -> Self {
        Self {
            comparison: "<",
            pass: metric < threshold,
            ..Self::at_most(module, name, metric, threshold)
        }
    }

    fn recorded(mut self) -> Self {
        self.asserted = false;
        self
    }

    /// True unless an asserted check failed.
    pub fn ok(&self) -> bool {
        self.pass || !self.asserted
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    fn errored(module: &'static str, name: &str, e: Error) -> Self {
        Self::at_most(module, name, f64::NAN, 0.0).with_detail(e.to_string())
    }
}

fn guarded(module: &'static str, name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::errored(module, name, e))
}

/// Like [`guarded`], but an error keeps the row unasserted.
fn recorded(module: &'static str, name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::errored(module, name, e).recorded())
}

/// Seeded ChaCha8 stream; distinct checks draw from distinct streams.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// State with independent uniform real and imaginary parts in `[-1, 1)`.
pub fn random_state(rng: &mut impl Rng, dim: usize) -> StateVector {
    let amps = (0..dim)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    StateVector::normalized(amps).expect("nonzero with probability one")
}

pub fn orthonormality_check(name: &str, basis: &LabeledBasis) -> Check {
    Check::at_most(
        "models",
        name,
        basis.orthonormality_deviation(),
        BASIS_RESIDUAL_TOLERANCE,
    )
}

/// Runs every check in `scope`. Rows are ordered by module, then by check.
pub fn invariant_checks(scope: &SuiteScope, seed: u64) -> Vec<Check> {
    type Group = fn(u64) -> Vec<Check>;
    let groups: [(&str, Group); 5] = [
        ("hilbert", hilbert_checks),
        ("models", model_checks),
        ("action", action_checks),
        ("measurement", measurement_checks),
        ("experiments", experiment_checks),
    ];
    groups
        .par_iter()
        .filter(|(m, _)| scope.includes(m))
        .map(|(_, f)| f(seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub fn run_invariant_suite(scope: &SuiteScope, seed: u64) -> ResultTable {
    checks_table(&invariant_checks(scope, seed))
}

pub fn checks_table(checks: &[Check]) -> ResultTable {
    let mut t = ResultTable::new(
        "invariants",
        &[
            "name",
            "module",
            "metric",
            "comparison",
            "threshold",
            "pass",
            "asserted",
            "detail",
        ],
    );
    for c in checks {
        t.push_row(vec![
            c.name.clone().into(),
            c.module.into(),
            c.metric.into(),
            c.comparison.into(),
            c.threshold.into(),
            c.pass.into(),
            c.asserted.into(),
            c.detail.clone().into(),
        ])
        .expect("fixed width");
    }
    t
}

fn default_ring() -> Result<ModelSystem> {
    ring_system(RingParameters::default(), PhysicalConstants::default())
}

/// `max |sum_m <b|m><m|a> - <b|a>|` over random pairs.
pub fn reconstruction_error(basis: &LabeledBasis, pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_state(rng, basis.dim());
        let b = random_state(rng, basis.dim());
        let am = basis.amplitudes_of(&a)?;
        let bm = basis.amplitudes_of(&b)?;
        let sum: C64 = am.iter().zip(&bm).map(|(p, q)| q.conj() * p).sum();
        worst = worst.max((sum - inner(&b, &a)?).norm());
    }
    Ok(worst)
}

fn hilbert_checks(seed: u64) -> Vec<Check> {
    const M: &str = "hilbert";
    let mut out = Vec::new();
    let systems: Vec<(&str, Result<ModelSystem>)> = vec![
        ("qubit", Ok(qubit_system())),
        ("spin-200", spin_system_shared(200.0).map(|s| (*s).clone())),
        ("ring-256", default_ring()),
    ];
    for (i, (label, sys)) in systems.iter().enumerate() {
        let name = format!("reconstruction[{label}]");
        out.push(guarded(M, &name, || {
            let sys = sys.as_ref().map_err(Clone::clone)?;
            let mut rng = seeded_rng(seed, 10 + i as u64);
            let mut worst: f64 = 0.0;
            for b in sys.bases.values() {
                worst = worst.max(reconstruction_error(b, 3, &mut rng)?);
            }
            Ok(Check::below(M, &name, worst, IDENTITY_TOLERANCE))
        }));
    }
    out.push(guarded(M, "frame_shift_invariance[spin-20]", || {
        let sys = spin_system_shared(20.0)?;
        let mut rng = seeded_rng(seed, 20);
        let a = random_state(&mut rng, sys.dimension);
        let b = random_state(&mut rng, sys.dimension);
        let p0 = inner(&b, &a)?.norm_sqr();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let t = rng.random_range(-50.0..50.0);
            let (at, bt) = frame_shift(&a, &b, sys.basis("x")?, t, PhysicalConstants::default())?;
            worst = worst.max((inner(&bt, &at)?.norm_sqr() - p0).abs());
        }
        Ok(Check::below(
            M,
            "frame_shift_invariance[spin-20]",
            worst,
            IDENTITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "parseval[spin-200]", || {
        let sys = spin_system_shared(200.0)?;
        let mut rng = seeded_rng(seed, 21);
        let mut worst: f64 = 0.0;
        for basis in sys.bases.values() {
            let psi = random_state(&mut rng, sys.dimension);
            let total: f64 = expand(&psi, basis)?.iter().map(|(_, c)| c.norm_sqr()).sum();
            worst = worst.max((total - 1.0).abs());
        }
        Ok(Check::below(
            M,
            "parseval[spin-200]",
            worst,
            IDENTITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "eigen_residual[spin-50]", || {
        let (jx, jy) = spin_matrices(50.0)?;
        let worst = hermitian_eigen(&jx)?
            .max_residual
            .max(hermitian_eigen(&jy)?.max_residual);
        Ok(Check::below(
            M,
            "eigen_residual[spin-50]",
            worst,
            EIGEN_RESIDUAL_TOLERANCE,
        ))
    }));
    out
}

fn model_checks(seed: u64) -> Vec<Check> {
    const M: &str = "models";
    let mut out = Vec::new();
    let systems: Vec<(&str, Result<ModelSystem>)> = vec![
        ("qubit", Ok(qubit_system())),
        ("spin-20", spin_system_shared(20.0).map(|s| (*s).clone())),
        ("spin-200", spin_system_shared(200.0).map(|s| (*s).clone())),
        ("ring-256", default_ring()),
    ];
    for (label, sys) in &systems {
        let name = format!("basis_residual[{label}]");
        out.push(guarded(M, &name, || {
            let sys = sys.as_ref().map_err(Clone::clone)?;
            Ok(Check::at_most(
                M,
                &name,
                sys.max_basis_residual()?,
                BASIS_RESIDUAL_TOLERANCE,
            ))
        }));
    }
    out.push(guarded(M, "spin_matrix_reconstruction[spin-20]", || {
        let sys = spin_system_shared(20.0)?;
        let (jx, jy) = spin_matrices(20.0)?;
        let mut worst: f64 = 0.0;
        for (name, m) in [("x", &jx), ("y", &jy)] {
            let basis = sys.basis(name)?;
            let d = basis.dim();
            for r in 0..d {
                for s in 0..d {
                    let rebuilt: C64 = basis
                        .vectors()
                        .iter()
                        .zip(basis.eigenvalues())
                        .map(|(v, &x)| v.amplitudes()[r] * v.amplitudes()[s].conj() * x)
                        .sum();
                    worst = worst.max((rebuilt - m.get(r, s)).norm());
                }
            }
        }
        Ok(Check::at_most(
            M,
            "spin_matrix_reconstruction[spin-20]",
            worst,
            1e-9,
        ))
    }));
    out.push(guarded(M, "ring_double_basis_change[ring-256]", || {
        let sys = default_ring()?;
        let momentum = sys.basis("momentum")?;
        let mut rng = seeded_rng(seed, 30);
        let psi = random_state(&mut rng, sys.dimension);
        let back = momentum.synthesize(&momentum.amplitudes_of(&psi)?);
        let worst = back
            .iter()
            .zip(psi.amplitudes())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        Ok(Check::below(
            M,
            "ring_double_basis_change[ring-256]",
            worst,
            IDENTITY_TOLERANCE,
        ))
    }));
    out
}

/// `(a, b)` as the default spin endpoints `|x = x_a>`, `|y = x_b>`.
fn spin_endpoints(sys: &ModelSystem, x_a: f64, x_b: f64) -> Result<(StateVector, StateVector)> {
    Ok((sys.eigenstate("x", x_a)?, sys.eigenstate("y", x_b)?))
}

fn action_checks(seed: u64) -> Vec<Check> {
    const M: &str = "action";
    let c = PhysicalConstants::default();
    let mut out = Vec::new();
    out.push(guarded(M, "gauge_invariance[spin-20]", || {
        let sys = spin_system_shared(20.0)?;
        let mut rng = seeded_rng(seed, 40);
        let a = random_state(&mut rng, sys.dimension);
        let b = random_state(&mut rng, sys.dimension);
        let mut worst: f64 = 0.0;
        for m in sys.basis("z")?.vectors() {
            let s0 = action_phase(&a, m, &b, c)?;
            let s1 = action_phase(
                &a.with_global_phase(rng.random_range(-PI..PI)),
                &m.with_global_phase(rng.random_range(-PI..PI)),
                &b.with_global_phase(rng.random_range(-PI..PI)),
                c,
            )?;
            worst = worst.max(principal(s1 - s0).abs());
        }
        Ok(Check::below(
            M,
            "gauge_invariance[spin-20]",
            worst,
            IDENTITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "antisymmetry[spin-20]", || {
        let sys = spin_system_shared(20.0)?;
        let mut rng = seeded_rng(seed, 41);
        let a = random_state(&mut rng, sys.dimension);
        let b = random_state(&mut rng, sys.dimension);
        let mut worst: f64 = 0.0;
        for m in sys.basis("z")?.vectors() {
            let sum = action_phase(&a, m, &b, c)? + action_phase(&b, m, &a, c)?;
            worst = worst.max(principal(sum).abs());
        }
        Ok(Check::below(
            M,
            "antisymmetry[spin-20]",
            worst,
            IDENTITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "aligned_unitary_magnitude[spin-200]", || {
        let sys = spin_system_shared(200.0)?;
        let (a, b) = spin_endpoints(&sys, 100.0, 100.0)?;
        let basis = sys.basis("z")?;
        let (_, achieved) = aligned_unitary(&a, basis, &b, c)?;
        let bound: f64 = basis
            .amplitudes_of(&a)?
            .iter()
            .zip(basis.amplitudes_of(&b)?)
            .map(|(p, q)| (q.conj() * p).norm())
            .sum();
        Ok(Check::below(
            M,
            "aligned_unitary_magnitude[spin-200]",
            (achieved - bound).abs(),
            IDENTITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "aligned_unitary_maximal[spin-10]", || {
        let (ratio, _) = random_unitary_ratio(10.0, seed)?;
        Ok(
            Check::at_most(M, "aligned_unitary_maximal[spin-10]", ratio, 1.0).with_detail(format!(
                "max over {RANDOM_UNITARY_SAMPLES} random diagonal unitaries"
            )),
        )
    }));
    out.push(guarded(M, "cross_route_delta_n[spin-50]", || {
        let sys = spin_system_shared(50.0)?;
        let (a, b) = spin_endpoints(&sys, 25.0, 25.0)?;
        let profile = action_profile(&a, sys.basis("z")?, &b, c, ProfileOptions::adaptive())?;
        let points = stationary_points(&profile);
        let s = points
            .first()
            .ok_or_else(|| Error::NotApplicable("no stationary point".into()))?;
        Ok(Check::at_most(
            M,
            "cross_route_delta_n[spin-50]",
            (s.cross_route_product() - 1.0).abs(),
            CROSS_ROUTE_TOLERANCE,
        ))
    }));
    out.push(recorded(M, "cross_route_delta_n[spin-4]", || {
        let sys = spin_system_shared(4.0)?;
        let (a, b) = spin_endpoints(&sys, 2.0, 2.0)?;
        let profile = action_profile(&a, sys.basis("z")?, &b, c, ProfileOptions::default())?;
        let points = stationary_points(&profile);
        let s = points
            .first()
            .ok_or_else(|| Error::NotApplicable("no stationary point".into()))?;
        Ok(Check::at_most(
            M,
            "cross_route_delta_n[spin-4]",
            (s.cross_route_product() - 1.0).abs(),
            CROSS_ROUTE_TOLERANCE,
        )
        .recorded()
        .with_detail("semiclassical deterioration at small j"))
    }));
    out.push(guarded(M, "unwrap_anchor_independence[spin-20]", || {
        let sys = spin_system_shared(20.0)?;
        let (a, b) = spin_endpoints(&sys, 10.0, 10.0)?;
        let profile = action_profile(&a, sys.basis("z")?, &b, c, ProfileOptions::default())?;
        let name = "unwrap_anchor_independence[spin-20]";
        if profile.max_step() >= 0.8 * PI * profile.hbar {
            return Ok(Check::at_most(M, name, 0.0, 1e-9).with_detail("steps too large; vacuous"));
        }
        let seg = segments(&profile.valid)
            .into_iter()
            .max_by_key(|r| r.len())
            .ok_or(Error::ProfileTooSparse { longest: 0 })?;
        let anchors = [seg.start, (seg.start + seg.end) / 2, seg.end - 1];
        let base = profile.unwrap_from(anchors[0])?;
        let mut worst: f64 = 0.0;
        for &k in &anchors[1..] {
            let other = profile.unwrap_from(k)?;
            let offset = other[0] - base[0];
            for (p, q) in other.iter().zip(&base) {
                worst = worst.max((p - q - offset).abs());
            }
        }
        Ok(Check::at_most(M, name, worst, 1e-9))
    }));
    out
}

/// Largest `|<b|U|a>|` over random diagonal unitaries on the `z` basis of
/// spin `j`, relative to the aligned magnitude; and that magnitude.
pub fn random_unitary_ratio(j: f64, seed: u64) -> Result<(f64, f64)> {
    let sys = spin_system_shared(j)?;
    let (a, b) = spin_endpoints(&sys, (j / 2.0).floor(), (j / 2.0).floor())?;
    let basis = sys.basis("z")?;
    let c = PhysicalConstants::default();
    let (_, achieved) = aligned_unitary(&a, basis, &b, c)?;
    let am = basis.amplitudes_of(&a)?;
    let bm = basis.amplitudes_of(&b)?;
    let mut rng = seeded_rng(seed, 42);
    let mut best: f64 = 0.0;
    for _ in 0..RANDOM_UNITARY_SAMPLES {
        let phases: Vec<f64> = (0..basis.dim())
            .map(|_| rng.random_range(-PI..PI))
            .collect();
        best = best.max(diagonal_overlap(&am, &bm, &phases).norm());
    }
    Ok((best / achieved, achieved))
}

fn spin20_setup() -> Result<Setup> {
    Setup::new(ExperimentConfig::new(ModelConfig::Spin { j: 20.0 }))
}

fn column(t: &ResultTable, name: &str) -> Result<Vec<f64>> {
    Ok(t.column(name)?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect())
}

/// Outcomes of `kernel` on spin `j` at least [`TURNING_POINT_MARGIN`] kernel
/// widths from the grid edges and from the classical turning points
/// `sqrt(j(j+1) - x^2)` of either endpoint.
pub fn spin_interior_outcomes(
    j: f64,
    x_a: f64,
    x_b: f64,
    r_grid: &[f64],
    resolution: f64,
) -> Vec<usize> {
    let margin = TURNING_POINT_MARGIN * resolution;
    let turning: Vec<f64> = [x_a, x_b]
        .iter()
        .filter_map(|&x| spin_classical_intermediate(j, x, 0.0))
        .flat_map(|t| [t, -t])
        .collect();
    let (lo, hi) = (r_grid[0], r_grid[r_grid.len() - 1]);
    (0..r_grid.len())
        .filter(|&r| {
            let x = r_grid[r];
            x - lo >= margin && hi - x >= margin && turning.iter().all(|t| (x - t).abs() >= margin)
        })
        .collect()
}

/// Worst relative gap between the grid integral and the Gaussian closed form
/// at interior outcomes outside the least-action regime, for spin `j` with
/// kernel width `fraction * delta_x_m`. Returns the gap and the outcome count.
pub fn high_res_consistency(j: f64, fraction: f64) -> Result<(f64, usize)> {
    let c = PhysicalConstants::default();
    let sys = spin_system_shared(j)?;
    let x_a = (j / 2.0).floor();
    let (a, b) = spin_endpoints(&sys, x_a, x_a)?;
    let basis = sys.basis("z")?;
    let profile = action_profile(&a, basis, &b, c, ProfileOptions::adaptive())?;
    let points = stationary_points(&profile);
    let dxm = points
        .first()
        .ok_or_else(|| Error::NotApplicable("no stationary point".into()))?
        .delta_x_m;
    let resolution = fraction * dxm;
    let ops = build_measurement(gaussian_kernel(basis, resolution)?, basis)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for r in spin_interior_outcomes(j, x_a, x_a, &ops.kernel.r_grid, resolution) {
        match high_res_amplitude(&a, &b, &ops, &profile, r) {
            Ok(h) if h.regime != Regime::LeastAction => {
                worst = worst.max((h.integral - h.closed_form).norm() / h.closed_form.norm());
                count += 1;
            }
            Ok(_) | Err(Error::NotApplicable(_)) | Err(Error::OutsideSupport { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((worst, count))
}

fn measurement_checks(_seed: u64) -> Vec<Check> {
    const M: &str = "measurement";
    let mut out = Vec::new();
    let sweep = spin20_setup().and_then(|s| run_resolution_sweep(&s));
    out.push(guarded(M, "povm_completeness[spin-20 sweep]", || {
        let t = sweep.as_ref().map_err(Clone::clone)?;
        let worst = column(t, "povm_deviation")?.into_iter().fold(0.0, f64::max);
        Ok(Check::at_most(
            M,
            "povm_completeness[spin-20 sweep]",
            worst,
            PROBABILITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "total_probability[spin-20 sweep]", || {
        let t = sweep.as_ref().map_err(Clone::clone)?;
        let worst = column(t, "total_probability_error")?
            .into_iter()
            .fold(0.0, |m: f64, v| m.max(v.abs()));
        Ok(Check::at_most(
            M,
            "total_probability[spin-20 sweep]",
            worst,
            PROBABILITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "weak_limit_monotone[spin-20 sweep]", || {
        let t = sweep.as_ref().map_err(Clone::clone)?;
        let tv = column(t, "total_variation")?;
        let rise = tv
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(
            Check::below(M, "weak_limit_monotone[spin-20 sweep]", rise, 0.0)
                .with_detail("largest increase of total variation between sweep steps"),
        )
    }));
    out.push(guarded(
        M,
        "factorization_residual_decay[spin-20 sweep]",
        || {
            let t = sweep.as_ref().map_err(Clone::clone)?;
            let res = column(t, "factorization_residual")?;
            let ratio = res[res.len() - 1] / res[0];
            Ok(
                Check::below(M, "factorization_residual_decay[spin-20 sweep]", ratio, 1.0)
                    .with_detail("coarsest over finest residual"),
            )
        },
    ));
    out.push(guarded(M, "projective_limit[spin-20]", || {
        let s = spin20_setup()?;
        let basis = s.intermediate()?;
        let narrow = gaussian_kernel(basis, 1e-3 * basis.max_spacing())?;
        let jd = joint_distribution(&s.a, &s.final_basis, &build_measurement(narrow, basis)?)?;
        let am = basis.amplitudes_of(&s.a)?;
        let mut worst: f64 = 0.0;
        for (k, bv) in s.final_basis.vectors().iter().enumerate() {
            let bm = basis.amplitudes_of(bv)?;
            for r in 0..basis.dim() {
                let textbook = bm[r].norm_sqr() * am[r].norm_sqr();
                worst = worst.max((jd.table[r][k] - textbook).abs());
            }
        }
        // The exact projective kernel must agree as well.
        let exact = joint_distribution(
            &s.a,
            &s.final_basis,
            &build_measurement(projective_kernel(basis), basis)?,
        )?;
        for (row, other) in jd.table.iter().zip(&exact.table) {
            for (p, q) in row.iter().zip(other) {
                worst = worst.max((p - q).abs());
            }
        }
        Ok(Check::at_most(
            M,
            "projective_limit[spin-20]",
            worst,
            PROBABILITY_TOLERANCE,
        ))
    }));
    out.push(guarded(M, "weak_selection[spin-20 sweep]", || {
        let t = sweep.as_ref().map_err(Clone::clone)?;
        let ratios = column(t, "resolution_over_delta_x_m")?;
        let offsets = column(t, "argmax_offset")?;
        let worst = ratios
            .iter()
            .zip(&offsets)
            .filter(|(r, _)| **r >= 4.0)
            .map(|(_, o)| o.abs())
            .fold(0.0, f64::max);
        Ok(
            Check::at_most(M, "weak_selection[spin-20 sweep]", worst, 2.0)
                .recorded()
                .with_detail(
                    "argmax offset from x* in grid spacings at >= 4 delta_x_m; mirror branches \
                 put the weak-regime peak at the real weak value 0",
                ),
        )
    }));
    out.push(guarded(M, "high_res_consistency[spin-50]", || {
        let (worst, count) = high_res_consistency(50.0, 0.2)?;
        Ok(Check::at_most(
            M,
            "high_res_consistency[spin-50]",
            worst,
            HIGH_RES_TOLERANCE,
        )
        .with_detail(format!("{count} interior outcomes at 0.2 delta_x_m")))
    }));
    out
}

/// Largest deviation from exact `c`-scaling of the action columns and from
/// invariance of the probability columns when `hbar -> c hbar`.
pub fn hbar_scaling(model: ModelConfig, c: f64) -> Result<(f64, f64)> {
    let base = Setup::new(ExperimentConfig::new(model))?;
    let mut scaled_cfg = ExperimentConfig::new(model);
    scaled_cfg.hbar = Some(c);
    let scaled = Setup::new(scaled_cfg)?;
    let p1 = base.profile()?;
    let p2 = scaled.profile()?;
    let mut action: f64 = 0.0;
    for (u, v) in [
        (&p1.s_unwrapped, &p2.s_unwrapped),
        (&p1.gradient, &p2.gradient),
        (&p1.curvature, &p2.curvature),
    ] {
        for (x, y) in u.iter().zip(v.iter()) {
            match (x, y) {
                (Some(x), Some(y)) => action = action.max((y - c * x).abs() / c),
                (None, None) => {}
                _ => action = f64::INFINITY,
            }
        }
    }
    let mut probability: f64 = 0.0;
    let t1 = run_resolution_sweep(&base)?;
    let t2 = run_resolution_sweep(&scaled)?;
    for name in [
        "total_variation",
        "factorization_residual",
        "povm_deviation",
    ] {
        for (x, y) in column(&t1, name)?.iter().zip(column(&t2, name)?) {
            probability = probability.max((x - y).abs());
        }
    }
    Ok((action, probability))
}

fn experiment_checks(_seed: u64) -> Vec<Check> {
    const M: &str = "experiments";
    let mut out = Vec::new();
    out.push(guarded(M, "determinism[spin-20 sweep]", || {
        let first = run_resolution_sweep(&spin20_setup()?)?.to_csv();
        let second = run_resolution_sweep(&spin20_setup()?)?.to_csv();
        let differs = if first == second { 0.0 } else { 1.0 };
        Ok(
            Check::at_most(M, "determinism[spin-20 sweep]", differs, 0.0)
                .with_detail("1 when repeated CSV bytes differ"),
        )
    }));
    out.push(guarded(M, "provenance_tracks_hbar", || {
        let mut cfg = ExperimentConfig::new(ModelConfig::Qubit);
        let one = Setup::new(cfg.clone())?.provenance.config_hash;
        cfg.hbar = Some(2.0);
        let two = Setup::new(cfg)?.provenance.config_hash;
        let same = if one == two { 1.0 } else { 0.0 };
        Ok(Check::at_most(M, "provenance_tracks_hbar", same, 0.0)
            .with_detail("1 when the hash ignores hbar"))
    }));
    match hbar_scaling(ModelConfig::Spin { j: 20.0 }, 2.0) {
        Ok((action, probability)) => {
            out.push(Check::at_most(
                M,
                "hbar_scaling_actions[spin-20]",
                action,
                IDENTITY_TOLERANCE,
            ));
            out.push(Check::at_most(
                M,
                "hbar_scaling_probabilities[spin-20]",
                probability,
                IDENTITY_TOLERANCE,
            ));
        }
        Err(e) => {
            out.push(Check::errored(
                M,
                "hbar_scaling_actions[spin-20]",
                e.clone(),
            ));
            out.push(Check::errored(M, "hbar_scaling_probabilities[spin-20]", e));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_basis_fails_orthonormality() {
        let sys = qubit_system();
        let good = sys.basis("x").unwrap();
        assert!(orthonormality_check("x", good).pass);
        let mut vectors = good.vectors().to_vec();
        vectors[1] = vectors[0].with_global_phase(0.3);
        let bad = LabeledBasis::new_unchecked(vectors, good.eigenvalues().to_vec()).unwrap();
        let check = orthonormality_check("corrupted", &bad);
        assert!(!check.pass, "{check:?}");
    }

    #[test]
    fn scope_parsing() {
        assert_eq!(SuiteScope::parse(&[]).unwrap(), SuiteScope::All);
        assert!(SuiteScope::parse(&["hilbert".into()])
            .unwrap()
            .includes("hilbert"));
        assert!(!SuiteScope::parse(&["hilbert".into()])
            .unwrap()
            .includes("action"));
        assert!(SuiteScope::parse(&["nowhere".into()]).is_err());
    }

    #[test]
    fn errors_become_failed_rows() {
        let c = guarded("models", "boom", || Err(Error::ZeroVector));
        assert!(!c.pass);
        assert!(c.metric.is_nan());
    }

    #[test]
    fn seeded_streams_are_reproducible() {
        let x: f64 = seeded_rng(7, 3).random();
        let y: f64 = seeded_rng(7, 3).random();
        let z: f64 = seeded_rng(7, 4).random();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }
}
