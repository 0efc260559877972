//! Experiment harness: profiles, resolution sweeps, emergence runs,
//! propagation-time scans and the invariant suite. Every run returns
//! [`ResultTable`]s stamped with the provenance of its configuration.

pub mod config;
pub mod invariants;
pub mod table;

use std::sync::Arc;

use rayon::prelude::*;

use crate::action::{
    action_profile, stationary_phase_overlap, stationary_points, ActionProfile, StationaryPoint,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    apply_diagonal, DiagonalUnitary, LabeledBasis, PhysicalConstants, StateVector, C64,
};
use crate::measurement::{
    build_measurement, gaussian_kernel, joint_distribution, nondisturbance_check,
    regime_classifier, DEFAULT_NONDISTURBANCE_THRESHOLD,
};
use crate::models::{make_packet, ring_free_evolution, spin_classical_intermediate, ModelSystem};

pub use config::{
    EmergenceConfig, ExperimentConfig, ModelConfig, OutputConfig, OutputFormat, PropagationConfig,
    ResolutionUnits, ScanConfig, StateSpec, SweepConfig, SCHEMA_VERSION,
};
pub use invariants::{run_invariant_suite, SuiteScope};
pub use table::{Cell, Provenance, ResultTable};

/// A resolved configuration with its model and endpoint states built.
pub struct Setup {
    pub config: ExperimentConfig,
    pub constants: PhysicalConstants,
    pub system: Arc<ModelSystem>,
    pub a: StateVector,
    pub b: StateVector,
    /// Final measurement basis; contains `b` as element `b_index`.
    pub final_basis: LabeledBasis,
    pub b_index: usize,
    pub provenance: Provenance,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let (config, _) = config.resolve()?;
        let constants = config.constants()?;
        let system = config.model.build(constants)?;
        let a_spec = config.a.clone().expect("resolved");
        let b_spec = config.b.clone().expect("resolved");
        let a = build_state(&system, &a_spec)?;
        let b0 = build_state(&system, &b_spec)?;
        let plain = system.basis(&b_spec.basis)?;
        let b_index = plain.nearest_index(b_spec.value.or(b_spec.center).expect("validated"));
        let (b, final_basis) = match config.model.ring_parameters() {
            // The detection state is referred back to preparation time.
            Some(p) => {
                let back = -p.flight_time;
                let b = ring_free_evolution(&system, p, &b0, back, constants)?;
                let vectors = plain
                    .vectors()
                    .iter()
                    .map(|v| ring_free_evolution(&system, p, v, back, constants))
                    .collect::<Result<Vec<_>>>()?;
                (b, LabeledBasis::new(vectors, plain.eigenvalues().to_vec())?)
            }
            None => (b0, plain.clone()),
        };
        let provenance = Provenance::new(
            &config.canonical(),
            constants.hbar,
            config.seed_or_default(),
        );
        Ok(Self {
            config,
            constants,
            system,
            a,
            b,
            final_basis,
            b_index,
            provenance,
        })
    }

    pub fn intermediate(&self) -> Result<&LabeledBasis> {
        self.system
            .basis(self.config.intermediate.as_deref().expect("resolved"))
    }

    pub fn profile(&self) -> Result<ActionProfile> {
        action_profile(
            &self.a,
            self.intermediate()?,
            &self.b,
            self.constants,
            self.config.profile_options(),
        )
    }

    fn table(&self, name: &str, columns: &[&str]) -> ResultTable {
        ResultTable::new(name, columns).with_provenance(self.provenance.clone())
    }
}

fn build_state(system: &ModelSystem, spec: &StateSpec) -> Result<StateVector> {
    match (spec.value, spec.center, spec.width) {
        (Some(v), _, _) => system.eigenstate(&spec.basis, v),
        (None, Some(c), Some(w)) => make_packet(system.basis(&spec.basis)?, c, w),
        _ => Err(Error::invalid(
            &spec.basis,
            "incomplete state specification",
        )),
    }
}

fn dominant(points: &[StationaryPoint]) -> Result<&StationaryPoint> {
    points
        .first()
        .ok_or_else(|| Error::NotApplicable("profile has no stationary point".into()))
}

/// Action profile, its stationary points and the stationary-phase overlap.
pub fn run_profile(setup: &Setup) -> Result<Vec<ResultTable>> {
    let profile = setup.profile()?;
    let mut main = profile.to_table();
    main.provenance = setup.provenance.clone();
    let points = stationary_points(&profile);
    let mut pts = setup.table(
        "stationary_points",
        &[
            "x_star",
            "index_star",
            "curvature",
            "delta_x_m",
            "delta_n",
            "weak_value_magnitude",
            "action",
            "amplitude",
            "branch_overlap",
            "curvature_from_weak_value",
            "curvature_mismatch",
            "cross_route_product",
        ],
    );
    for s in &points {
        let dx = profile.spacing[s.index_star];
        pts.push_row(vec![
            s.x_star.into(),
            s.index_star.into(),
            s.curvature_at.into(),
            s.delta_x_m.into(),
            s.delta_n.into(),
            s.weak_value_magnitude.into(),
            s.action_at.into(),
            s.amplitude_at.into(),
            s.branch_overlap.into(),
            s.weak_value_curvature(dx, profile.hbar).into(),
            s.curvature_mismatch(dx, profile.hbar).into(),
            s.cross_route_product().into(),
        ])?;
    }
    let mut overlap = setup.table(
        "overlap_estimate",
        &[
            "exact_magnitude",
            "estimate_magnitude",
            "magnitude_ratio",
            "relative_error",
            "points",
        ],
    );
    if let Ok(est) = stationary_phase_overlap(&profile, &points) {
        overlap.push_row(vec![
            est.exact.norm().into(),
            est.estimate.norm().into(),
            est.magnitude_ratio.into(),
            est.relative_error.into(),
            points.len().into(),
        ])?;
    }
    Ok(vec![main, pts, overlap])
}

pub const SWEEP_COLUMNS: [&str; 14] = [
    "resolution",
    "resolution_over_delta_x_m",
    "total_variation",
    "factorization_residual",
    "max_nondisturbance_ratio",
    "nondisturbance_pass",
    "regime_at_stationary",
    "argmax_x_r",
    "argmax_offset",
    "argmax_edge",
    "delta_x_m",
    "delta_n",
    "povm_deviation",
    "total_probability_error",
];

/// One row per resolution of the intermediate measurement.
pub fn run_resolution_sweep(setup: &Setup) -> Result<ResultTable> {
    let profile = setup.profile()?;
    let points = stationary_points(&profile);
    let sweep = setup.config.sweep.clone().expect("resolved");
    let basis = setup.intermediate()?;
    let reference = match (sweep.units, dominant(&points)) {
        (ResolutionUnits::Absolute, p) => p.ok().map(|p| p.delta_x_m),
        (ResolutionUnits::DeltaXM, Ok(p)) => Some(p.delta_x_m),
        (ResolutionUnits::DeltaXM, Err(e)) => return Err(e),
    };
    let rows: Vec<Result<Vec<Cell>>> = sweep
        .resolutions
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let absolute = match sweep.units {
                ResolutionUnits::DeltaXM => r * reference.expect("checked"),
                ResolutionUnits::Absolute => r,
            };
            sweep_row(setup, &profile, &points, basis, absolute, reference)
                .map_err(|e| Error::invalid(format!("sweep.resolutions[{i}]"), e.to_string()))
        })
        .collect();
    let mut table = setup.table("resolution_sweep", &SWEEP_COLUMNS);
    for row in rows {
        table.push_row(row?)?;
    }
    Ok(table)
}

fn sweep_row(
    setup: &Setup,
    profile: &ActionProfile,
    points: &[StationaryPoint],
    basis: &LabeledBasis,
    resolution: f64,
    reference: Option<f64>,
) -> Result<Vec<Cell>> {
    let kernel = gaussian_kernel(basis, resolution)?;
    let nd = nondisturbance_check(&kernel, profile, DEFAULT_NONDISTURBANCE_THRESHOLD)?;
    let ops = build_measurement(kernel, basis)?;
    let jd = joint_distribution(&setup.a, &setup.final_basis, &ops)?;
    let r = jd.most_likely_outcome(setup.b_index);
    let x_r = jd.r_grid[r];
    let nearest = points
        .iter()
        .map(|p| p.x_star)
        .min_by(|a, b| (a - x_r).abs().total_cmp(&(b - x_r).abs()));
    let regime = match points.first() {
        Some(p) => Cell::from(
            regime_classifier(&ops.kernel, profile, ops.kernel.nearest_outcome(p.x_star))?.label(),
        ),
        None => Cell::Missing,
    };
    Ok(vec![
        resolution.into(),
        reference.map(|d| resolution / d).into(),
        jd.total_variation.into(),
        jd.factorization_residual.into(),
        nd.max_ratio.into(),
        nd.pass.into(),
        regime,
        x_r.into(),
        nearest.map(|x| x_r - x).into(),
        ops.kernel.is_edge(r).into(),
        points.first().map(|p| p.delta_x_m).into(),
        points.first().map(|p| p.delta_n).into(),
        ops.povm_deviation().into(),
        (jd.total_probability() - 1.0).into(),
    ])
}

pub const EMERGENCE_COLUMNS: [&str; 11] = [
    "x_a",
    "x_b",
    "branch",
    "x_star",
    "classical",
    "deviation_spacings",
    "delta_x_m",
    "delta_n",
    "status",
    "pass",
    "tolerance_spacings",
];

/// Least-action values against the classical oracle over endpoint pairs.
pub fn run_emergence_experiment(setup: &Setup) -> Result<ResultTable> {
    if setup.system.classical_oracle.is_none() {
        return Err(Error::NotApplicable(format!(
            "model `{}` has no classical oracle",
            setup.system.name
        )));
    }
    let cfg = setup.config.emergence.clone().expect("resolved");
    let mut jobs: Vec<([f64; 2], bool)> = cfg.pairs.iter().map(|&p| (p, false)).collect();
    jobs.extend(cfg.forbidden.iter().map(|&p| (p, true)));
    let rows: Vec<Result<Vec<Vec<Cell>>>> = jobs
        .par_iter()
        .map(|&(pair, forbidden)| emergence_rows(setup, pair, forbidden))
        .collect();
    let mut table = setup.table("emergence", &EMERGENCE_COLUMNS);
    for group in rows {
        for row in group? {
            table.push_row(row)?;
        }
    }
    Ok(table)
}

fn emergence_rows(setup: &Setup, [x_a, x_b]: [f64; 2], forbidden: bool) -> Result<Vec<Vec<Cell>>> {
    let cfg = &setup.config;
    let a_basis = &cfg.a.as_ref().expect("resolved").basis;
    let b_basis = &cfg.b.as_ref().expect("resolved").basis;
    let a = setup.system.eigenstate(a_basis, x_a)?;
    let mut b = setup.system.eigenstate(b_basis, x_b)?;
    let ring = cfg.model.ring_parameters();
    if let Some(p) = ring {
        b = ring_free_evolution(&setup.system, p, &b, -p.flight_time, setup.constants)?;
    }
    let basis = setup.intermediate()?;
    let points = match action_profile(&a, basis, &b, setup.constants, cfg.profile_options()) {
        Ok(p) => stationary_points(&p),
        Err(Error::ProfileTooSparse { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let (targets, tolerance): (Vec<(i64, f64)>, f64) = match (cfg.model, ring) {
        (ModelConfig::Spin { j }, _) => (
            spin_classical_intermediate(j, x_a, x_b)
                .map(|x| vec![(1, x), (-1, -x)])
                .unwrap_or_default(),
            2.0,
        ),
        (_, Some(p)) => (vec![(0, p.classical_momentum(x_a, x_b, None))], 1.0),
        _ => (Vec::new(), 2.0),
    };
    let row = |branch: i64,
               found: Option<&StationaryPoint>,
               classical: Option<f64>,
               status: &str,
               pass: bool| {
        let deviation = match (found, classical) {
            (Some(s), Some(c)) => {
                Some((s.x_star - c).abs() / basis.spacing(basis.nearest_index(c)))
            }
            _ => None,
        };
        vec![
            x_a.into(),
            x_b.into(),
            Cell::Int(branch),
            found.map(|s| s.x_star).into(),
            classical.into(),
            deviation.into(),
            found.map(|s| s.delta_x_m).into(),
            found.map(|s| s.delta_n).into(),
            status.into(),
            pass.into(),
            tolerance.into(),
        ]
    };
    // Forbidden pairs, and admissible-looking pairs outside the classical
    // region, must show no stationary point.
    if forbidden || targets.is_empty() {
        return Ok(vec![match points.first() {
            None => row(0, None, None, "absent", true),
            Some(s) => row(0, Some(s), None, "unexpected", false),
        }]);
    }
    Ok(targets
        .into_iter()
        .map(|(branch, c)| {
            let found = points
                .iter()
                .filter(|s| branch == 0 || s.x_star.signum() == branch as f64)
                .min_by(|p, q| (p.x_star - c).abs().total_cmp(&(q.x_star - c).abs()));
            match found {
                None => row(branch, None, Some(c), "missing", false),
                Some(s) => {
                    let dev = (s.x_star - c).abs() / basis.spacing(basis.nearest_index(c));
                    row(branch, Some(s), Some(c), "found", dev <= tolerance)
                }
            }
        })
        .collect())
}

pub const PROPAGATION_COLUMNS: [&str; 11] = [
    "center",
    "width",
    "t_peak",
    "peak_overlap",
    "component_peak",
    "component_overlap",
    "gradient",
    "difference",
    "relative_difference",
    "delay",
    "edge",
];

/// For packets centred across the generator grid, the evolution time `t`
/// maximizing `|<b_c| exp(-i X t/hbar) |a_c>|`, compared with `dS/dx_m` at
/// the centre. `a_c`, `b_c` are the endpoint states windowed by a Gaussian in
/// the generator basis. When the windowed overlap has several components
/// the local maximum nearest the gradient is reported alongside the global one.
pub fn run_propagation_time_experiment(setup: &Setup) -> Result<ResultTable> {
    let cfg = setup.config.propagation.clone().expect("resolved");
    let basis = setup.system.basis(&setup.config.propagation_basis())?;
    let b = match setup.config.model.ring_parameters() {
        Some(p) if cfg.delay != 0.0 => {
            ring_free_evolution(&setup.system, p, &setup.b, cfg.delay, setup.constants)?
        }
        _ => setup.b.clone(),
    };
    let profile = action_profile(
        &setup.a,
        basis,
        &b,
        setup.constants,
        setup.config.profile_options(),
    )?;
    let am = basis.amplitudes_of(&setup.a)?;
    let bm = basis.amplitudes_of(&b)?;
    let x = basis.eigenvalues();
    let h = setup.constants.hbar;
    let rows: Vec<Result<Vec<Cell>>> = cfg
        .centers
        .par_iter()
        .map(|&c| {
            let k = basis.nearest_index(c);
            let width = cfg.width_spacings * basis.spacing(k);
            let window: Vec<f64> = x
                .iter()
                .map(|&xm| (-(xm - c).powi(2) / (2.0 * width * width)).exp())
                .collect();
            let weights: Vec<C64> = window
                .iter()
                .zip(am.iter().zip(&bm))
                .map(|(g, (a, b))| b.conj() * a * *g)
                .collect();
            let norm = |v: &[C64]| -> f64 {
                v.iter()
                    .zip(&window)
                    .map(|(z, g)| z.norm_sqr() * g)
                    .sum::<f64>()
                    .sqrt()
            };
            let scale = norm(&am) * norm(&bm);
            let overlap = |t: f64| -> f64 {
                weights
                    .iter()
                    .zip(x)
                    .map(|(w, &xm)| w * C64::from_polar(1.0, -xm * t / h))
                    .sum::<C64>()
                    .norm()
                    / scale
            };
            let scan = ScanCurve::new(&overlap, cfg.scan.start, cfg.scan.stop, cfg.scan.steps);
            let (t_peak, peak) = scan.global_peak(&overlap)?;
            let gradient = profile.gradient_at(c).ok();
            let component = gradient.and_then(|g| scan.peak_nearest(&overlap, g));
            let difference = component.zip(gradient).map(|((t, _), g)| t - g);
            let edge = x[k] - x[0] < 3.0 * width || x[x.len() - 1] - x[k] < 3.0 * width;
            Ok(vec![
                c.into(),
                width.into(),
                t_peak.into(),
                peak.into(),
                component.map(|p| p.0).into(),
                component.map(|p| p.1).into(),
                gradient.into(),
                difference.into(),
                difference
                    .zip(gradient)
                    .filter(|(_, g)| g.abs() > 0.0)
                    .map(|(d, g)| d.abs() / g.abs())
                    .into(),
                cfg.delay.into(),
                edge.into(),
            ])
        })
        .collect();
    let mut table = setup.table("propagation_time", &PROPAGATION_COLUMNS);
    for row in rows {
        table.push_row(row?)?;
    }
    Ok(table)
}

/// A function sampled on a uniform grid, with parabolic peak refinement.
pub struct ScanCurve {
    start: f64,
    step: f64,
    values: Vec<f64>,
}

impl ScanCurve {
    pub fn new(f: &dyn Fn(f64) -> f64, start: f64, stop: f64, steps: usize) -> Self {
        let step = (stop - start) / (steps - 1) as f64;
        let values = (0..steps).map(|i| f(start + i as f64 * step)).collect();
        Self {
            start,
            step,
            values,
        }
    }

    fn at(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    fn refine(&self, f: &dyn Fn(f64) -> f64, i: usize) -> (f64, f64) {
        let (y0, y1, y2) = (self.values[i - 1], self.values[i], self.values[i + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        let shift = if denom < 0.0 {
            0.5 * (y0 - y2) / denom
        } else {
            0.0
        };
        let t = self.at(i) + shift * self.step;
        (t, f(t))
    }

    /// Refined global maximum; an error when it sits on the scan boundary.
    pub fn global_peak(&self, f: &dyn Fn(f64) -> f64) -> Result<(f64, f64)> {
        let n = self.values.len();
        let best = (0..n)
            .max_by(|&i, &j| self.values[i].total_cmp(&self.values[j]))
            .expect("non-empty scan");
        if best == 0 || best == n - 1 {
            return Err(Error::PeakAtScanBoundary { t: self.at(best) });
        }
        Ok(self.refine(f, best))
    }

    /// Refined interior local maximum closest to `t`.
    pub fn peak_nearest(&self, f: &dyn Fn(f64) -> f64, t: f64) -> Option<(f64, f64)> {
        let v = &self.values;
        (1..v.len() - 1)
            .filter(|&i| v[i] >= v[i - 1] && v[i] > v[i + 1])
            .min_by(|&i, &j| (self.at(i) - t).abs().total_cmp(&(self.at(j) - t).abs()))
            .map(|i| self.refine(f, i))
    }
}

/// Grid scan followed by a parabolic refinement of the maximum.
pub fn scan_peak(
    f: &dyn Fn(f64) -> f64,
    start: f64,
    stop: f64,
    steps: usize,
) -> Result<(f64, f64)> {
    ScanCurve::new(f, start, stop, steps).global_peak(f)
}

/// Models and their bases as a table.
pub fn model_catalog(constants: PhysicalConstants) -> Result<ResultTable> {
    let mut t = ResultTable::new(
        "models",
        &[
            "model",
            "dimension",
            "basis",
            "min_eigenvalue",
            "max_eigenvalue",
            "classical_oracle",
        ],
    );
    let models = [
        ModelConfig::Qubit,
        ModelConfig::Spin { j: 20.0 },
        ModelConfig::Ring {
            sites: 256,
            circumference: 256.0,
            mass: 1.0,
            flight_time: 10.0,
        },
    ];
    for m in models {
        let sys = m.build(constants)?;
        for (name, basis) in &sys.bases {
            let x = basis.eigenvalues();
            t.push_row(vec![
                sys.name.clone().into(),
                sys.dimension.into(),
                name.clone().into(),
                x[0].into(),
                x[x.len() - 1].into(),
                sys.classical_oracle
                    .as_ref()
                    .map_or(Cell::Missing, |o| o.description.clone().into()),
            ])?;
        }
    }
    Ok(t)
}

/// `exp(-i X t / hbar) |psi>` for a diagonal generator.
pub fn evolve(
    basis: &LabeledBasis,
    psi: &StateVector,
    t: f64,
    constants: PhysicalConstants,
) -> Result<StateVector> {
    apply_diagonal(&DiagonalUnitary::evolution(basis, t, constants), psi)
}
