//! Concrete systems with known classical limits: qubit, spin-j and a free
//! particle on a discrete ring.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    apply_diagonal, hermitian_eigen, DiagonalUnitary, HermitianMatrix, LabeledBasis,
    PhysicalConstants, StateVector, C64,
};

/// Largest tolerated change-of-basis residual between any two bases of a system.
pub const BASIS_RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Packets narrower than this many grid spacings are under-resolved.
pub const PACKET_MIN_WIDTH_SPACINGS: f64 = 2.0;

/// Closed-form description of the expected least-action intermediate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalOracle {
    pub description: String,
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSystem {
    pub name: String,
    pub dimension: usize,
    pub bases: BTreeMap<String, LabeledBasis>,
    pub classical_oracle: Option<ClassicalOracle>,
}

impl ModelSystem {
    fn assemble(
        name: impl Into<String>,
        bases: Vec<(&str, LabeledBasis)>,
        classical_oracle: Option<ClassicalOracle>,
    ) -> Result<Self> {
        let dimension = bases[0].1.dim();
        let bases: BTreeMap<String, LabeledBasis> =
            bases.into_iter().map(|(k, b)| (k.to_string(), b)).collect();
        let system = Self {
            name: name.into(),
            dimension,
            bases,
            classical_oracle,
        };
        let residual = system.max_basis_residual()?;
        if residual > BASIS_RESIDUAL_TOLERANCE {
            return Err(Error::NotOrthonormal {
                deviation: residual,
            });
        }
        Ok(system)
    }

    pub fn basis(&self, name: &str) -> Result<&LabeledBasis> {
        self.bases.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.bases.keys().map(String::as_str).collect();
            Error::invalid("basis", format!("unknown basis `{name}`; have {known:?}"))
        })
    }

    /// Eigenvector of `basis` whose eigenvalue is within `1e-9` of `value`.
    pub fn eigenstate(&self, basis: &str, value: f64) -> Result<StateVector> {
        let b = self.basis(basis)?;
        let k = b.nearest_index(value);
        let x = b.eigenvalues()[k];
        if (x - value).abs() > 1e-9 * (1.0 + value.abs()) {
            return Err(Error::invalid(
                "eigenvalue",
                format!("{value} is not an eigenvalue of basis `{basis}` (nearest {x})"),
            ));
        }
        Ok(b.vector(k).clone())
    }

    /// Worst orthonormality deviation or pairwise change-of-basis residual.
    pub fn max_basis_residual(&self) -> Result<f64> {
        let bases: Vec<&LabeledBasis> = self.bases.values().collect();
        let mut worst: f64 = 0.0;
        for (i, a) in bases.iter().enumerate() {
            if a.dim() != self.dimension {
                return Err(Error::DimensionMismatch {
                    expected: self.dimension,
                    found: a.dim(),
                });
            }
            worst = worst.max(a.orthonormality_deviation());
            for b in &bases[i + 1..] {
                worst = worst.max(a.change_of_basis_residual(b)?);
            }
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Qubit with Pauli bases `x`, `y`, `z` labeled `±1/2`. The reference basis
/// is `(|0>, |1>)` with `|0>` the `+1/2` eigenstate of `z`.
pub fn qubit_system() -> ModelSystem {
    let r = FRAC_1_SQRT_2;
    let state = |amps: [C64; 2], label: &str| {
        StateVector::new(amps.to_vec())
            .expect("fixed unit vector")
            .with_label(label)
    };
    let pair = |minus: StateVector, plus: StateVector| {
        LabeledBasis::new(vec![minus, plus], vec![-0.5, 0.5]).expect("fixed Pauli basis")
    };
    let z = pair(
        state([c(0.0, 0.0), c(1.0, 0.0)], "-z"),
        state([c(1.0, 0.0), c(0.0, 0.0)], "+z"),
    );
    let x = pair(
        state([c(r, 0.0), c(-r, 0.0)], "-x"),
        state([c(r, 0.0), c(r, 0.0)], "+x"),
    );
    let y = pair(
        state([c(r, 0.0), c(0.0, -r)], "-y"),
        state([c(r, 0.0), c(0.0, r)], "+y"),
    );
    ModelSystem::assemble("qubit", vec![("x", x), ("y", y), ("z", z)], None)
        .expect("Pauli bases are mutually unbiased and orthonormal")
}

/// Validates `j` and returns `2j`.
pub fn spin_twice_j(j: f64) -> Result<usize> {
    let two_j = 2.0 * j;
    if !(j >= 0.5) || !j.is_finite() || (two_j - two_j.round()).abs() > 1e-12 {
        return Err(Error::invalid(
            "j",
            format!("{j} is not a positive half-integer"),
        ));
    }
    Ok(two_j.round() as usize)
}

/// `J_x` and `J_y` in the ascending `J_z` basis `m = -j, ..., j`.
pub fn spin_matrices(j: f64) -> Result<(HermitianMatrix, HermitianMatrix)> {
    let d = spin_twice_j(j)? + 1;
    // <m+1| J+ |m> for the row index k, m = k - j.
    let raise = |k: usize| {
        let m = k as f64 - j;
        (j * (j + 1.0) - m * (m + 1.0)).max(0.0).sqrt()
    };
    let jx = HermitianMatrix::from_fn(d, |r, s| {
        if r == s + 1 {
            c(raise(s) / 2.0, 0.0)
        } else if s == r + 1 {
            c(raise(r) / 2.0, 0.0)
        } else {
            c(0.0, 0.0)
        }
    })?;
    let jy = HermitianMatrix::from_fn(d, |r, s| {
        if r == s + 1 {
            c(0.0, -raise(s) / 2.0)
        } else if s == r + 1 {
            c(0.0, raise(r) / 2.0)
        } else {
            c(0.0, 0.0)
        }
    })?;
    Ok((jx, jy))
}

/// Spin-`j` bases `x`, `y`, `z` with eigenvalues `-j..j` in units of hbar.
///
/// The oracle is the classical intermediate `J_z` value for an `x`-eigenstate
/// preparation and a `y`-eigenstate measurement.
pub fn spin_system(j: f64) -> Result<ModelSystem> {
    let two_j = spin_twice_j(j)?;
    let d = two_j + 1;
    let labels: Vec<f64> = (0..d).map(|k| k as f64 - j).collect();
    let (jx, jy) = spin_matrices(j)?;
    let diagonalize = |h: &HermitianMatrix| -> Result<LabeledBasis> {
        let mut e = hermitian_eigen(h)?;
        // The spectrum is known exactly; snap to it after checking.
        for (got, want) in e.eigenvalues.iter_mut().zip(&labels) {
            if (*got - want).abs() > 1e-8 {
                return Err(Error::NoConvergence {
                    sweeps: e.sweeps,
                    off_diagonal: f64::NAN,
                    residual: (*got - want).abs(),
                });
            }
            *got = *want;
        }
        e.into_labeled_basis()
    };
    let x = diagonalize(&jx)?;
    let y = diagonalize(&jy)?;
    let z = LabeledBasis::canonical(labels.clone())?;
    let oracle = ClassicalOracle {
        description: "x* = ±sqrt(j(j+1) - x_a^2 - x_b^2) for a in x, m in z, b in y".into(),
        parameters: BTreeMap::from([("j".to_string(), j)]),
    };
    ModelSystem::assemble(
        format!("spin-{j}"),
        vec![("x", x), ("y", y), ("z", z)],
        Some(oracle),
    )
}

/// Memoized [`spin_system`]; spin bases are immutable, so one copy per `j`
/// is shared across callers and threads.
pub fn spin_system_shared(j: f64) -> Result<Arc<ModelSystem>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ModelSystem>>>> = OnceLock::new();
    let key = spin_twice_j(j)?;
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().expect("cache lock").get(&key) {
        return Ok(Arc::clone(s));
    }
    let built = Arc::new(spin_system(j)?);
    let mut guard = cache.lock().expect("cache lock");
    Ok(Arc::clone(guard.entry(key).or_insert(built)))
}

/// Positive classical root `sqrt(j(j+1) - x_a^2 - x_b^2)`, or `None` when the
/// endpoints admit no classical intermediate value.
pub fn spin_classical_intermediate(j: f64, x_a: f64, x_b: f64) -> Option<f64> {
    let r2 = j * (j + 1.0) - x_a * x_a - x_b * x_b;
    (r2 > 0.0).then(|| r2.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingParameters {
    pub sites: usize,
    pub circumference: f64,
    pub mass: f64,
    pub flight_time: f64,
}

impl Default for RingParameters {
    fn default() -> Self {
        Self {
            sites: 256,
            circumference: 256.0,
            mass: 1.0,
            flight_time: 10.0,
        }
    }
}

impl RingParameters {
    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::invalid("sites", "must be at least 2"));
        }
        for (field, v) in [
            ("circumference", self.circumference),
            ("mass", self.mass),
            ("flight_time", self.flight_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn site_spacing(&self) -> f64 {
        self.circumference / self.sites as f64
    }

    /// Momentum grid spacing `2 pi hbar / L`.
    pub fn momentum_spacing(&self, constants: PhysicalConstants) -> f64 {
        2.0 * PI * constants.hbar / self.circumference
    }

    /// Displacement `x_b - x_a` on the covering line. `winding = None`
    /// picks the image minimizing `|dx|`.
    pub fn displacement(&self, x_a: f64, x_b: f64, winding: Option<i64>) -> f64 {
        let l = self.circumference;
        let raw = x_b - x_a;
        match winding {
            Some(w) => raw + w as f64 * l,
            None => raw - l * (raw / l).round(),
        }
    }

    /// Classical momentum `M dx / T`.
    pub fn classical_momentum(&self, x_a: f64, x_b: f64, winding: Option<i64>) -> f64 {
        self.mass * self.displacement(x_a, x_b, winding) / self.flight_time
    }

    pub fn kinetic_energy(&self, p: f64) -> f64 {
        p * p / (2.0 * self.mass)
    }
}

/// Ring of `N` sites with bases `position`, `momentum` and `energy`.
///
/// `momentum` uses centered indices `k = -N/2 .. N/2-1`. Kinetic energy
/// `p^2/2M` is doubly degenerate, so `energy` carries the signed label
/// `sgn(p) p^2 / 2M`; it shares its eigenvectors with `momentum`.
pub fn ring_system(p: RingParameters, constants: PhysicalConstants) -> Result<ModelSystem> {
    p.validate()?;
    let n = p.sites;
    let dx = p.site_spacing();
    let position = LabeledBasis::canonical((0..n).map(|i| i as f64 * dx).collect())?;

    let k_min = -((n / 2) as i64);
    let norm = 1.0 / (n as f64).sqrt();
    let mut vectors = Vec::with_capacity(n);
    let mut momenta = Vec::with_capacity(n);
    for idx in 0..n {
        let k = k_min + idx as i64;
        let amps: Vec<C64> = (0..n)
            .map(|site| {
                // p x / hbar = 2 pi k site / N, reduced mod N for accuracy.
                let turns = (k * site as i64).rem_euclid(n as i64) as f64 / n as f64;
                C64::from_polar(norm, 2.0 * PI * turns)
            })
            .collect();
        vectors.push(StateVector::new(amps)?.with_label(format!("k={k}")));
        momenta.push(k as f64 * p.momentum_spacing(constants));
    }
    let energies: Vec<f64> = momenta
        .iter()
        .map(|&q| q.signum() * p.kinetic_energy(q))
        .collect();
    let momentum = LabeledBasis::new(vectors.clone(), momenta)?;
    let energy = LabeledBasis::new_unchecked(vectors, energies)?;

    let mut parameters = BTreeMap::new();
    parameters.insert("sites".into(), n as f64);
    parameters.insert("circumference".into(), p.circumference);
    parameters.insert("mass".into(), p.mass);
    parameters.insert("flight_time".into(), p.flight_time);
    let oracle = ClassicalOracle {
        description: "p* = M dx / T, dx = x_b - x_a on the minimal-|dx| image".into(),
        parameters,
    };
    ModelSystem::assemble(
        format!("ring-{n}"),
        vec![
            ("position", position),
            ("momentum", momentum),
            ("energy", energy),
        ],
        Some(oracle),
    )
}

/// Endpoints for ring propagation: `|a> = |x_a>` and
/// `|b> = exp(+i H (T - extra_time) / hbar) |x_b>`, the detection state
/// referred back to preparation time. A nonzero `extra_time` moves the
/// stationary propagation time by `+extra_time`.
pub fn ring_endpoints(
    system: &ModelSystem,
    p: RingParameters,
    x_a: f64,
    x_b: f64,
    extra_time: f64,
    constants: PhysicalConstants,
) -> Result<(StateVector, StateVector)> {
    let position = system.basis("position")?;
    let a = position.vector(position.nearest_index(x_a)).clone();
    let b0 = position.vector(position.nearest_index(x_b)).clone();
    let b = ring_free_evolution(system, p, &b0, -(p.flight_time - extra_time), constants)?;
    Ok((a.with_label("a"), b.with_label("b")))
}

/// Free evolution `exp(-i H t / hbar)` on the ring, applied in the momentum
/// basis. Negative `t` propagates backwards.
pub fn ring_free_evolution(
    system: &ModelSystem,
    p: RingParameters,
    state: &StateVector,
    t: f64,
    constants: PhysicalConstants,
) -> Result<StateVector> {
    let momentum = system.basis("momentum")?;
    let phases = momentum
        .eigenvalues()
        .iter()
        .map(|&q| -p.kinetic_energy(q) * t / constants.hbar)
        .collect();
    let u = DiagonalUnitary::new(momentum, phases)?;
    apply_diagonal(&u, state)
}

/// Gaussian packet `sum_m exp(-(x_m - center)^2 / (4 width^2)) |m>`,
/// normalized. `width` is the standard deviation of `|amplitude|^2`.
pub fn make_packet(basis: &LabeledBasis, center: f64, width: f64) -> Result<StateVector> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::invalid("width", "must be positive and finite"));
    }
    let x = basis.eigenvalues();
    if !(center >= x[0] && center <= x[x.len() - 1]) {
        return Err(Error::invalid(
            "center",
            format!("{center} outside spectrum [{}, {}]", x[0], x[x.len() - 1]),
        ));
    }
    let exponents: Vec<f64> = x
        .iter()
        .map(|&xm| -(xm - center).powi(2) / (4.0 * width * width))
        .collect();
    // Shift by the maximum so narrow packets collapse onto the nearest vector
    // instead of underflowing.
    let top = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let coeffs: Vec<C64> = exponents.iter().map(|e| c((e - top).exp(), 0.0)).collect();
    StateVector::normalized(basis.synthesize(&coeffs))
}

/// True when `width` is below the recommended `2 max(dx_m)`.
pub fn packet_is_underresolved(basis: &LabeledBasis, width: f64) -> bool {
    width < PACKET_MIN_WIDTH_SPACINGS * basis.max_spacing()
}
