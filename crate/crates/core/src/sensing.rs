//! Linear sensors, the measurement space W spanned by their Riesz
//! representers, and observation synthesis.
//!
//! Observations carry both the raw sensor values `ℓ_i(u)` and the coordinates
//! of `P_W u` in a U-orthonormal basis of W. With representers `Ψ = B R`
//! (`B` orthonormal, `R` upper triangular) the two are related by
//! `raw = Rᵀ coords`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PbdwError, Result};
use crate::linalg::UBasis;
use crate::space::DiscreteSpace;

/// Relative threshold below which a representer counts as dependent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    LocalAverage,
    PointValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub kind: SensorKind,
    /// One coordinate per spatial dimension.
    pub center: Vec<f64>,
    /// Side length of the averaging interval or box; ignored for point values.
    #[serde(default)]
    pub width: f64,
}

impl SensorSpec {
    pub fn local_average(center: Vec<f64>, width: f64) -> Self {
        Self { kind: SensorKind::LocalAverage, center, width }
    }

    pub fn point_value(x: f64) -> Self {
        Self { kind: SensorKind::PointValue, center: vec![x], width: 0.0 }
    }
}

/// Equispaced local averages: centres `(i+1)/(m+1)` in 1D, the first `m`
/// points of a `k×k` grid with `k = ceil(sqrt m)` in 2D.
pub fn default_layout(dx: usize, m: usize, width: f64) -> Vec<SensorSpec> {
    if dx == 1 {
        return (0..m)
            .map(|i| SensorSpec::local_average(vec![(i + 1) as f64 / (m + 1) as f64], width))
            .collect();
    }
    let k = (m as f64).sqrt().ceil() as usize;
    (0..m)
        .map(|i| {
            let (a, b) = (i % k, i / k);
            SensorSpec::local_average(
                vec![(a + 1) as f64 / (k + 1) as f64, (b + 1) as f64 / (k + 1) as f64],
                width,
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Sensor {
    pub spec: SensorSpec,
    /// Dual-basis coefficients: `ℓ(v) = functionalᵀ v`.
    pub functional: DVector<f64>,
}

/// Integral of the 1D hat centred at `xi` (mesh width `h`) over `[lo, hi]`.
fn hat_integral(xi: f64, h: f64, lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    let (a, b) = (lo.max(xi - h), hi.min(xi));
    if b > a {
        let l = xi - h;
        total += ((b - l).powi(2) - (a - l).powi(2)) / (2.0 * h);
    }
    let (a, b) = (lo.max(xi), hi.min(xi + h));
    if b > a {
        let r = xi + h;
        total += ((r - a).powi(2) - (r - b).powi(2)) / (2.0 * h);
    }
    total
}

fn hat_value(xi: f64, h: f64, x: f64) -> f64 {
    (1.0 - (x - xi).abs() / h).max(0.0)
}

fn functional_vector(space: &DiscreteSpace, index: usize, spec: &SensorSpec) -> Result<DVector<f64>> {
    let invalid = |reason: String| PbdwError::InvalidSensor { index, reason };
    if spec.center.len() != space.dx() {
        return Err(invalid(format!(
            "center has {} coordinates, expected {}",
            spec.center.len(),
            space.dx()
        )));
    }
    let h = 1.0 / space.n_mesh() as f64;
    let nodes = space.nodes();
    let v = match spec.kind {
        SensorKind::PointValue => {
            if space.dx() != 1 {
                return Err(invalid("point values are only bounded functionals in 1D".into()));
            }
            let x = spec.center[0];
            if !(x > 0.0 && x < 1.0) {
                return Err(invalid(format!("point {x} is not inside (0, 1)")));
            }
            DVector::from_iterator(nodes.len(), nodes.iter().map(|p| hat_value(p.x, h, x)))
        }
        SensorKind::LocalAverage => {
            let half = spec.width / 2.0;
            if !(spec.width > 0.0) {
                return Err(invalid(format!("width must be positive, got {}", spec.width)));
            }
            if spec.center.iter().any(|&c| c - half < 0.0 || c + half > 1.0) {
                return Err(invalid("averaging support leaves the domain".into()));
            }
            let measure = spec.width.powi(space.dx() as i32);
            let lo: Vec<f64> = spec.center.iter().map(|c| c - half).collect();
            let hi: Vec<f64> = spec.center.iter().map(|c| c + half).collect();
            DVector::from_iterator(
                nodes.len(),
                nodes.iter().map(|p| {
                    let mut integral = hat_integral(p.x, h, lo[0], hi[0]);
                    if space.dx() == 2 {
                        integral *= hat_integral(p.y, h, lo[1], hi[1]);
                    }
                    integral / measure
                }),
            )
        }
    };
    if v.amax() == 0.0 {
        return Err(invalid("functional vanishes on the discrete space".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpace {
    /// Perturb the orthonormal coordinates of `P_W u`.
    #[default]
    WCoords,
    /// Perturb the raw sensor values.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    None,
    /// Uniform in the Euclidean ball of radius `eps`.
    Bounded {
        eps: f64,
        #[serde(default)]
        space: NoiseSpace,
    },
    Gaussian {
        sigma: f64,
        #[serde(default)]
        space: NoiseSpace,
    },
}

impl NoiseSpec {
    pub fn level(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Bounded { eps, .. } => eps,
            NoiseSpec::Gaussian { sigma, .. } => sigma,
        }
    }

    pub fn space(&self) -> NoiseSpace {
        match *self {
            NoiseSpec::None => NoiseSpace::WCoords,
            NoiseSpec::Bounded { space, .. } | NoiseSpec::Gaussian { space, .. } => space,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Coordinates of `P_W u` in the orthonormal basis of W.
    pub w_coords: DVector<f64>,
    /// Sensor values `ℓ_i(u)`.
    pub raw: DVector<f64>,
    pub noise_level: f64,
    pub noise_space: NoiseSpace,
}

#[derive(Debug, Clone)]
pub struct MeasurementSystem {
    sensors: Vec<Sensor>,
    representers: DMatrix<f64>,
    basis: UBasis,
    w_basis: DMatrix<f64>,
    gram_w_basis: DMatrix<f64>,
    /// Upper triangular with `representers = w_basis · r_factor`.
    r_factor: DMatrix<f64>,
    gramian_condition: f64,
}

impl MeasurementSystem {
    pub fn build(space: &DiscreteSpace, specs: &[SensorSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(PbdwError::InvalidConfig("at least one sensor is required".into()));
        }
        let m = specs.len();
        let dim = space.dim();
        let sensors = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(Sensor { spec: s.clone(), functional: functional_vector(space, i, s)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut functionals = DMatrix::zeros(dim, m);
        for (j, s) in sensors.iter().enumerate() {
            functionals.set_column(j, &s.functional);
        }
        let representers = space.riesz_lift_matrix(&functionals)?;

        let mut basis = UBasis::new();
        let mut r_factor = DMatrix::zeros(m, m);
        for (index, psi) in representers.column_iter().enumerate() {
            let coeffs = basis
                .try_push(space, &psi.clone_owned(), RANK_TOL)
                .map_err(|_| PbdwError::RankDeficientSensors { index })?;
            r_factor.view_mut((0, index), (index + 1, 1)).copy_from(&coeffs);
        }
        let sv = crate::linalg::singular_values_desc(&r_factor);
        let gramian_condition = (sv[0] / sv[m - 1]).powi(2);
        Ok(Self {
            sensors,
            representers,
            w_basis: basis.matrix(dim),
            gram_w_basis: basis.gram_matrix(dim),
            basis,
            r_factor,
            gramian_condition,
        })
    }

    pub fn m(&self) -> usize {
        self.sensors.len()
    }

    pub fn dim(&self) -> usize {
        self.w_basis.nrows()
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn representers(&self) -> &DMatrix<f64> {
        &self.representers
    }

    /// U-orthonormal basis of W as columns.
    pub fn w_basis(&self) -> &DMatrix<f64> {
        &self.w_basis
    }

    /// `G · w_basis`, so that `coords(u) = gram_w_basisᵀ u`.
    pub fn gram_w_basis(&self) -> &DMatrix<f64> {
        &self.gram_w_basis
    }

    pub fn basis(&self) -> &UBasis {
        &self.basis
    }

    pub fn r_factor(&self) -> &DMatrix<f64> {
        &self.r_factor
    }

    /// Condition number of the representer Gramian `ΨᵀGΨ`.
    pub fn gramian_condition(&self) -> f64 {
        self.gramian_condition
    }

    /// Coordinates of `P_W u`.
    pub fn w_coords(&self, u: &DVector<f64>) -> DVector<f64> {
        self.gram_w_basis.tr_mul(u)
    }

    /// `Σ c_k b_k`.
    pub fn synthesize(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.w_basis * coords
    }

    /// `(P_W u, P_{W⊥} u)`.
    pub fn project_w(&self, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let w_part = self.synthesize(&self.w_coords(u));
        let perp = u - &w_part;
        (w_part, perp)
    }

    /// Sensor values `ℓ_i(u)` evaluated from the functionals.
    pub fn raw_values(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.sensors.iter().map(|s| s.functional.dot(u)))
    }

    pub fn coords_to_raw(&self, coords: &DVector<f64>) -> DVector<f64> {
        self.r_factor.tr_mul(coords)
    }

    pub fn raw_to_coords(&self, raw: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("raw observation", self.m(), raw.len())?;
        self.r_factor
            .transpose()
            .solve_lower_triangular(raw)
            .ok_or_else(|| PbdwError::Numerical("singular sensor change of basis".into()))
    }

    /// Noise-free observation of a state.
    pub fn observe_exact(&self, u: &DVector<f64>) -> Observation {
        Observation {
            w_coords: self.w_coords(u),
            raw: self.raw_values(u),
            noise_level: 0.0,
            noise_space: NoiseSpace::WCoords,
        }
    }

    /// Observation from sensor values, e.g. ingested data.
    pub fn observation_from_raw(&self, raw: DVector<f64>, noise_level: f64) -> Result<Observation> {
        let w_coords = self.raw_to_coords(&raw)?;
        Ok(Observation { w_coords, raw, noise_level, noise_space: NoiseSpace::Raw })
    }

    pub fn observation_from_coords(&self, w_coords: DVector<f64>) -> Result<Observation> {
        check_dim("observation coordinates", self.m(), w_coords.len())?;
        let raw = self.coords_to_raw(&w_coords);
        Ok(Observation { w_coords, raw, noise_level: 0.0, noise_space: NoiseSpace::WCoords })
    }

    /// Observation of `u` with synthetic noise, deterministic in `seed`.
    pub fn observe(&self, u: &DVector<f64>, noise: &NoiseSpec, seed: u64) -> Result<Observation> {
        check_dim("observed state", self.dim(), u.len())?;
        let clean = self.observe_exact(u);
        let m = self.m();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perturbation = match *noise {
            NoiseSpec::None => return Ok(clean),
            NoiseSpec::Bounded { eps, .. } => {
                if !(eps >= 0.0) {
                    return Err(PbdwError::InvalidConfig(format!("noise bound must be nonnegative, got {eps}")));
                }
                let dir = DVector::from_fn(m, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
                let radius = eps * rng.random::<f64>().powf(1.0 / m as f64);
                let n = dir.norm();
                if n > 0.0 {
                    dir * (radius / n)
                } else {
                    DVector::zeros(m)
                }
            }
            NoiseSpec::Gaussian { sigma, .. } => {
                if !(sigma >= 0.0) {
                    return Err(PbdwError::InvalidConfig(format!("noise sigma must be nonnegative, got {sigma}")));
                }
                DVector::from_fn(m, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
            }
        };
        let space = noise.space();
        let (w_coords, raw) = match space {
            NoiseSpace::WCoords => {
                let c = clean.w_coords + perturbation;
                let r = self.coords_to_raw(&c);
                (c, r)
            }
            NoiseSpace::Raw => {
                let r = clean.raw + perturbation;
                (self.raw_to_coords(&r)?, r)
            }
        };
        Ok(Observation { w_coords, raw, noise_level: noise.level(), noise_space: space })
    }
}
