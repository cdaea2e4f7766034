//! Isotropic elasticity and J2 plasticity with piecewise-linear isotropic
//! hardening, integrated under plane stress.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::FemError;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_3_2: f64 = 1.224_744_871_391_589; // sqrt(3/2)

/// Out-of-plane stress tolerance of the nested plane-stress iteration,
/// relative to `max(1, |sigma|)`.
pub const PLANE_STRESS_TOL: f64 = 1e-10;
const PLANE_STRESS_MAX_ITER: usize = 60;

/// Tabulated yield stress versus equivalent plastic strain, interpolated
/// linearly and extrapolated with the slope of the last segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct HardeningCurve {
    /// (yield stress, equivalent plastic strain) pairs.
    points: Vec<(f64, f64)>,
}

impl HardeningCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, FemError> {
        if points.is_empty() {
            return Err(FemError::InvalidMaterial("empty hardening curve".into()));
        }
        if points[0].1 != 0.0 {
            return Err(FemError::InvalidMaterial(
                "hardening curve must start at zero plastic strain".into(),
            ));
        }
        for (i, &(s, e)) in points.iter().enumerate() {
            if !s.is_finite() || !e.is_finite() || s <= 0.0 {
                return Err(FemError::InvalidMaterial(format!(
                    "hardening point {i} is not a positive finite pair"
                )));
            }
            if i > 0 {
                let (sp, ep) = points[i - 1];
                if e <= ep {
                    return Err(FemError::InvalidMaterial(
                        "hardening plastic strains must be strictly increasing".into(),
                    ));
                }
                if s < sp {
                    return Err(FemError::InvalidMaterial(
                        "hardening stresses must be non-decreasing".into(),
                    ));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn initial_yield(&self) -> f64 {
        self.points[0].0
    }

    /// Largest tabulated plastic strain.
    pub fn last_strain(&self) -> f64 {
        self.points[self.points.len() - 1].1
    }

    /// Index of the segment holding `eqps`; `len - 1` (virtual) past the
    /// last point. A single-point table is perfectly plastic.
    fn segment(&self, eqps: f64) -> usize {
        let n = self.points.len();
        if n == 1 {
            return 0;
        }
        for k in 0..n - 1 {
            if eqps <= self.points[k + 1].1 {
                return k;
            }
        }
        n - 2
    }

    fn segment_line(&self, k: usize) -> (f64, f64, f64) {
        if self.points.len() == 1 {
            let (s, e) = self.points[0];
            return (s, e, 0.0);
        }
        let (s0, e0) = self.points[k];
        let (s1, e1) = self.points[k + 1];
        (s0, e0, (s1 - s0) / (e1 - e0))
    }

    /// Yield stress and hardening slope at `eqps`.
    pub fn evaluate(&self, eqps: f64) -> (f64, f64) {
        let (s0, e0, h) = self.segment_line(self.segment(eqps));
        (s0 + h * (eqps - e0), h)
    }

    /// Solves `q_trial - 3 G dg = sigma_y(eqps_n + dg)` segment by segment.
    /// Exact for a piecewise-linear curve. Returns (dg, slope at the solution).
    fn plastic_multiplier(&self, q_trial: f64, shear: f64, eqps_n: f64) -> (f64, f64) {
        let n = self.points.len();
        let mut k = self.segment(eqps_n);
        loop {
            let (s0, e0, h) = self.segment_line(k);
            let dg = (q_trial - s0 - h * (eqps_n - e0)) / (3.0 * shear + h);
            let last = n == 1 || k + 2 >= n;
            if last || eqps_n + dg <= self.points[k + 1].1 {
                return (dg.max(0.0), h);
            }
            k += 1;
        }
    }
}

impl TryFrom<Vec<(f64, f64)>> for HardeningCurve {
    type Error = FemError;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<HardeningCurve> for Vec<(f64, f64)> {
    fn from(c: HardeningCurve) -> Self {
        c.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// MPa
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardening: Option<HardeningCurve>,
}

impl Material {
    pub fn elastic(youngs_modulus: f64, poisson_ratio: f64) -> Self {
        Self {
            youngs_modulus,
            poisson_ratio,
            hardening: None,
        }
    }

    pub fn plastic(youngs_modulus: f64, poisson_ratio: f64, hardening: HardeningCurve) -> Self {
        Self {
            youngs_modulus,
            poisson_ratio,
            hardening: Some(hardening),
        }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(FemError::InvalidMaterial(
                "Young's modulus must be positive".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(FemError::InvalidMaterial(
                "Poisson ratio must lie in [0, 0.5)".into(),
            ));
        }
        if let Some(h) = &self.hardening {
            HardeningCurve::new(h.points.clone())?;
        }
        Ok(())
    }

    pub fn is_plastic(&self) -> bool {
        self.hardening.is_some()
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.youngs_modulus / (3.0 * (1.0 - 2.0 * self.poisson_ratio))
    }

    /// Plane-stress elasticity matrix in Voigt notation (engineering shear).
    pub fn plane_stress_elasticity(&self) -> Matrix3<f64> {
        let e = self.youngs_modulus;
        let nu = self.poisson_ratio;
        let c = e / (1.0 - nu * nu);
        Matrix3::new(
            c,
            c * nu,
            0.0,
            c * nu,
            c,
            0.0,
            0.0,
            0.0,
            c * (1.0 - nu) / 2.0,
        )
    }
}

/// Integration-point history. Plastic strain is a tensor in components
/// (11, 22, 33, 12).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlasticState {
    pub plastic_strain: [f64; 4],
    pub eqps: f64,
    /// Total through-thickness strain of the last integration.
    pub strain_33: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct StressUpdate {
    /// Voigt (11, 22, 12).
    pub stress: Vector3<f64>,
    /// Consistent plane-stress tangent, Voigt with engineering shear.
    pub tangent: Matrix3<f64>,
    pub state: PlasticState,
    /// Equivalent plastic strain went beyond the last tabulated point.
    pub extrapolated: bool,
}

/// 3D response at a fixed through-thickness strain, Mandel notation
/// (11, 22, 33, sqrt2*12).
struct Response3d {
    stress: Vector4<f64>,
    tangent: Matrix4<f64>,
    plastic_strain: [f64; 4],
    eqps: f64,
}

fn mandel_identity() -> Vector4<f64> {
    Vector4::new(1.0, 1.0, 1.0, 0.0)
}

fn elastic_3d(material: &Material) -> Matrix4<f64> {
    let k = material.bulk_modulus();
    let g = material.shear_modulus();
    let one = mandel_identity();
    let dev = Matrix4::identity() - one * one.transpose() / 3.0;
    one * one.transpose() * k + dev * (2.0 * g)
}

fn response_3d(material: &Material, strain: &[f64; 4], committed: &PlasticState) -> Response3d {
    let g = material.shear_modulus();
    let elastic = elastic_3d(material);
    let p = &committed.plastic_strain;
    let elastic_strain = Vector4::new(
        strain[0] - p[0],
        strain[1] - p[1],
        strain[2] - p[2],
        SQRT_2 * (strain[3] - p[3]),
    );
    let trial = elastic * elastic_strain;
    let Some(curve) = &material.hardening else {
        return Response3d {
            stress: trial,
            tangent: elastic,
            plastic_strain: *p,
            eqps: committed.eqps,
        };
    };

    let mean = (trial[0] + trial[1] + trial[2]) / 3.0;
    let dev = trial - mandel_identity() * mean;
    let dev_norm = dev.norm();
    let q_trial = SQRT_3_2 * dev_norm;
    let (yield_n, _) = curve.evaluate(committed.eqps);
    if q_trial <= yield_n {
        return Response3d {
            stress: trial,
            tangent: elastic,
            plastic_strain: *p,
            eqps: committed.eqps,
        };
    }

    let (dg, slope) = curve.plastic_multiplier(q_trial, g, committed.eqps);
    let n = dev / dev_norm;
    let stress = trial - n * (2.0 * g * SQRT_3_2 * dg);
    let flow = n * (SQRT_3_2 * dg);
    let plastic_strain = [
        p[0] + flow[0],
        p[1] + flow[1],
        p[2] + flow[2],
        p[3] + flow[3] / SQRT_2,
    ];

    let theta = 1.0 - 3.0 * g * dg / q_trial;
    let theta_bar = 1.0 / (1.0 + slope / (3.0 * g)) - (1.0 - theta);
    let one = mandel_identity();
    let proj_dev = Matrix4::identity() - one * one.transpose() / 3.0;
    let tangent = one * one.transpose() * material.bulk_modulus() + proj_dev * (2.0 * g * theta)
        - n * n.transpose() * (2.0 * g * theta_bar);

    Response3d {
        stress,
        tangent,
        plastic_strain,
        eqps: committed.eqps + dg,
    }
}

/// Plane-stress J2 return mapping for an in-plane total strain (Voigt,
/// engineering shear) starting from the committed history.
///
/// The through-thickness strain is found by a safeguarded Newton iteration
/// driving the out-of-plane stress to zero; each evaluation is a 3D radial
/// return. The returned tangent is the 3D algorithmic tangent condensed on
/// the zero out-of-plane stress constraint.
pub fn return_mapping(
    material: &Material,
    strain: &Vector3<f64>,
    committed: &PlasticState,
) -> Result<StressUpdate, FemError> {
    if !(strain.iter().all(|v| v.is_finite())) {
        return Err(FemError::InvalidInput("non-finite strain".into()));
    }
    if !material.is_plastic() {
        let d = material.plane_stress_elasticity();
        let nu = material.poisson_ratio;
        return Ok(StressUpdate {
            stress: d * strain,
            tangent: d,
            state: PlasticState {
                strain_33: -nu / (1.0 - nu) * (strain[0] + strain[1]),
                ..*committed
            },
            extrapolated: false,
        });
    }

    let p = &committed.plastic_strain;
    let lambda = material.bulk_modulus() - 2.0 / 3.0 * material.shear_modulus();
    let g = material.shear_modulus();
    // elastic plane-stress estimate of the through-thickness strain
    let mut e33 = p[2] - lambda / (lambda + 2.0 * g) * (strain[0] - p[0] + strain[1] - p[1]);
    let in_plane = |e33: f64| [strain[0], strain[1], e33, 0.5 * strain[2]];

    let mut bracket_lo = f64::NEG_INFINITY;
    let mut bracket_hi = f64::INFINITY;
    let mut resp = response_3d(material, &in_plane(e33), committed);
    let mut converged = false;
    for _ in 0..PLANE_STRESS_MAX_ITER {
        let s33 = resp.stress[2];
        let scale = resp.stress.amax().max(1.0);
        if s33.abs() <= PLANE_STRESS_TOL * scale {
            converged = true;
            break;
        }
        // sigma_33 is increasing in e33
        if s33 > 0.0 {
            bracket_hi = bracket_hi.min(e33);
        } else {
            bracket_lo = bracket_lo.max(e33);
        }
        let mut next = e33 - s33 / resp.tangent[(2, 2)];
        if !(next > bracket_lo && next < bracket_hi)
            && bracket_lo.is_finite()
            && bracket_hi.is_finite()
        {
            next = 0.5 * (bracket_lo + bracket_hi);
        }
        if next == e33 {
            converged = true;
            break;
        }
        e33 = next;
        resp = response_3d(material, &in_plane(e33), committed);
    }
    if !converged {
        return Err(FemError::ReturnMapping(format!(
            "out-of-plane stress {:.3e} did not vanish",
            resp.stress[2]
        )));
    }

    let c = &resp.tangent;
    let idx = [0usize, 1, 3];
    let mut tangent = Matrix3::zeros();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            tangent[(a, b)] = c[(i, j)] - c[(i, 2)] * c[(2, j)] / c[(2, 2)];
        }
    }
    // Mandel -> Voigt with engineering shear
    let s = [1.0, 1.0, 1.0 / SQRT_2];
    for a in 0..3 {
        for b in 0..3 {
            tangent[(a, b)] *= s[a] * s[b];
        }
    }
    // exact symmetry
    let tangent = (tangent + tangent.transpose()) * 0.5;

    let curve = material.hardening.as_ref().expect("plastic material");
    Ok(StressUpdate {
        stress: Vector3::new(resp.stress[0], resp.stress[1], resp.stress[3] / SQRT_2),
        tangent,
        state: PlasticState {
            plastic_strain: resp.plastic_strain,
            eqps: resp.eqps,
            strain_33: e33,
        },
        extrapolated: resp.eqps > curve.last_strain(),
    })
}

/// Von Mises equivalent of a plane stress state (Voigt).
pub fn von_mises(stress: &Vector3<f64>) -> f64 {
    let (s11, s22, s12) = (stress[0], stress[1], stress[2]);
    (s11 * s11 - s11 * s22 + s22 * s22 + 3.0 * s12 * s12).sqrt()
}

/// Tabulated hardening used by the bundled plate cases.
pub fn reference_hardening() -> HardeningCurve {
    HardeningCurve::new(vec![
        (400.0, 0.0),
        (420.0, 0.02),
        (500.0, 0.2),
        (600.0, 0.5),
        (625.0, 0.6),
        (650.0, 0.8),
    ])
    .expect("valid table")
}
