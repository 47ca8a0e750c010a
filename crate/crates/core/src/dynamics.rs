//! Linear-Gaussian model pieces: the stacked state `L = [G; Ġ; R; Ṙ]`,
//! the emission matrix, the VFOA-dependent transition system, process noise
//! and Gaussian densities.
//!
//! Time runs in frames: `dt` inside the transition matrix is 1 for recorded
//! data, velocities are in degrees per frame.

use nalgebra::{Cholesky, DMatrix, Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction_from_points, wrap_delta, wrapped_residual, Position3D};
use crate::scene::{Scene, TargetId, NO_TARGET};

pub type Vec8 = SVector<f64, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Mat28 = SMatrix<f64, 2, 8>;

/// Offsets of the 2-vectors inside `L`.
pub const G: usize = 0;
pub const G_DOT: usize = 2;
pub const R: usize = 4;
pub const R_DOT: usize = 6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Largest condition number accepted for a 2x2 observation covariance.
const MAX_COND: f64 = 1e12;
pub const EIGEN_FLOOR: f64 = 1e-9;

/// θ = (α, β, Γ_L, Σ_H). α and β are diagonal and stored as their
/// diagonals; Γ_L is kept as its four 2x2 diagonal blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub alpha: Vector2<f64>,
    pub beta: Vector2<f64>,
    pub gamma_g: Matrix2<f64>,
    pub gamma_g_dot: Matrix2<f64>,
    pub gamma_r: Matrix2<f64>,
    pub gamma_r_dot: Matrix2<f64>,
    pub sigma_h: Matrix2<f64>,
}

impl ModelParams {
    /// α = β = diag(0.5, 0.5), Σ_H = 15 I, Γ_G = Γ_Ġ = 5 I, Γ_R = Γ_Ṙ = 0.5 I.
    pub fn standard_init() -> Self {
        Self {
            alpha: Vector2::new(0.5, 0.5),
            beta: Vector2::new(0.5, 0.5),
            gamma_g: Matrix2::identity() * 5.0,
            gamma_g_dot: Matrix2::identity() * 5.0,
            gamma_r: Matrix2::identity() * 0.5,
            gamma_r_dot: Matrix2::identity() * 0.5,
            sigma_h: Matrix2::identity() * 15.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if v.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return Err(Error::InvalidParams(format!(
                    "{name} entries must lie in (0, 1), got [{}, {}]",
                    v[0], v[1]
                )));
            }
        }
        for (name, m) in self.covariances() {
            check_spd(name, m)?;
        }
        Ok(())
    }

    pub fn covariances(&self) -> [(&'static str, &Matrix2<f64>); 5] {
        [
            ("gamma_G", &self.gamma_g),
            ("gamma_Gdot", &self.gamma_g_dot),
            ("gamma_R", &self.gamma_r),
            ("gamma_Rdot", &self.gamma_r_dot),
            ("sigma_H", &self.sigma_h),
        ]
    }

    /// The gaze should move more than the reference: Tr Γ_G > Tr Γ_R.
    pub fn gaze_dominates_reference(&self) -> bool {
        self.gamma_g.trace() > self.gamma_r.trace()
    }

    pub fn emission(&self) -> Mat28 {
        emission_matrix(&self.alpha)
    }

    pub fn gamma_l(&self) -> Mat8 {
        assemble_blocks(
            &self.gamma_g,
            &self.gamma_g_dot,
            &self.gamma_r,
            &self.gamma_r_dot,
        )
    }

    pub fn beta_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&self.beta)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    alpha: [f64; 2],
    beta: [f64; 2],
    #[serde(rename = "gamma_G")]
    gamma_g: [[f64; 2]; 2],
    #[serde(rename = "gamma_Gdot")]
    gamma_g_dot: [[f64; 2]; 2],
    #[serde(rename = "gamma_R")]
    gamma_r: [[f64; 2]; 2],
    #[serde(rename = "gamma_Rdot")]
    gamma_r_dot: [[f64; 2]; 2],
    #[serde(rename = "sigma_H")]
    sigma_h: [[f64; 2]; 2],
}

fn to_rows(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn from_rows(r: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsJson {
            alpha: [self.alpha[0], self.alpha[1]],
            beta: [self.beta[0], self.beta[1]],
            gamma_g: to_rows(&self.gamma_g),
            gamma_g_dot: to_rows(&self.gamma_g_dot),
            gamma_r: to_rows(&self.gamma_r),
            gamma_r_dot: to_rows(&self.gamma_r_dot),
            sigma_h: to_rows(&self.sigma_h),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ParamsJson::deserialize(d)?;
        let p = ModelParams {
            alpha: Vector2::new(j.alpha[0], j.alpha[1]),
            beta: Vector2::new(j.beta[0], j.beta[1]),
            gamma_g: from_rows(&j.gamma_g),
            gamma_g_dot: from_rows(&j.gamma_g_dot),
            gamma_r: from_rows(&j.gamma_r),
            gamma_r_dot: from_rows(&j.gamma_r_dot),
            sigma_h: from_rows(&j.sigma_h),
        };
        p.validate().map_err(serde::de::Error::custom)?;
        Ok(p)
    }
}

fn check_spd(name: &str, m: &Matrix2<f64>) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "{name} has non-finite entries"
        )));
    }
    if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-9 * (1.0 + m.abs().max()) {
        return Err(Error::InvalidParams(format!("{name} is not symmetric")));
    }
    if Cholesky::new(*m).is_none() {
        return Err(Error::InvalidParams(format!(
            "{name} is not positive definite"
        )));
    }
    Ok(())
}

/// Rows `[α₁,0,0,0,1-α₁,0,0,0]` and `[0,α₂,0,0,0,1-α₂,0,0]`.
pub fn emission_matrix(alpha: &Vector2<f64>) -> Mat28 {
    let mut c = Mat28::zeros();
    for m in 0..2 {
        c[(m, G + m)] = alpha[m];
        c[(m, R + m)] = 1.0 - alpha[m];
    }
    c
}

/// `(A, b)` for a person whose focus at `t` has direction `target`
/// (`None` for label 0).
pub fn transition_matrices(
    beta: &Vector2<f64>,
    target: Option<&Vector2<f64>>,
    dt: f64,
) -> (Mat8, Vec8) {
    let mut a = Mat8::identity();
    for m in 0..2 {
        a[(G + m, G_DOT + m)] = dt;
        a[(R + m, R_DOT + m)] = dt;
    }
    let mut b = Vec8::zeros();
    if let Some(x) = target {
        for m in 0..2 {
            a[(G + m, G + m)] = beta[m];
            b[G + m] = (1.0 - beta[m]) * x[m];
        }
    }
    (a, b)
}

/// Direction from person `i` to target `j` with its pan moved to the
/// representative closest to `anchor_pan` (unwrapped state frame).
pub fn target_direction(
    positions: &[Position3D],
    i: TargetId,
    j: TargetId,
    anchor_pan: f64,
) -> Result<Vector2<f64>> {
    let pos = |id: TargetId| {
        id.checked_sub(1)
            .and_then(|k| positions.get(k))
            .ok_or(Error::UnknownTarget(id))
    };
    let d = direction_from_points(pos(i)?, pos(j)?)?;
    Ok(Vector2::new(
        anchor_pan + wrap_delta(d.pan(), anchor_pan),
        d.tilt(),
    ))
}

/// Transition system of person `i` when its VFOA at `t` is `j`.
pub fn transition_system(
    scene: &Scene,
    i: TargetId,
    j: TargetId,
    beta: &Vector2<f64>,
    positions: &[Position3D],
    dt: f64,
) -> Result<(Mat8, Vec8)> {
    if j == i || j > scene.n_targets() {
        return Err(Error::InvalidLabel {
            person: i,
            label: j,
            reason: "not an eligible label",
        });
    }
    if j == NO_TARGET {
        return Ok(transition_matrices(beta, None, dt));
    }
    let x = target_direction(positions, i, j, 0.0)?;
    Ok(transition_matrices(beta, Some(&x), dt))
}

pub fn assemble_blocks(
    g: &Matrix2<f64>,
    g_dot: &Matrix2<f64>,
    r: &Matrix2<f64>,
    r_dot: &Matrix2<f64>,
) -> Mat8 {
    let mut out = Mat8::zeros();
    for (off, blk) in [(G, g), (G_DOT, g_dot), (R, r), (R_DOT, r_dot)] {
        out.fixed_view_mut::<2, 2>(off, off).copy_from(blk);
    }
    out
}

/// Block-diagonal Γ_L. Each block must be SPD.
pub fn process_noise(
    gamma_g: &Matrix2<f64>,
    gamma_g_dot: &Matrix2<f64>,
    gamma_r: &Matrix2<f64>,
    gamma_r_dot: &Matrix2<f64>,
) -> Result<Mat8> {
    check_spd("gamma_G", gamma_g)?;
    check_spd("gamma_Gdot", gamma_g_dot)?;
    check_spd("gamma_R", gamma_r)?;
    check_spd("gamma_Rdot", gamma_r_dot)?;
    Ok(assemble_blocks(gamma_g, gamma_g_dot, gamma_r, gamma_r_dot))
}

/// Log-density of a zero-mean bivariate normal at `r`.
pub fn logpdf_residual(r: &Vector2<f64>, cov: &Matrix2<f64>) -> Result<f64> {
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_COND {
        return Err(Error::Singular(format!(
            "2x2 covariance with eigenvalues {lo:e}, {hi:e}"
        )));
    }
    let chol = Cholesky::new(*cov).ok_or_else(|| Error::Singular("2x2 covariance".into()))?;
    let l = chol.l();
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
    let z = chol.solve(r);
    Ok(-LN_2PI - 0.5 * log_det - 0.5 * r.dot(&z))
}

/// Bivariate normal log-density with the pan/tilt residual wrapped.
pub fn gaussian_logpdf(x: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Result<f64> {
    logpdf_residual(&wrapped_residual(x, mean), cov)
}

/// `log N(H; C(Aμ+b), C(AΣAᵀ+Γ)Cᵀ + Σ_H)`.
#[allow(clippy::too_many_arguments)]
pub fn predictive_obs_loglik(
    mu_prev: &Vec8,
    cov_prev: &Mat8,
    a: &Mat8,
    b: &Vec8,
    c: &Mat28,
    gamma_l: &Mat8,
    sigma_h: &Matrix2<f64>,
    h: &Vector2<f64>,
) -> Result<f64> {
    let m = a * mu_prev + b;
    let p = a * cov_prev * a.transpose() + gamma_l;
    let s = c * p * c.transpose() + sigma_h;
    gaussian_logpdf(h, &(c * m), &symmetrize2(&s))
}

#[allow(clippy::too_many_arguments)]
pub fn predictive_obs_likelihood(
    mu_prev: &Vec8,
    cov_prev: &Mat8,
    a: &Mat8,
    b: &Vec8,
    c: &Mat28,
    gamma_l: &Mat8,
    sigma_h: &Matrix2<f64>,
    h: &Vector2<f64>,
) -> Result<f64> {
    predictive_obs_loglik(mu_prev, cov_prev, a, b, c, gamma_l, sigma_h, h).map(f64::exp)
}

pub fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes and, only if the result is not numerically positive
/// definite, floors its eigenvalues.
pub fn make_spd<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    let s = (m + m.transpose()) * 0.5;
    if Cholesky::new(s).is_some() {
        return s;
    }
    floor_eigen(&s, EIGEN_FLOOR)
}

pub fn floor_eigen<const D: usize>(m: &SMatrix<f64, D, D>, floor: f64) -> SMatrix<f64, D, D> {
    let eig = DMatrix::from_column_slice(D, D, m.as_slice()).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let out = SMatrix::<f64, D, D>::from_column_slice(out.as_slice());
    (out + out.transpose()) * 0.5
}
