//! Planar OTHR coordinate geometry: the slant-coordinate measurement map for a
//! two-hop ionospheric reflection path, its inverse (used for track initiation),
//! and analytic Jacobians with respect to the target state and the pair of
//! reflection heights.
//!
//! Units: km, km/s, radians. All angles are radians internally; degrees only
//! appear at config parsing.

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3, Vector4};
use thiserror::Error;

/// Ground-distance guard for the g -> 0 singularity. OTHR targets sit 1000+ km
/// downrange, so this never binds in a valid scenario.
pub const G_MIN_KM: f64 = 1.0;

/// Lower bound of usable reflection heights (top of the D region).
pub const HEIGHT_MIN_KM: f64 = 50.0;
/// Upper bound of usable reflection heights (top of the F region).
pub const HEIGHT_MAX_KM: f64 = 400.0;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    /// Ground distance below [`G_MIN_KM`]; bore angle and ground speed are
    /// undefined at g = 0.
    #[error("degenerate geometry: target too close to the receiver")]
    DegenerateGeometry,
    /// The slant measurement is inconsistent with the hypothesized reflection
    /// heights (negative radicand or |arcsin| argument > 1 in the inverse map).
    #[error("slant measurement outside the domain of the inverse map")]
    OutOfDomain,
    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,
}

/// Target kinematic state in the planar UTM frame: east/north position and
/// velocity, `[x, vx, y, vy]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtmState {
    pub x: f64,
    pub vx: f64,
    pub y: f64,
    pub vy: f64,
}

impl UtmState {
    pub fn new(x: f64, vx: f64, y: f64, vy: f64) -> Self {
        Self { x, vx, y, vy }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.vx, self.y, self.vy)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self { x: v[0], vx: v[1], y: v[2], vy: v[3] }
    }
}

/// One radar return in the slant frame: slant range (km), slant range rate
/// (km/s), azimuth off bore-sight (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlantMeasurement {
    pub r: f64,
    pub rdot: f64,
    pub a: f64,
}

impl SlantMeasurement {
    pub fn new(r: f64, rdot: f64, a: f64) -> Self {
        Self { r, rdot, a }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.r, self.rdot, self.a)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self { r: v[0], rdot: v[1], a: v[2] }
    }
}

/// One OTHR's site geometry: receiver position (km), bore-sight compass angle
/// (rad, clockwise from north), and transmitter-receiver separation (km).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteConfig {
    pub x0: f64,
    pub y0: f64,
    pub beta0: f64,
    pub d0: f64,
}

/// Reflection-height pair of one propagation path: transmit hop and receive
/// hop heights (km).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathHeights {
    pub ht: f64,
    pub hr: f64,
}

impl PathHeights {
    pub fn new(ht: f64, hr: f64) -> Self {
        Self { ht, hr }
    }

    pub fn in_bounds(&self) -> bool {
        (HEIGHT_MIN_KM..=HEIGHT_MAX_KM).contains(&self.ht)
            && (HEIGHT_MIN_KM..=HEIGHT_MAX_KM).contains(&self.hr)
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(rad: f64) -> f64 {
    let mut a = rad.rem_euclid(std::f64::consts::TAU);
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Shared intermediates of the two-hop geometry.
struct Hops {
    g: f64,
    gdot: f64,
    sb: f64,
    cb: f64,
    /// Receive-hop half length sqrt(g^2/4 + hr^2).
    r1: f64,
    /// Transmit-hop half length sqrt((g^2 - 2 d0 g sin b + d0^2)/4 + ht^2).
    r2: f64,
    /// g - d0 sin b.
    r3: f64,
}

fn hops(state: &UtmState, site: &SiteConfig, h: &PathHeights) -> Result<Hops, GeometryError> {
    let dx = state.x - site.x0;
    let dy = state.y - site.y0;
    let g = dx.hypot(dy);
    if g < G_MIN_KM {
        return Err(GeometryError::DegenerateGeometry);
    }
    let gdot = (dx * state.vx + dy * state.vy) / g;
    let b = wrap_angle(std::f64::consts::FRAC_PI_2 - dy.atan2(dx) - site.beta0);
    let (sb, cb) = b.sin_cos();
    let r1 = (g * g / 4.0 + h.hr * h.hr).sqrt();
    let r2 = ((g * g - 2.0 * site.d0 * g * sb + site.d0 * site.d0) / 4.0 + h.ht * h.ht).sqrt();
    let r3 = g - site.d0 * sb;
    Ok(Hops { g, gdot, sb, cb, r1, r2, r3 })
}

/// Map a UTM state to the slant frame through one propagation path.
pub fn forward_map(
    state: &UtmState,
    site: &SiteConfig,
    h: &PathHeights,
) -> Result<SlantMeasurement, GeometryError> {
    let hp = hops(state, site, h)?;
    let r = hp.r1 + hp.r2;
    let rdot = hp.gdot / 4.0 * (hp.g / hp.r1 + hp.r3 / hp.r2);
    // |g sin b| <= sqrt(g^2 + 4 hr^2), so the arcsin argument is always valid.
    let a = (hp.g * hp.sb / (2.0 * hp.r1)).asin();
    Ok(SlantMeasurement { r, rdot, a })
}

/// Recover the ground position (x, y) from a slant measurement under a
/// hypothesized height pair. Range rate carries no position information and is
/// ignored.
pub fn inverse_map(
    meas: &SlantMeasurement,
    site: &SiteConfig,
    h: &PathHeights,
) -> Result<(f64, f64), GeometryError> {
    let sa = meas.a.sin();
    let denom = 2.0 * meas.r - site.d0 * sa;
    if denom <= 0.0 {
        return Err(GeometryError::OutOfDomain);
    }
    let t = (meas.r * meas.r + h.hr * h.hr - h.ht * h.ht - site.d0 * site.d0 / 4.0) / denom;
    let radicand = t * t - h.hr * h.hr;
    if radicand < 0.0 {
        return Err(GeometryError::OutOfDomain);
    }
    let rho = 2.0 * radicand.sqrt();
    if rho < G_MIN_KM {
        return Err(GeometryError::OutOfDomain);
    }
    let arg = 2.0 * sa * t / rho;
    // Tolerate roundoff at the |arg| = 1 boundary (bore-aligned geometries hit
    // it exactly); anything further out signals an inconsistent hypothesis.
    if arg.abs() > 1.0 + 1e-9 {
        return Err(GeometryError::OutOfDomain);
    }
    let theta = std::f64::consts::FRAC_PI_2 - arg.clamp(-1.0, 1.0).asin() - site.beta0;
    Ok((site.x0 + rho * theta.cos(), site.y0 + rho * theta.sin()))
}

/// Jacobian of the forward map with respect to `[x, vx, y, vy]`, as the
/// chain-rule product d(r, rdot, a)/d(g, gdot, b) * d(g, gdot, b)/d(state).
pub fn jacobian_state(
    state: &UtmState,
    site: &SiteConfig,
    h: &PathHeights,
) -> Result<SMatrix<f64, 3, 4>, GeometryError> {
    let hp = hops(state, site, h)?;
    let Hops { g, gdot, sb, cb, r1, r2, r3 } = hp;
    let d0 = site.d0;
    let q = g * sb / (2.0 * r1);
    let droot = (1.0 - q * q).sqrt();

    let slant_wrt_hops = Matrix3::new(
        g / (4.0 * r1) + r3 / (4.0 * r2),
        0.0,
        -d0 * g * cb / (4.0 * r2),
        gdot / 4.0
            * (1.0 / r1 + 1.0 / r2 - g * g / (4.0 * r1.powi(3)) - r3 * r3 / (4.0 * r2.powi(3))),
        (g * r2 + r1 * r3) / (4.0 * r1 * r2),
        -(d0 * gdot * cb / (4.0 * r2)) * (1.0 - g * r3 / (4.0 * r2 * r2)),
        sb * (1.0 - g * g / (4.0 * r1 * r1)) / (2.0 * r1 * droot),
        0.0,
        g * cb / (2.0 * r1 * droot),
    );

    let dx = state.x - site.x0;
    let dy = state.y - site.y0;
    let r4 = dx * state.vx + dy * state.vy;
    let g3 = g.powi(3);
    let hops_wrt_state = SMatrix::<f64, 3, 4>::new(
        dx / g,
        0.0,
        dy / g,
        0.0,
        state.vx / g - dx * r4 / g3,
        dx / g,
        state.vy / g - dy * r4 / g3,
        dy / g,
        dy / (g * g),
        0.0,
        -dx / (g * g),
        0.0,
    );

    Ok(slant_wrt_hops * hops_wrt_state)
}

/// Jacobian of the forward map with respect to the height pair `[ht, hr]`.
pub fn jacobian_heights(
    state: &UtmState,
    site: &SiteConfig,
    h: &PathHeights,
) -> Result<SMatrix<f64, 3, 2>, GeometryError> {
    let hp = hops(state, site, h)?;
    let Hops { g, gdot, sb, r1, r2, r3, .. } = hp;
    let q = g * sb / (2.0 * r1);
    let droot = (1.0 - q * q).sqrt();
    Ok(SMatrix::<f64, 3, 2>::new(
        h.ht / r2,
        h.hr / r1,
        -gdot * r3 * h.ht / (4.0 * r2.powi(3)),
        -g * gdot * h.hr / (4.0 * r1.powi(3)),
        0.0,
        -g * h.hr * sb / (2.0 * r1.powi(3) * droot),
    ))
}

/// Gaussian approximation of the pushed-through measurement likelihood: keeps
/// the nonlinear mean and inflates the base covariance by `J sigma J^T`.
pub fn gaussian_push<const N: usize>(
    mean: SlantMeasurement,
    base: &Matrix3<f64>,
    jac: &SMatrix<f64, 3, N>,
    sigma: &SMatrix<f64, N, N>,
) -> Result<(SlantMeasurement, Matrix3<f64>), GeometryError> {
    check_spd(sigma, true)?;
    check_spd(base, false)?;
    let combined = base + jac * sigma * jac.transpose();
    check_spd(&combined, false)?;
    Ok((mean, combined))
}

/// Symmetric positive (semi-)definite check; `allow_semi` admits PSD inputs
/// (a zero inflation covariance is legal).
fn check_spd<const N: usize>(m: &SMatrix<f64, N, N>, allow_semi: bool) -> Result<(), GeometryError> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(GeometryError::NotPositiveDefinite);
    }
    if allow_semi && m.amax() == 0.0 {
        return Ok(());
    }
    // Cholesky with a relative shift tolerance rejects indefinite inputs.
    if nalgebra::Cholesky::new(*m).is_none() {
        return Err(GeometryError::NotPositiveDefinite);
    }
    Ok(())
}
