//! Polynomial nonlinearities `f` with antiderivative `F`, sampled
//! verification of the growth and dissipation hypotheses, and the
//! constructive splitting `f = f0 + f1` with `f0` vanishing near zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::{SpectralField, Transform};

/// f(u) = sum_i coeffs[i] u^i with f(0) = 0, together with the declared
/// dissipation parameters nu in (0, 1] and m_f >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    coeffs: Vec<f64>,
    nu: f64,
    m_f: f64,
}

impl Nonlinearity {
    pub fn new(coeffs: &[f64], nu: f64, m_f: f64) -> Result<Self> {
        if coeffs.first().map_or(false, |&c0| c0 != 0.0) {
            return Err(Error::InvalidNonlinearity("f(0) must vanish".into()));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::InvalidNonlinearity(format!(
                "nu = {nu} must lie in (0, 1]"
            )));
        }
        if !(m_f >= 0.0) {
            return Err(Error::InvalidNonlinearity(format!(
                "m_f = {m_f} must be nonnegative"
            )));
        }
        let mut coeffs = coeffs.to_vec();
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Ok(Nonlinearity { coeffs, nu, m_f })
    }

    /// f(u) = u^3.
    pub fn cubic() -> Self {
        Nonlinearity::new(&[0.0, 0.0, 0.0, 1.0], 1.0, 0.0).unwrap()
    }

    /// f(u) = u^5.
    pub fn quintic() -> Self {
        Nonlinearity::new(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 1.0, 0.0).unwrap()
    }

    /// f(u) = u^3 - u with declared (nu, m_f) = (1/2, 1).
    pub fn double_well() -> Self {
        Nonlinearity::new(&[0.0, -1.0, 0.0, 1.0], 0.5, 1.0).unwrap()
    }

    /// f identically zero.
    pub fn none() -> Self {
        Nonlinearity::new(&[], 1.0, 0.0).unwrap()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn m_f(&self) -> f64 {
        self.m_f
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn f(&self, u: f64) -> f64 {
        horner(&self.coeffs, u)
    }

    /// f'(u).
    pub fn f_prime(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for i in (1..self.coeffs.len()).rev() {
            acc = acc * u + self.coeffs[i] * i as f64;
        }
        acc
    }

    /// F(u) = int_0^u f, exact polynomial antiderivative.
    pub fn antiderivative(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for i in (0..self.coeffs.len()).rev() {
            acc = acc * u + self.coeffs[i] / (i as f64 + 1.0);
        }
        acc * u
    }

    /// Galerkin truncation of f(u(x)) through the collocation grid.
    pub fn apply(&self, u: &SpectralField, transform: &Transform) -> SpectralField {
        if self.is_zero() {
            return SpectralField::zeros(u.domain());
        }
        transform.pointwise(u, |x| self.f(x))
    }

    /// Least empirical constant in the growth bound
    /// |f(u) - f(v)| <= c |u - v| (1 + |u|^4 + |v|^4), or a witness of
    /// divergence as the sampling range grows.
    pub fn verify_growth(&self, range: f64, samples: usize) -> Result<GrowthOutcome> {
        if !(range > 0.0) {
            return Err(Error::InvalidNonlinearity("range must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
        let ranges = [range / 4.0, range / 2.0, range];
        let mut c_per_range = Vec::with_capacity(ranges.len());
        let mut worst_pair = (0.0, 0.0);
        for &r in &ranges {
            let mut c_max: f64 = 0.0;
            for _ in 0..samples {
                let u = rng.gen_range(-r..r);
                let v = rng.gen_range(-r..r);
                if u == v {
                    continue;
                }
                let ratio = (self.f(u) - self.f(v)).abs()
                    / ((u - v).abs() * (1.0 + u.powi(4).abs() + v.powi(4).abs()));
                if ratio > c_max {
                    c_max = ratio;
                    worst_pair = (u, v);
                }
            }
            c_per_range.push(c_max);
        }
        let n = c_per_range.len();
        if c_per_range[n - 1] > 1.5 * c_per_range[n - 2] && c_per_range[n - 1] > 0.0 {
            return Ok(GrowthOutcome::Unbounded {
                witness: worst_pair,
                c_trend: c_per_range,
            });
        }
        Ok(GrowthOutcome::Bounded {
            c: c_per_range[n - 1],
        })
    }

    /// Sampled check of the two dissipation inequalities.
    pub fn verify_dissipation(&self, lambda1: f64, range: f64) -> DissipationReport {
        let n = 200_001;
        let mut margin1 = f64::INFINITY;
        let mut margin2 = f64::INFINITY;
        let mut worst1 = 0.0;
        let mut worst2 = 0.0;
        let slack = lambda1 / 2.0 * (1.0 - self.nu);
        for i in 0..n {
            let u = -range + 2.0 * range * i as f64 / (n - 1) as f64;
            let fu = self.f(u);
            let cap_f = self.antiderivative(u);
            let m1 = fu * u - cap_f + slack * u * u + self.m_f;
            let m2 = cap_f + slack * u * u + self.m_f;
            if m1 < margin1 {
                margin1 = m1;
                worst1 = u;
            }
            if m2 < margin2 {
                margin2 = m2;
                worst2 = u;
            }
        }
        let tol = -1e-9 * (1.0 + range.powi(6));
        DissipationReport {
            diss1_ok: margin1 >= tol,
            diss2_ok: margin2 >= tol,
            margin1,
            margin2,
            worst1_at: worst1,
            worst2_at: worst2,
        }
    }

    /// Constructive decomposition f = f0 + f1 with f0 vanishing on [-k, k],
    /// f0(s) s >= F0(s) >= 0 and f1 globally Lipschitz.
    pub fn decompose(&self, lambda1: f64, beta: Option<f64>) -> Result<Decomposition> {
        let alpha = lambda1 * (1.0 - self.nu);
        let beta = beta.unwrap_or(0.5 * (alpha + lambda1));
        if !(beta > alpha && beta < lambda1) {
            return Err(Error::InvalidNonlinearity(format!(
                "beta = {beta} must lie in ({alpha}, {lambda1})"
            )));
        }
        // Least integer k >= 1 with (beta - alpha) s^2 - 2 m_f >= 0 for |s| >= k.
        let threshold = (2.0 * self.m_f / (beta - alpha)).sqrt();
        if !threshold.is_finite() {
            return Err(Error::DissipationViolated(
                "no finite cutoff level exists".into(),
            ));
        }
        let k = threshold.ceil().max(1.0);
        Ok(Decomposition {
            nl: self.clone(),
            alpha,
            beta,
            k,
        })
    }

    /// Quadrature check of the integrated dissipation bounds on a field.
    pub fn extra_bounds_check(&self, u: &SpectralField, transform: &Transform) -> ExtraBounds {
        let grid = transform.to_grid(u);
        let f_grid = grid.mapv(|x| self.f(x));
        let cap_f_grid = grid.mapv(|x| self.antiderivative(x));
        let fu_u = transform.inner_grid(&f_grid, &grid);
        let cap_f_int = transform.integrate(&cap_f_grid);
        let m_big = self.m_f * u.domain().volume();
        let slack = 0.5 * (1.0 - self.nu) * u.sobolev_norm_sq(1.0);
        ExtraBounds {
            margin1: fu_u - (cap_f_int - slack - m_big),
            margin2: cap_f_int - (-slack - m_big),
        }
    }
}

fn horner(coeffs: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * u + c;
    }
    acc
}

#[derive(Debug, Clone)]
pub enum GrowthOutcome {
    Bounded { c: f64 },
    Unbounded { witness: (f64, f64), c_trend: Vec<f64> },
}

impl GrowthOutcome {
    pub fn is_bounded(&self) -> bool {
        matches!(self, GrowthOutcome::Bounded { .. })
    }
}

#[derive(Debug, Clone)]
pub struct DissipationReport {
    pub diss1_ok: bool,
    pub diss2_ok: bool,
    pub margin1: f64,
    pub margin2: f64,
    pub worst1_at: f64,
    pub worst2_at: f64,
}

impl DissipationReport {
    pub fn both_ok(&self) -> bool {
        self.diss1_ok && self.diss2_ok
    }
}

#[derive(Debug, Clone)]
pub struct ExtraBounds {
    pub margin1: f64,
    pub margin2: f64,
}

/// The split f = f0 + f1 built from a smooth cutoff on [k, k+1].
#[derive(Debug, Clone)]
pub struct Decomposition {
    nl: Nonlinearity,
    pub alpha: f64,
    pub beta: f64,
    /// Cutoff level, integer-valued and >= 1.
    pub k: f64,
}

impl Decomposition {
    /// Smooth monotone transition: 0 on [-k, k], 1 outside [-(k+1), k+1],
    /// built from the classical exp(-1/x) bump so rho'(s) s >= 0.
    pub fn rho_hat(&self, s: f64) -> f64 {
        smoothstep(s.abs() - self.k)
    }

    pub fn f0(&self, s: f64) -> f64 {
        let rho = self.rho_hat(s);
        if rho == 0.0 {
            0.0
        } else {
            rho * (self.nl.f(s) + self.beta * s)
        }
    }

    pub fn f1(&self, s: f64) -> f64 {
        self.nl.f(s) - self.f0(s)
    }

    /// F0(s) = int_0^s f0 by composite Gauss-Legendre quadrature; the
    /// integrand vanishes on [-k, k], so integration starts at the cutoff.
    pub fn f0_antiderivative(&self, s: f64) -> f64 {
        let a = s.abs();
        if a <= self.k {
            return 0.0;
        }
        let sign = s.signum();
        let panels = (((a - self.k) * 64.0).ceil() as usize).clamp(64, 16384);
        sign * gauss_integral(|y| self.f0(sign * y), self.k, a, panels)
    }

    /// Cumulative F0 on an ascending list of points.  Each branch is
    /// accumulated outward from its anchor at +-k where F0 = 0; since f0 does
    /// not change sign on a branch, the partial sums grow monotonically and
    /// no cancellation occurs.
    pub fn f0_antiderivative_cumulative(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted.len()];
        let mut prev = (self.k, 0.0);
        for (i, &s) in sorted.iter().enumerate() {
            if s > self.k {
                let val = prev.1 + gauss_integral(|y| self.f0(y), prev.0, s, segment_panels(prev.0, s));
                out[i] = val;
                prev = (s, val);
            }
        }
        let mut prev = (-self.k, 0.0);
        for (i, &s) in sorted.iter().enumerate().rev() {
            if s < -self.k {
                let val = prev.1 - gauss_integral(|y| self.f0(y), s, prev.0, segment_panels(s, prev.0));
                out[i] = val;
                prev = (s, val);
            }
        }
        out
    }

    /// Supremum of |f1'| estimated by central differences; beyond the
    /// transition band f1 is exactly linear with slope -beta.
    pub fn f1_lipschitz_estimate(&self) -> f64 {
        let lo = -(self.k + 2.0);
        let hi = self.k + 2.0;
        let n = 20_000;
        let h = 1e-6;
        let mut sup: f64 = self.beta;
        for i in 0..=n {
            let s = lo + (hi - lo) * i as f64 / n as f64;
            let quot = (self.f1(s + h) - self.f1(s - h)).abs() / (2.0 * h);
            sup = sup.max(quot);
        }
        sup
    }
}

/// C-infinity transition from 0 at x <= 0 to 1 at x >= 1.
fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

fn segment_panels(a: f64, b: f64) -> usize {
    (((b - a) * 64.0).ceil() as usize).clamp(4, 16384)
}

/// Composite 5-point Gauss-Legendre on [a, b].
fn gauss_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [
        -0.906179845938664,
        -0.5384693101056831,
        0.0,
        0.5384693101056831,
        0.906179845938664,
    ];
    const W: [f64; 5] = [
        0.23692688505618908,
        0.47862867049936647,
        0.5688888888888889,
        0.47862867049936647,
        0.23692688505618908,
    ];
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (&x, &w) in X.iter().zip(W.iter()) {
            sum += w * f(mid + 0.5 * h * x);
        }
    }
    sum * 0.5 * h
}
