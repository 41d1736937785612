//! Time stepping for the full system
//! |v|^rho u_tt + A u_tt + A u_t + A u + int mu A eta ds + f(u) = h,
//! with the quasilinear inertia handled by an SPD solve
//! (|v|^rho + A) a = rhs on the collocation grid.

use std::sync::Arc;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::history::HistoryState;
use crate::kernel::MemoryKernel;
use crate::nonlin::Nonlinearity;
use crate::spectral::{DomainSpec, SpectralField, Transform};

/// Mass operator acting on u_tt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassKind {
    /// |v|^rho + A (the full system; for rho = 0 the coefficient is 1).
    InertiaPlusA,
    /// A alone (the linear companion system of the splitting experiment).
    AOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Second order; fixed-point iteration on the midpoint acceleration.
    ImplicitMidpoint,
    /// First order; linear stiffness treated at the theta-weighted end.
    SemiImplicitTheta { theta: f64 },
}

#[derive(Debug, Clone)]
pub struct StepConfig {
    pub dt: f64,
    /// Inertia exponent in [0, 4].
    pub rho: f64,
    pub tolerance: f64,
    pub max_inner: usize,
    pub scheme: Scheme,
    pub mass: MassKind,
}

impl StepConfig {
    pub fn new(dt: f64, rho: f64) -> Result<Self> {
        let cfg = StepConfig {
            dt,
            rho,
            tolerance: 1e-12,
            max_inner: 200,
            scheme: Scheme::ImplicitMidpoint,
            mass: MassKind::InertiaPlusA,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if !(0.0..=4.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho = {} must lie in [0, 4]",
                self.rho
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if let Scheme::SemiImplicitTheta { theta } = self.scheme {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::InvalidConfig("theta must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// dt bound keeping the midpoint fixed-point iteration contractive with
/// headroom: dt * max_k sqrt(lambda_k / (1 + lambda_k)) <= 0.1.
pub fn default_dt(domain: &DomainSpec) -> f64 {
    let lam = domain.lambda_max();
    0.1 / (lam / (1.0 + lam)).sqrt()
}

#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: f64,
    pub u: SpectralField,
    pub v: SpectralField,
    pub eta: HistoryState,
    /// Acceleration diagnostic from the last step (zero for fresh states).
    pub a: SpectralField,
}

impl SystemState {
    pub fn new(u: SpectralField, v: SpectralField, eta: HistoryState) -> Self {
        let a = SpectralField::zeros(u.domain());
        SystemState { t: 0.0, u, v, eta, a }
    }

    pub fn rest(domain: &Arc<DomainSpec>, eta: HistoryState) -> Self {
        SystemState::new(
            SpectralField::zeros(domain),
            SpectralField::zeros(domain),
            eta,
        )
    }

    pub fn domain(&self) -> &Arc<DomainSpec> {
        self.u.domain()
    }

    /// ||z||^2 in HH^r = ||u||_{1+r}^2 + ||v||_{1+r}^2 + ||eta||_{M^r}^2.
    pub fn hh_norm_sq(&self, kernel: &MemoryKernel, r: f64) -> Result<f64> {
        Ok(self.u.sobolev_norm_sq(1.0 + r)
            + self.v.sobolev_norm_sq(1.0 + r)
            + self.eta.m_norm_sq(kernel, r)?)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite() && self.eta.is_finite()
    }
}

/// |v|^rho on the collocation grid; rho = 0 yields the constant 1 and is
/// handled upstream, 0^rho = 0 for rho > 0.
fn inertia_weight_grid(v: &SpectralField, rho: f64, transform: &Transform) -> ArrayD<f64> {
    let mut grid = transform.to_grid(v);
    grid.mapv_inplace(|x| x.abs().powf(rho));
    grid
}

/// Solves (pointwise weight + wconst + gamma A) a = b. The operator is
/// symmetric positive definite (weight >= 0, wconst >= 0, gamma > 0);
/// without a pointwise part the solve is exact spectral division, otherwise
/// preconditioned conjugate gradients.
fn solve_spd(
    weight: Option<&ArrayD<f64>>,
    wconst: f64,
    gamma: f64,
    b: &SpectralField,
    transform: &Transform,
    tol: f64,
    max_iter: usize,
) -> Result<(SpectralField, usize)> {
    debug_assert!(gamma > 0.0 && wconst >= 0.0);
    let domain = b.domain();
    let lam = domain.eigenvalue_grid();

    let Some(w) = weight else {
        let mut a = b.clone();
        for (c, &l) in a.coeffs_mut().iter_mut().zip(lam.iter()) {
            *c /= wconst + gamma * l;
        }
        return Ok((a, 0));
    };

    let apply = |x: &SpectralField| -> SpectralField {
        let mut grid = transform.to_grid(x);
        grid *= w;
        let mut out = transform.from_grid(&grid).expect("matching grid");
        for ((c, &l), xc) in out
            .coeffs_mut()
            .iter_mut()
            .zip(lam.iter())
            .zip(x.coeffs().iter())
        {
            *c += (wconst + gamma * l) * xc;
        }
        out
    };
    // Mean-field shift of the A^{-1} preconditioner.
    let w_mean = w.sum() / w.len() as f64;
    let precond = |r: &SpectralField| -> SpectralField {
        let mut z = r.clone();
        for (c, &l) in z.coeffs_mut().iter_mut().zip(lam.iter()) {
            *c /= wconst + w_mean + gamma * l;
        }
        z
    };

    let b_norm = b.sobolev_norm(0.0);
    if b_norm == 0.0 {
        return Ok((SpectralField::zeros(domain), 0));
    }
    let mut x = precond(b);
    let mut r = b.sub(&apply(&x));
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.inner(&z, 0.0);
    for iter in 0..max_iter {
        let res = r.sobolev_norm(0.0);
        if res <= tol * b_norm {
            return Ok((x, iter));
        }
        let ap = apply(&p);
        let alpha = rz / p.inner(&ap, 0.0);
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        z = precond(&r);
        let rz_new = r.inner(&z, 0.0);
        let beta = rz_new / rz;
        rz = rz_new;
        let mut p_new = z.clone();
        p_new.axpy(beta, &p);
        p = p_new;
    }
    let res = r.sobolev_norm(0.0);
    if res <= tol * b_norm {
        Ok((x, max_iter))
    } else {
        Err(Error::SolverDiverged {
            iterations: max_iter,
            residual: res / b_norm,
        })
    }
}

/// Right-hand side h - f(u) - A v - A u - int mu A eta ds.
fn system_rhs(
    u: &SpectralField,
    v: &SpectralField,
    eta: &HistoryState,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    transform: &Transform,
) -> Result<SpectralField> {
    let mut rhs = h.clone();
    if !nl.is_zero() {
        rhs.axpy(-1.0, &nl.apply(u, transform));
    }
    rhs.axpy(-1.0, &v.apply_a_power(1.0));
    rhs.axpy(-1.0, &u.apply_a_power(1.0));
    if !kernel.is_zero() {
        rhs.axpy(-1.0, &eta.memory_force(kernel)?);
    }
    Ok(rhs)
}

/// Acceleration from the momentum balance at the given state:
/// (mass) a = h - f(u) - A v - A u - memory force.
#[allow(clippy::too_many_arguments)]
pub fn acceleration_solve(
    u: &SpectralField,
    v: &SpectralField,
    eta: &HistoryState,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    rho: f64,
    mass: MassKind,
    transform: &Transform,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralField> {
    let rhs = system_rhs(u, v, eta, nl, kernel, h, transform)?;
    solve_mass(&rhs, v, rho, mass, 1.0, transform, tol, max_iter)
}

/// Solves (mass + (gamma - 1) A) a = rhs; gamma > 1 folds in implicit
/// damping/stiffness contributions for the theta scheme.
fn solve_mass(
    rhs: &SpectralField,
    v: &SpectralField,
    rho: f64,
    mass: MassKind,
    gamma: f64,
    transform: &Transform,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralField> {
    match mass {
        MassKind::AOnly => Ok(solve_spd(None, 0.0, gamma, rhs, transform, tol, max_iter)?.0),
        MassKind::InertiaPlusA => {
            if rho == 0.0 {
                Ok(solve_spd(None, 1.0, gamma, rhs, transform, tol, max_iter)?.0)
            } else if v.sobolev_norm_sq(0.0) == 0.0 {
                // |v|^rho = 0 pointwise.
                Ok(solve_spd(None, 0.0, gamma, rhs, transform, tol, max_iter)?.0)
            } else {
                let w = inertia_weight_grid(v, rho, transform);
                Ok(solve_spd(Some(&w), 0.0, gamma, rhs, transform, tol, max_iter)?.0)
            }
        }
    }
}

/// One time step. `h` may vary between calls (the splitting experiment
/// feeds a per-step effective forcing); within a step it is frozen.
pub fn step(
    z: &SystemState,
    cfg: &StepConfig,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    transform: &Transform,
) -> Result<SystemState> {
    match cfg.scheme {
        Scheme::ImplicitMidpoint => step_midpoint(z, cfg, nl, kernel, h, transform),
        Scheme::SemiImplicitTheta { theta } => {
            step_semi_implicit(z, cfg, nl, kernel, h, transform, theta)
        }
    }
}

fn step_midpoint(
    z: &SystemState,
    cfg: &StepConfig,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    transform: &Transform,
) -> Result<SystemState> {
    let dt = cfg.dt;
    let mut a = z.a.clone();
    let mut relax: f64 = 1.0;
    let mut prev_delta = f64::INFINITY;
    let mut converged = false;
    for _ in 0..cfg.max_inner {
        let mut v_mid = z.v.clone();
        v_mid.axpy(0.5 * dt, &a);
        let mut u_mid = z.u.clone();
        u_mid.axpy(0.5 * dt, &v_mid);
        let eta_mid = if kernel.is_zero() {
            z.eta.clone()
        } else {
            let eta_next = z.eta.advance(&v_mid, dt)?;
            let mut mid = z.eta.scale(0.5);
            mid = mid.sub(&eta_next.scale(-0.5))?;
            mid
        };
        let rhs = system_rhs(&u_mid, &v_mid, &eta_mid, nl, kernel, h, transform)?;
        let a_new = solve_mass(
            &rhs,
            &v_mid,
            cfg.rho,
            cfg.mass,
            1.0,
            transform,
            cfg.tolerance,
            cfg.max_inner,
        )?;
        let delta = a_new.sub(&a).sobolev_norm(0.0);
        let scale = 1.0 + a_new.sobolev_norm(0.0);
        if delta >= prev_delta {
            // Stalled contraction: relax the update.
            relax = (relax * 0.5).max(0.125);
        }
        let mut a_next = a.scale(1.0 - relax);
        a_next.axpy(relax, &a_new);
        a = a_next;
        if delta <= cfg.tolerance * scale {
            converged = true;
            break;
        }
        prev_delta = delta;
    }
    if !converged {
        return Err(Error::InnerIterationDiverged {
            iterations: cfg.max_inner,
        });
    }
    // Assemble the step from the converged midpoint quantities.
    let mut v_mid = z.v.clone();
    v_mid.axpy(0.5 * dt, &a);
    let mut u_new = z.u.clone();
    u_new.axpy(dt, &v_mid);
    let mut v_new = z.v.clone();
    v_new.axpy(dt, &a);
    let eta_new = if kernel.is_zero() {
        z.eta.clone()
    } else {
        z.eta.advance(&v_mid, dt)?
    };
    Ok(SystemState {
        t: z.t + dt,
        u: u_new,
        v: v_new,
        eta: eta_new,
        a,
    })
}

#[allow(clippy::too_many_arguments)]
fn step_semi_implicit(
    z: &SystemState,
    cfg: &StepConfig,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    transform: &Transform,
    theta: f64,
) -> Result<SystemState> {
    let dt = cfg.dt;
    // v_{n+1} = v_n + dt a, u_{n+1} = u_n + dt v_{n+1}; A v and A u at the
    // theta-weighted end fold into the mass as (theta dt + theta dt^2) A.
    let mut rhs = system_rhs(&z.u, &z.v, &z.eta, nl, kernel, h, transform)?;
    rhs.axpy(-theta * dt, &z.v.apply_a_power(1.0));
    let gamma = 1.0 + theta * (dt + dt * dt);
    let a = solve_mass(
        &rhs,
        &z.v,
        cfg.rho,
        cfg.mass,
        gamma,
        transform,
        cfg.tolerance,
        cfg.max_inner,
    )?;
    let mut v_new = z.v.clone();
    v_new.axpy(dt, &a);
    let mut u_new = z.u.clone();
    u_new.axpy(dt, &v_new);
    let eta_new = if kernel.is_zero() {
        z.eta.clone()
    } else {
        z.eta.advance(&v_new, dt)?
    };
    Ok(SystemState {
        t: z.t + dt,
        u: u_new,
        v: v_new,
        eta: eta_new,
        a,
    })
}

/// Iterates `step` until `t_final`, invoking the observer after every step
/// (and once on the initial state). The horizon is rounded to whole steps.
#[allow(clippy::too_many_arguments)]
pub fn evolve(
    z0: SystemState,
    t_final: f64,
    cfg: &StepConfig,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    transform: &Transform,
    mut observer: impl FnMut(&SystemState, Option<&SystemState>),
) -> Result<SystemState> {
    observer(&z0, None);
    if t_final <= z0.t {
        return Ok(z0);
    }
    let steps = ((t_final - z0.t) / cfg.dt).round().max(1.0) as usize;
    let mut z = z0;
    for _ in 0..steps {
        let next = step(&z, cfg, nl, kernel, h, transform)?;
        observer(&next, Some(&z));
        z = next;
    }
    Ok(z)
}
