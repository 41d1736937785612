//! The stationary set S = { (u*, 0, 0) : A u* + f(u*) = h } and the
//! observables of trajectory convergence towards it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::lyapunov;
use crate::error::{Error, Result};
use crate::history::HistoryState;
use crate::integrator::{step, StepConfig, SystemState};
use crate::kernel::MemoryKernel;
use crate::nonlin::Nonlinearity;
use crate::spectral::{SpectralField, Transform};

/// A solution of the elliptic equation A u* + f(u*) = h.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub u_star: SpectralField,
    /// ||A u* + f(u*) - h||_{-1} at the accepted iterate.
    pub residual: f64,
    /// Which start the solve came from, for multi-start bookkeeping.
    pub basin_tag: Option<String>,
}

/// A u + f(u) - h, assembled through the collocation grid.
fn elliptic_residual(
    u: &SpectralField,
    nl: &Nonlinearity,
    h: &SpectralField,
    transform: &Transform,
) -> SpectralField {
    let mut g = u.apply_a_power(1.0);
    if !nl.is_zero() {
        g.axpy(1.0, &nl.apply(u, transform));
    }
    g.axpy(-1.0, h);
    g
}

/// Solves (A + f'(u) + shift) delta = rhs matrix-free by conjugate
/// gradients preconditioned with (1 + lambda)^{-1}.  The operator can be
/// indefinite near saddle equilibria; a detected negative curvature
/// direction aborts the solve so the caller can retry with a larger shift.
fn jacobian_solve(
    u: &SpectralField,
    nl: &Nonlinearity,
    rhs: &SpectralField,
    shift: f64,
    transform: &Transform,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralField> {
    let domain = rhs.domain();
    let lam = domain.eigenvalue_grid();
    let fp_grid = transform.to_grid(u).mapv(|x| nl.f_prime(x));
    let apply = |x: &SpectralField| -> SpectralField {
        let mut grid = transform.to_grid(x);
        grid *= &fp_grid;
        let mut out = transform.from_grid(&grid).expect("matching grid");
        for ((c, &l), xc) in out
            .coeffs_mut()
            .iter_mut()
            .zip(lam.iter())
            .zip(x.coeffs().iter())
        {
            *c += (l + shift) * xc;
        }
        out
    };
    let precond = |r: &SpectralField| -> SpectralField {
        let mut z = r.clone();
        for (c, &l) in z.coeffs_mut().iter_mut().zip(lam.iter()) {
            *c /= 1.0 + l + shift.max(0.0);
        }
        z
    };
    let b_norm = rhs.sobolev_norm(0.0);
    if b_norm == 0.0 {
        return Ok(SpectralField::zeros(domain));
    }
    let mut x = SpectralField::zeros(domain);
    let mut r = rhs.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.inner(&z, 0.0);
    for iter in 0..max_iter {
        if r.sobolev_norm(0.0) <= tol * b_norm {
            return Ok(x);
        }
        let ap = apply(&p);
        let pap = p.inner(&ap, 0.0);
        if pap <= 0.0 {
            return Err(Error::SolverDiverged {
                iterations: iter,
                residual: r.sobolev_norm(0.0) / b_norm,
            });
        }
        let alpha = rz / pap;
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
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: r.sobolev_norm(0.0) / b_norm,
    })
}

/// Damped Newton iteration on A u + f(u) = h; the residual is measured in
/// H^{-1}.  Backtracking halves the step up to 30 times; indefinite
/// Jacobians are regularized by growing a Levenberg shift.
pub fn solve_equilibrium(
    guess: &SpectralField,
    nl: &Nonlinearity,
    h: &SpectralField,
    transform: &Transform,
    tol: f64,
) -> Result<Equilibrium> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("equilibrium tolerance must be positive".into()));
    }
    let max_newton = 60;
    let mut u = guess.clone();
    let mut res = elliptic_residual(&u, nl, h, transform);
    let mut res_norm = res.sobolev_norm(-1.0);
    for _ in 0..max_newton {
        if res_norm <= tol {
            return Ok(Equilibrium {
                u_star: u,
                residual: res_norm,
                basin_tag: None,
            });
        }
        let mut shift = 0.0;
        let delta = loop {
            match jacobian_solve(&u, nl, &res, shift, transform, 1e-4 * tol.min(1e-8), 500) {
                Ok(d) => break d,
                Err(_) if shift < 1e6 => {
                    shift = if shift == 0.0 { 1.0 } else { shift * 10.0 };
                }
                Err(e) => return Err(e),
            }
        };
        // Backtracking on the H^{-1} residual norm.
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = u.clone();
            trial.axpy(-lam, &delta);
            let trial_res = elliptic_residual(&trial, nl, h, transform);
            let trial_norm = trial_res.sobolev_norm(-1.0);
            if trial_norm < res_norm * (1.0 - 1e-4 * lam) || trial_norm <= tol {
                u = trial;
                res = trial_res;
                res_norm = trial_norm;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonStagnation { residual: res_norm });
        }
    }
    if res_norm <= tol {
        Ok(Equilibrium {
            u_star: u,
            residual: res_norm,
            basin_tag: None,
        })
    } else {
        Err(Error::NewtonStagnation { residual: res_norm })
    }
}

/// min over S of ||(u, v, eta) - (u*, 0, 0)||_HH.
pub fn distance_to_s(
    z: &SystemState,
    s: &[Equilibrium],
    kernel: &MemoryKernel,
) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::InvalidConfig("distance to an empty equilibrium set".into()));
    }
    let v_eta = z.v.sobolev_norm_sq(1.0)
        + if kernel.is_zero() {
            0.0
        } else {
            z.eta.m_norm_sq(kernel, 0.0)?
        };
    let mut best = f64::INFINITY;
    for eq in s {
        let du = z.u.sub(&eq.u_star).sobolev_norm_sq(1.0);
        best = best.min((du + v_eta).sqrt());
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy)]
pub struct StationarityReport {
    /// ||u - u*||_1 + ||v||_1 + ||eta||_M after the probe steps.
    pub drift: f64,
    /// max |L(t) - L(0)| over the probe.
    pub lyapunov_drift: f64,
    pub steps: usize,
    pub ok: bool,
}

/// Advances the lifted state (u*, 0, 0) for 100 steps and measures how far
/// the integrator lets it drift; a true stationary point stays within a
/// small multiple of the solver tolerance.
pub fn stationarity_check(
    eq: &Equilibrium,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    cfg: &StepConfig,
    transform: &Transform,
) -> Result<StationarityReport> {
    let domain = eq.u_star.domain();
    let eta = if matches!(kernel, MemoryKernel::Prony { .. }) {
        HistoryState::exp_modes_zero(domain, kernel)?
    } else {
        HistoryState::sgrid_zero(domain, kernel, cfg.dt, 16)?
    };
    let mut z = SystemState::new(eq.u_star.clone(), SpectralField::zeros(domain), eta);
    let l0 = lyapunov(&z, nl, kernel, h, cfg.rho, transform)?;
    let steps = 100;
    let mut lyapunov_drift: f64 = 0.0;
    for _ in 0..steps {
        z = step(&z, cfg, nl, kernel, h, transform)?;
        let l = lyapunov(&z, nl, kernel, h, cfg.rho, transform)?;
        lyapunov_drift = lyapunov_drift.max((l - l0).abs());
    }
    let eta_norm = if kernel.is_zero() {
        0.0
    } else {
        z.eta.m_norm_sq(kernel, 0.0)?.sqrt()
    };
    let drift = z.u.sub(&eq.u_star).sobolev_norm(1.0) + z.v.sobolev_norm(1.0) + eta_norm;
    let scale = 1.0 + eq.u_star.sobolev_norm(1.0);
    Ok(StationarityReport {
        drift,
        lyapunov_drift,
        steps,
        ok: drift <= 100.0 * cfg.tolerance * scale,
    })
}

/// Multi-start Newton: configured seeds plus random eigenfunction-mixture
/// perturbations, deduplicated at H^1 distance < 10 tol.  No completeness
/// claim — the stationary set may be a continuum.
pub fn explore_equilibria(
    seeds: &[SpectralField],
    random_starts: usize,
    rng_seed: u64,
    nl: &Nonlinearity,
    h: &SpectralField,
    transform: &Transform,
    tol: f64,
) -> Result<Vec<Equilibrium>> {
    let domain = match seeds.first() {
        Some(s) => s.domain().clone(),
        None => h.domain().clone(),
    };
    let mut starts: Vec<(String, SpectralField)> = seeds
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("seed-{i}"), s.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for i in 0..random_starts {
        let mut u = SpectralField::zeros(&domain);
        for c in u.coeffs_mut().iter_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
        starts.push((format!("random-{i}"), u));
    }
    let solved: Vec<Equilibrium> = starts
        .par_iter()
        .filter_map(|(tag, guess)| {
            solve_equilibrium(guess, nl, h, transform, tol)
                .ok()
                .map(|mut eq| {
                    eq.basin_tag = Some(tag.clone());
                    eq
                })
        })
        .collect();
    if solved.is_empty() {
        return Err(Error::NewtonStagnation { residual: f64::NAN });
    }
    let mut set: Vec<Equilibrium> = Vec::new();
    for eq in solved {
        let duplicate = set
            .iter()
            .any(|e| e.u_star.sub(&eq.u_star).sobolev_norm(1.0) < 10.0 * tol);
        if !duplicate {
            set.push(eq);
        }
    }
    Ok(set)
}
