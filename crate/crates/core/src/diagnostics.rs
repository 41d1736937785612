//! Energy bookkeeping: the quantities whose inequalities characterize the
//! dissipative structure (energy, Lyapunov function, the auxiliary
//! functionals Psi/Phi and their weighted combination Lambda_sigma), the
//! per-step dissipation residual, and decay-rate fitting.

use crate::error::{Error, Result};
use crate::integrator::SystemState;
use crate::kernel::MemoryKernel;
use crate::nonlin::Nonlinearity;
use crate::spectral::{SpectralField, Transform};

/// Shared context for evaluating diagnostics along one scenario.
pub struct DiagnosticsCtx<'a> {
    pub nl: &'a Nonlinearity,
    pub kernel: &'a MemoryKernel,
    pub h: &'a SpectralField,
    pub rho: f64,
    /// Extra-regularity exponent for the sigma-indexed quantities.
    pub sigma: f64,
    /// Certified tail-domination constant of the kernel (0 when memoryless).
    pub theta: f64,
    /// Weight of Psi_sigma in Lambda_sigma; admissible iff <= 1/(2 Theta).
    pub epsilon: f64,
    /// Weight of Phi_sigma in Lambda_sigma; admissible iff <= 1/4.
    pub delta: f64,
    pub transform: &'a Transform,
}

/// Default extra-regularity exponent min{1/3, (4 - rho)/2}.
pub fn default_sigma(rho: f64) -> f64 {
    (1.0 / 3.0f64).min((4.0 - rho) / 2.0).max(0.0)
}

impl<'a> DiagnosticsCtx<'a> {
    /// Context with the default weights epsilon = 1/(2 Theta) and
    /// delta = min(1/4, nu/8).
    pub fn new(
        nl: &'a Nonlinearity,
        kernel: &'a MemoryKernel,
        h: &'a SpectralField,
        rho: f64,
        theta: f64,
        transform: &'a Transform,
    ) -> Self {
        let epsilon = if theta > 0.0 { 1.0 / (2.0 * theta) } else { 0.0 };
        DiagnosticsCtx {
            nl,
            kernel,
            h,
            rho,
            sigma: default_sigma(rho),
            theta,
            epsilon,
            delta: (0.25f64).min(nl.nu() / 8.0),
            transform,
        }
    }
}

/// One observation row; serializes to the fixed CSV schema.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    pub t: f64,
    pub e: f64,
    pub l: f64,
    pub psi: f64,
    pub phi: f64,
    pub lambda_sigma: f64,
    pub norm_u_1s: f64,
    pub norm_v_1s: f64,
    pub norm_eta_ms: f64,
    pub diss_residual: f64,
    pub t_eta_eta: f64,
}

pub const CSV_HEADER: &str =
    "t,E,L,Psi,Phi,Lambda_sigma,norm_u_1s,norm_v_1s,norm_eta_Ms,diss_residual,T_eta_eta";

impl EnergyReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.t,
            self.e,
            self.l,
            self.psi,
            self.phi,
            self.lambda_sigma,
            self.norm_u_1s,
            self.norm_v_1s,
            self.norm_eta_ms,
            self.diss_residual,
            self.t_eta_eta
        )
    }
}

/// E = (||u||_1^2 + ||v||_1^2 + ||eta||_M^2) / 2.
pub fn energy(z: &SystemState, kernel: &MemoryKernel) -> Result<f64> {
    Ok(0.5 * z.hh_norm_sq(kernel, 0.0)?)
}

/// E_sigma, the same energy one regularity notch up.
pub fn energy_sigma(z: &SystemState, kernel: &MemoryKernel, sigma: f64) -> Result<f64> {
    Ok(0.5 * z.hh_norm_sq(kernel, sigma)?)
}

/// L = 1/(rho+2) int |v|^{rho+2} + E + <F(u), 1> - <h, u>.
pub fn lyapunov(
    z: &SystemState,
    nl: &Nonlinearity,
    kernel: &MemoryKernel,
    h: &SpectralField,
    rho: f64,
    transform: &Transform,
) -> Result<f64> {
    let v_grid = transform.to_grid(&z.v);
    let v_term = transform.integrate(&v_grid.mapv(|x| x.abs().powf(rho + 2.0))) / (rho + 2.0);
    let u_grid = transform.to_grid(&z.u);
    let f_term = transform.integrate(&u_grid.mapv(|x| nl.antiderivative(x)));
    Ok(v_term + 0.5 * z.hh_norm_sq(kernel, 0.0)? + f_term - h.inner(&z.u, 0.0))
}

/// The auxiliary functionals entering the decay proofs.
#[derive(Debug, Clone, Copy)]
pub struct AuxFunctionals {
    /// Psi = int I(s) ||eta(s)||_1^2 ds.
    pub psi: f64,
    /// Phi = ||u||_1^2/2 + <v, u>_1 + <|v|^rho v, u>/(rho+1).
    pub phi: f64,
    pub psi_sigma: f64,
    /// Phi_sigma = ||u||_{1+sigma}^2/2 + <u, v>_{1+sigma}.
    pub phi_sigma: f64,
    /// Lambda_sigma = E_sigma + epsilon Psi_sigma + delta Phi_sigma.
    pub lambda_sigma: f64,
}

pub fn aux_functionals(z: &SystemState, ctx: &DiagnosticsCtx) -> Result<AuxFunctionals> {
    let (psi, psi_sigma) = if ctx.kernel.is_zero() {
        (0.0, 0.0)
    } else {
        (
            z.eta.psi(ctx.kernel, 0.0)?,
            z.eta.psi(ctx.kernel, ctx.sigma)?,
        )
    };
    let vu_term = if ctx.rho == 0.0 {
        z.v.inner(&z.u, 0.0)
    } else {
        let v_grid = ctx.transform.to_grid(&z.v);
        let u_grid = ctx.transform.to_grid(&z.u);
        let integrand = ndarray::Zip::from(&v_grid)
            .and(&u_grid)
            .map_collect(|&v, &u| v.abs().powf(ctx.rho) * v * u);
        ctx.transform.integrate(&integrand) / (ctx.rho + 1.0)
    };
    let phi = 0.5 * z.u.sobolev_norm_sq(1.0) + z.v.inner(&z.u, 1.0) + vu_term;
    let s1 = 1.0 + ctx.sigma;
    let phi_sigma = 0.5 * z.u.sobolev_norm_sq(s1) + z.u.inner(&z.v, s1);
    let e_sigma = energy_sigma(z, ctx.kernel, ctx.sigma)?;
    let lambda_sigma = e_sigma + ctx.epsilon * psi_sigma + ctx.delta * phi_sigma;
    Ok(AuxFunctionals {
        psi,
        phi,
        psi_sigma,
        phi_sigma,
        lambda_sigma,
    })
}

/// Residual of the discrete dissipation identity
/// dL/dt + ||v||_1^2 = <T eta, eta>_M at the step midpoint.
pub fn dissipation_residual(
    z0: &SystemState,
    z1: &SystemState,
    dt: f64,
    ctx: &DiagnosticsCtx,
) -> Result<f64> {
    let l0 = lyapunov(z0, ctx.nl, ctx.kernel, ctx.h, ctx.rho, ctx.transform)?;
    let l1 = lyapunov(z1, ctx.nl, ctx.kernel, ctx.h, ctx.rho, ctx.transform)?;
    let mut v_mid = z0.v.clone();
    v_mid.axpy(1.0, &z1.v);
    let v_mid = v_mid.scale(0.5);
    let t_eta = if ctx.kernel.is_zero() {
        0.0
    } else {
        let eta_mid = z0.eta.scale(0.5).sub(&z1.eta.scale(-0.5))?;
        eta_mid.t_dissipation(ctx.kernel, 0.0)?
    };
    Ok(((l1 - l0) / dt + v_mid.sobolev_norm_sq(1.0) - t_eta).abs())
}

/// Full observation row; `prev` supplies the step used for the residual.
pub fn report(
    z: &SystemState,
    prev: Option<(&SystemState, f64)>,
    ctx: &DiagnosticsCtx,
) -> Result<EnergyReport> {
    let aux = aux_functionals(z, ctx)?;
    let t_eta_eta = if ctx.kernel.is_zero() {
        0.0
    } else {
        z.eta.t_dissipation(ctx.kernel, 0.0)?
    };
    let diss_residual = match prev {
        Some((z0, dt)) => dissipation_residual(z0, z, dt, ctx)?,
        None => 0.0,
    };
    Ok(EnergyReport {
        t: z.t,
        e: energy(z, ctx.kernel)?,
        l: lyapunov(z, ctx.nl, ctx.kernel, ctx.h, ctx.rho, ctx.transform)?,
        psi: aux.psi,
        phi: aux.phi,
        lambda_sigma: aux.lambda_sigma,
        norm_u_1s: z.u.sobolev_norm(1.0 + ctx.sigma),
        norm_v_1s: z.v.sobolev_norm(1.0 + ctx.sigma),
        norm_eta_ms: z.eta.m_norm_sq(ctx.kernel, ctx.sigma).unwrap_or(0.0).sqrt(),
        diss_residual,
        t_eta_eta,
    })
}

/// R0 = (4/nu) (2 M_f + ||h||_{-1}^2 / nu), the absorbing-set radius, with
/// M_f = m_f |Omega| and ||h||_{-1} computed spectrally.
pub fn absorbing_radius(nl: &Nonlinearity, h: &SpectralField) -> f64 {
    let nu = nl.nu();
    let m_big = nl.m_f() * h.domain().volume();
    let h_minus = h.sobolev_norm_sq(-1.0);
    (4.0 / nu) * (2.0 * m_big + h_minus / nu)
}

#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// Fitted decay rate of E - R_inf on the window.
    pub omega: f64,
    /// Fitted plateau level.
    pub r_inf: f64,
    /// Sum of squared log-residuals of the accepted fit.
    pub sse: f64,
}

/// Fits E(t) ~ Q e^{-omega t} + R_inf on the window [t_lo, t_hi] by a grid
/// search over the plateau combined with a linear fit of log(E - R_inf).
pub fn fit_decay(series: &[(f64, f64)], t_lo: f64, t_hi: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, e)| t >= t_lo && t <= t_hi && e.is_finite())
        .collect();
    if pts.len() < 8 {
        return Err(Error::SeriesTooShort(pts.len()));
    }
    let e_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let e_max = pts.iter().map(|p| p.1).fold(0.0f64, f64::max);
    if !(e_max > 0.0) {
        // Identically zero signal: decayed completely.
        return Ok(DecayFit {
            omega: f64::INFINITY,
            r_inf: 0.0,
            sse: 0.0,
        });
    }
    let floor = 1e-14 * e_max;
    let eval_r = |r: f64| -> Option<DecayFit> {
        let sample: Vec<(f64, f64)> = pts
            .iter()
            .filter(|&&(_, e)| e - r > floor)
            .map(|&(t, e)| (t, (e - r).ln()))
            .collect();
        if sample.len() < 8 {
            return None;
        }
        let (slope, sse) = linear_fit(&sample);
        Some(DecayFit {
            omega: -slope,
            r_inf: r,
            sse,
        })
    };
    // Candidate plateaus: a coarse grid over [0, e_min] plus closed-form
    // estimates from equally spaced triples, for which
    // R = (e1 e3 - e2^2) / (e1 + e3 - 2 e2) is exact on Q e^{-omega t} + R.
    let mut candidates: Vec<f64> = (0..=100).map(|i| e_min * i as f64 / 100.0).collect();
    let span = pts.last().unwrap().0 - pts[0].0;
    let m = pts.len() / 3;
    for i in 0..pts.len().saturating_sub(2 * m).min(8) {
        let (t1, e1) = pts[i];
        let (t2, e2) = pts[i + m];
        let (t3, e3) = pts[i + 2 * m];
        if ((t2 - t1) - (t3 - t2)).abs() > 1e-9 * span {
            continue;
        }
        let den = e1 + e3 - 2.0 * e2;
        if den.abs() > 1e-14 * e_max {
            let r = (e1 * e3 - e2 * e2) / den;
            if (0.0..=e_min).contains(&r) {
                candidates.push(r);
            }
        }
    }
    let mut best: Option<DecayFit> = None;
    for &r in &candidates {
        if let Some(fit) = eval_r(r) {
            if best.as_ref().map_or(true, |b| fit.sse < b.sse) {
                best = Some(fit);
            }
        }
    }
    // Local refinement around the best candidate with a shrinking bracket.
    let mut half = e_min / 100.0;
    for _round in 0..8 {
        let Some(center) = best.as_ref().map(|b| b.r_inf) else {
            break;
        };
        for i in 0..=20 {
            let r = (center - half + 2.0 * half * i as f64 / 20.0).clamp(0.0, e_min);
            if let Some(fit) = eval_r(r) {
                if best.as_ref().map_or(true, |b| fit.sse < b.sse) {
                    best = Some(fit);
                }
            }
        }
        half /= 8.0;
    }
    best.ok_or(Error::SeriesTooShort(pts.len()))
}

/// Least-squares slope and residual SSE of y against t.
fn linear_fit(sample: &[(f64, f64)]) -> (f64, f64) {
    let n = sample.len() as f64;
    let st: f64 = sample.iter().map(|p| p.0).sum::<f64>() / n;
    let sy: f64 = sample.iter().map(|p| p.1).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for &(t, y) in sample {
        stt += (t - st) * (t - st);
        sty += (t - st) * (y - sy);
    }
    let slope = sty / stt;
    let intercept = sy - slope * st;
    let sse: f64 = sample
        .iter()
        .map(|&(t, y)| {
            let r = y - slope * t - intercept;
            r * r
        })
        .sum();
    (slope, sse)
}

/// Max of E over the trailing `frac` of the series (the plateau estimate).
pub fn tail_limsup(series: &[(f64, f64)], frac: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let t_end = series.last().unwrap().0;
    let t_start = series.first().unwrap().0;
    let cut = t_end - frac * (t_end - t_start);
    series
        .iter()
        .filter(|&&(t, _)| t >= cut)
        .map(|p| p.1)
        .fold(0.0f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{ExpMode, HistoryState};
    use crate::kernel::certify_theta;
    use crate::spectral::DomainSpec;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn phi_k(d: &Arc<DomainSpec>, k: usize, a: f64) -> SpectralField {
        SpectralField::eigenfunction(d, &[k], a).unwrap()
    }

    fn random_state(
        d: &Arc<DomainSpec>,
        kernel: &MemoryKernel,
        seed: &mut f64,
        amp: f64,
    ) -> SystemState {
        let mut next = || {
            *seed = (*seed * 9.73 + 0.371) % 1.0;
            amp * (*seed - 0.5)
        };
        let mut u = SpectralField::zeros(d);
        let mut v = SpectralField::zeros(d);
        for c in u.coeffs_mut().iter_mut() {
            *c = next();
        }
        for c in v.coeffs_mut().iter_mut() {
            *c = next();
        }
        let eta = match kernel {
            MemoryKernel::Prony { terms } => {
                let modes = terms
                    .iter()
                    .map(|&(c, dd)| {
                        let mut z = SpectralField::zeros(d);
                        for cc in z.coeffs_mut().iter_mut() {
                            *cc = next();
                        }
                        ExpMode {
                            zeta: z,
                            rate: dd,
                            weight: c,
                        }
                    })
                    .collect();
                HistoryState::exp_modes_from(d, modes)
            }
            _ => panic!("test kernels are Prony"),
        };
        SystemState::new(u, v, eta)
    }

    #[test]
    fn energy_trivial_and_parseval() {
        let d = DomainSpec::new(&[PI], &[8]).unwrap();
        let t = d.transform(2);
        let kernel = MemoryKernel::zero();
        let eta = HistoryState::exp_modes_zero(&d, &kernel).unwrap();
        let z0 = SystemState::rest(&d, eta.clone());
        assert_eq!(energy(&z0, &kernel).unwrap(), 0.0);
        let z1 = SystemState::new(phi_k(&d, 1, 1.0), SpectralField::zeros(&d), eta);
        assert!((energy(&z1, &kernel).unwrap() - 0.5).abs() < 1e-14);
        // Grid cross-check of ||u||_1^2 = int |grad u|^2 = <A^{1/2}u, A^{1/2}u>.
        let g = t.to_grid(&z1.u.apply_a_power(0.5));
        let quad = t.inner_grid(&g, &g);
        assert!((quad - z1.u.sobolev_norm_sq(1.0)).abs() < 1e-10);
    }

    #[test]
    fn lyapunov_zero_and_lower_sandwich() {
        let d = DomainSpec::new(&[PI], &[6]).unwrap();
        let t = d.transform(2);
        let kernel = MemoryKernel::prony(&[(1.0, 1.0)]).unwrap();
        let nl = Nonlinearity::double_well();
        let h = phi_k(&d, 1, 0.7);
        let rho = 2.0;
        let eta = HistoryState::exp_modes_zero(&d, &kernel).unwrap();
        let z0 = SystemState::rest(&d, eta);
        let h0 = SpectralField::zeros(&d);
        assert_eq!(
            lyapunov(&z0, &Nonlinearity::cubic(), &kernel, &h0, rho, &t).unwrap(),
            0.0
        );
        // (nu/4) ||z||^2 - (M_f + ||h||_{-1}^2/nu) <= L on random states.
        let nu = nl.nu();
        let c_fh = nl.m_f() * d.volume() + h.sobolev_norm_sq(-1.0) / nu;
        let mut seed = 0.17;
        for amp in [0.3, 1.0, 3.0] {
            for _ in 0..20 {
                let z = random_state(&d, &kernel, &mut seed, amp);
                let l = lyapunov(&z, &nl, &kernel, &h, rho, &t).unwrap();
                let lower = 0.25 * nu * z.hh_norm_sq(&kernel, 0.0).unwrap() - c_fh;
                assert!(l >= lower - 1e-10, "L = {l}, bound = {lower}");
            }
        }
    }

    #[test]
    fn absorbing_radius_closed_forms() {
        let d = DomainSpec::new(&[PI], &[4]).unwrap();
        // h = 0, m_f = 0 -> 0.
        let h0 = SpectralField::zeros(&d);
        assert_eq!(absorbing_radius(&Nonlinearity::cubic(), &h0), 0.0);
        // nu = 1, m_f = 0, ||h||_{-1} = 1 -> 4.
        let h1 = phi_k(&d, 1, 1.0);
        assert!((h1.sobolev_norm(-1.0) - 1.0).abs() < 1e-14);
        assert!((absorbing_radius(&Nonlinearity::cubic(), &h1) - 4.0).abs() < 1e-12);
        // nu = 1/2, m_f = 1, h = 0 -> (8)(2 pi) / pi... with |Omega| = pi:
        // R0 = (4 / (1/2)) * 2 * pi = 16 pi; on the unit-volume box it is 16.
        let d1 = DomainSpec::new(&[1.0], &[4]).unwrap();
        let h0 = SpectralField::zeros(&d1);
        let dw = Nonlinearity::double_well();
        assert!((absorbing_radius(&dw, &h0) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_synthetic_rates() {
        // Pure exponential.
        let series: Vec<(f64, f64)> = (0..400)
            .map(|i| {
                let t = 0.1 * i as f64;
                (t, 3.0 * (-0.7 * t).exp())
            })
            .collect();
        let fit = fit_decay(&series, 5.0, 40.0).unwrap();
        assert!((fit.omega - 0.7).abs() < 0.014, "omega = {}", fit.omega);
        assert!(fit.r_inf.abs() < 1e-6);

        // Exponential over a plateau.
        let series: Vec<(f64, f64)> = (0..400)
            .map(|i| {
                let t = 0.1 * i as f64;
                (t, 2.0 * (-0.5 * t).exp() + 0.3)
            })
            .collect();
        let fit = fit_decay(&series, 2.0, 30.0).unwrap();
        assert!((fit.omega - 0.5).abs() < 0.01, "omega = {}", fit.omega);
        assert!((fit.r_inf - 0.3).abs() < 0.01, "r_inf = {}", fit.r_inf);

        // Non-decaying series reports omega <= 0.
        let series: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let t = 0.1 * i as f64;
                (t, 1.0 + 0.1 * t)
            })
            .collect();
        let fit = fit_decay(&series, 0.0, 10.0).unwrap();
        assert!(fit.omega <= 0.0);

        assert!(matches!(
            fit_decay(&series[..4], 0.0, 10.0),
            Err(Error::SeriesTooShort(_))
        ));
    }

    #[test]
    fn lambda_sigma_sandwich_on_random_states() {
        let d = DomainSpec::new(&[PI], &[6]).unwrap();
        let t = d.transform(2);
        let kernel = MemoryKernel::prony(&[(1.0, 1.0), (0.5, 3.0)]).unwrap();
        let theta = certify_theta(&kernel).unwrap().theta().unwrap();
        let nl = Nonlinearity::cubic();
        let h = SpectralField::zeros(&d);
        for rho in [0.0, 2.0] {
            let mut ctx = DiagnosticsCtx::new(&nl, &kernel, &h, rho, theta, &t);
            ctx.delta = 0.25;
            let mut seed = 0.23;
            for _ in 0..100 {
                let z = random_state(&d, &kernel, &mut seed, 2.0);
                let aux = aux_functionals(&z, &ctx).unwrap();
                let e_s = energy_sigma(&z, &kernel, ctx.sigma).unwrap();
                assert!(aux.lambda_sigma >= 0.5 * e_s - 1e-12);
                assert!(aux.lambda_sigma <= 2.0 * e_s + 1e-12);
                // Psi bound with the certified Theta.
                let mem = z.eta.m_norm_sq(&kernel, 0.0).unwrap();
                assert!(aux.psi >= 0.0);
                assert!(aux.psi <= theta * mem * (1.0 + 1e-9));
                assert!(aux.psi <= 2.0 * theta * energy(&z, &kernel).unwrap() * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn tail_limsup_takes_trailing_max() {
        let series: Vec<(f64, f64)> = (0..=100)
            .map(|i| (i as f64, if i < 70 { 10.0 } else { 1.0 + (i % 3) as f64 }))
            .collect();
        let m = tail_limsup(&series, 0.3);
        assert_eq!(m, 3.0);
    }
}
