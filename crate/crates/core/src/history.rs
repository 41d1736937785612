//! The past-history variable eta^t(s) = u(t) - u(t-s) and its transport
//! d/dt eta = T eta + d/dt u.
//!
//! Two discretizations:
//! * `ExpModes` — for Prony kernels mu = sum c_j exp(-d_j s) the force
//!   int mu A eta ds closes on zeta_j = int exp(-d_j s) eta(s) ds, which
//!   obey zeta_j' = -d_j zeta_j + v / d_j and update exactly in time.
//! * `SGrid` — fields sampled on increasing age nodes, advanced by
//!   semi-Lagrangian transport (first order in dt), with quadrature that
//!   uses the exact kernel mass of every interval.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::MemoryKernel;
use crate::spectral::{DomainSpec, SpectralField};

/// Relative tolerance for matching a history's stored Prony data against a
/// kernel passed to an operation.
const PRONY_MATCH_TOL: f64 = 1e-12;
/// The age horizon T_mem keeps all but this fraction of the kernel mass.
const TAIL_MASS_CUT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ExpMode {
    pub zeta: SpectralField,
    /// Decay rate d_j of the Prony term.
    pub rate: f64,
    /// Coefficient c_j of the Prony term.
    pub weight: f64,
}

#[derive(Debug, Clone)]
enum Repr {
    ExpModes(Vec<ExpMode>),
    SGrid {
        nodes: Vec<f64>,
        values: Vec<SpectralField>,
    },
}

#[derive(Debug, Clone)]
pub struct HistoryState {
    domain: Arc<DomainSpec>,
    repr: Repr,
}

impl HistoryState {
    /// Zero history in the exact Prony representation.
    pub fn exp_modes_zero(domain: &Arc<DomainSpec>, kernel: &MemoryKernel) -> Result<Self> {
        let MemoryKernel::Prony { terms } = kernel else {
            return Err(Error::IncompatibleHistory(
                "exponential-mode histories require a Prony kernel".into(),
            ));
        };
        let modes = terms
            .iter()
            .map(|&(c, d)| ExpMode {
                zeta: SpectralField::zeros(domain),
                rate: d,
                weight: c,
            })
            .collect();
        Ok(HistoryState {
            domain: domain.clone(),
            repr: Repr::ExpModes(modes),
        })
    }

    /// Zero history on a log-spaced age grid sized for (kernel, dt).
    pub fn sgrid_zero(
        domain: &Arc<DomainSpec>,
        kernel: &MemoryKernel,
        dt: f64,
        nodes_per_decade: usize,
    ) -> Result<Self> {
        let nodes = sgrid_nodes(kernel, dt, nodes_per_decade)?;
        let values = vec![SpectralField::zeros(domain); nodes.len()];
        Ok(HistoryState {
            domain: domain.clone(),
            repr: Repr::SGrid { nodes, values },
        })
    }

    /// Grid history with explicit nodes and a sampling closure.
    pub fn sgrid_from_fn(
        domain: &Arc<DomainSpec>,
        nodes: &[f64],
        mut f: impl FnMut(f64) -> SpectralField,
    ) -> Result<Self> {
        validate_nodes(nodes)?;
        let values = nodes.iter().map(|&s| f(s)).collect();
        Ok(HistoryState {
            domain: domain.clone(),
            repr: Repr::SGrid {
                nodes: nodes.to_vec(),
                values,
            },
        })
    }

    /// Exponential-mode history with explicit auxiliary fields.
    pub fn exp_modes_from(domain: &Arc<DomainSpec>, modes: Vec<ExpMode>) -> Self {
        HistoryState {
            domain: domain.clone(),
            repr: Repr::ExpModes(modes),
        }
    }

    /// eta^t sampled on `nodes` via the representation formula:
    /// u(t) - u(t-s) for s <= t, and eta0(s-t) + u(t) - u(0) beyond.
    /// `trajectory` holds (time, u) samples covering [0, t]; u between
    /// samples is linear in time.
    pub fn from_representation(
        domain: &Arc<DomainSpec>,
        nodes: &[f64],
        trajectory: &[(f64, SpectralField)],
        eta0: Option<&HistoryState>,
        t: f64,
    ) -> Result<Self> {
        validate_nodes(nodes)?;
        if trajectory.is_empty()
            || trajectory[0].0 > 1e-9
            || trajectory.last().unwrap().0 < t - 1e-9
        {
            return Err(Error::TrajectoryGap(t));
        }
        let u_t = interp_trajectory(trajectory, t);
        let u_0 = interp_trajectory(trajectory, 0.0);
        let values = nodes
            .iter()
            .map(|&s| {
                if s <= t {
                    u_t.sub(&interp_trajectory(trajectory, t - s))
                } else {
                    let mut past = match eta0 {
                        Some(h) => h.eval(s - t).unwrap_or_else(|_| SpectralField::zeros(domain)),
                        None => SpectralField::zeros(domain),
                    };
                    past.axpy(1.0, &u_t);
                    past.axpy(-1.0, &u_0);
                    past
                }
            })
            .collect();
        Ok(HistoryState {
            domain: domain.clone(),
            repr: Repr::SGrid {
                nodes: nodes.to_vec(),
                values,
            },
        })
    }

    pub fn domain(&self) -> &Arc<DomainSpec> {
        &self.domain
    }

    pub fn is_exp_modes(&self) -> bool {
        matches!(self.repr, Repr::ExpModes(_))
    }

    pub fn exp_modes(&self) -> Option<&[ExpMode]> {
        match &self.repr {
            Repr::ExpModes(m) => Some(m),
            _ => None,
        }
    }

    pub fn sgrid(&self) -> Option<(&[f64], &[SpectralField])> {
        match &self.repr {
            Repr::SGrid { nodes, values } => Some((nodes, values)),
            _ => None,
        }
    }

    pub fn zero_like(&self) -> HistoryState {
        let repr = match &self.repr {
            Repr::ExpModes(modes) => Repr::ExpModes(
                modes
                    .iter()
                    .map(|m| ExpMode {
                        zeta: SpectralField::zeros(&self.domain),
                        rate: m.rate,
                        weight: m.weight,
                    })
                    .collect(),
            ),
            Repr::SGrid { nodes, .. } => Repr::SGrid {
                nodes: nodes.clone(),
                values: vec![SpectralField::zeros(&self.domain); nodes.len()],
            },
        };
        HistoryState {
            domain: self.domain.clone(),
            repr,
        }
    }

    /// eta(s) by interpolation (SGrid only): anchored at (0, 0), linear
    /// between nodes, constant beyond the last one.
    pub fn eval(&self, s: f64) -> Result<SpectralField> {
        let Repr::SGrid { nodes, values } = &self.repr else {
            return Err(Error::IncompatibleHistory(
                "pointwise age evaluation needs a grid history".into(),
            ));
        };
        Ok(eval_sgrid(&self.domain, nodes, values, s))
    }

    /// int mu(s) A eta(s) ds.
    pub fn memory_force(&self, kernel: &MemoryKernel) -> Result<SpectralField> {
        match &self.repr {
            Repr::ExpModes(modes) => {
                check_prony_match(modes, kernel)?;
                let mut acc = SpectralField::zeros(&self.domain);
                for m in modes {
                    acc.axpy(m.weight, &m.zeta);
                }
                Ok(acc.apply_a_power(1.0))
            }
            Repr::SGrid { nodes, values } => {
                let w = node_weights(kernel, nodes);
                let mut acc = SpectralField::zeros(&self.domain);
                for (wi, vi) in w.iter().zip(values) {
                    acc.axpy(*wi, vi);
                }
                Ok(acc.apply_a_power(1.0))
            }
        }
    }

    /// ||eta||^2 in M^r, i.e. int mu(s) ||eta(s)||_{1+r}^2 ds. For
    /// exponential modes this is the reduced quadratic form
    /// sum c_j d_j ||zeta_j||_{1+r}^2, the one whose time derivative
    /// reproduces the continuous energy bookkeeping exactly.
    pub fn m_norm_sq(&self, kernel: &MemoryKernel, r: f64) -> Result<f64> {
        match &self.repr {
            Repr::ExpModes(modes) => {
                check_prony_match(modes, kernel)?;
                Ok(modes
                    .iter()
                    .map(|m| m.weight * m.rate * m.zeta.sobolev_norm_sq(1.0 + r))
                    .sum())
            }
            Repr::SGrid { nodes, values } => {
                let w = node_weights(kernel, nodes);
                Ok(w.iter()
                    .zip(values)
                    .map(|(wi, vi)| wi * vi.sobolev_norm_sq(1.0 + r))
                    .sum())
            }
        }
    }

    /// <T eta, eta>_{M^r} = -int mu(s) <eta'(s), eta(s)>_{1+r} ds.
    ///
    /// ExpModes: -sum c_j d_j^2 ||zeta_j||^2, nonpositive exactly. SGrid:
    /// Stieltjes form -1/2 sum mubar_i (q_{i+1} - q_i) with q = node norm
    /// and mubar the exact interval-average of mu; Abel summation against
    /// nonincreasing mubar makes this nonpositive for every state.
    pub fn t_dissipation(&self, kernel: &MemoryKernel, r: f64) -> Result<f64> {
        match &self.repr {
            Repr::ExpModes(modes) => {
                check_prony_match(modes, kernel)?;
                Ok(-modes
                    .iter()
                    .map(|m| m.weight * m.rate * m.rate * m.zeta.sobolev_norm_sq(1.0 + r))
                    .sum::<f64>())
            }
            Repr::SGrid { nodes, values } => {
                let mut total = 0.0;
                let mut prev_s = 0.0;
                let mut prev_i = kernel.total_mass();
                let mut prev_q = 0.0;
                for (s, v) in nodes.iter().zip(values) {
                    let tail = kernel.tail_integral(*s);
                    let mu_bar = (prev_i - tail) / (s - prev_s);
                    let q = v.sobolev_norm_sq(1.0 + r);
                    total -= 0.5 * mu_bar * (q - prev_q);
                    prev_s = *s;
                    prev_i = tail;
                    prev_q = q;
                }
                Ok(total)
            }
        }
    }

    /// Psi_r = int I(s) ||eta(s)||_{1+r}^2 ds with I the kernel tail. For
    /// exponential modes the reduced form sum c_j ||zeta_j||_{1+r}^2 keeps
    /// the bound Psi <= Theta ||eta||^2_{M^r} (Theta >= 1/d_j termwise).
    pub fn psi(&self, kernel: &MemoryKernel, r: f64) -> Result<f64> {
        match &self.repr {
            Repr::ExpModes(modes) => {
                check_prony_match(modes, kernel)?;
                Ok(modes
                    .iter()
                    .map(|m| m.weight * m.zeta.sobolev_norm_sq(1.0 + r))
                    .sum())
            }
            Repr::SGrid { nodes, values } => {
                // Same trapezoid-in-q structure as the memory norm but with
                // the exact interval masses of I instead of mu. Since
                // int I <= Theta int mu holds interval by interval under the
                // certified bound, the discrete Psi <= Theta ||eta||_M^2
                // inequality is inherited exactly. The truncated tail
                // (< 1e-8 kappa of I) is dropped, which only lowers Psi.
                let mut w = vec![0.0; nodes.len()];
                let mut prev_s = 0.0;
                for (i, &s) in nodes.iter().enumerate() {
                    let mass = kernel.tail_integral_integral(prev_s, s);
                    w[i] += 0.5 * mass;
                    if i > 0 {
                        w[i - 1] += 0.5 * mass;
                    }
                    prev_s = s;
                }
                Ok(w
                    .iter()
                    .zip(values)
                    .map(|(wi, vi)| wi * vi.sobolev_norm_sq(1.0 + r))
                    .sum())
            }
        }
    }

    /// One transport step with the velocity held at `v` over the step.
    pub fn advance(&self, v: &SpectralField, dt: f64) -> Result<HistoryState> {
        assert!(dt > 0.0);
        match &self.repr {
            Repr::ExpModes(modes) => {
                let new_modes = modes
                    .iter()
                    .map(|m| {
                        let decay = (-m.rate * dt).exp();
                        let mut zeta = m.zeta.scale(decay);
                        // Exact integrating factor for zeta' = -d zeta + v/d.
                        zeta.axpy((1.0 - decay) / (m.rate * m.rate), v);
                        ExpMode {
                            zeta,
                            rate: m.rate,
                            weight: m.weight,
                        }
                    })
                    .collect();
                Ok(HistoryState {
                    domain: self.domain.clone(),
                    repr: Repr::ExpModes(new_modes),
                })
            }
            Repr::SGrid { nodes, values } => {
                let spacing = min_spacing(nodes);
                if dt > spacing * (1.0 + 1e-9) {
                    return Err(Error::CflViolation { dt, spacing });
                }
                let new_values = nodes
                    .iter()
                    .map(|&s| {
                        let mut field = eval_sgrid(&self.domain, nodes, values, s - dt);
                        field.axpy(dt, v);
                        field
                    })
                    .collect();
                Ok(HistoryState {
                    domain: self.domain.clone(),
                    repr: Repr::SGrid {
                        nodes: nodes.clone(),
                        values: new_values,
                    },
                })
            }
        }
    }

    /// self - other, requiring identical discretizations.
    pub fn sub(&self, other: &HistoryState) -> Result<HistoryState> {
        match (&self.repr, &other.repr) {
            (Repr::ExpModes(a), Repr::ExpModes(b)) if a.len() == b.len() => {
                let modes = a
                    .iter()
                    .zip(b)
                    .map(|(ma, mb)| {
                        if rel_diff(ma.rate, mb.rate) > PRONY_MATCH_TOL {
                            return Err(Error::IncompatibleHistory(
                                "exponential modes have different rates".into(),
                            ));
                        }
                        Ok(ExpMode {
                            zeta: ma.zeta.sub(&mb.zeta),
                            rate: ma.rate,
                            weight: ma.weight,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(HistoryState {
                    domain: self.domain.clone(),
                    repr: Repr::ExpModes(modes),
                })
            }
            (
                Repr::SGrid { nodes: na, values: va },
                Repr::SGrid { nodes: nb, values: vb },
            ) if na == nb => {
                let values = va.iter().zip(vb).map(|(a, b)| a.sub(b)).collect();
                Ok(HistoryState {
                    domain: self.domain.clone(),
                    repr: Repr::SGrid {
                        nodes: na.clone(),
                        values,
                    },
                })
            }
            _ => Err(Error::IncompatibleHistory(
                "histories use different discretizations".into(),
            )),
        }
    }

    pub fn scale(&self, a: f64) -> HistoryState {
        let repr = match &self.repr {
            Repr::ExpModes(modes) => Repr::ExpModes(
                modes
                    .iter()
                    .map(|m| ExpMode {
                        zeta: m.zeta.scale(a),
                        rate: m.rate,
                        weight: m.weight,
                    })
                    .collect(),
            ),
            Repr::SGrid { nodes, values } => Repr::SGrid {
                nodes: nodes.clone(),
                values: values.iter().map(|v| v.scale(a)).collect(),
            },
        };
        HistoryState {
            domain: self.domain.clone(),
            repr,
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.repr {
            Repr::ExpModes(modes) => modes.iter().all(|m| m.zeta.is_finite()),
            Repr::SGrid { values, .. } => values.iter().all(|v| v.is_finite()),
        }
    }
}

/// Log-spaced age nodes on [dt, T_mem] with kernel breakpoints folded in,
/// thinned so consecutive spacing stays >= dt (the transport CFL bound).
pub fn sgrid_nodes(kernel: &MemoryKernel, dt: f64, nodes_per_decade: usize) -> Result<Vec<f64>> {
    if !(dt > 0.0) || nodes_per_decade == 0 {
        return Err(Error::IncompatibleHistory(
            "grid histories need dt > 0 and a positive node density".into(),
        ));
    }
    let kappa = kernel.total_mass();
    if !(kappa > 0.0) {
        return Err(Error::IncompatibleHistory(
            "grid histories need a kernel with positive mass".into(),
        ));
    }
    let mut t_mem = dt;
    while kernel.tail_integral(t_mem) >= TAIL_MASS_CUT * kappa {
        t_mem *= 2.0;
        if !t_mem.is_finite() {
            return Err(Error::DivergentTail(
                "kernel tail never drops below the truncation threshold".into(),
            ));
        }
    }
    let decades = (t_mem / dt).log10();
    let count = (decades * nodes_per_decade as f64).ceil() as usize + 1;
    let mut candidates: Vec<f64> = (0..=count)
        .map(|i| dt * (t_mem / dt).powf(i as f64 / count as f64))
        .collect();
    for b in kernel.jump_points() {
        if b > dt && b < t_mem {
            candidates.push(b);
        }
    }
    candidates.sort_by(f64::total_cmp);
    let mut nodes: Vec<f64> = Vec::with_capacity(candidates.len());
    for c in candidates {
        match nodes.last() {
            Some(&last) if c - last < dt * (1.0 - 1e-12) => {}
            _ => nodes.push(c),
        }
    }
    if *nodes.last().unwrap() < t_mem {
        nodes.push(t_mem);
    }
    Ok(nodes)
}

/// u at time `t` by linear interpolation in an ascending (time, u) list.
fn interp_trajectory(traj: &[(f64, SpectralField)], t: f64) -> SpectralField {
    if t <= traj[0].0 {
        return traj[0].1.clone();
    }
    let last = traj.len() - 1;
    if t >= traj[last].0 {
        return traj[last].1.clone();
    }
    let i = traj.partition_point(|(tt, _)| *tt <= t) - 1;
    let (t0, u0) = &traj[i];
    let (t1, u1) = &traj[i + 1];
    let w = (t - t0) / (t1 - t0);
    let mut out = u0.scale(1.0 - w);
    out.axpy(w, u1);
    out
}

fn validate_nodes(nodes: &[f64]) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::IncompatibleHistory("empty age grid".into()));
    }
    let mut prev = 0.0;
    for &s in nodes {
        if !(s > prev) || !s.is_finite() {
            return Err(Error::IncompatibleHistory(
                "age nodes must be finite, positive and strictly increasing".into(),
            ));
        }
        prev = s;
    }
    Ok(())
}

fn min_spacing(nodes: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut min = f64::INFINITY;
    for &s in nodes {
        min = min.min(s - prev);
        prev = s;
    }
    min
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

fn check_prony_match(modes: &[ExpMode], kernel: &MemoryKernel) -> Result<()> {
    let MemoryKernel::Prony { terms } = kernel else {
        return Err(Error::IncompatibleHistory(
            "exponential-mode history paired with a non-Prony kernel".into(),
        ));
    };
    if terms.len() != modes.len()
        || terms.iter().zip(modes).any(|(&(c, d), m)| {
            rel_diff(c, m.weight) > PRONY_MATCH_TOL || rel_diff(d, m.rate) > PRONY_MATCH_TOL
        })
    {
        return Err(Error::IncompatibleHistory(
            "history modes do not match the kernel's Prony terms".into(),
        ));
    }
    Ok(())
}

fn eval_sgrid(
    domain: &Arc<DomainSpec>,
    nodes: &[f64],
    values: &[SpectralField],
    s: f64,
) -> SpectralField {
    if s <= 0.0 {
        return SpectralField::zeros(domain);
    }
    if s <= nodes[0] {
        return values[0].scale(s / nodes[0]);
    }
    let last = nodes.len() - 1;
    if s >= nodes[last] {
        return values[last].clone();
    }
    let i = nodes.partition_point(|&x| x <= s) - 1;
    let t = (s - nodes[i]) / (nodes[i + 1] - nodes[i]);
    let mut out = values[i].scale(1.0 - t);
    out.axpy(t, &values[i + 1]);
    out
}

/// Per-node quadrature weights: each interval (including [0, s_0] with the
/// zero anchor and the constant-extrapolation tail) contributes its exact
/// kernel mass I(a) - I(b), split trapezoidally between its endpoints.
fn node_weights(kernel: &MemoryKernel, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    let mut prev_i = kernel.total_mass();
    for (i, &s) in nodes.iter().enumerate() {
        let tail = kernel.tail_integral(s);
        let mass = prev_i - tail;
        w[i] += 0.5 * mass;
        if i > 0 {
            w[i - 1] += 0.5 * mass;
        }
        prev_i = tail;
    }
    w[n - 1] += prev_i;
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn domain_1d(n: usize) -> Arc<DomainSpec> {
        DomainSpec::new(&[PI], &[n]).unwrap()
    }

    fn phi(domain: &Arc<DomainSpec>, k: usize, a: f64) -> SpectralField {
        SpectralField::eigenfunction(domain, &[k], a).unwrap()
    }

    #[test]
    fn zero_history_gives_zero_force_and_norms() {
        let d = domain_1d(8);
        let kernel = MemoryKernel::exponential();
        for h in [
            HistoryState::exp_modes_zero(&d, &kernel).unwrap(),
            HistoryState::sgrid_zero(&d, &kernel, 0.01, 3).unwrap(),
        ] {
            assert_eq!(h.memory_force(&kernel).unwrap().sobolev_norm(0.0), 0.0);
            assert_eq!(h.m_norm_sq(&kernel, 0.0).unwrap(), 0.0);
            assert_eq!(h.psi(&kernel, 0.0).unwrap(), 0.0);
            assert_eq!(h.t_dissipation(&kernel, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_mode_force_is_a_zeta() {
        // zeta_1 = phi_1 on (0, pi) has A zeta_1 = zeta_1.
        let d = domain_1d(4);
        let kernel = MemoryKernel::exponential();
        let h = HistoryState::exp_modes_from(
            &d,
            vec![ExpMode {
                zeta: phi(&d, 1, 1.0),
                rate: 1.0,
                weight: 1.0,
            }],
        );
        let force = h.memory_force(&kernel).unwrap();
        let diff = force.sub(&phi(&d, 1, 1.0));
        assert!(diff.sobolev_norm(0.0) < 1e-14);
    }

    #[test]
    fn exp_advance_with_zero_velocity_decays() {
        let d = domain_1d(4);
        let kernel = MemoryKernel::prony(&[(0.5, 2.0), (1.0, 0.7)]).unwrap();
        let mut h = HistoryState::exp_modes_zero(&d, &kernel).unwrap();
        if let Repr::ExpModes(modes) = &mut h.repr {
            modes[0].zeta = phi(&d, 1, 3.0);
            modes[1].zeta = phi(&d, 2, -1.0);
        }
        let v0 = SpectralField::zeros(&d);
        let dt = 0.37;
        let h2 = h.advance(&v0, dt).unwrap();
        let m0 = h.exp_modes().unwrap();
        let m2 = h2.exp_modes().unwrap();
        for (a, b) in m0.iter().zip(m2) {
            let want = a.zeta.scale((-a.rate * dt).exp());
            assert!(b.zeta.sub(&want).sobolev_norm(0.0) < 1e-14);
        }
    }

    #[test]
    fn constant_u_keeps_history_zero() {
        let d = domain_1d(4);
        let kernel = MemoryKernel::exponential();
        let v0 = SpectralField::zeros(&d);
        let mut exp = HistoryState::exp_modes_zero(&d, &kernel).unwrap();
        let mut grid = HistoryState::sgrid_zero(&d, &kernel, 0.05, 3).unwrap();
        for _ in 0..20 {
            exp = exp.advance(&v0, 0.05).unwrap();
            grid = grid.advance(&v0, 0.05).unwrap();
        }
        assert_eq!(exp.m_norm_sq(&kernel, 0.0).unwrap(), 0.0);
        assert_eq!(grid.m_norm_sq(&kernel, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn representation_formula_trivial_cases() {
        let d = domain_1d(4);
        let u0 = phi(&d, 1, 2.0);
        let nodes = [0.25, 0.5, 1.0, 2.0];

        // Linear-in-time u(t) = t phi: eta^t(s) = s phi for s <= t.
        let traj: Vec<(f64, SpectralField)> =
            (0..=8).map(|i| (0.25 * i as f64, phi(&d, 1, 0.25 * i as f64))).collect();
        let h = HistoryState::from_representation(&d, &nodes, &traj, None, 2.0).unwrap();
        let (ns, vs) = h.sgrid().unwrap();
        for (s, v) in ns.iter().zip(vs) {
            let want = phi(&d, 1, *s);
            assert!(v.sub(&want).sobolev_norm(0.0) < 1e-13, "s = {s}");
        }

        // t = 0 returns eta0 sampled on the nodes.
        let eta0 = HistoryState::sgrid_from_fn(&d, &nodes, |s| phi(&d, 1, s * s)).unwrap();
        let traj0 = vec![(0.0, u0.clone())];
        let h0 = HistoryState::from_representation(&d, &nodes, &traj0, Some(&eta0), 0.0).unwrap();
        let (_, vs0) = h0.sgrid().unwrap();
        let (_, ve) = eta0.sgrid().unwrap();
        for (a, b) in vs0.iter().zip(ve) {
            assert!(a.sub(b).sobolev_norm(0.0) < 1e-13);
        }

        // Constant u with eta0 = 0 stays zero.
        let traj_c: Vec<(f64, SpectralField)> = vec![(0.0, u0.clone()), (3.0, u0.clone())];
        let hc = HistoryState::from_representation(&d, &nodes, &traj_c, None, 3.0).unwrap();
        assert!(hc.m_norm_sq(&MemoryKernel::exponential(), 0.0).unwrap() < 1e-28);

        // Trajectory gap detected.
        assert!(matches!(
            HistoryState::from_representation(&d, &nodes, &traj_c, None, 5.0),
            Err(Error::TrajectoryGap(_))
        ));
    }

    #[test]
    fn sgrid_advance_converges_to_representation() {
        // u(t) = sin(omega t) phi_1, eta0 = 0; compare the evolved grid
        // history at t = 2 against the representation formula on ages s <= 1,
        // refining (dt, node density) jointly.  The range stays behind the
        // front s = t, where eta has a kink and convergence is preasymptotic.
        let d = domain_1d(4);
        let kernel = MemoryKernel::exponential();
        let omega = 1.0;
        let mut errs = Vec::new();
        for level in 0..3 {
            let dt = 0.02 / 2f64.powi(level);
            let npd = 16 * (1 << level);
            let mut h = HistoryState::sgrid_zero(&d, &kernel, dt, npd).unwrap();
            let steps = (2.0 / dt).round() as usize;
            for n in 0..steps {
                // Exact u-increment per step isolates the transport error.
                let t0 = n as f64 * dt;
                let t1 = t0 + dt;
                let v = phi(&d, 1, ((omega * t1).sin() - (omega * t0).sin()) / dt);
                h = h.advance(&v, dt).unwrap();
            }
            let (nodes, values) = h.sgrid().unwrap();
            let traj: Vec<(f64, SpectralField)> = (0..=8000)
                .map(|i| {
                    let t = 2.0 * i as f64 / 8000.0;
                    (t, phi(&d, 1, (omega * t).sin()))
                })
                .collect();
            let oracle =
                HistoryState::from_representation(&d, nodes, &traj, None, 2.0).unwrap();
            let (_, ovals) = oracle.sgrid().unwrap();
            let mut sup: f64 = 0.0;
            for ((s, a), b) in nodes.iter().zip(values).zip(ovals) {
                if *s <= 1.0 {
                    sup = sup.max(a.sub(b).sobolev_norm(1.0));
                }
            }
            errs.push(sup);
        }
        let rate01 = (errs[0] / errs[1]).log2();
        let rate12 = (errs[1] / errs[2]).log2();
        assert!(
            (0.8..=1.2).contains(&rate01) && (0.8..=1.2).contains(&rate12),
            "errors {errs:?}, rates {rate01} {rate12}"
        );
    }

    #[test]
    fn t_dissipation_nonpositive_for_both_representations() {
        let d = domain_1d(6);
        let kernel = MemoryKernel::prony(&[(1.0, 1.0), (0.5, 3.0)]).unwrap();
        // ExpModes: arbitrary state.
        let h = HistoryState::exp_modes_from(
            &d,
            vec![
                ExpMode { zeta: phi(&d, 1, 2.0), rate: 1.0, weight: 1.0 },
                ExpMode { zeta: phi(&d, 3, -1.5), rate: 3.0, weight: 0.5 },
            ],
        );
        assert!(h.t_dissipation(&kernel, 0.0).unwrap() <= 0.0);

        // SGrid: advance-generated states from a wiggly trajectory.
        let mut g = HistoryState::sgrid_zero(&d, &kernel, 0.02, 4).unwrap();
        let mut x = 0.4;
        for _ in 0..60 {
            x = (x * 1.9 + 0.31) % 1.0;
            let v = phi(&d, 1, x - 0.5);
            g = g.advance(&v, 0.02).unwrap();
            assert!(g.t_dissipation(&kernel, 0.0).unwrap() <= 1e-10);
        }

        // SGrid: purely random node values (not advance-generated).
        let (nodes, _) = g.sgrid().unwrap();
        let nodes = nodes.to_vec();
        let r = HistoryState::sgrid_from_fn(&d, &nodes, |s| {
            phi(&d, 2, (37.0 * s).sin())
        })
        .unwrap();
        assert!(r.t_dissipation(&kernel, 0.0).unwrap() <= 1e-10);
    }

    #[test]
    fn psi_bounded_by_theta_memory_norm() {
        use crate::kernel::certify_theta;
        let d = domain_1d(6);
        let kernels = [
            MemoryKernel::exponential(),
            MemoryKernel::prony(&[(1.0, 1.0), (0.5, 3.0)]).unwrap(),
            MemoryKernel::geometric_steps(1e-10),
        ];
        for kernel in &kernels {
            let theta = certify_theta(kernel).unwrap().theta().unwrap();
            // Grid history with oscillating content.
            let nodes = sgrid_nodes(kernel, 0.01, 5).unwrap();
            let g = HistoryState::sgrid_from_fn(&d, &nodes, |s| {
                let mut f = phi(&d, 1, (3.0 * s).sin());
                f.axpy(1.0, &phi(&d, 4, (1.0 + s).recip()));
                f
            })
            .unwrap();
            let psi = g.psi(kernel, 0.0).unwrap();
            let mem = g.m_norm_sq(kernel, 0.0).unwrap();
            assert!(psi >= 0.0);
            assert!(psi <= theta * mem * (1.0 + 1e-6), "{kernel:?}: {psi} vs {}", theta * mem);
            // ExpModes version where applicable.
            if let MemoryKernel::Prony { terms } = kernel {
                let modes = terms
                    .iter()
                    .enumerate()
                    .map(|(i, &(c, dd))| ExpMode {
                        zeta: phi(&d, i + 1, 1.0 + i as f64),
                        rate: dd,
                        weight: c,
                    })
                    .collect();
                let h = HistoryState::exp_modes_from(&d, modes);
                let psi = h.psi(kernel, 0.0).unwrap();
                let mem = h.m_norm_sq(kernel, 0.0).unwrap();
                assert!(psi >= 0.0 && psi <= theta * mem * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn exp_and_grid_forces_agree_for_prony_kernels() {
        // Shared underlying history eta(s) = (1 - e^{-s}) phi_1: compute
        // zeta_j analytically and sample the same eta on a fine grid.
        let d = domain_1d(4);
        let kernel = MemoryKernel::prony(&[(0.8, 1.0), (0.4, 2.5)]).unwrap();
        // zeta_j = int e^{-d s}(1 - e^{-s}) ds = 1/d - 1/(d+1).
        let modes = [(0.8, 1.0), (0.4, 2.5)]
            .iter()
            .map(|&(c, dd): &(f64, f64)| ExpMode {
                zeta: phi(&d, 1, 1.0 / dd - 1.0 / (dd + 1.0)),
                rate: dd,
                weight: c,
            })
            .collect();
        let h = HistoryState::exp_modes_from(&d, modes);
        let nodes = sgrid_nodes(&kernel, 1e-3, 40).unwrap();
        let g = HistoryState::sgrid_from_fn(&d, &nodes, |s| phi(&d, 1, 1.0 - (-s).exp())).unwrap();
        let fe = h.memory_force(&kernel).unwrap();
        let fg = g.memory_force(&kernel).unwrap();
        let rel = fe.sub(&fg).sobolev_norm(0.0) / fe.sobolev_norm(0.0);
        assert!(rel < 1e-4, "relative force mismatch {rel}");
    }

    #[test]
    fn cfl_violation_detected() {
        let d = domain_1d(4);
        let kernel = MemoryKernel::exponential();
        let h = HistoryState::sgrid_zero(&d, &kernel, 0.01, 4).unwrap();
        let v = phi(&d, 1, 1.0);
        assert!(matches!(
            h.advance(&v, 0.5),
            Err(Error::CflViolation { .. })
        ));
        assert!(h.advance(&v, 0.01).is_ok());
    }

    #[test]
    fn incompatible_kernel_rejected() {
        let d = domain_1d(4);
        let kernel = MemoryKernel::exponential();
        let other = MemoryKernel::prony(&[(2.0, 1.0)]).unwrap();
        let h = HistoryState::exp_modes_zero(&d, &kernel).unwrap();
        assert!(h.memory_force(&other).is_err());
        assert!(h.m_norm_sq(&other, 0.0).is_err());
    }

    #[test]
    fn sgrid_nodes_respect_spacing_and_tail() {
        let kernel = MemoryKernel::geometric_steps(1e-10);
        let dt = 0.05;
        let nodes = sgrid_nodes(&kernel, dt, 8).unwrap();
        validate_nodes(&nodes).unwrap();
        assert!(min_spacing(&nodes) >= dt * (1.0 - 1e-12));
        let kappa = kernel.total_mass();
        assert!(kernel.tail_integral(*nodes.last().unwrap()) < 1e-8 * kappa);
    }
}
