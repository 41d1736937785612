//! Admissible memory kernels and numerical certification of the tail
//! domination condition `int_s^inf mu <= Theta mu(s)` together with its
//! two-parameter exponential form `mu(sigma+s) <= C e^{-delta sigma} mu(s)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analytic continuation of a tabulated kernel beyond its last node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// mu(s) = mu_last * exp(-rate (s - s_last)).
    Exponential { rate: f64 },
    /// mu(s) = mu_last * (s / s_last)^{-exponent}, exponent > 1.
    PowerLaw { exponent: f64 },
}

/// A nonnegative, nonincreasing kernel of finite total mass.
#[derive(Debug, Clone, PartialEq)]
pub enum MemoryKernel {
    /// Finite sum of decaying exponentials, mu(s) = sum c_j exp(-d_j s).
    /// An empty sum is the zero kernel (no memory).
    Prony { terms: Vec<(f64, f64)> },
    /// values[i] on the interval (breakpoints[i-1], breakpoints[i]]
    /// (left endpoint 0 for the first piece), zero beyond the last.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Piecewise-linear samples with an analytic power law near the origin
    /// (exponent in [0, 1), so the mass stays finite) and an analytic tail.
    Tabulated {
        nodes: Vec<f64>,
        values: Vec<f64>,
        origin_exponent: f64,
        tail: Tail,
    },
}

impl MemoryKernel {
    pub fn zero() -> Self {
        MemoryKernel::Prony { terms: Vec::new() }
    }

    pub fn prony(terms: &[(f64, f64)]) -> Result<Self> {
        let k = MemoryKernel::Prony {
            terms: terms.to_vec(),
        };
        k.validate()?;
        Ok(k)
    }

    pub fn exponential() -> Self {
        MemoryKernel::Prony {
            terms: vec![(1.0, 1.0)],
        }
    }

    /// The step kernel 2^{-ceil(s)}, truncated once the values drop below
    /// `cut` relative to the first one.
    pub fn geometric_steps(cut: f64) -> Self {
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        let mut v = 0.5;
        let mut b = 1.0;
        while v >= cut * 0.5 {
            breakpoints.push(b);
            values.push(v);
            v *= 0.5;
            b += 1.0;
        }
        MemoryKernel::PiecewiseConstant {
            breakpoints,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MemoryKernel::Prony { terms } => {
                for &(c, d) in terms {
                    if !(c > 0.0) || !(d > 0.0) || !c.is_finite() || !d.is_finite() {
                        return Err(Error::InvalidKernel(format!(
                            "Prony term ({c}, {d}) must have positive coefficient and rate"
                        )));
                    }
                }
            }
            MemoryKernel::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if breakpoints.len() != values.len() {
                    return Err(Error::InvalidKernel(
                        "breakpoints and values must have equal length".into(),
                    ));
                }
                let mut prev_b = 0.0;
                let mut prev_v = f64::INFINITY;
                for (&b, &v) in breakpoints.iter().zip(values) {
                    if !(b > prev_b) {
                        return Err(Error::InvalidKernel(
                            "breakpoints must be strictly increasing and positive".into(),
                        ));
                    }
                    if !(v >= 0.0) || v > prev_v {
                        return Err(Error::InvalidKernel(
                            "piecewise values must be nonnegative and nonincreasing".into(),
                        ));
                    }
                    prev_b = b;
                    prev_v = v;
                }
            }
            MemoryKernel::Tabulated {
                nodes,
                values,
                origin_exponent,
                tail,
            } => {
                if nodes.len() != values.len() || nodes.is_empty() {
                    return Err(Error::InvalidKernel(
                        "tabulated kernel needs matching, nonempty nodes and values".into(),
                    ));
                }
                let mut prev_s = 0.0;
                let mut prev_v = f64::INFINITY;
                for (&s, &v) in nodes.iter().zip(values) {
                    if !(s > prev_s) {
                        return Err(Error::InvalidKernel(
                            "tabulated nodes must be strictly increasing and positive".into(),
                        ));
                    }
                    if !(v >= 0.0) || v > prev_v * (1.0 + 1e-12) {
                        return Err(Error::InvalidKernel(
                            "tabulated values must be nonnegative and nonincreasing".into(),
                        ));
                    }
                    prev_s = s;
                    prev_v = v;
                }
                if !(0.0..1.0).contains(origin_exponent) {
                    return Err(Error::InvalidKernel(
                        "origin exponent must lie in [0, 1) for finite mass".into(),
                    ));
                }
                match tail {
                    Tail::Exponential { rate } if *rate > 0.0 => {}
                    Tail::PowerLaw { exponent } if *exponent > 1.0 => {}
                    Tail::Exponential { .. } => {
                        return Err(Error::InvalidKernel(
                            "exponential tail rate must be positive".into(),
                        ))
                    }
                    Tail::PowerLaw { .. } => {
                        return Err(Error::DivergentTail(
                            "power-law tail needs exponent > 1 for finite mass".into(),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// mu(s). Pieces are closed on the right, so the value at a breakpoint
    /// is the left one; the a.e. statements are probed just past jumps.
    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self {
            MemoryKernel::Prony { terms } => {
                terms.iter().map(|&(c, d)| c * (-d * s).exp()).sum()
            }
            MemoryKernel::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if s == 0.0 {
                    return values.first().copied().unwrap_or(0.0);
                }
                match breakpoints.iter().position(|&b| s <= b) {
                    Some(i) => values[i],
                    None => 0.0,
                }
            }
            MemoryKernel::Tabulated {
                nodes,
                values,
                origin_exponent,
                tail,
            } => {
                let s0 = nodes[0];
                if s < s0 {
                    if *origin_exponent == 0.0 {
                        return values[0];
                    }
                    if s == 0.0 {
                        return f64::INFINITY;
                    }
                    return values[0] * (s / s0).powf(-origin_exponent);
                }
                let last = nodes.len() - 1;
                if s >= nodes[last] {
                    let v = values[last];
                    return match tail {
                        Tail::Exponential { rate } => v * (-rate * (s - nodes[last])).exp(),
                        Tail::PowerLaw { exponent } => v * (s / nodes[last]).powf(-exponent),
                    };
                }
                let i = nodes.partition_point(|&x| x <= s) - 1;
                let t = (s - nodes[i]) / (nodes[i + 1] - nodes[i]);
                values[i] * (1.0 - t) + values[i + 1] * t
            }
        }
    }

    /// Tail function I(s) = int_s^inf mu, in closed form per variant.
    pub fn tail_integral(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self {
            MemoryKernel::Prony { terms } => {
                terms.iter().map(|&(c, d)| c / d * (-d * s).exp()).sum()
            }
            MemoryKernel::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                let mut total = 0.0;
                let mut left = 0.0;
                for (&b, &v) in breakpoints.iter().zip(values) {
                    if s <= left {
                        total += v * (b - left);
                    } else if s < b {
                        total += v * (b - s);
                    }
                    left = b;
                }
                total
            }
            MemoryKernel::Tabulated {
                nodes,
                values,
                origin_exponent,
                tail,
            } => {
                let last = nodes.len() - 1;
                let tail_mass = match tail {
                    Tail::Exponential { rate } => values[last] / rate,
                    Tail::PowerLaw { exponent } => values[last] * nodes[last] / (exponent - 1.0),
                };
                if s >= nodes[last] {
                    return match tail {
                        Tail::Exponential { rate } => {
                            values[last] / rate * (-rate * (s - nodes[last])).exp()
                        }
                        Tail::PowerLaw { exponent } => {
                            values[last] * nodes[last] / (exponent - 1.0)
                                * (s / nodes[last]).powf(1.0 - exponent)
                        }
                    };
                }
                // Sum the linear segments from s to the last node, then the tail.
                let mut total = tail_mass;
                for i in (0..last).rev() {
                    let (a, b) = (nodes[i], nodes[i + 1]);
                    if s >= b {
                        break;
                    }
                    let lo = s.max(a);
                    let mu_lo = self.eval(lo);
                    total += (b - lo) * (mu_lo + values[i + 1]) / 2.0;
                }
                if s < nodes[0] {
                    let p = *origin_exponent;
                    let s0 = nodes[0];
                    let v0 = values[0];
                    total += if p == 0.0 {
                        v0 * (s0 - s)
                    } else {
                        v0 * s0.powf(p) * (s0.powf(1.0 - p) - s.powf(1.0 - p)) / (1.0 - p)
                    };
                }
                total
            }
        }
    }

    /// Total mass kappa = I(0).
    pub fn total_mass(&self) -> f64 {
        self.tail_integral(0.0)
    }

    /// int_a^b I(s) ds, exactly for Prony and piecewise-constant kernels
    /// (I is exponential resp. piecewise linear there) and by piecewise
    /// Simpson for tabulated ones (exact on their linear segments).
    pub fn tail_integral_integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(0.0 <= a && a <= b);
        match self {
            MemoryKernel::Prony { terms } => terms
                .iter()
                .map(|&(c, d)| c / (d * d) * ((-d * a).exp() - (-d * b).exp()))
                .sum(),
            MemoryKernel::PiecewiseConstant { breakpoints, .. } => {
                let mut knots: Vec<f64> = vec![a];
                for &bp in breakpoints {
                    if bp > a && bp < b {
                        knots.push(bp);
                    }
                }
                knots.push(b);
                let mut total = 0.0;
                for w in knots.windows(2) {
                    total +=
                        0.5 * (w[1] - w[0]) * (self.tail_integral(w[0]) + self.tail_integral(w[1]));
                }
                total
            }
            MemoryKernel::Tabulated { nodes, .. } => {
                let mut knots: Vec<f64> = vec![a];
                for &s in nodes {
                    if s > a && s < b {
                        knots.push(s);
                    }
                }
                knots.push(b);
                let mut total = 0.0;
                for w in knots.windows(2) {
                    let panels = 8;
                    let h = (w[1] - w[0]) / panels as f64;
                    for p in 0..panels {
                        let lo = w[0] + p as f64 * h;
                        total += h / 6.0
                            * (self.tail_integral(lo)
                                + 4.0 * self.tail_integral(lo + 0.5 * h)
                                + self.tail_integral(lo + h));
                    }
                }
                total
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.total_mass() == 0.0
    }

    /// Breakpoints where mu may jump (used to keep quadrature and scans off
    /// the jumps themselves).
    pub fn jump_points(&self) -> Vec<f64> {
        match self {
            MemoryKernel::PiecewiseConstant { breakpoints, .. } => breakpoints.clone(),
            _ => Vec::new(),
        }
    }

    /// Characteristic scale used to place certification grids: with
    /// s_med the median-mass point (I(s_med) = kappa/2), the scale is
    /// kappa / mu(s_med).
    pub fn certification_scale(&self) -> f64 {
        let kappa = self.total_mass();
        if kappa <= 0.0 {
            return 1.0;
        }
        let target = kappa / 2.0;
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.tail_integral(hi) > target {
            hi *= 2.0;
            if hi > 1e18 {
                return 1.0;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.tail_integral(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s_med = 0.5 * (lo + hi);
        let mu_med = self.eval(s_med);
        if mu_med > 0.0 && mu_med.is_finite() {
            kappa / mu_med
        } else {
            s_med.max(1.0)
        }
    }

    /// Log-spaced scan grid over [1e-6, 1e3] * scale, with extra probe
    /// points just past every jump.
    pub fn scan_points(&self, n: usize) -> Vec<f64> {
        let scale = self.certification_scale();
        let lo = (1e-6 * scale).ln();
        let hi = (1e3 * scale).ln();
        let mut pts: Vec<f64> = (0..n)
            .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
            .collect();
        for b in self.jump_points() {
            pts.push(b * (1.0 + 1e-9));
            if b * (1.0 - 1e-9) > 0.0 {
                pts.push(b * (1.0 - 1e-9));
            }
        }
        pts.sort_by(f64::total_cmp);
        pts
    }
}

/// Result of the tail-domination scan.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaOutcome {
    Certified { theta: f64, attained_at: f64 },
    Failed { witness: f64, ratio: f64 },
}

impl ThetaOutcome {
    pub fn is_certified(&self) -> bool {
        matches!(self, ThetaOutcome::Certified { .. })
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            ThetaOutcome::Certified { theta, .. } => Some(*theta),
            ThetaOutcome::Failed { .. } => None,
        }
    }
}

/// Result of the exponential-comparison scan at a fixed delta.
#[derive(Debug, Clone, PartialEq)]
pub enum NeceOutcome {
    Certified { c: f64 },
    Failed { witness: (f64, f64), ratio: f64 },
}

impl NeceOutcome {
    pub fn is_certified(&self) -> bool {
        matches!(self, NeceOutcome::Certified { .. })
    }
}

/// Relative growth across the top decade of the scan beyond which the
/// essential supremum is declared unbounded.
const GROWTH_SLACK: f64 = 1.05;
/// Default scan size; resolves Theta well within the 1% contract.
pub const THETA_SCAN_POINTS: usize = 10_000;
pub const NECE_SCAN_POINTS: usize = 400;

/// Smallest Theta with I(s) <= Theta mu(s) on the scan grid, or a witness
/// point where the ratio escapes.
pub fn certify_theta(kernel: &MemoryKernel) -> Result<ThetaOutcome> {
    let kappa = kernel.total_mass();
    if !(kappa > 0.0) {
        return Err(Error::InvalidKernel(
            "theta certification needs positive total mass".into(),
        ));
    }
    let pts = kernel.scan_points(THETA_SCAN_POINTS);
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &s in &pts {
        let mu = kernel.eval(s);
        let tail = kernel.tail_integral(s);
        if mu > f64::MIN_POSITIVE && mu.is_finite() {
            samples.push((s, tail / mu));
        } else if tail > 1e-12 * kappa {
            // Positive tail mass with a vanishing kernel: no finite Theta.
            return Ok(ThetaOutcome::Failed {
                witness: s,
                ratio: f64::INFINITY,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidKernel("kernel vanishes on the scan".into()));
    }
    let (s_star, theta) = samples
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    // Escape test over the top decade of the valid range.
    let s_last = samples.last().unwrap().0;
    let decade: Vec<&(f64, f64)> = samples.iter().filter(|(s, _)| *s >= s_last / 10.0).collect();
    if decade.len() >= 2 {
        let first = decade.first().unwrap().1;
        let last = decade.last().unwrap().1;
        if last >= GROWTH_SLACK * first && last >= 0.99 * theta {
            return Ok(ThetaOutcome::Failed {
                witness: s_last,
                ratio: last,
            });
        }
    }
    Ok(ThetaOutcome::Certified {
        theta,
        attained_at: s_star,
    })
}

/// Smallest C >= 1 with mu(sigma+s) <= C e^{-delta sigma} mu(s) on the
/// scanned (sigma, s) grid, or a witness pair.
pub fn certify_nece(kernel: &MemoryKernel, delta: f64) -> Result<NeceOutcome> {
    let kappa = kernel.total_mass();
    if !(kappa > 0.0) {
        return Err(Error::InvalidKernel(
            "nece certification needs positive total mass".into(),
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidKernel("delta must be positive".into()));
    }
    let scale = kernel.certification_scale();
    // sigma spans up to e^{delta sigma} = e^20 so sub-exponential decay has
    // room to escape; s extends well past sigma so the shifted argument
    // still probes the far tail.
    let sig_hi = 20.0 / delta;
    let sig_lo = sig_hi * 1e-4;
    let s_hi = (1e3 * scale).max(10.0 * sig_hi);
    let s_lo = 1e-6 * scale;
    let mut s_pts: Vec<f64> = (0..NECE_SCAN_POINTS)
        .map(|i| {
            (s_lo.ln() + (s_hi / s_lo).ln() * i as f64 / (NECE_SCAN_POINTS - 1) as f64).exp()
        })
        .collect();
    for b in kernel.jump_points() {
        s_pts.push(b * (1.0 + 1e-9));
        s_pts.push(b * (1.0 - 1e-9));
    }
    s_pts.sort_by(f64::total_cmp);
    let n_sig = NECE_SCAN_POINTS;
    let mut sup_by_sigma: Vec<(f64, f64, f64)> = Vec::new(); // (sigma, sup ratio, argmax s)
    for i in 0..n_sig {
        let sigma = (sig_lo.ln() + (sig_hi / sig_lo).ln() * i as f64 / (n_sig - 1) as f64).exp();
        let mut sup = 0.0;
        let mut arg = f64::NAN;
        let mut any = false;
        for &s in &s_pts {
            let mu_s = kernel.eval(s);
            // Stay clear of subnormals: their log carries O(1) error.
            if mu_s < 1e-300 || !mu_s.is_finite() {
                continue;
            }
            any = true;
            let mu_shift = kernel.eval(sigma + s);
            if mu_shift < 1e-300 {
                continue;
            }
            // Evaluate in log space so e^{delta sigma} never overflows.
            let q = (mu_shift.ln() + delta * sigma - mu_s.ln()).exp();
            if q > sup {
                sup = q;
                arg = s;
            }
        }
        if any {
            sup_by_sigma.push((sigma, sup, arg));
        }
    }
    if sup_by_sigma.is_empty() {
        return Err(Error::InvalidKernel("kernel vanishes on the scan".into()));
    }
    let &(sig_star, sup_star, s_star) = sup_by_sigma
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let sig_last = sup_by_sigma.last().unwrap().0;
    let decade: Vec<&(f64, f64, f64)> = sup_by_sigma
        .iter()
        .filter(|(sig, sup, _)| *sig >= sig_last / 10.0 && *sup > 0.0)
        .collect();
    if decade.len() >= 2 {
        let first = decade.first().unwrap().1;
        let last = decade.last().unwrap();
        if last.1 >= GROWTH_SLACK * first && last.1 >= 0.99 * sup_star {
            return Ok(NeceOutcome::Failed {
                witness: (last.0, last.2),
                ratio: last.1,
            });
        }
    }
    let _ = (sig_star, s_star);
    Ok(NeceOutcome::Certified {
        c: sup_star.max(1.0),
    })
}

/// Joint report for the equivalence of the two kernel conditions.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub theta: ThetaOutcome,
    /// Best certifying (delta, C) found by the log scan, if any.
    pub nece: Option<(f64, f64)>,
    pub deltas_scanned: usize,
    /// true when both conditions certify or both fail.
    pub agree: bool,
}

/// Scans delta logarithmically and checks that the two conditions agree.
pub fn cross_check_equivalence(kernel: &MemoryKernel) -> Result<EquivalenceReport> {
    let theta = certify_theta(kernel)?;
    let scale = kernel.certification_scale();
    let n = 25;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n {
        let delta = 10f64.powf(-4.0 + 6.0 * i as f64 / (n - 1) as f64) / scale;
        if let NeceOutcome::Certified { c } = certify_nece(kernel, delta)? {
            match best {
                // Prefer the largest certifying delta (fastest certified decay).
                Some(_) => best = Some((delta, c)),
                None => best = Some((delta, c)),
            }
        }
    }
    let agree = theta.is_certified() == best.is_some();
    Ok(EquivalenceReport {
        theta,
        nece: best,
        deltas_scanned: n,
        agree,
    })
}
