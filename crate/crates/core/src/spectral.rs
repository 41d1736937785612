//! Fields on a d-dimensional box in the Dirichlet-Laplacian eigenbasis.
//!
//! The basis functions are tensor products of sines,
//! `phi_k(x) = prod_i sqrt(2/L_i) sin(pi k_i x_i / L_i)` with `k_i >= 1`,
//! normalized in `L^2`. The operator `A = -Laplacian` is diagonal with
//! eigenvalues `lambda_k = sum_i (pi k_i / L_i)^2`, so every Sobolev norm
//! `||u||_r = ||A^{r/2} u||` is an exact spectral multiplier sum.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

/// A box domain with a fixed spectral truncation.
#[derive(Debug)]
pub struct DomainSpec {
    edge_lengths: Vec<f64>,
    modes_per_axis: Vec<usize>,
    /// lambda_k over the full multi-index grid, shape = modes_per_axis.
    eigenvalues: ArrayD<f64>,
    /// Cached sine transforms keyed by grid points per axis.
    transforms: Mutex<HashMap<Vec<usize>, Arc<Transform>>>,
}

impl PartialEq for DomainSpec {
    fn eq(&self, other: &Self) -> bool {
        self.edge_lengths == other.edge_lengths && self.modes_per_axis == other.modes_per_axis
    }
}

impl DomainSpec {
    pub fn new(edge_lengths: &[f64], modes_per_axis: &[usize]) -> Result<Arc<Self>> {
        let d = edge_lengths.len();
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidDomain(format!(
                "dimension must be 1, 2 or 3, got {d}"
            )));
        }
        if modes_per_axis.len() != d {
            return Err(Error::InvalidDomain(
                "edge_lengths and modes_per_axis must have the same length".into(),
            ));
        }
        if edge_lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidDomain("edge lengths must be positive".into()));
        }
        if modes_per_axis.iter().any(|&n| n == 0) {
            return Err(Error::InvalidDomain("mode counts must be positive".into()));
        }
        let shape: Vec<usize> = modes_per_axis.to_vec();
        let mut eigenvalues = ArrayD::<f64>::zeros(IxDyn(&shape));
        for (idx, lam) in eigenvalues.indexed_iter_mut() {
            let mut sum = 0.0;
            for axis in 0..d {
                let k = (idx[axis] + 1) as f64;
                sum += (PI * k / edge_lengths[axis]).powi(2);
            }
            *lam = sum;
        }
        Ok(Arc::new(DomainSpec {
            edge_lengths: edge_lengths.to_vec(),
            modes_per_axis: shape,
            eigenvalues,
            transforms: Mutex::new(HashMap::new()),
        }))
    }

    pub fn dimension(&self) -> usize {
        self.edge_lengths.len()
    }

    pub fn edge_lengths(&self) -> &[f64] {
        &self.edge_lengths
    }

    pub fn modes_per_axis(&self) -> &[usize] {
        &self.modes_per_axis
    }

    /// |Omega| = product of edge lengths.
    pub fn volume(&self) -> f64 {
        self.edge_lengths.iter().product()
    }

    pub fn mode_count(&self) -> usize {
        self.modes_per_axis.iter().product()
    }

    pub fn eigenvalue_grid(&self) -> &ArrayD<f64> {
        &self.eigenvalues
    }

    /// First Dirichlet eigenvalue.
    pub fn lambda_1(&self) -> f64 {
        self.edge_lengths
            .iter()
            .map(|l| (PI / l).powi(2))
            .sum()
    }

    pub fn lambda_max(&self) -> f64 {
        self.edge_lengths
            .iter()
            .zip(&self.modes_per_axis)
            .map(|(l, &n)| (PI * n as f64 / l).powi(2))
            .sum()
    }

    /// All eigenpairs sorted by eigenvalue. Multi-indices are 1-based.
    pub fn eigenvalues(&self) -> Vec<(Vec<usize>, f64)> {
        let mut pairs: Vec<(Vec<usize>, f64)> = self
            .eigenvalues
            .indexed_iter()
            .map(|(idx, &lam)| {
                let k: Vec<usize> = (0..self.dimension()).map(|a| idx[a] + 1).collect();
                (k, lam)
            })
            .collect();
        pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        pairs
    }

    /// Sine transform pair for a collocation grid with `factor * N` points
    /// per axis (factor 2 is the dealiasing default).
    pub fn transform(self: &Arc<Self>, factor: usize) -> Arc<Transform> {
        let grid: Vec<usize> = self.modes_per_axis.iter().map(|&n| factor * n).collect();
        self.transform_with_grid(&grid)
            .expect("factor >= 1 cannot under-resolve")
    }

    pub fn transform_with_grid(self: &Arc<Self>, grid_per_axis: &[usize]) -> Result<Arc<Transform>> {
        let mut cache = self.transforms.lock().unwrap();
        if let Some(t) = cache.get(grid_per_axis) {
            return Ok(t.clone());
        }
        let t = Arc::new(Transform::new(self, grid_per_axis)?);
        cache.insert(grid_per_axis.to_vec(), t.clone());
        Ok(t)
    }
}

/// A spatial field stored as eigenbasis coefficients.
#[derive(Debug, Clone)]
pub struct SpectralField {
    domain: Arc<DomainSpec>,
    coeffs: ArrayD<f64>,
}

impl SpectralField {
    pub fn zeros(domain: &Arc<DomainSpec>) -> Self {
        SpectralField {
            domain: domain.clone(),
            coeffs: ArrayD::zeros(IxDyn(domain.modes_per_axis())),
        }
    }

    pub fn from_coeffs(domain: &Arc<DomainSpec>, coeffs: ArrayD<f64>) -> Result<Self> {
        if coeffs.shape() != domain.modes_per_axis() {
            return Err(Error::InvalidDomain(format!(
                "coefficient shape {:?} does not match mode grid {:?}",
                coeffs.shape(),
                domain.modes_per_axis()
            )));
        }
        Ok(SpectralField {
            domain: domain.clone(),
            coeffs,
        })
    }

    /// Field with a single unit coefficient on the (1-based) multi-index `k`.
    pub fn eigenfunction(domain: &Arc<DomainSpec>, k: &[usize], amplitude: f64) -> Result<Self> {
        let mut f = Self::zeros(domain);
        if k.len() != domain.dimension()
            || k.iter().zip(domain.modes_per_axis()).any(|(&ki, &n)| ki < 1 || ki > n)
        {
            return Err(Error::InvalidDomain(format!(
                "mode index {k:?} out of range for {:?}",
                domain.modes_per_axis()
            )));
        }
        let idx: Vec<usize> = k.iter().map(|&ki| ki - 1).collect();
        f.coeffs[IxDyn(&idx)] = amplitude;
        Ok(f)
    }

    pub fn domain(&self) -> &Arc<DomainSpec> {
        &self.domain
    }

    pub fn coeffs(&self) -> &ArrayD<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.coeffs
    }

    pub fn same_domain(&self, other: &SpectralField) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) || *self.domain == *other.domain
    }

    /// ||u||_r = (sum_k lambda_k^r u_k^2)^{1/2}; r may be negative.
    pub fn sobolev_norm(&self, r: f64) -> f64 {
        self.sobolev_norm_sq(r).sqrt()
    }

    pub fn sobolev_norm_sq(&self, r: f64) -> f64 {
        let lam = self.domain.eigenvalue_grid();
        let mut sum = 0.0;
        for (c, &l) in self.coeffs.iter().zip(lam.iter()) {
            if *c != 0.0 {
                sum += lam_pow(l, r) * c * c;
            }
        }
        sum
    }

    /// <u, v>_r over coefficients.
    pub fn inner(&self, other: &SpectralField, r: f64) -> f64 {
        debug_assert!(self.same_domain(other));
        let lam = self.domain.eigenvalue_grid();
        let mut sum = 0.0;
        for ((a, b), &l) in self.coeffs.iter().zip(other.coeffs.iter()).zip(lam.iter()) {
            sum += lam_pow(l, r) * a * b;
        }
        sum
    }

    /// Multiplies each coefficient by lambda_k^p.
    pub fn apply_a_power(&self, p: f64) -> SpectralField {
        let lam = self.domain.eigenvalue_grid();
        let mut out = self.clone();
        for (c, &l) in out.coeffs.iter_mut().zip(lam.iter()) {
            *c *= lam_pow(l, p);
        }
        out
    }

    pub fn scale(&self, a: f64) -> SpectralField {
        let mut out = self.clone();
        out.coeffs.mapv_inplace(|c| a * c);
        out
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        debug_assert!(self.same_domain(other));
        let mut out = self.clone();
        out.coeffs += &other.coeffs;
        out
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        debug_assert!(self.same_domain(other));
        let mut out = self.clone();
        out.coeffs -= &other.coeffs;
        out
    }

    /// self + a * other, in place.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        debug_assert!(self.same_domain(other));
        self.coeffs.zip_mut_with(&other.coeffs, |x, &y| *x += a * y);
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

fn lam_pow(l: f64, r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else if r == 1.0 {
        l
    } else if r == -1.0 {
        1.0 / l
    } else if r == 2.0 {
        l * l
    } else {
        l.powf(r)
    }
}

/// Fast sine-transform pair between coefficients and a collocation grid.
///
/// Grid points on axis `i` are `x_m = (m+1) L_i / (M_i+1)`, `m = 0..M_i-1`.
/// With the discrete sine orthogonality, `from_grid . to_grid` is the
/// identity on resolved modes to round-off, and grid quadrature with
/// weight `prod_i L_i/(M_i+1)` integrates products of resolved basis
/// functions exactly.
#[derive(Debug)]
pub struct Transform {
    domain: Arc<DomainSpec>,
    grid_per_axis: Vec<usize>,
    /// Per axis: (M x N) evaluation matrix phi_k(x_m).
    forward: Vec<Array2<f64>>,
    /// Per axis: (N x M) adjoint with quadrature weight folded in.
    inverse: Vec<Array2<f64>>,
    /// Quadrature weight per grid point (product over axes).
    weight: f64,
}

impl Transform {
    fn new(domain: &Arc<DomainSpec>, grid_per_axis: &[usize]) -> Result<Self> {
        let d = domain.dimension();
        assert_eq!(grid_per_axis.len(), d);
        let mut forward = Vec::with_capacity(d);
        let mut inverse = Vec::with_capacity(d);
        let mut weight = 1.0;
        for axis in 0..d {
            let n = domain.modes_per_axis()[axis];
            let m = grid_per_axis[axis];
            if m < n {
                return Err(Error::ResolutionMismatch {
                    axis,
                    grid: m,
                    modes: n,
                });
            }
            let l = domain.edge_lengths()[axis];
            let w = l / (m as f64 + 1.0);
            weight *= w;
            let norm = (2.0 / l).sqrt();
            let mut fwd = Array2::<f64>::zeros((m, n));
            for gi in 0..m {
                for ki in 0..n {
                    let arg = PI * (ki as f64 + 1.0) * (gi as f64 + 1.0) / (m as f64 + 1.0);
                    fwd[(gi, ki)] = norm * arg.sin();
                }
            }
            let inv = fwd.t().mapv(|v| v * w);
            forward.push(fwd);
            inverse.push(inv);
        }
        Ok(Transform {
            domain: domain.clone(),
            grid_per_axis: grid_per_axis.to_vec(),
            forward,
            inverse,
            weight,
        })
    }

    pub fn domain(&self) -> &Arc<DomainSpec> {
        &self.domain
    }

    pub fn grid_per_axis(&self) -> &[usize] {
        &self.grid_per_axis
    }

    /// Quadrature weight of a single grid point.
    pub fn quadrature_weight(&self) -> f64 {
        self.weight
    }

    pub fn to_grid(&self, field: &SpectralField) -> ArrayD<f64> {
        debug_assert_eq!(field.coeffs().shape(), self.domain.modes_per_axis());
        let mut data = field.coeffs().clone();
        for axis in 0..self.domain.dimension() {
            data = contract_axis(&data, axis, &self.forward[axis]);
        }
        data
    }

    pub fn from_grid(&self, grid: &ArrayD<f64>) -> Result<SpectralField> {
        if grid.shape() != self.grid_per_axis.as_slice() {
            return Err(Error::InvalidDomain(format!(
                "grid shape {:?} does not match transform grid {:?}",
                grid.shape(),
                self.grid_per_axis
            )));
        }
        let mut data = grid.clone();
        for axis in 0..self.domain.dimension() {
            data = contract_axis(&data, axis, &self.inverse[axis]);
        }
        SpectralField::from_coeffs(&self.domain, data)
    }

    /// Integral of a grid function over the box.
    pub fn integrate(&self, grid: &ArrayD<f64>) -> f64 {
        self.weight * grid.sum()
    }

    /// L^2 inner product of two grid functions by quadrature.
    pub fn inner_grid(&self, a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
        let mut sum = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            sum += x * y;
        }
        self.weight * sum
    }

    /// Applies a pointwise scalar map through the grid: coefficients of the
    /// Galerkin truncation of `g(u(x))`.
    pub fn pointwise(&self, field: &SpectralField, g: impl Fn(f64) -> f64) -> SpectralField {
        let mut grid = self.to_grid(field);
        grid.mapv_inplace(g);
        self.from_grid(&grid).expect("matching grid shape")
    }
}

/// Contracts `data` along `axis` with `mat` (rows index the new axis length,
/// columns the old one).
fn contract_axis(data: &ArrayD<f64>, axis: usize, mat: &Array2<f64>) -> ArrayD<f64> {
    let d = data.ndim();
    let old_len = data.shape()[axis];
    let new_len = mat.nrows();
    debug_assert_eq!(mat.ncols(), old_len);

    // Move `axis` last, flatten, multiply, move back.
    let mut perm: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
    perm.push(axis);
    let permuted = data.view().permuted_axes(perm.clone());
    let rest: usize = permuted.shape()[..d - 1].iter().product();
    let flat = permuted
        .as_standard_layout()
        .into_owned()
        .into_shape((rest, old_len))
        .expect("contiguous reshape");
    let multiplied = flat.dot(&mat.t());

    let mut new_shape: Vec<usize> = data.shape().to_vec();
    new_shape[axis] = new_len;
    let mut permuted_shape: Vec<usize> = perm[..d - 1].iter().map(|&a| data.shape()[a]).collect();
    permuted_shape.push(new_len);
    let reshaped = multiplied
        .into_shape(IxDyn(&permuted_shape))
        .expect("contiguous reshape");

    // Invert the permutation.
    let mut inv_perm = vec![0usize; d];
    for (pos, &a) in perm.iter().enumerate() {
        inv_perm[a] = pos;
    }
    reshaped.permuted_axes(inv_perm).as_standard_layout().into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval(n: usize) -> Arc<DomainSpec> {
        DomainSpec::new(&[PI], &[n]).unwrap()
    }

    #[test]
    fn eigenvalues_on_pi_interval_are_squares() {
        let d = unit_interval(4);
        let eigs = d.eigenvalues();
        let lams: Vec<f64> = eigs.iter().map(|e| e.1).collect();
        for (i, lam) in lams.iter().enumerate() {
            let k = (i + 1) as f64;
            assert!((lam - k * k).abs() < 1e-12, "lambda_{} = {}", i + 1, lam);
        }
        assert_eq!(d.lambda_1(), 1.0);
    }

    #[test]
    fn first_eigenvalue_square_box() {
        let d = DomainSpec::new(&[PI, PI], &[3, 3]).unwrap();
        assert!((d.lambda_1() - 2.0).abs() < 1e-12);
        let eigs = d.eigenvalues();
        assert!((eigs[0].1 - 2.0).abs() < 1e-12);
        assert_eq!(eigs[0].0, vec![1, 1]);
        // Sorted nondecreasing.
        for w in eigs.windows(2) {
            assert!(w[0].1 <= w[1].1 + 1e-14);
        }
    }

    #[test]
    fn long_interval_eigenvalue() {
        let d = DomainSpec::new(&[2.0 * PI], &[2]).unwrap();
        assert!((d.lambda_1() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn norms_of_eigenfunctions() {
        let d = unit_interval(4);
        let u = SpectralField::eigenfunction(&d, &[1], 1.0).unwrap();
        assert!((u.sobolev_norm(0.0) - 1.0).abs() < 1e-14);
        assert!((u.sobolev_norm(1.0) - 1.0).abs() < 1e-14);
        let u2 = SpectralField::eigenfunction(&d, &[2], 1.0).unwrap();
        assert!((u2.sobolev_norm(-1.0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn poincare_holds_exactly() {
        let d = DomainSpec::new(&[1.5, 2.5], &[5, 4]).unwrap();
        let mut u = SpectralField::zeros(&d);
        let mut x = 0.3;
        for c in u.coeffs_mut().iter_mut() {
            x = (x * 7.13 + 0.17) % 1.0;
            *c = x - 0.5;
        }
        for &r in &[-1.0, -0.5, 0.0, 0.7, 1.0, 2.0] {
            let lhs = d.lambda_1() * u.sobolev_norm_sq(r);
            let rhs = u.sobolev_norm_sq(r + 1.0);
            assert!(lhs <= rhs * (1.0 + 1e-13), "r = {r}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn truncation_never_increases_norms() {
        let d = unit_interval(8);
        let mut u = SpectralField::zeros(&d);
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            *c = 1.0 / (i as f64 + 1.0);
        }
        let full = u.sobolev_norm_sq(1.3);
        let mut trunc = u.clone();
        for (i, c) in trunc.coeffs_mut().iter_mut().enumerate() {
            if i >= 4 {
                *c = 0.0;
            }
        }
        assert!(trunc.sobolev_norm_sq(1.3) <= full);
    }

    #[test]
    fn apply_a_power_roundtrip() {
        let d = DomainSpec::new(&[PI, 2.0], &[4, 3]).unwrap();
        let mut u = SpectralField::zeros(&d);
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            *c = (i as f64 + 1.0).sin();
        }
        let id = u.apply_a_power(0.0);
        let back = u.apply_a_power(0.7).apply_a_power(-0.7);
        for (a, b) in id.coeffs().iter().zip(u.coeffs().iter()) {
            assert_eq!(a, b);
        }
        for (a, b) in back.coeffs().iter().zip(u.coeffs().iter()) {
            assert!((a - b).abs() < 1e-13 * (1.0 + b.abs()));
        }
        let e1 = SpectralField::eigenfunction(&unit_interval(4), &[1], 1.0).unwrap();
        let ae1 = e1.apply_a_power(1.0);
        assert!((ae1.coeffs()[IxDyn(&[0])] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_roundtrip_single_and_double_mode() {
        let d = unit_interval(6);
        let t = d.transform(2);
        let u = SpectralField::eigenfunction(&d, &[3], 2.0).unwrap();
        let back = t.from_grid(&t.to_grid(&u)).unwrap();
        for (a, b) in back.coeffs().iter().zip(u.coeffs().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut v = SpectralField::eigenfunction(&d, &[1], 1.0).unwrap();
        v.axpy(0.5, &SpectralField::eigenfunction(&d, &[5], 1.0).unwrap());
        let back = t.from_grid(&t.to_grid(&v)).unwrap();
        let err = back
            .coeffs()
            .iter()
            .zip(v.coeffs().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn cube_of_one_mode_matches_sine_expansion() {
        // sin^3(x) = (3 sin x - sin 3x)/4. With normalized basis on (0, pi):
        // (c phi_1)^3 = c^3 (2/pi) (3 phi_1 - phi_3)/4.
        let d = unit_interval(8);
        let t = d.transform(2);
        let c = 1.7;
        let u = SpectralField::eigenfunction(&d, &[1], c).unwrap();
        let cubed = t.pointwise(&u, |x| x * x * x);
        let scale = c * c * c * (2.0 / PI) / 4.0;
        let expect_1 = 3.0 * scale;
        let expect_3 = -scale;
        for (idx, &got) in cubed.coeffs().indexed_iter() {
            let want = match idx[0] {
                0 => expect_1,
                2 => expect_3,
                _ => 0.0,
            };
            assert!(
                (got - want).abs() < 1e-10,
                "mode {}: got {got}, want {want}",
                idx[0] + 1
            );
        }
    }

    #[test]
    fn parseval_inner_product_matches_quadrature() {
        let d = DomainSpec::new(&[PI, 1.3], &[6, 5]).unwrap();
        let t = d.transform(2);
        let mut u = SpectralField::zeros(&d);
        let mut v = SpectralField::zeros(&d);
        let mut x = 0.11;
        for c in u.coeffs_mut().iter_mut() {
            x = (x * 3.77 + 0.29) % 1.0;
            *c = x - 0.5;
        }
        for c in v.coeffs_mut().iter_mut() {
            x = (x * 3.77 + 0.29) % 1.0;
            *c = x - 0.5;
        }
        for &r in &[0.0, 1.0] {
            let spectral = u.inner(&v, r);
            let ga = t.to_grid(&u.apply_a_power(r / 2.0));
            let gb = t.to_grid(&v.apply_a_power(r / 2.0));
            let quad = t.inner_grid(&ga, &gb);
            assert!(
                (spectral - quad).abs() < 1e-10 * (1.0 + spectral.abs()),
                "r = {r}: {spectral} vs {quad}"
            );
        }
    }
}
