//! Trivariate tensor-product B-spline scalar functions, LSPIA fitting of
//! sampled TPMS data, and symmetric/periodic extension to all of space.

use crate::nodal::{fold, NodalField, SolidType};
use crate::{Box3, Error, Result, ScalarField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Highest supported B-spline order (degree + 1).
const MAX_ORDER: usize = 8;

const DOMAIN_SLACK: f64 = 1e-12;

/// Uniform clamped knot vector on [0,1] for `n` coefficients of degree `p`.
fn uniform_clamped_knots(n: usize, p: usize) -> Vec<f64> {
    let mut knots = Vec::with_capacity(n + p + 1);
    let interior = n - p; // number of spans
    for _ in 0..=p {
        knots.push(0.0);
    }
    for i in 1..interior {
        knots.push(i as f64 / interior as f64);
    }
    for _ in 0..=p {
        knots.push(1.0);
    }
    knots
}

/// Knot span index such that knots[span] <= u < knots[span+1], with u = 1
/// mapped to the last non-empty span.
fn find_span(knots: &[f64], n: usize, p: usize, u: f64) -> usize {
    if u >= knots[n] {
        return n - 1;
    }
    let mut lo = p;
    let mut hi = n;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Nonzero basis functions N_{span-p..=span} at u (deBoor-Cox recursion).
fn basis_funs(knots: &[f64], span: usize, p: usize, u: f64, out: &mut [f64; MAX_ORDER]) {
    let mut left = [0.0f64; MAX_ORDER];
    let mut right = [0.0f64; MAX_ORDER];
    out[0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        out[j] = saved;
    }
}

/// Precomputed per-axis collocation data for a list of parameter values:
/// for each parameter, the first supporting coefficient index and the
/// `degree + 1` nonzero basis weights.
#[derive(Debug, Clone)]
pub struct AxisTable {
    pub order: usize,
    pub first: Vec<u32>,
    pub weights: Vec<f64>,
}

impl AxisTable {
    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        (self.first[i] as usize, &self.weights[i * self.order..(i + 1) * self.order])
    }

    /// Column sums sum_l B_j(u_l) for every coefficient index j.
    pub fn column_sums(&self, n: usize) -> Vec<f64> {
        let mut sums = vec![0.0; n];
        for i in 0..self.len() {
            let (first, w) = self.row(i);
            for (k, &wk) in w.iter().enumerate() {
                sums[first + k] += wk;
            }
        }
        sums
    }
}

/// Tensor-product B-spline scalar function over [0,1]^3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrivariateSpline {
    degrees: [usize; 3],
    knots: [Vec<f64>; 3],
    dims: [usize; 3],
    /// Control coefficients flattened k-fastest: index (i*n_v + j)*n_w + k.
    coefficients: Vec<f64>,
}

impl TrivariateSpline {
    /// Spline with uniform clamped knots and all coefficients set to `value`.
    pub fn constant(degrees: [usize; 3], dims: [usize; 3], value: f64) -> Result<Self> {
        for a in 0..3 {
            if degrees[a] == 0 || degrees[a] >= MAX_ORDER {
                return Err(Error::Domain(format!("unsupported degree {}", degrees[a])));
            }
            if dims[a] <= degrees[a] {
                return Err(Error::Domain(format!(
                    "need more than degree+1 coefficients per axis, got {} for degree {}",
                    dims[a], degrees[a]
                )));
            }
        }
        let knots = [
            uniform_clamped_knots(dims[0], degrees[0]),
            uniform_clamped_knots(dims[1], degrees[1]),
            uniform_clamped_knots(dims[2], degrees[2]),
        ];
        Ok(Self {
            degrees,
            knots,
            dims,
            coefficients: vec![value; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn degrees(&self) -> [usize; 3] {
        self.degrees
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn knots(&self, axis: usize) -> &[f64] {
        &self.knots[axis]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn coeff_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Greville abscissa of coefficient `i` on `axis`.
    pub fn greville(&self, axis: usize, i: usize) -> f64 {
        let p = self.degrees[axis];
        let t = &self.knots[axis];
        t[i + 1..i + 1 + p].iter().sum::<f64>() / p as f64
    }

    fn clamp_param(&self, u: f64, axis: usize) -> Result<f64> {
        if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&u) {
            return Err(Error::Domain(format!(
                "parameter {u} outside [0,1] on axis {axis}"
            )));
        }
        Ok(u.clamp(0.0, 1.0))
    }

    fn axis_row(&self, axis: usize, u: f64) -> (usize, [f64; MAX_ORDER]) {
        let p = self.degrees[axis];
        let span = find_span(&self.knots[axis], self.dims[axis], p, u);
        let mut w = [0.0; MAX_ORDER];
        basis_funs(&self.knots[axis], span, p, u, &mut w);
        (span - p, w)
    }

    /// Tensor-product deBoor-Cox evaluation at (u,v,w) in [0,1]^3.
    pub fn eval(&self, uvw: [f64; 3]) -> Result<f64> {
        let u = self.clamp_param(uvw[0], 0)?;
        let v = self.clamp_param(uvw[1], 1)?;
        let w = self.clamp_param(uvw[2], 2)?;
        let (fu, bu) = self.axis_row(0, u);
        let (fv, bv) = self.axis_row(1, v);
        let (fw, bw) = self.axis_row(2, w);
        let [_, nv, nw] = self.dims;
        let mut sum = 0.0;
        for i in 0..=self.degrees[0] {
            let mut si = 0.0;
            let base_i = (fu + i) * nv;
            for j in 0..=self.degrees[1] {
                let base = (base_i + fv + j) * nw + fw;
                let mut sj = 0.0;
                for k in 0..=self.degrees[2] {
                    sj += bw[k] * self.coefficients[base + k];
                }
                si += bv[j] * sj;
            }
            sum += bu[i] * si;
        }
        Ok(sum)
    }

    /// Exactly the nonzero blending bases R_ijk at (u,v,w) with their values.
    pub fn blending_weights(&self, uvw: [f64; 3]) -> Result<Vec<((usize, usize, usize), f64)>> {
        let u = self.clamp_param(uvw[0], 0)?;
        let v = self.clamp_param(uvw[1], 1)?;
        let w = self.clamp_param(uvw[2], 2)?;
        let (fu, bu) = self.axis_row(0, u);
        let (fv, bv) = self.axis_row(1, v);
        let (fw, bw) = self.axis_row(2, w);
        let mut out = Vec::with_capacity(
            (self.degrees[0] + 1) * (self.degrees[1] + 1) * (self.degrees[2] + 1),
        );
        for i in 0..=self.degrees[0] {
            for j in 0..=self.degrees[1] {
                for k in 0..=self.degrees[2] {
                    out.push(((fu + i, fv + j, fw + k), bu[i] * bv[j] * bw[k]));
                }
            }
        }
        Ok(out)
    }

    /// Collocation table for a list of parameters on `axis`.
    pub fn axis_table(&self, axis: usize, params: &[f64]) -> Result<AxisTable> {
        let p = self.degrees[axis];
        let mut first = Vec::with_capacity(params.len());
        let mut weights = Vec::with_capacity(params.len() * (p + 1));
        for &u in params {
            let u = self.clamp_param(u, axis)?;
            let (f, w) = self.axis_row(axis, u);
            first.push(f as u32);
            weights.extend_from_slice(&w[..=p]);
        }
        Ok(AxisTable { order: p + 1, first, weights })
    }

    /// Evaluate on the tensor grid of three collocation tables
    /// (z-fastest layout), in parallel over the slowest axis.
    pub fn eval_on_tables(&self, tx: &AxisTable, ty: &AxisTable, tz: &AxisTable) -> Vec<f64> {
        let (nx, ny, nz) = (tx.len(), ty.len(), tz.len());
        let [_, cv, cw] = self.dims;
        let coeff = &self.coefficients;
        let mut out = vec![0.0; nx * ny * nz];
        out.par_chunks_mut(ny * nz).enumerate().for_each(|(ix, slab)| {
            let (fu, bu) = tx.row(ix);
            for iy in 0..ny {
                let (fv, bv) = ty.row(iy);
                for iz in 0..nz {
                    let (fw, bw) = tz.row(iz);
                    let mut sum = 0.0;
                    for (i, &wu) in bu.iter().enumerate() {
                        let base_i = (fu + i) * cv;
                        let mut si = 0.0;
                        for (j, &wv) in bv.iter().enumerate() {
                            let base = (base_i + fv + j) * cw + fw;
                            let mut sj = 0.0;
                            for (k, &ww) in bw.iter().enumerate() {
                                sj += ww * coeff[base + k];
                            }
                            si += wv * sj;
                        }
                        sum += wu * si;
                    }
                    slab[iy * nz + iz] = sum;
                }
            }
        });
        out
    }
}

/// Values of a scalar field sampled on the closed uniform lattice of a box
/// (both faces included), z-fastest layout.
#[derive(Debug, Clone)]
pub struct SampledGrid {
    pub resolution: usize,
    pub bounds: Box3,
    pub values: Vec<f64>,
}

impl SampledGrid {
    pub fn new(resolution: usize, bounds: Box3, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Domain("resolution must be >= 2".into()));
        }
        if values.len() != resolution.pow(3) {
            return Err(Error::Domain("value count does not match resolution^3".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self { resolution, bounds, values })
    }

    /// Uniform parameters 0, 1/(S-1), ..., 1 used as B-spline collocation
    /// sites for this grid.
    pub fn params(&self) -> Vec<f64> {
        let s = self.resolution;
        (0..s).map(|i| i as f64 / (s - 1) as f64).collect()
    }
}

/// Sample `to_rod_form(field)` on the closed lattice of `bounds`.
pub fn sample_nodal(
    field: &NodalField,
    solid_type: SolidType,
    bounds: Box3,
    resolution: usize,
) -> Result<SampledGrid> {
    if resolution < 2 {
        return Err(Error::Domain("resolution must be >= 2".into()));
    }
    if bounds.is_degenerate() {
        return Err(Error::Domain("degenerate sampling box".into()));
    }
    let s = resolution;
    let rod = field.rod_form(solid_type);
    let mut values = vec![0.0; s * s * s];
    values.par_chunks_mut(s * s).enumerate().for_each(|(ix, slab)| {
        for iy in 0..s {
            for iz in 0..s {
                let p = bounds.lattice_point([ix, iy, iz], [s, s, s]);
                slab[iy * s + iz] = rod.value(p);
            }
        }
    });
    SampledGrid::new(s, bounds, values)
}

/// Result of an LSPIA fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spline: TrivariateSpline,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-squares progressive-iterative approximation of a sampled grid.
///
/// Each sweep redistributes the data residuals onto the control coefficients
/// with a diagonally preconditioned step (per-coefficient residual sums
/// normalized by collocation column sums), which keeps the data MSE
/// non-increasing. Stops when the largest coefficient change drops below
/// `tol` or after `max_iters` sweeps; non-convergence returns the best
/// iterate with `converged = false`.
pub fn fit_lspia(
    data: &SampledGrid,
    degrees: [usize; 3],
    lattice_dims: [usize; 3],
    max_iters: usize,
    tol: f64,
) -> Result<FitResult> {
    let s = data.resolution;
    for a in 0..3 {
        if lattice_dims[a] > s {
            return Err(Error::Domain(format!(
                "lattice dim {} exceeds sample resolution {} on axis {a}",
                lattice_dims[a], s
            )));
        }
        if degrees[a] >= lattice_dims[a] {
            return Err(Error::Domain(format!(
                "degree {} not below lattice dim {} on axis {a}",
                degrees[a], lattice_dims[a]
            )));
        }
    }
    let mut spline = TrivariateSpline::constant(degrees, lattice_dims, 0.0)?;
    let params = data.params();
    let tables = [
        spline.axis_table(0, &params)?,
        spline.axis_table(1, &params)?,
        spline.axis_table(2, &params)?,
    ];

    // Column sums factorize over the tensor parameter grid.
    let axis_sums: Vec<Vec<f64>> =
        (0..3).map(|a| tables[a].column_sums(lattice_dims[a])).collect();

    // Seed each coefficient with the data value nearest its Greville point.
    let [nu, nv, nw] = lattice_dims;
    let nearest = |axis: usize, i: usize, sp: &TrivariateSpline| -> usize {
        (sp.greville(axis, i) * (s - 1) as f64).round() as usize
    };
    for i in 0..nu {
        let gi = nearest(0, i, &spline);
        for j in 0..nv {
            let gj = nearest(1, j, &spline);
            for k in 0..nw {
                let gk = nearest(2, k, &spline);
                let idx = spline.coeff_index(i, j, k);
                spline.coefficients_mut()[idx] = data.values[(gi * s + gj) * s + gk];
            }
        }
    }

    let ncoef = nu * nv * nw;
    let npts = s * s * s;
    let mut mse = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..max_iters {
        iterations = iter + 1;
        let fitted = spline.eval_on_tables(&tables[0], &tables[1], &tables[2]);
        // Accumulate residual sums per coefficient and the squared residual.
        let (delta_raw, sq_sum) = (0..s)
            .into_par_iter()
            .fold(
                || (vec![0.0f64; ncoef], 0.0f64),
                |(mut acc, mut sq), ix| {
                    let (fu, bu) = tables[0].row(ix);
                    for iy in 0..s {
                        let (fv, bv) = tables[1].row(iy);
                        for iz in 0..s {
                            let l = (ix * s + iy) * s + iz;
                            let r = data.values[l] - fitted[l];
                            sq += r * r;
                            let (fw, bw) = tables[2].row(iz);
                            for (i, &wu) in bu.iter().enumerate() {
                                let base_i = (fu + i) * nv;
                                let rwu = r * wu;
                                for (j, &wv) in bv.iter().enumerate() {
                                    let base = (base_i + fv + j) * nw + fw;
                                    let rwv = rwu * wv;
                                    for (k, &ww) in bw.iter().enumerate() {
                                        acc[base + k] += rwv * ww;
                                    }
                                }
                            }
                        }
                    }
                    (acc, sq)
                },
            )
            .reduce(
                || (vec![0.0f64; ncoef], 0.0f64),
                |(mut a, sa), (b, sb)| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    (a, sa + sb)
                },
            );
        mse = sq_sum / npts as f64;

        let mut max_step = 0.0f64;
        {
            let coeff = spline.coefficients_mut();
            for i in 0..nu {
                for j in 0..nv {
                    for k in 0..nw {
                        let idx = (i * nv + j) * nw + k;
                        let col = axis_sums[0][i] * axis_sums[1][j] * axis_sums[2][k];
                        if col > 0.0 {
                            let step = delta_raw[idx] / col;
                            coeff[idx] += step;
                            max_step = max_step.max(step.abs());
                        }
                    }
                }
            }
        }
        if max_step < tol {
            converged = true;
            break;
        }
    }
    if converged || max_iters == 0 {
        // Refresh MSE for the final coefficients.
        let fitted = spline.eval_on_tables(&tables[0], &tables[1], &tables[2]);
        mse = fitted
            .par_iter()
            .zip(&data.values)
            .map(|(f, v)| (v - f) * (v - f))
            .sum::<f64>()
            / npts as f64;
    }
    Ok(FitResult { spline, mse, iterations, converged })
}

/// How a [0,1]^3 spline is extended to all of space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    /// Half-unit fit; F(x) = spline(reflect(translate(x))) per axis,
    /// period 2, mirror-invariant by construction.
    HalfUnitReflective,
    /// Complete-unit fit; F(x) = spline(x mod 1) per axis, period 1.
    CompleteUnitPeriodic,
}

/// TPMS over all of space built from a trivariate spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedField {
    pub spline: TrivariateSpline,
    pub symmetry: Symmetry,
}

impl ExtendedField {
    /// Spatial period per axis in normalized coordinates.
    pub fn period(&self) -> f64 {
        match self.symmetry {
            Symmetry::HalfUnitReflective => 2.0,
            Symmetry::CompleteUnitPeriodic => 1.0,
        }
    }

    /// Physical length (for unit frequencies) represented by one unit of the
    /// parametric domain: pi for the half-unit fit, 2*pi for the complete fit.
    pub fn physical_scale(&self) -> f64 {
        match self.symmetry {
            Symmetry::HalfUnitReflective => std::f64::consts::PI,
            Symmetry::CompleteUnitPeriodic => 2.0 * std::f64::consts::PI,
        }
    }

    /// Map one spatial coordinate into the spline's [0,1] parameter domain.
    pub fn param_of(&self, x: f64) -> f64 {
        match self.symmetry {
            Symmetry::HalfUnitReflective => fold(x, 1.0),
            Symmetry::CompleteUnitPeriodic => x - x.floor(),
        }
    }
}

impl ScalarField for ExtendedField {
    fn value(&self, p: [f64; 3]) -> f64 {
        let uvw = [self.param_of(p[0]), self.param_of(p[1]), self.param_of(p[2])];
        // Parameters are inside [0,1] by construction.
        self.spline.eval(uvw).expect("folded parameter in domain")
    }
}

/// Map translate-then-reflect per axis and evaluate the spline.
pub fn eval_extended(field: &ExtendedField, xyz: [f64; 3]) -> Result<f64> {
    if xyz.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("non-finite coordinates {xyz:?}")));
    }
    Ok(field.value(xyz))
}

/// A fitted extension plus its fitting report.
#[derive(Debug, Clone)]
pub struct FittedField {
    pub field: ExtendedField,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn fit_box(
    field: &NodalField,
    solid_type: SolidType,
    lattice_dims: [usize; 3],
    resolution: usize,
    bounds: Box3,
    symmetry: Symmetry,
) -> Result<FittedField> {
    let data = sample_nodal(field, solid_type, bounds, resolution)?;
    let fit = fit_lspia(&data, [3, 3, 3], lattice_dims, 500, 1e-8)?;
    Ok(FittedField {
        field: ExtendedField { spline: fit.spline, symmetry },
        mse: fit.mse,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

/// Fit the half unit [0,pi]^3 and wrap it as a reflective extension.
pub fn fit_partial(
    field: &NodalField,
    solid_type: SolidType,
    lattice_dims: [usize; 3],
    resolution: usize,
) -> Result<FittedField> {
    let hp = field.half_period();
    let bounds = Box3::new([0.0; 3], hp);
    fit_box(field, solid_type, lattice_dims, resolution, bounds, Symmetry::HalfUnitReflective)
}

/// Fit the complete unit [0,2pi]^3 and wrap it as a periodic extension.
pub fn fit_complete(
    field: &NodalField,
    solid_type: SolidType,
    lattice_dims: [usize; 3],
    resolution: usize,
) -> Result<FittedField> {
    let hp = field.half_period();
    let bounds = Box3::new([0.0; 3], [2.0 * hp[0], 2.0 * hp[1], 2.0 * hp[2]]);
    fit_box(field, solid_type, lattice_dims, resolution, bounds, Symmetry::CompleteUnitPeriodic)
}
