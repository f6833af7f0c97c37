//! Extension of the effective threshold range by adaptive gradient descent
//! on the spline control coefficients, driven by a topological loss on the
//! determining persistence pairs plus a weighted similarity quadrature.

use crate::etr::{extract_etr, EtrReport};
use crate::nodal::{NodalField, SolidType};
use crate::persistence::{compute_persistence, FiltrationGrid, PersistenceDiagram};
use crate::spline::{fit_lspia, AxisTable, ExtendedField, SampledGrid, TrivariateSpline};
use crate::{Box3, Error, Result, ScalarField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which objective drives the coefficient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    /// L = (1-alpha) * L_top + alpha * L_sim with fixed range targets.
    Target,
    /// L0 = -(b0_2 - d1_0): unbounded range widening, no similarity term.
    /// Kept as a negative control; it does not converge.
    UnboundedGap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Expansion ratio mu: targets are c_min0 - mu*l0 and c_max0 + mu*l0.
    pub mu: f64,
    /// Weight of the similarity term in [0,1].
    pub alpha: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop when |dL| stays below this for 5 consecutive iterations.
    pub convergence_tol: f64,
    /// Vertices per axis of the persistence filtration grid.
    pub persistence_resolution: usize,
    /// Samples per axis when fitting the region indicator g_A.
    pub indicator_resolution: usize,
    /// Control lattice of the indicator spline.
    pub indicator_dims: [usize; 3],
    /// Midpoint quadrature points per axis for the similarity loss.
    pub quadrature_resolution: usize,
    pub filter_eps: f64,
    pub filter_count: usize,
    /// Marching-tetrahedra resolution for the final density report.
    pub mesh_resolution: usize,
    /// Sample count N of the post-run similarity error.
    pub esim_samples: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mu: 0.3,
            alpha: 0.5,
            learning_rate: 0.3,
            max_iters: 500,
            convergence_tol: 1e-6,
            persistence_resolution: 64,
            indicator_resolution: 60,
            indicator_dims: [10, 10, 10],
            quadrature_resolution: 48,
            filter_eps: 0.1,
            filter_count: 1,
            mesh_resolution: 96,
            esim_samples: 100_000,
            seed: 0,
            loss_mode: LossMode::Target,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Domain(format!("expansion ratio must be > 0, got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("weight must lie in [0,1], got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain("learning rate must be > 0".into()));
        }
        if self.persistence_resolution < 2 {
            return Err(Error::Domain("persistence resolution must be >= 2".into()));
        }
        if self.quadrature_resolution == 0 || self.indicator_resolution < 2 {
            return Err(Error::Domain("quadrature/indicator resolutions too small".into()));
        }
        if !(self.convergence_tol > 0.0) || !self.filter_eps.is_finite() {
            return Err(Error::Domain("invalid tolerance".into()));
        }
        Ok(())
    }

    /// Target interval [c_min, c_max] derived from the original ETR.
    pub fn targets(&self, etr0: (f64, f64)) -> (f64, f64) {
        let l0 = etr0.1 - etr0.0;
        (etr0.0 - self.mu * l0, etr0.1 + self.mu * l0)
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub l: f64,
    pub l_top: f64,
    pub l_sim: f64,
    pub d1_0: f64,
    pub b0_2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when L grew past ten times its initial value and the run aborted.
    pub diverged: bool,
    /// Iterations where a determining pair was missing and its topological
    /// gradient term contributed nothing.
    pub missing_pair_iterations: usize,
    pub final_etr: EtrReport,
    pub final_esim: f64,
}

impl OptimizationTrace {
    /// Iteration rows as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,l,l_top,l_sim,d1_0,b0_2\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.l, r.l_top, r.l_sim, r.d1_0, r.b0_2
            ));
        }
        out
    }
}

/// Topological loss against the target interval.
pub fn loss_top(d1_0: f64, b0_2: f64, targets: (f64, f64)) -> f64 {
    let a = d1_0 - targets.0;
    let b = b0_2 - targets.1;
    a * a + b * b
}

/// Fit a B-spline approximation g_A of the indicator of the effective
/// region A = { u in [0,1]^3 : c_min0 <= Phi(scale*u) <= c_max0 } from
/// `resolution`^3 lattice samples. The fitted values are used raw.
pub fn fit_indicator(
    field: &NodalField,
    solid_type: SolidType,
    etr0: (f64, f64),
    resolution: usize,
    lattice_dims: [usize; 3],
) -> Result<TrivariateSpline> {
    if resolution < 2 {
        return Err(Error::Domain("indicator resolution must be >= 2".into()));
    }
    let hp = field.half_period();
    let rod = field.rod_form(solid_type);
    let s = resolution;
    let mut values = vec![0.0; s * s * s];
    values.par_chunks_mut(s * s).enumerate().for_each(|(ix, slab)| {
        let x = ix as f64 / (s - 1) as f64 * hp[0];
        for iy in 0..s {
            let y = iy as f64 / (s - 1) as f64 * hp[1];
            for iz in 0..s {
                let z = iz as f64 / (s - 1) as f64 * hp[2];
                let v = rod.value([x, y, z]);
                slab[iy * s + iz] = if (etr0.0..=etr0.1).contains(&v) { 1.0 } else { 0.0 };
            }
        }
    });
    let data = SampledGrid::new(s, Box3::cube(0.0, 1.0), values)?;
    let fit = fit_lspia(&data, [3, 3, 3], lattice_dims, 500, 1e-8)?;
    Ok(fit.spline)
}

/// Midpoint-rule quadrature of (C_P - Phi)^2 * g_A over [0,1]^3.
pub fn loss_sim(
    spline: &TrivariateSpline,
    reference: &NodalField,
    solid_type: SolidType,
    g_a: &TrivariateSpline,
    quadrature_resolution: usize,
) -> Result<f64> {
    let quad = QuadratureCache::new(spline, reference, solid_type, g_a, quadrature_resolution)?;
    Ok(quad.loss(spline))
}

/// Pre-sampled quadrature data: the reference field and g_A never change
/// across iterations, only the optimized spline does.
struct QuadratureCache {
    table: AxisTable,
    resolution: usize,
    phi: Vec<f64>,
    g: Vec<f64>,
}

impl QuadratureCache {
    fn new(
        spline: &TrivariateSpline,
        reference: &NodalField,
        solid_type: SolidType,
        g_a: &TrivariateSpline,
        resolution: usize,
    ) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Domain("quadrature resolution must be >= 1".into()));
        }
        let q = resolution;
        let params: Vec<f64> = (0..q).map(|i| (i as f64 + 0.5) / q as f64).collect();
        let table = spline.axis_table(0, &params)?;
        let tg = [
            g_a.axis_table(0, &params)?,
            g_a.axis_table(1, &params)?,
            g_a.axis_table(2, &params)?,
        ];
        let g = g_a.eval_on_tables(&tg[0], &tg[1], &tg[2]);
        let hp = reference.half_period();
        let rod = reference.rod_form(solid_type);
        let mut phi = vec![0.0; q * q * q];
        phi.par_chunks_mut(q * q).enumerate().for_each(|(ix, slab)| {
            for iy in 0..q {
                for iz in 0..q {
                    let p = [params[ix] * hp[0], params[iy] * hp[1], params[iz] * hp[2]];
                    slab[iy * q + iz] = rod.value(p);
                }
            }
        });
        Ok(Self { table, resolution: q, phi, g })
    }

    fn loss(&self, spline: &TrivariateSpline) -> f64 {
        let cp = spline.eval_on_tables(&self.table, &self.table, &self.table);
        let n = cp.len() as f64;
        cp.par_iter()
            .zip(&self.phi)
            .zip(&self.g)
            .map(|((c, p), g)| (c - p) * (c - p) * g)
            .sum::<f64>()
            / n
    }

    /// Gradient of the quadrature loss w.r.t. every control coefficient.
    fn gradient(&self, spline: &TrivariateSpline) -> Vec<f64> {
        let q = self.resolution;
        let [_, nv, nw] = spline.dims();
        let ncoef = spline.coefficients().len();
        let cp = spline.eval_on_tables(&self.table, &self.table, &self.table);
        let scale = 2.0 / (q * q * q) as f64;
        (0..q)
            .into_par_iter()
            .fold(
                || vec![0.0f64; ncoef],
                |mut acc, ix| {
                    let (fu, bu) = self.table.row(ix);
                    for iy in 0..q {
                        let (fv, bv) = self.table.row(iy);
                        for iz in 0..q {
                            let l = (ix * q + iy) * q + iz;
                            let r = scale * (cp[l] - self.phi[l]) * self.g[l];
                            if r == 0.0 {
                                continue;
                            }
                            let (fw, bw) = self.table.row(iz);
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
                    acc
                },
            )
            .reduce(
                || vec![0.0f64; ncoef],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            )
    }
}

/// The current iterate's losses and determining-pair locations (parameter
/// coordinates in [0,1]^3, already folded into the spline domain).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub l: f64,
    pub l_top: f64,
    pub l_sim: f64,
    pub d1_0: f64,
    pub b0_2: f64,
    pub tau: Option<[f64; 3]>,
    pub sigma: Option<[f64; 3]>,
    pub missing_pair: bool,
}

/// Everything about the objective that stays fixed while the coefficients
/// move: the persistence box and collocation tables, the pre-sampled
/// quadrature data, the targets, and the filter settings.
pub struct Objective {
    symmetry_period: f64,
    bounds: Box3,
    dims: [usize; 3],
    grid_table: AxisTable,
    quad: QuadratureCache,
    pub targets: (f64, f64),
    alpha: f64,
    mode: LossMode,
    filter_eps: f64,
    filter_count: usize,
}

impl Objective {
    pub fn new(
        initial: &ExtendedField,
        reference: &NodalField,
        solid_type: SolidType,
        etr0: (f64, f64),
        g_a: &TrivariateSpline,
        config: &OptimizerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if etr0.1 <= etr0.0 {
            return Err(Error::Domain(format!(
                "original ETR [{}, {}] is empty",
                etr0.0, etr0.1
            )));
        }
        // Two spatial periods per axis: 2x2x2 complete TPMS units.
        let period = initial.period();
        let bounds = Box3::cube(0.0, 2.0 * period);
        let n = config.persistence_resolution;
        let dims = [n, n, n];
        let params: Vec<f64> = (0..n)
            .map(|i| {
                let x = bounds.min[0] + i as f64 / (n - 1) as f64 * (bounds.max[0] - bounds.min[0]);
                initial.param_of(x)
            })
            .collect();
        let grid_table = initial.spline.axis_table(0, &params)?;
        let quad = QuadratureCache::new(
            &initial.spline,
            reference,
            solid_type,
            g_a,
            config.quadrature_resolution,
        )?;
        Ok(Self {
            symmetry_period: period,
            bounds,
            dims,
            grid_table,
            quad,
            targets: config.targets(etr0),
            alpha: config.alpha,
            mode: config.loss_mode,
            filter_eps: config.filter_eps,
            filter_count: config.filter_count,
        })
    }

    fn param_of(&self, x: f64) -> f64 {
        if self.symmetry_period == 2.0 {
            crate::nodal::fold(x, 1.0)
        } else {
            x - x.floor()
        }
    }

    /// Losses and determining pairs at the current coefficients. Also
    /// returns the diagram so callers can inspect it.
    pub fn evaluate(&self, spline: &TrivariateSpline) -> Result<(Evaluation, PersistenceDiagram)> {
        let values = spline.eval_on_tables(&self.grid_table, &self.grid_table, &self.grid_table);
        let grid = FiltrationGrid::new(self.dims, self.bounds, values)?;
        let diagram = compute_persistence(&grid);
        let etr = extract_etr(&diagram, self.filter_eps, self.filter_count);
        let d1_0 = etr.c_min;
        let b0_2 = etr.c_max;

        let mut missing_pair = false;
        let tau = match &etr.min_pair {
            Some(p) => p.death_vertex.map(|v| self.vertex_param(&grid, v)),
            None => None,
        };
        if tau.is_none() {
            missing_pair = true;
        }
        // With no 2-dim pair the loss substitutes the global maximum, so the
        // gradient acts at the vertex realizing it and pulls it upward.
        let sigma = match &etr.max_pair {
            Some(p) => Some(self.vertex_param(&grid, p.birth_vertex)),
            None => {
                let (mut arg, mut best) = (0usize, f64::NEG_INFINITY);
                for (i, &v) in grid.vertex_values.iter().enumerate() {
                    if v > best || (v == best && i > arg) {
                        best = v;
                        arg = i;
                    }
                }
                Some(self.vertex_param(&grid, arg))
            }
        };

        let l_top = loss_top(d1_0, b0_2, self.targets);
        let (l, l_sim) = match self.mode {
            LossMode::Target => {
                let l_sim = self.quad.loss(spline);
                ((1.0 - self.alpha) * l_top + self.alpha * l_sim, l_sim)
            }
            LossMode::UnboundedGap => (-(b0_2 - d1_0), 0.0),
        };
        Ok((
            Evaluation { l, l_top, l_sim, d1_0, b0_2, tau, sigma, missing_pair },
            diagram,
        ))
    }

    fn vertex_param(&self, grid: &FiltrationGrid, vertex: usize) -> [f64; 3] {
        let p = grid.vertex_position(vertex);
        [self.param_of(p[0]), self.param_of(p[1]), self.param_of(p[2])]
    }

    /// Full loss gradient at `spline` given its evaluation.
    pub fn gradient(&self, spline: &TrivariateSpline, eval: &Evaluation) -> Result<Vec<f64>> {
        let ncoef = spline.coefficients().len();
        let mut grad = vec![0.0; ncoef];
        let [_, nv, nw] = spline.dims();
        let add_stencil = |at: [f64; 3], factor: f64, grad: &mut [f64]| -> Result<()> {
            if factor == 0.0 {
                return Ok(());
            }
            for ((i, j, k), w) in spline.blending_weights(at)? {
                grad[(i * nv + j) * nw + k] += factor * w;
            }
            Ok(())
        };
        match self.mode {
            LossMode::Target => {
                let w_top = 1.0 - self.alpha;
                if let Some(tau) = eval.tau {
                    add_stencil(tau, w_top * 2.0 * (eval.d1_0 - self.targets.0), &mut grad)?;
                }
                if let Some(sigma) = eval.sigma {
                    add_stencil(sigma, w_top * 2.0 * (eval.b0_2 - self.targets.1), &mut grad)?;
                }
                if self.alpha > 0.0 {
                    let gs = self.quad.gradient(spline);
                    for (g, s) in grad.iter_mut().zip(gs) {
                        *g += self.alpha * s;
                    }
                }
            }
            LossMode::UnboundedGap => {
                // dL0/d(d1_0) = +1, dL0/d(b0_2) = -1
                if let Some(tau) = eval.tau {
                    add_stencil(tau, 1.0, &mut grad)?;
                }
                if let Some(sigma) = eval.sigma {
                    add_stencil(sigma, -1.0, &mut grad)?;
                }
            }
        }
        Ok(grad)
    }
}

/// Combined loss gradient for a spline and its current evaluation.
pub fn grad_loss(
    objective: &Objective,
    spline: &TrivariateSpline,
    eval: &Evaluation,
) -> Result<Vec<f64>> {
    objective.gradient(spline, eval)
}

const ADAGRAD_STABILIZER: f64 = 1e-8;
const CONVERGENCE_STREAK: usize = 5;
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Extend the ETR of a fitted field toward the mu-expanded targets.
///
/// Per iteration: evaluate the field on the fixed 2x2x2-unit persistence
/// grid, compute the diagram, take the current d1(0,-) / b0(2,+), form the
/// loss and its gradient, and apply an accumulated-squared-gradient
/// (Adagrad) step of rate `learning_rate`. Stops once |dL| stays below
/// `convergence_tol` for 5 consecutive iterations, at `max_iters`, or when
/// the loss grows past ten times its initial value (`diverged` flag).
pub fn optimize(
    initial: &ExtendedField,
    reference: &NodalField,
    solid_type: SolidType,
    etr0: (f64, f64),
    config: &OptimizerConfig,
) -> Result<(ExtendedField, OptimizationTrace)> {
    config.validate()?;
    let g_a = fit_indicator(
        reference,
        solid_type,
        etr0,
        config.indicator_resolution,
        config.indicator_dims,
    )?;
    let objective = Objective::new(initial, reference, solid_type, etr0, &g_a, config)?;

    let mut field = initial.clone();
    let ncoef = field.spline.coefficients().len();
    // Accumulated squared gradient norm (AdaGrad-Norm). Per-coefficient
    // accumulators degenerate to fixed-size sign steps here, because most
    // coefficients only ever see tiny similarity gradients; a global
    // accumulator keeps the update proportional to the gradient.
    let mut accum = 0.0f64;
    let mut records = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut missing_pair_iterations = 0;
    let mut streak = 0;
    let mut initial_l = f64::NAN;
    let mut prev_l = f64::NAN;

    for iter in 0..config.max_iters {
        let (eval, _) = objective.evaluate(&field.spline)?;
        records.push(IterationRecord {
            iter,
            l: eval.l,
            l_top: eval.l_top,
            l_sim: eval.l_sim,
            d1_0: eval.d1_0,
            b0_2: eval.b0_2,
        });
        if eval.missing_pair {
            missing_pair_iterations += 1;
        }
        if iter == 0 {
            initial_l = eval.l;
        } else {
            if eval.l > DIVERGENCE_FACTOR * initial_l.abs() + ADAGRAD_STABILIZER {
                diverged = true;
                break;
            }
            if (eval.l - prev_l).abs() < config.convergence_tol {
                streak += 1;
                if streak >= CONVERGENCE_STREAK {
                    converged = true;
                    break;
                }
            } else {
                streak = 0;
            }
        }
        prev_l = eval.l;

        let grad = objective.gradient(&field.spline, &eval)?;
        accum += grad.iter().map(|g| g * g).sum::<f64>();
        let scale = config.learning_rate / (accum.sqrt() + ADAGRAD_STABILIZER);
        let coeff = field.spline.coefficients_mut();
        for i in 0..ncoef {
            coeff[i] -= scale * grad[i];
        }
    }

    let bounds = Box3::cube(0.0, 2.0 * field.period());
    let n = config.persistence_resolution;
    let (final_etr, _) = crate::etr::analyze_field(
        &field,
        bounds,
        [n, n, n],
        config.mesh_resolution,
        config.filter_eps,
        config.filter_count,
    )?;
    let final_esim = similarity_error(
        &field,
        reference,
        solid_type,
        etr0,
        config.esim_samples,
        config.seed,
    )?;
    Ok((
        field,
        OptimizationTrace {
            records,
            converged,
            diverged,
            missing_pair_iterations,
            final_etr,
            final_esim,
        },
    ))
}

/// Mean squared difference between the optimized field and the reference,
/// restricted to points whose reference value lies inside the original ETR.
/// Uses `n` uniform samples of the unit parameter cube with a fixed seed.
pub fn similarity_error(
    optimized: &ExtendedField,
    reference: &NodalField,
    solid_type: SolidType,
    etr0: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    if n < 1000 {
        return Err(Error::Domain(format!("need at least 1000 samples, got {n}")));
    }
    let hp = reference.half_period();
    // One parameter unit spans the half unit for reflective fields and the
    // complete unit for periodic ones.
    let unit = optimized.physical_scale() / std::f64::consts::PI;
    let rod = reference.rod_form(solid_type);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0usize;
    let mut sq_sum = 0.0;
    for _ in 0..n {
        let u = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let phi = rod.value([unit * u[0] * hp[0], unit * u[1] * hp[1], unit * u[2] * hp[2]]);
        if !(etr0.0..=etr0.1).contains(&phi) {
            continue;
        }
        let f = optimized.value(u);
        sq_sum += (f - phi) * (f - phi);
        count += 1;
    }
    if count < 2 {
        return Err(Error::Numerical(
            "no samples fell inside the original effective region".into(),
        ));
    }
    Ok(sq_sum / (count - 1) as f64)
}
