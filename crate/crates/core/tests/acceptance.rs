//! Acceptance suite: one test per criterion, each printing a single
//! PASS line with the measured numbers once its assertions hold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use tpms_edr::etr::{analyze_field, density_at};
use tpms_edr::mesh::{enclosed_volume, marching_tetrahedra};
use tpms_edr::nodal::{NodalField, SolidType, TpmsKind};
use tpms_edr::optimizer::{
    fit_indicator, optimize, Objective, OptimizerConfig,
};
use tpms_edr::persistence::{
    betti_at, build_filtration, compute_persistence, FiltrationGrid, PersistenceDiagram,
};
use tpms_edr::spline::{eval_extended, fit_complete, fit_partial};
use tpms_edr::Box3;

const ALL_KINDS: [TpmsKind; 4] = [TpmsKind::P, TpmsKind::D, TpmsKind::G, TpmsKind::Iwp];

// ---------------------------------------------------------------------
// Criterion 1: fitting accuracy.
// Partial-unit fits of P/D/G/IWP at 10^3 cubic coefficients reach MSE
// <= 5e-5; complete-unit fits reach <= 1e-3; partial beats complete for
// every type; everything within 60 s.
// ---------------------------------------------------------------------
#[test]
fn criterion_1_fitting_accuracy() {
    let start = Instant::now();
    let mut lines = Vec::new();
    for kind in ALL_KINDS {
        let field = NodalField::new(kind);
        let partial = fit_partial(&field, SolidType::Rod, [10; 3], 40).unwrap();
        let complete = fit_complete(&field, SolidType::Rod, [10; 3], 40).unwrap();
        assert!(
            partial.mse <= 5e-5,
            "{kind:?} partial MSE {} > 5e-5",
            partial.mse
        );
        assert!(
            complete.mse <= 1e-3,
            "{kind:?} complete MSE {} > 1e-3",
            complete.mse
        );
        assert!(
            partial.mse < complete.mse,
            "{kind:?} partial MSE {} not below complete {}",
            partial.mse,
            complete.mse
        );
        lines.push(format!(
            "{kind:?} partial {:.2e} complete {:.2e}",
            partial.mse, complete.mse
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "fitting took {elapsed:.1}s >= 60s");
    println!(
        "criterion 1 PASS: {} ({elapsed:.1}s)",
        lines.join("; ")
    );
}

// ---------------------------------------------------------------------
// Criterion 2: ETR/EDR reproduction for nodal Rod P and G at persistence
// grid 64^3 over [0,4pi]^3, mesh resolution 96^3. The reference endpoints
// for G are expressed on the unnormalized field scale (before the 0.9
// divisor), as their reference densities confirm, so the computed ETR is
// rescaled by 0.9 for comparison.
// ---------------------------------------------------------------------
#[test]
fn criterion_2_etr_reproduction() {
    let start = Instant::now();
    let bounds = Box3::cube(0.0, 4.0 * std::f64::consts::PI);

    let p = NodalField::new(TpmsKind::P).rod_form(SolidType::Rod);
    let (p_rep, _) = analyze_field(&p, bounds, [64; 3], 96, 0.1, 1).unwrap();
    assert!((p_rep.etr[0] - -1.113).abs() <= 0.02, "P c_min {}", p_rep.etr[0]);
    assert!((p_rep.etr[1] - 1.105).abs() <= 0.02, "P c_max {}", p_rep.etr[1]);
    assert!((p_rep.edr[0] - 0.207).abs() <= 0.01, "P rho_min {}", p_rep.edr[0]);
    assert!((p_rep.edr[1] - 0.776).abs() <= 0.01, "P rho_max {}", p_rep.edr[1]);

    let g = NodalField::new(TpmsKind::G).rod_form(SolidType::Rod);
    let (g_rep, _) = analyze_field(&g, bounds, [64; 3], 96, 0.1, 1).unwrap();
    let g_raw = [g_rep.etr[0] * 0.9, g_rep.etr[1] * 0.9];
    assert!((g_raw[0] - -1.41).abs() <= 0.02, "G c_min (raw scale) {}", g_raw[0]);
    assert!((g_raw[1] - 1.40).abs() <= 0.02, "G c_max (raw scale) {}", g_raw[1]);
    assert!((g_rep.edr[0] - 0.018).abs() <= 0.015, "G rho_min {}", g_rep.edr[0]);
    assert!((g_rep.edr[1] - 0.979).abs() <= 0.015, "G rho_max {}", g_rep.edr[1]);
    assert_eq!(g_rep.filtered_count, 2, "G filtered pairs");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "analysis took {elapsed:.1}s >= 5min");
    println!(
        "criterion 2 PASS: P etr [{:.4},{:.4}] edr [{:.3},{:.3}]; \
         G etr(raw) [{:.4},{:.4}] edr [{:.3},{:.3}] filtered {} ({elapsed:.1}s)",
        p_rep.etr[0], p_rep.etr[1], p_rep.edr[0], p_rep.edr[1],
        g_raw[0], g_raw[1], g_rep.edr[0], g_rep.edr[1], g_rep.filtered_count
    );
}

// ---------------------------------------------------------------------
// Criterion 3: optimization outcomes for P at alpha=0.5, eta=0.3 across
// mu in {0.1, 0.3, 0.5}, with E_sim bounds and a single principal mesh
// component at c=-1.5 for the mu >= 0.3 runs.
// ---------------------------------------------------------------------
#[test]
fn criterion_3_optimization_outcomes() {
    let reference = NodalField::new(TpmsKind::P);
    let fitted = fit_partial(&reference, SolidType::Rod, [10; 3], 60).unwrap();
    let field = fitted.field;
    let period = field.period();
    let pbox = Box3::cube(0.0, 2.0 * period);
    let (report0, _) = analyze_field(&field, pbox, [48; 3], 96, 0.1, 1).unwrap();
    let etr0 = (report0.etr[0], report0.etr[1]);

    let cases: [(f64, [f64; 2], f64, f64); 3] = [
        (0.1, [-1.334, 1.325], 0.10, 0.002),
        (0.3, [-1.637, 1.754], 0.15, 0.01),
        (0.5, [-1.816, 2.109], 0.15, 0.03),
    ];
    let mut lines = Vec::new();
    for (mu, target, tol, esim_bound) in cases {
        let start = Instant::now();
        let config = OptimizerConfig {
            mu,
            alpha: 0.5,
            learning_rate: 0.3,
            persistence_resolution: 48,
            quadrature_resolution: 32,
            ..OptimizerConfig::default()
        };
        let (optimized, trace) =
            optimize(&field, &reference, SolidType::Rod, etr0, &config).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 1800.0, "mu={mu} run took {elapsed:.0}s >= 30min");
        assert!(!trace.diverged, "mu={mu} diverged");
        let etr = trace.final_etr.etr;
        assert!(
            (etr[0] - target[0]).abs() <= tol,
            "mu={mu} c_min {} vs {} +/- {tol}",
            etr[0],
            target[0]
        );
        assert!(
            (etr[1] - target[1]).abs() <= tol,
            "mu={mu} c_max {} vs {} +/- {tol}",
            etr[1],
            target[1]
        );
        assert!(
            trace.final_esim <= esim_bound,
            "mu={mu} E_sim {} > {esim_bound}",
            trace.final_esim
        );
        if mu >= 0.3 {
            let mesh = marching_tetrahedra(&optimized, pbox, -1.5, 96).unwrap();
            let areas = mesh.component_areas();
            let total: f64 = areas.iter().sum();
            let principal = areas.iter().filter(|a| **a > 0.01 * total).count();
            assert_eq!(
                principal, 1,
                "mu={mu} mesh at c=-1.5 has {principal} principal components"
            );
        }
        lines.push(format!(
            "mu={mu} etr [{:.4},{:.4}] esim {:.2e} ({elapsed:.0}s)",
            etr[0], etr[1], trace.final_esim
        ));
    }
    println!("criterion 3 PASS: {}", lines.join("; "));
}

// ---------------------------------------------------------------------
// Criterion 4: persistence correctness against independent oracles.
// ---------------------------------------------------------------------

/// 0-dim persistence by Kruskal union-find with the elder rule: each
/// vertex opens a component at its value, each edge enters at the max of
/// its endpoint values; merging kills the younger component. Pairs with
/// zero persistence are dropped to match the diagram convention.
fn union_find_pairs(grid: &FiltrationGrid) -> (Vec<(f64, f64)>, usize) {
    let [nx, ny, nz] = grid.dims;
    let n = nx * ny * nz;
    let values: Vec<f64> = (0..n).map(|i| grid.vertex_values[i]).collect();
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let a = grid.vertex_index(x, y, z);
                if x + 1 < nx {
                    let b = grid.vertex_index(x + 1, y, z);
                    edges.push((values[a].max(values[b]), a, b));
                }
                if y + 1 < ny {
                    let b = grid.vertex_index(x, y + 1, z);
                    edges.push((values[a].max(values[b]), a, b));
                }
                if z + 1 < nz {
                    let b = grid.vertex_index(x, y, z + 1);
                    edges.push((values[a].max(values[b]), a, b));
                }
            }
        }
    }
    edges.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    let mut parent: Vec<usize> = (0..n).collect();
    // birth value of the component rooted at each index
    let birth: Vec<f64> = values.clone();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut pairs = Vec::new();
    for (death, a, b) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra == rb {
            continue;
        }
        // the component with the larger birth is younger and dies
        let (elder, younger) = if birth[ra] <= birth[rb] { (ra, rb) } else { (rb, ra) };
        if birth[younger] < death {
            pairs.push((birth[younger], death));
        }
        parent[younger] = elder;
    }
    let infinite = (0..n).filter(|i| find(&mut parent, *i) == *i).count();
    (pairs, infinite)
}

/// All cells of the full cubical complex on a vertex grid, as
/// (anchor coords, extent bits) with the max-rule filtration value.
fn enumerate_cells(grid: &FiltrationGrid) -> Vec<([usize; 3], u8, f64)> {
    let [nx, ny, nz] = grid.dims;
    let mut cells = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                for bits in 0u8..8 {
                    if (bits & 1 != 0 && x + 1 >= nx)
                        || (bits & 2 != 0 && y + 1 >= ny)
                        || (bits & 4 != 0 && z + 1 >= nz)
                    {
                        continue;
                    }
                    let anchor = grid.vertex_index(x, y, z);
                    cells.push(([x, y, z], bits, grid.cube_value(anchor, bits)));
                }
            }
        }
    }
    cells
}

/// Betti numbers of the sublevel complex {value <= t} by GF(2) boundary
/// ranks: beta_k = n_k - rank d_k - rank d_{k+1}.
fn betti_brute_force(grid: &FiltrationGrid, t: f64) -> [usize; 3] {
    use std::collections::HashMap;
    let cells = enumerate_cells(grid);
    // index cells of the sublevel complex per dimension
    let mut index: HashMap<([usize; 3], u8), usize> = HashMap::new();
    let mut per_dim: [Vec<([usize; 3], u8)>; 4] = Default::default();
    for (coords, bits, value) in &cells {
        if *value <= t {
            let d = bits.count_ones() as usize;
            index.insert((*coords, *bits), per_dim[d].len());
            per_dim[d].push((*coords, *bits));
        }
    }
    // boundary matrix of dimension d as columns of (d-1)-cell row indices
    let rank = |d: usize| -> usize {
        let mut columns: Vec<Vec<usize>> = Vec::new();
        for (coords, bits) in &per_dim[d] {
            let mut col = Vec::new();
            for axis in 0..3 {
                let bit = 1u8 << axis;
                if bits & bit == 0 {
                    continue;
                }
                let low = (*coords, bits & !bit);
                let mut high_coords = *coords;
                high_coords[axis] += 1;
                let high = (high_coords, bits & !bit);
                col.push(index[&low]);
                col.push(index[&high]);
            }
            col.sort_unstable();
            columns.push(col);
        }
        // GF(2) elimination on sorted-index columns
        let mut pivot_of_low: HashMap<usize, usize> = HashMap::new();
        let mut pivot_cols: Vec<Vec<usize>> = Vec::new();
        for mut col in columns {
            while let Some(&low) = col.last() {
                if let Some(&p) = pivot_of_low.get(&low) {
                    col = xor_sorted(&col, &pivot_cols[p]);
                } else {
                    pivot_of_low.insert(low, pivot_cols.len());
                    pivot_cols.push(col);
                    break;
                }
            }
        }
        pivot_cols.len()
    };
    let n: [usize; 4] = [
        per_dim[0].len(),
        per_dim[1].len(),
        per_dim[2].len(),
        per_dim[3].len(),
    ];
    let r1 = rank(1);
    let r2 = rank(2);
    let r3 = rank(3);
    [n[0] - r1, n[1] - r1 - r2, n[2] - r2 - r3]
}

fn xor_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j >= b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i >= a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    out
}

fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> FiltrationGrid {
    let values: Vec<f64> = (0..n * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FiltrationGrid::new([n; 3], Box3::cube(0.0, 1.0), values).unwrap()
}

fn sorted_pairs(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn check_inverse_mapping(grid: &FiltrationGrid, diagram: &PersistenceDiagram) {
    for p in &diagram.pairs {
        assert!(
            (grid.vertex_values[p.birth_vertex] - p.birth).abs() <= 1e-12,
            "birth vertex value {} vs birth {}",
            grid.vertex_values[p.birth_vertex],
            p.birth
        );
        if let Some(dv) = p.death_vertex {
            assert!(
                (grid.vertex_values[dv] - p.death).abs() <= 1e-12,
                "death vertex value {} vs death {}",
                grid.vertex_values[dv],
                p.death
            );
        }
    }
}

#[test]
fn criterion_4_persistence_correctness() {
    // 0-dim pairs vs union-find on 100 random 8^3 grids, exactly
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for trial in 0..100 {
        let grid = random_grid(&mut rng, 8);
        let diagram = compute_persistence(&grid);
        check_inverse_mapping(&grid, &diagram);
        let (oracle, oracle_inf) = union_find_pairs(&grid);
        let got: Vec<(f64, f64)> = diagram
            .pairs
            .iter()
            .filter(|p| p.dim == 0 && !p.is_infinite())
            .map(|p| (p.birth, p.death))
            .collect();
        let got_inf = diagram
            .pairs
            .iter()
            .filter(|p| p.dim == 0 && p.is_infinite())
            .count();
        assert_eq!(
            sorted_pairs(got),
            sorted_pairs(oracle),
            "trial {trial}: 0-dim pairs differ from union-find oracle"
        );
        assert_eq!(got_inf, oracle_inf, "trial {trial}: essential count");
    }

    // Betti numbers vs GF(2) boundary-rank brute force on 30 random 5^3
    // grids, at every critical value
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    for trial in 0..30 {
        let grid = random_grid(&mut rng, 5);
        let diagram = compute_persistence(&grid);
        check_inverse_mapping(&grid, &diagram);
        let mut criticals: Vec<f64> =
            enumerate_cells(&grid).iter().map(|c| c.2).collect();
        criticals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        criticals.dedup();
        for &t in &criticals {
            let expected = betti_brute_force(&grid, t);
            let got = betti_at(&diagram, t);
            assert_eq!(
                got, expected,
                "trial {trial}: Betti at t={t} differs from brute force"
            );
        }
    }
    println!(
        "criterion 4 PASS: union-find oracle on 100 8^3 grids, \
         GF(2) Betti brute force on 30 5^3 grids, inverse mapping <= 1e-12"
    );
}

// ---------------------------------------------------------------------
// Criterion 5: analytic gradient vs central finite differences.
// ---------------------------------------------------------------------
#[test]
fn criterion_5_gradient_correctness() {
    let reference = NodalField::new(TpmsKind::P);
    let fitted = fit_partial(&reference, SolidType::Rod, [6; 3], 24).unwrap();
    let field = fitted.field;
    let pbox = Box3::cube(0.0, 2.0 * field.period());
    let (report0, _) = analyze_field(&field, pbox, [24; 3], 32, 0.1, 1).unwrap();
    let etr0 = (report0.etr[0], report0.etr[1]);
    let config = OptimizerConfig {
        mu: 0.3,
        persistence_resolution: 24,
        quadrature_resolution: 16,
        indicator_resolution: 24,
        indicator_dims: [6; 3],
        ..OptimizerConfig::default()
    };
    let g_a = fit_indicator(&reference, SolidType::Rod, etr0, 24, [6; 3]).unwrap();
    let objective =
        Objective::new(&field, &reference, SolidType::Rod, etr0, &g_a, &config).unwrap();

    // break the mirror symmetry of the fitted field so the determining
    // pair sits at a unique vertex instead of tying across 8 copies
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut base = field.spline.clone();
    for c in base.coefficients_mut() {
        *c += rng.gen_range(-0.02..0.02);
    }
    let (base_eval, _) = objective.evaluate(&base).unwrap();
    let grad = objective.gradient(&base, &base_eval).unwrap();

    let h = 1e-5;
    let ncoef = base.coefficients().len();
    let mut checked = 0;
    let mut skipped = 0;
    for _ in 0..20 {
        let idx = rng.gen_range(0..ncoef);
        let mut plus = base.clone();
        plus.coefficients_mut()[idx] += h;
        let mut minus = base.clone();
        minus.coefficients_mut()[idx] -= h;
        let (ep, _) = objective.evaluate(&plus).unwrap();
        let (em, _) = objective.evaluate(&minus).unwrap();
        // exclude perturbations where the determining pair switches
        if ep.tau != em.tau || ep.sigma != em.sigma || ep.tau != base_eval.tau {
            skipped += 1;
            continue;
        }
        let fd = (ep.l - em.l) / (2.0 * h);
        let denom = fd.abs().max(grad[idx].abs()).max(1e-12);
        let rel = (fd - grad[idx]).abs() / denom;
        assert!(
            rel < 1e-3,
            "coefficient {idx}: fd {fd:.6e} vs analytic {:.6e} (rel {rel:.2e})",
            grad[idx]
        );
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} perturbations checked");
    println!(
        "criterion 5 PASS: {checked} finite-difference checks < 1e-3 rel \
         error ({skipped} pair switches excluded)"
    );
}

// ---------------------------------------------------------------------
// Criterion 6: reflective symmetry is exact after optimization; the
// periodic splicing baseline under identical settings is not.
// ---------------------------------------------------------------------
#[test]
fn criterion_6_symmetry_exactness() {
    let reference = NodalField::new(TpmsKind::P);
    let config = OptimizerConfig {
        mu: 0.2,
        max_iters: 15,
        persistence_resolution: 24,
        quadrature_resolution: 16,
        indicator_resolution: 24,
        indicator_dims: [6; 3],
        esim_samples: 1000,
        ..OptimizerConfig::default()
    };

    let run = |fitted: tpms_edr::spline::FittedField| {
        let pbox = Box3::cube(0.0, 2.0 * fitted.field.period());
        let (rep, _) = analyze_field(&fitted.field, pbox, [24; 3], 32, 0.1, 1).unwrap();
        let etr0 = (rep.etr[0], rep.etr[1]);
        let (optimized, _) =
            optimize(&fitted.field, &reference, SolidType::Rod, etr0, &config).unwrap();
        optimized
    };
    let reflective = run(fit_partial(&reference, SolidType::Rod, [8; 3], 40).unwrap());
    let periodic = run(fit_complete(&reference, SolidType::Rod, [8; 3], 40).unwrap());

    // dyadic parameter points: x and 2-x are both exact in binary, so the
    // mirror check measures the field, not rounding
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut max_violation_periodic = 0.0f64;
    for _ in 0..10_000 {
        let dyadic =
            |rng: &mut ChaCha8Rng| rng.gen_range(0..=(1u32 << 20)) as f64 / (1u32 << 20) as f64;
        let (u, v, w) = (dyadic(&mut rng), dyadic(&mut rng), dyadic(&mut rng));
        // mirror across the reflection plane at x = 1; both u and 2 - u are
        // exact dyadic values
        let p = [u, v, w];
        let q = [2.0 - u, v, w];
        let a = eval_extended(&reflective, p).unwrap();
        let b = eval_extended(&reflective, q).unwrap();
        assert!(
            a == b,
            "reflective field differs across the mirror plane at u={u}: {a} vs {b}"
        );
        let ap = eval_extended(&periodic, p).unwrap();
        let bp = eval_extended(&periodic, q).unwrap();
        max_violation_periodic = max_violation_periodic.max((ap - bp).abs());
    }
    assert!(
        max_violation_periodic > 1e-3,
        "periodic baseline unexpectedly mirror-symmetric (max violation {max_violation_periodic:.2e})"
    );
    println!(
        "criterion 6 PASS: reflective field exact at 10^4 dyadic mirror pairs; \
         periodic baseline max violation {max_violation_periodic:.2e} > 1e-3"
    );
}

// ---------------------------------------------------------------------
// Criterion 7: mesh quality — sphere volume within 1% at resolution 64,
// and density monotone over 20 thresholds for all four TPMS types.
// ---------------------------------------------------------------------
#[test]
fn criterion_7_mesh_quality() {
    let r = 0.3;
    let sphere = move |p: [f64; 3]| {
        ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2)).sqrt() - r
    };
    let mesh = marching_tetrahedra(&sphere, Box3::cube(0.0, 1.0), 0.0, 64).unwrap();
    let volume = enclosed_volume(&mesh).unwrap();
    let exact = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    let rel = (volume - exact).abs() / exact;
    assert!(rel < 0.01, "sphere volume off by {:.2}%", rel * 100.0);

    let bounds = Box3::cube(0.0, 4.0 * std::f64::consts::PI);
    for kind in ALL_KINDS {
        let field = NodalField::new(kind).rod_form(SolidType::Rod);
        let grid = build_filtration(&field, bounds, [24; 3]).unwrap();
        let (lo, hi) = (grid.min_value(), grid.max_value());
        let mut prev = -1.0;
        for i in 0..20 {
            let c = lo + (hi - lo) * i as f64 / 19.0;
            let rho = density_at(&field, bounds, c, 48).unwrap();
            assert!(
                rho >= prev - 1e-9,
                "{kind:?}: density decreased {prev} -> {rho} at c={c}"
            );
            prev = rho;
        }
    }
    println!(
        "criterion 7 PASS: sphere volume error {:.3}%; density monotone over \
         20 thresholds for P/D/G/IWP",
        rel * 100.0
    );
}
