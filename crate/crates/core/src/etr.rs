//! Ordering of persistence pairs, non-repetitive component filtering,
//! effective threshold range (ETR) extraction, and the mapping to the
//! effective relative density range (EDR) via meshed relative density.

use crate::mesh::{enclosed_volume, marching_tetrahedra};
use crate::persistence::{PersistenceDiagram, PersistencePair};
use crate::{Box3, Result, ScalarField};
use serde::{Deserialize, Serialize};

/// Persistence pairs split by the repetition filter.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<PersistencePair>,
    pub filtered: Vec<PersistencePair>,
}

/// Keep a 0-dim pair iff strictly more than `count` pairs of its dimension
/// (counting itself) lie within Euclidean distance `eps` of it in the
/// (birth, death) plane; the ball is closed and infinite pairs are always
/// kept. Only isolated connected components can be non-repetitive — holes
/// always recur across spliced units — so higher-dimensional pairs pass
/// through untouched.
pub fn filter_repetitive(
    pairs: &[PersistencePair],
    eps: f64,
    count: usize,
) -> FilterOutcome {
    let mut kept = Vec::new();
    let mut filtered = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.is_infinite() || p.dim != 0 {
            kept.push(*p);
            continue;
        }
        let neighbors = pairs
            .iter()
            .enumerate()
            .filter(|(j, q)| {
                *j != i && q.dim == p.dim && !q.is_infinite() && {
                    let db = q.birth - p.birth;
                    let dd = q.death - p.death;
                    (db * db + dd * dd).sqrt() <= eps
                }
            })
            .count();
        if neighbors + 1 > count {
            kept.push(*p);
        } else {
            filtered.push(*p);
        }
    }
    FilterOutcome { kept, filtered }
}

/// Kept pairs in the two orderings the ETR extraction uses.
#[derive(Debug, Clone)]
pub struct PairOrdering {
    /// 0-dim pairs sorted descending by death; the infinite pair ranks first
    /// and further infinite pairs are excluded.
    pub by_death_desc: Vec<PersistencePair>,
    /// 2-dim pairs sorted ascending by birth.
    pub by_birth_asc: Vec<PersistencePair>,
}

impl PairOrdering {
    pub fn from_kept(kept: &[PersistencePair]) -> Self {
        let mut by_death_desc: Vec<PersistencePair> =
            kept.iter().filter(|p| p.dim == 0).cloned().collect();
        by_death_desc.sort_by(|a, b| {
            // infinite first, then descending finite deaths
            b.death
                .partial_cmp(&a.death)
                .unwrap()
                .then_with(|| a.birth.partial_cmp(&b.birth).unwrap())
        });
        // keep at most one infinite pair in the ranking
        let mut seen_inf = false;
        by_death_desc.retain(|p| {
            if p.is_infinite() {
                let keep = !seen_inf;
                seen_inf = true;
                keep
            } else {
                true
            }
        });
        let mut by_birth_asc: Vec<PersistencePair> =
            kept.iter().filter(|p| p.dim == 2).cloned().collect();
        by_birth_asc.sort_by(|a, b| {
            a.birth
                .partial_cmp(&b.birth)
                .unwrap()
                .then_with(|| a.death.partial_cmp(&b.death).unwrap())
        });
        Self { by_death_desc, by_birth_asc }
    }
}

/// ETR extraction result: the interval endpoints and the pairs behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtrExtraction {
    pub c_min: f64,
    pub c_max: f64,
    /// The d1(0,-) pair (second-largest 0-dim death), when present.
    pub min_pair: Option<PersistencePair>,
    /// The b0(2,+) pair (smallest 2-dim birth), when present.
    pub max_pair: Option<PersistencePair>,
    pub filtered: Vec<PersistencePair>,
    /// Set when either endpoint fell back to the degenerate full range.
    pub degenerate: bool,
}

impl EtrExtraction {
    pub fn length(&self) -> f64 {
        self.c_max - self.c_min
    }
}

/// Finite pairs whose persistence is below this fraction of the field's
/// value range are treated as numerically zero persistence and dropped
/// before filtering. Degenerate (monkey-saddle) critical points of sampled
/// smooth fields spawn clusters of such pairs whose persistence shrinks
/// toward zero as the grid is refined; they are sampling artifacts, not
/// features.
pub const PERSISTENCE_NOISE_REL: f64 = 0.005;

/// Extract the ETR [d1(0,-), b0(2,+)) from a diagram after filtering.
///
/// c_min is the second-largest death among kept 0-dim pairs with the
/// infinite pair ranked first; c_max is the smallest birth among kept 2-dim
/// pairs, falling back to the global max vertex value when no 2-dim pair
/// exists.
pub fn extract_etr(diagram: &PersistenceDiagram, eps: f64, count: usize) -> EtrExtraction {
    let noise_floor = PERSISTENCE_NOISE_REL * (diagram.max_value - diagram.min_value);
    let significant: Vec<PersistencePair> = diagram
        .pairs
        .iter()
        .filter(|p| p.is_infinite() || p.death - p.birth > noise_floor)
        .copied()
        .collect();
    let outcome = filter_repetitive(&significant, eps, count);
    let ordering = PairOrdering::from_kept(&outcome.kept);
    let mut degenerate = false;
    let (c_min, min_pair) = if ordering.by_death_desc.len() >= 2 {
        let p = ordering.by_death_desc[1];
        (p.death, Some(p))
    } else {
        degenerate = true;
        (diagram.min_value, None)
    };
    let (c_max, max_pair) = if let Some(p) = ordering.by_birth_asc.first() {
        (p.birth, Some(*p))
    } else {
        degenerate = true;
        (diagram.max_value, None)
    };
    EtrExtraction { c_min, c_max, min_pair, max_pair, filtered: outcome.filtered, degenerate }
}

/// Relative density of the sublevel solid {field <= c} in `bounds`: meshed
/// by marching tetrahedra, enclosed volume divided by the box volume.
pub fn density_at(
    field: &impl ScalarField,
    bounds: Box3,
    c: f64,
    mesh_resolution: usize,
) -> Result<f64> {
    let mesh = marching_tetrahedra(field, bounds, c, mesh_resolution)?;
    let volume = enclosed_volume(&mesh)?;
    Ok((volume / bounds.volume()).clamp(0.0, 1.0))
}

/// Densities at both ETR endpoints.
pub fn extract_edr(
    field: &impl ScalarField,
    bounds: Box3,
    etr: (f64, f64),
    mesh_resolution: usize,
) -> Result<(f64, f64)> {
    let rho_min = density_at(field, bounds, etr.0, mesh_resolution)?;
    let rho_max = density_at(field, bounds, etr.1, mesh_resolution)?;
    Ok((rho_min, rho_max))
}

/// Full analysis report, serialized as the `analyze` command output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtrReport {
    pub etr: [f64; 2],
    pub edr: [f64; 2],
    pub determining_pairs: DeterminingPairs,
    pub filtered_count: usize,
    pub grid_dims: [usize; 3],
    pub mesh_resolution: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeterminingPairs {
    pub d1_0_minus: Option<PersistencePair>,
    pub b0_2_plus: Option<PersistencePair>,
}

/// Build the combined ETR + EDR report for a field over `bounds`.
pub fn analyze_field(
    field: &impl ScalarField,
    bounds: Box3,
    grid_dims: [usize; 3],
    mesh_resolution: usize,
    eps: f64,
    count: usize,
) -> Result<(EtrReport, PersistenceDiagram)> {
    let grid = crate::persistence::build_filtration(field, bounds, grid_dims)?;
    let diagram = crate::persistence::compute_persistence(&grid);
    let etr = extract_etr(&diagram, eps, count);
    let edr = extract_edr(field, bounds, (etr.c_min, etr.c_max), mesh_resolution)?;
    Ok((
        EtrReport {
            etr: [etr.c_min, etr.c_max],
            edr: [edr.0, edr.1],
            determining_pairs: DeterminingPairs {
                d1_0_minus: etr.min_pair,
                b0_2_plus: etr.max_pair,
            },
            filtered_count: etr.filtered.len(),
            grid_dims,
            mesh_resolution,
            degenerate: etr.degenerate,
        },
        diagram,
    ))
}
