//! Implicit porous structure design toolkit built around triply periodic
//! minimal surfaces (TPMS).
//!
//! The pipeline converts analytic nodal TPMS fields into trivariate B-spline
//! implicit fields, measures their effective threshold range (ETR) with
//! persistent homology on cubical complexes, maps it to an effective relative
//! density range (EDR) through marching-tetrahedra meshing, and widens both
//! ranges by optimizing the spline control coefficients under a combined
//! topological + similarity loss.

pub mod etr;
pub mod manifest;
pub mod mesh;
pub mod nodal;
pub mod optimizer;
pub mod persistence;
pub mod spline;

use serde::{Deserialize, Serialize};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite field value at sample {index} ({point:?})")]
    NonFiniteSample { index: usize, point: [f64; 3] },
    #[error("mesh is not closed: {boundary_edges} unmatched edges")]
    OpenMesh { boundary_edges: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Axis-aligned box in R^3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Box3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn cube(lo: f64, hi: f64) -> Self {
        Self { min: [lo; 3], max: [hi; 3] }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    pub fn is_degenerate(&self) -> bool {
        self.extent().iter().any(|&e| !(e > 0.0) || !e.is_finite())
    }

    /// Position of vertex (i,j,k) on a closed uniform lattice with `dims`
    /// vertices per axis (both faces included).
    pub fn lattice_point(&self, idx: [usize; 3], dims: [usize; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..3 {
            let t = if dims[a] > 1 {
                idx[a] as f64 / (dims[a] - 1) as f64
            } else {
                0.0
            };
            p[a] = self.min[a] + t * (self.max[a] - self.min[a]);
        }
        p
    }
}

/// A scalar field evaluatable anywhere in R^3.
pub trait ScalarField: Sync {
    fn value(&self, p: [f64; 3]) -> f64;
}

impl<F: Fn([f64; 3]) -> f64 + Sync> ScalarField for F {
    fn value(&self, p: [f64; 3]) -> f64 {
        self(p)
    }
}
