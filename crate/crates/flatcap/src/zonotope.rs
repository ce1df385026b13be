//! Scaled zonotopes in 3-D.
//!
//! A zonotope is the image of a box under an affine map: `c + Σ βᵢ δᵢ gᵢ`
//! with `|βᵢ| ≤ 1`, generator columns `gᵢ` and per-generator scaling
//! `δᵢ ≥ 0`. The sign-pattern point set (all `βᵢ = ±1`) is finite, contains
//! every vertex, and its convex hull is the zonotope itself, so testing the
//! finite set against a convex region certifies containment of the whole
//! body. The scaled volume splits into a sum over generator triples, which
//! is the objective the inflation optimizer maximizes.

use nalgebra::{Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;


#[derive(Debug, Error, PartialEq)]
pub enum ZonotopeError {
    #[error("need at least 3 generators, got {0}")]
    TooFewGenerators(usize),
    #[error("scaling length {got} does not match {expected} generators")]
    ScalingLength { got: usize, expected: usize },
    #[error("scaling factors must be non-negative, got {0}")]
    NegativeScaling(f64),
    #[error("sign-pattern enumeration limited to 20 generators, got {0}")]
    TooManyGenerators(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    generators: Matrix3xX<f64>,
    center: Vector3<f64>,
    scaling: Vec<f64>,
}

/// JSON form: generator matrix in row-major order plus center and scaling.
#[derive(Serialize, Deserialize)]
struct ZonotopeJson {
    g: Vec<f64>,
    c: [f64; 3],
    delta: Vec<f64>,
}

impl Zonotope {
    pub fn new(
        generators: Matrix3xX<f64>,
        center: Vector3<f64>,
        scaling: Vec<f64>,
    ) -> Result<Self, ZonotopeError> {
        let n = generators.ncols();
        if n < 3 {
            return Err(ZonotopeError::TooFewGenerators(n));
        }
        if scaling.len() != n {
            return Err(ZonotopeError::ScalingLength { got: scaling.len(), expected: n });
        }
        if let Some(&bad) = scaling.iter().find(|&&d| !(d >= 0.0)) {
            return Err(ZonotopeError::NegativeScaling(bad));
        }
        Ok(Self { generators, center, scaling })
    }

    /// Unit scaling on every generator.
    pub fn with_unit_scaling(generators: Matrix3xX<f64>, center: Vector3<f64>) -> Result<Self, ZonotopeError> {
        let n = generators.ncols();
        Self::new(generators, center, vec![1.0; n])
    }

    pub fn n_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn generators(&self) -> &Matrix3xX<f64> {
        &self.generators
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    /// Generator columns with the scaling applied.
    pub fn scaled_generators(&self) -> Vec<Vector3<f64>> {
        (0..self.n_generators())
            .map(|i| self.generators.column(i) * self.scaling[i])
            .collect()
    }

    /// All `2^{n_g}` sign-pattern points `c + Σ αᵢ δᵢ gᵢ`, `αᵢ = ±1`. Their
    /// convex hull equals the zonotope; the set contains every vertex.
    pub fn vertex_candidates(&self) -> Result<Vec<Vector3<f64>>, ZonotopeError> {
        let n = self.n_generators();
        if n > 20 {
            return Err(ZonotopeError::TooManyGenerators(n));
        }
        let cols = self.scaled_generators();
        let mut points = Vec::with_capacity(1 << n);
        for mask in 0u32..(1u32 << n) {
            let mut p = self.center;
            for (i, col) in cols.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    p += col;
                } else {
                    p -= col;
                }
            }
            points.push(p);
        }
        Ok(points)
    }

    /// Scaled volume `C(δ) = Σ_{i<j<k} |det [gᵢ gⱼ gₖ]| δᵢ δⱼ δₖ`. The
    /// Euclidean volume of the zonotope is `2³ · C(δ)` because each `βᵢ`
    /// ranges over an interval of length two. The optimizer maximizes `C`;
    /// reported volumes are Euclidean.
    pub fn volume_objective(&self) -> f64 {
        subset_determinants(&self.generators)
            .map(|([i, j, k], w)| w * self.scaling[i] * self.scaling[j] * self.scaling[k])
            .sum()
    }

    /// Euclidean volume, `2³ · C(δ)`.
    pub fn euclidean_volume(&self) -> f64 {
        8.0 * self.volume_objective()
    }

    /// Membership test: is `x = c + Σ βᵢ δᵢ gᵢ` for some `|βᵢ| ≤ 1`, within
    /// `tol` in linear units?
    pub fn contains(&self, x: &Vector3<f64>, tol: f64) -> bool {
        self.membership_residual(x) <= tol
    }

    /// Signed violation of the zonotope's exact half-space description, in
    /// linear units; non-positive iff `x` belongs to the body.
    ///
    /// Every facet of a 3-D zonotope is spanned by generators, so the facet
    /// normals are exactly the pairwise cross products and the support value
    /// in a direction `n` is `Σ δₖ |n·gₖ|`. Rank-deficient bodies (flat or
    /// needle-shaped scalings) are handled by adding the span-distance and
    /// the in-span face tests.
    pub fn membership_residual(&self, x: &Vector3<f64>) -> f64 {
        let cols = self.scaled_generators();
        let rel = x - self.center;
        let scale = cols.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        if scale <= 0.0 {
            return rel.norm();
        }

        let support = |n: &Vector3<f64>| -> f64 { cols.iter().map(|g| n.dot(g).abs()).sum() };
        let face_violation = |n: &Vector3<f64>| -> f64 {
            let len = n.norm();
            (rel.dot(n).abs() - support(n)) / len
        };

        // Collect non-degenerate pair normals and detect the rank.
        let mut normals: Vec<Vector3<f64>> = Vec::new();
        for i in 0..cols.len() {
            for j in (i + 1)..cols.len() {
                let n = cols[i].cross(&cols[j]);
                if n.norm() > 1e-12 * scale * scale {
                    normals.push(n);
                }
            }
        }

        if normals.is_empty() {
            // Rank <= 1: a segment along the dominant direction.
            let axis = cols
                .iter()
                .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
                .unwrap()
                .normalize();
            let along = rel.dot(&axis);
            let half_length: f64 = cols.iter().map(|g| axis.dot(g).abs()).sum();
            let excess = (along.abs() - half_length).max(0.0);
            let perp = (rel - along * axis).norm();
            return (excess * excess + perp * perp).sqrt();
        }

        let reference = normals
            .iter()
            .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
            .unwrap()
            .normalize();
        let full_rank = normals
            .iter()
            .any(|n| n.cross(&reference).norm() > 1e-9 * n.norm());

        if full_rank {
            normals
                .iter()
                .map(face_violation)
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            // Rank 2: a flat body in the plane orthogonal to `reference`.
            let plane_dist = rel.dot(&reference).abs();
            let mut worst = plane_dist;
            for g in &cols {
                let edge_normal = reference.cross(g);
                if edge_normal.norm() > 1e-12 * scale {
                    worst = worst.max(face_violation(&edge_normal));
                }
            }
            worst
        }
    }

    pub fn to_json(&self) -> String {
        let g: Vec<f64> = (0..3)
            .flat_map(|r| (0..self.n_generators()).map(move |c| (r, c)))
            .map(|(r, c)| self.generators[(r, c)])
            .collect();
        serde_json::to_string(&ZonotopeJson {
            g,
            c: [self.center.x, self.center.y, self.center.z],
            delta: self.scaling.clone(),
        })
        .expect("zonotope serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let raw: ZonotopeJson = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let n = raw.delta.len();
        if raw.g.len() != 3 * n {
            return Err(format!("generator list has {} entries, expected {}", raw.g.len(), 3 * n));
        }
        let generators = Matrix3xX::from_row_slice(&raw.g);
        Self::new(generators, Vector3::new(raw.c[0], raw.c[1], raw.c[2]), raw.delta)
            .map_err(|e| e.to_string())
    }
}

/// `|det|` of every 3-column submatrix, keyed by the column triple.
pub fn subset_determinants(g: &Matrix3xX<f64>) -> impl Iterator<Item = ([usize; 3], f64)> + '_ {
    let n = g.ncols();
    (0..n).flat_map(move |i| {
        ((i + 1)..n).flat_map(move |j| {
            ((j + 1)..n).map(move |k| {
                let m = nalgebra::Matrix3::<f64>::from_columns(&[
                    g.column(i).into_owned(),
                    g.column(j).into_owned(),
                    g.column(k).into_owned(),
                ]);
                ([i, j, k], m.determinant().abs())
            })
        })
    })
}

/// Generator basis used throughout the pipeline: the identity plus two
/// slanted columns that widen the body mid-height.
pub fn default_generator_basis() -> Matrix3xX<f64> {
    Matrix3xX::from_row_slice(&[
        1.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 1.0, -1.0, //
        0.0, 0.0, 1.0, 2.0, 2.0,
    ])
}
