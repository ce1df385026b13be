//! Exact 3-D convex polytope geometry.
//!
//! [`Polytope::convex_hull`] runs a conflict-list quickhull over triangles,
//! then merges coplanar triangles into polygonal facets, so the reported
//! half-space count matches the true facet structure even for the highly
//! degenerate inputs produced by zonotope sign patterns (many coplanar and
//! cospherical points). Vertices are the hull points supported by at least
//! three independent merged facets; both representations are kept consistent
//! and sorted, which makes hull outputs reproducible byte for byte.
//!
//! The merge tolerance is explicit because facet and vertex counts depend on
//! it; `MERGE_TOL` is the default and the CLI exposes the knob.

use nalgebra::Vector3;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Default facet-merge tolerance: normals within this angle (radians) and
/// offsets within this relative gap collapse into one facet.
pub const MERGE_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("need at least 4 points for a 3-D hull, got {0}")]
    TooFewPoints(usize),
    #[error("input points are affinely dependent (rank < 3)")]
    Degenerate,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Closed half-space `normal · x ≤ offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct Polytope {
    vertices: Vec<Vector3<f64>>,
    halfspaces: Vec<Halfspace>,
    volume: f64,
}

impl Polytope {
    pub fn convex_hull(points: &[Vector3<f64>]) -> Result<Self, GeomError> {
        Self::convex_hull_with_tolerance(points, MERGE_TOL)
    }

    pub fn convex_hull_with_tolerance(
        points: &[Vector3<f64>],
        merge_tol: f64,
    ) -> Result<Self, GeomError> {
        let mut cleaned: Vec<Vector3<f64>> = points.to_vec();
        cleaned.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
        cleaned.dedup_by(|a, b| (*a - *b).amax() <= 1e-13 * (1.0 + a.amax().max(b.amax())));
        if cleaned.len() < 4 {
            return Err(GeomError::TooFewPoints(cleaned.len()));
        }
        let scale = cleaned.iter().map(|p| p.amax()).fold(1.0f64, f64::max);

        let mesh = quickhull(&cleaned, scale)?;
        let facets = merge_facets(&cleaned, &mesh, scale, merge_tol);
        let vertices = extract_vertices(&cleaned, &mesh, &facets, scale, merge_tol);
        let volume = mesh_volume(&cleaned, &mesh);

        let mut halfspaces: Vec<Halfspace> = facets
            .iter()
            .map(|f| Halfspace { normal: f.normal, offset: f.offset })
            .collect();
        // Consistency: no reported vertex may stick out of a reported facet.
        for hs in &mut halfspaces {
            for v in &vertices {
                let d = hs.normal.dot(v) - hs.offset;
                if d > 0.0 {
                    hs.offset += d;
                }
            }
        }
        halfspaces.sort_by(|a, b| {
            (a.normal.x, a.normal.y, a.normal.z, a.offset)
                .partial_cmp(&(b.normal.x, b.normal.y, b.normal.z, b.offset))
                .unwrap()
        });

        Ok(Self { vertices, halfspaces, volume })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_halfspaces(&self) -> usize {
        self.halfspaces.len()
    }

    /// Volume from the signed tetrahedron decomposition of the hull surface
    /// about the surface centroid.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn contains(&self, x: &Vector3<f64>, tol: f64) -> bool {
        self.halfspaces.iter().all(|hs| hs.normal.dot(x) <= hs.offset + tol)
    }

    /// Largest violation of any half-space, negative inside.
    pub fn violation(&self, x: &Vector3<f64>) -> f64 {
        self.halfspaces
            .iter()
            .map(|hs| hs.normal.dot(x) - hs.offset)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn write_hrep_csv(&self, path: &Path) -> Result<(), GeomError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# flatcap hrep v1")?;
        writeln!(out, "a1,a2,a3,b")?;
        for hs in &self.halfspaces {
            writeln!(out, "{},{},{},{}", hs.normal.x, hs.normal.y, hs.normal.z, hs.offset)?;
        }
        Ok(())
    }

    pub fn write_vrep_csv(&self, path: &Path) -> Result<(), GeomError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# flatcap vrep v1")?;
        writeln!(out, "x,y,z")?;
        for v in &self.vertices {
            writeln!(out, "{},{},{}", v.x, v.y, v.z)?;
        }
        Ok(())
    }
}

/// Reads half-space rows `a1,a2,a3,b` written by [`Polytope::write_hrep_csv`].
pub fn read_hrep_csv(path: &Path) -> Result<Vec<Halfspace>, GeomError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('a') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(GeomError::Parse(format!("expected 4 fields, got {}", fields.len())));
        }
        let mut vals = [0.0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|e| GeomError::Parse(format!("{e}: {f}")))?;
        }
        rows.push(Halfspace { normal: Vector3::new(vals[0], vals[1], vals[2]), offset: vals[3] });
    }
    Ok(rows)
}

/// Reads vertex rows `x,y,z` written by [`Polytope::write_vrep_csv`].
pub fn read_vrep_csv(path: &Path) -> Result<Vec<Vector3<f64>>, GeomError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('x') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(GeomError::Parse(format!("expected 3 fields, got {}", fields.len())));
        }
        let mut vals = [0.0f64; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|e| GeomError::Parse(format!("{e}: {f}")))?;
        }
        rows.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(rows)
}

// --- quickhull over triangles ---

#[derive(Debug, Clone)]
struct Triangle {
    verts: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    alive: bool,
    conflicts: Vec<usize>,
}

struct Mesh {
    triangles: Vec<Triangle>,
}

impl Mesh {
    fn alive(&self) -> impl Iterator<Item = (usize, &Triangle)> {
        self.triangles.iter().enumerate().filter(|(_, t)| t.alive)
    }
}

fn plane_of(points: &[Vector3<f64>], verts: [usize; 3]) -> (Vector3<f64>, f64) {
    let [a, b, c] = verts;
    let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
    let len = n.norm();
    if len > 0.0 {
        let unit = n / len;
        (unit, unit.dot(&points[a]))
    } else {
        (Vector3::zeros(), 0.0)
    }
}

fn quickhull(points: &[Vector3<f64>], scale: f64) -> Result<Mesh, GeomError> {
    let eps_vis = 1e-11 * scale;
    let n = points.len();

    let (i0, i1, i2, i3) = initial_simplex(points, scale)?;
    let centroid = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;

    let mut mesh = Mesh { triangles: Vec::new() };
    let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
    let simplex_faces = [[i0, i1, i2], [i0, i3, i1], [i0, i2, i3], [i1, i3, i2]];
    for verts in simplex_faces {
        push_triangle(points, &mut mesh, &mut edge_owner, verts, &centroid);
    }

    // Conflict lists: each outside point lives with the face it sticks out
    // of the most.
    let mut assigned = vec![false; n];
    for &i in &[i0, i1, i2, i3] {
        assigned[i] = true;
    }
    for p in 0..n {
        if assigned[p] {
            continue;
        }
        assign_conflict(points, &mut mesh, p, 0..4, eps_vis);
    }

    loop {
        // Deterministic pick: the face holding the globally farthest point.
        let mut best: Option<(f64, usize)> = None;
        for (_, tri) in mesh.alive() {
            for &p in &tri.conflicts {
                let d = tri.normal.dot(&points[p]) - tri.offset;
                let better = match best {
                    None => true,
                    Some((bd, bp)) => d > bd || (d == bd && p < bp),
                };
                if better {
                    best = Some((d, p));
                }
            }
        }
        let Some((_, apex)) = best else { break };

        // Visible region and its horizon.
        let visible: Vec<usize> = mesh
            .alive()
            .filter(|(_, t)| t.normal.dot(&points[apex]) - t.offset > eps_vis)
            .map(|(fi, _)| fi)
            .collect();
        if visible.is_empty() {
            // The apex no longer sticks out (tolerance skew); drop it.
            for tri in mesh.triangles.iter_mut() {
                tri.conflicts.retain(|&p| p != apex);
            }
            continue;
        }

        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut orphans: Vec<usize> = Vec::new();
        for &fi in &visible {
            let verts = mesh.triangles[fi].verts;
            for (a, b) in [(verts[0], verts[1]), (verts[1], verts[2]), (verts[2], verts[0])] {
                match edge_owner.get(&(b, a)) {
                    Some(&nb) if visible.contains(&nb) => {}
                    _ => horizon.push((a, b)),
                }
            }
        }
        for &fi in &visible {
            let tri = &mut mesh.triangles[fi];
            tri.alive = false;
            orphans.append(&mut tri.conflicts);
            let verts = tri.verts;
            for (a, b) in [(verts[0], verts[1]), (verts[1], verts[2]), (verts[2], verts[0])] {
                edge_owner.remove(&(a, b));
            }
        }

        let first_new = mesh.triangles.len();
        for &(a, b) in &horizon {
            push_triangle(points, &mut mesh, &mut edge_owner, [a, b, apex], &centroid);
        }
        let last_new = mesh.triangles.len();

        orphans.sort_unstable();
        orphans.dedup();
        for p in orphans {
            if p == apex {
                continue;
            }
            assign_conflict(points, &mut mesh, p, first_new..last_new, eps_vis);
        }
    }

    Ok(mesh)
}

fn push_triangle(
    points: &[Vector3<f64>],
    mesh: &mut Mesh,
    edge_owner: &mut HashMap<(usize, usize), usize>,
    verts: [usize; 3],
    interior: &Vector3<f64>,
) {
    let (mut normal, mut offset) = plane_of(points, verts);
    let mut verts = verts;
    if normal.dot(interior) > offset {
        verts.swap(1, 2);
        normal = -normal;
        offset = -offset;
    }
    let id = mesh.triangles.len();
    mesh.triangles.push(Triangle { verts, normal, offset, alive: true, conflicts: Vec::new() });
    for (a, b) in [(verts[0], verts[1]), (verts[1], verts[2]), (verts[2], verts[0])] {
        edge_owner.insert((a, b), id);
    }
}

fn assign_conflict(
    points: &[Vector3<f64>],
    mesh: &mut Mesh,
    p: usize,
    faces: std::ops::Range<usize>,
    eps_vis: f64,
) {
    let mut best: Option<(f64, usize)> = None;
    for fi in faces {
        let tri = &mesh.triangles[fi];
        if !tri.alive {
            continue;
        }
        let d = tri.normal.dot(&points[p]) - tri.offset;
        if d > eps_vis && best.map_or(true, |(bd, _)| d > bd) {
            best = Some((d, fi));
        }
    }
    if let Some((_, fi)) = best {
        mesh.triangles[fi].conflicts.push(p);
    }
}

fn initial_simplex(
    points: &[Vector3<f64>],
    scale: f64,
) -> Result<(usize, usize, usize, usize), GeomError> {
    let eps = 1e-9 * scale;
    let n = points.len();
    // Points are lexicographically sorted, so index 0 is the minimum.
    let i0 = 0;
    let i1 = (1..n)
        .max_by(|&a, &b| {
            let da = (points[a] - points[i0]).norm();
            let db = (points[b] - points[i0]).norm();
            da.partial_cmp(&db).unwrap().then(b.cmp(&a))
        })
        .ok_or(GeomError::TooFewPoints(n))?;
    if (points[i1] - points[i0]).norm() <= eps {
        return Err(GeomError::Degenerate);
    }
    let dir = (points[i1] - points[i0]).normalize();
    let line_dist = |p: &Vector3<f64>| {
        let rel = p - points[i0];
        (rel - dir * rel.dot(&dir)).norm()
    };
    let i2 = (0..n)
        .max_by(|&a, &b| {
            line_dist(&points[a])
                .partial_cmp(&line_dist(&points[b]))
                .unwrap()
                .then(b.cmp(&a))
        })
        .unwrap();
    if line_dist(&points[i2]) <= eps {
        return Err(GeomError::Degenerate);
    }
    let (normal, offset) = plane_of(points, [i0, i1, i2]);
    let i3 = (0..n)
        .max_by(|&a, &b| {
            let da = (normal.dot(&points[a]) - offset).abs();
            let db = (normal.dot(&points[b]) - offset).abs();
            da.partial_cmp(&db).unwrap().then(b.cmp(&a))
        })
        .unwrap();
    if (normal.dot(&points[i3]) - offset).abs() <= eps {
        return Err(GeomError::Degenerate);
    }
    Ok((i0, i1, i2, i3))
}

// --- facet merging and vertex extraction ---

#[derive(Debug)]
struct Facet {
    normal: Vector3<f64>,
    offset: f64,
}

fn merge_facets(points: &[Vector3<f64>], mesh: &Mesh, scale: f64, merge_tol: f64) -> Vec<Facet> {
    let dist_tol = merge_tol * (1.0 + scale);
    let alive: Vec<usize> = mesh.alive().map(|(fi, _)| fi).collect();

    // Undirected edge adjacency between alive triangles.
    let mut edge_map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for &fi in &alive {
        let v = mesh.triangles[fi].verts;
        for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
            let key = (a.min(b), a.max(b));
            edge_map.entry(key).or_default().push(fi);
        }
    }
    let mut neighbors: HashMap<usize, Vec<usize>> = HashMap::new();
    for owners in edge_map.values() {
        for &a in owners {
            for &b in owners {
                if a != b {
                    neighbors.entry(a).or_default().push(b);
                }
            }
        }
    }

    let area = |fi: usize| -> f64 {
        let v = mesh.triangles[fi].verts;
        0.5 * (points[v[1]] - points[v[0]]).cross(&(points[v[2]] - points[v[0]])).norm()
    };
    let mut order = alive.clone();
    order.sort_by(|&a, &b| area(b).partial_cmp(&area(a)).unwrap().then(a.cmp(&b)));

    let mut facet_of: HashMap<usize, usize> = HashMap::new();
    let mut facets: Vec<Facet> = Vec::new();
    let cos_tol = merge_tol.cos();

    for &seed in &order {
        if facet_of.contains_key(&seed) {
            continue;
        }
        let (sn, so) = {
            let t = &mesh.triangles[seed];
            (t.normal, t.offset)
        };
        let facet_id = facets.len();
        let mut members = vec![seed];
        facet_of.insert(seed, facet_id);
        let mut queue = vec![seed];
        while let Some(fi) = queue.pop() {
            for &nb in neighbors.get(&fi).map(|v| v.as_slice()).unwrap_or(&[]) {
                if facet_of.contains_key(&nb) {
                    continue;
                }
                let tri = &mesh.triangles[nb];
                let angle_ok = sn.dot(&tri.normal) >= cos_tol
                    && (tri.offset - so).abs() <= merge_tol * (1.0 + so.abs());
                // Slivers have unreliable normals; absorbing every triangle
                // whose corners lie on the seed plane covers them.
                let coplanar = tri
                    .verts
                    .iter()
                    .all(|&v| (sn.dot(&points[v]) - so).abs() <= dist_tol);
                if angle_ok || coplanar {
                    facet_of.insert(nb, facet_id);
                    members.push(nb);
                    queue.push(nb);
                }
            }
        }

        let mut point_ids: Vec<usize> = members
            .iter()
            .flat_map(|&fi| mesh.triangles[fi].verts)
            .collect();
        point_ids.sort_unstable();
        point_ids.dedup();

        let (normal, offset) = refit_plane(points, &point_ids, &sn);
        facets.push(Facet { normal, offset });
    }

    facets
}

/// Least-squares plane through a facet's points, oriented like `hint`, with
/// a supporting offset.
fn refit_plane(
    points: &[Vector3<f64>],
    ids: &[usize],
    hint: &Vector3<f64>,
) -> (Vector3<f64>, f64) {
    let centroid: Vector3<f64> =
        ids.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / ids.len() as f64;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for &i in ids {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut min_k = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] < eig.eigenvalues[min_k] {
            min_k = k;
        }
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(min_k).into_owned();
    if normal.dot(hint) < 0.0 {
        normal = -normal;
    }
    normal.normalize_mut();
    let offset = ids
        .iter()
        .map(|&i| normal.dot(&points[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    (normal, offset)
}

fn extract_vertices(
    points: &[Vector3<f64>],
    mesh: &Mesh,
    facets: &[Facet],
    scale: f64,
    merge_tol: f64,
) -> Vec<Vector3<f64>> {
    let dist_tol = merge_tol * (1.0 + scale);
    let mut hull_points: Vec<usize> = mesh.alive().flat_map(|(_, t)| t.verts).collect();
    hull_points.sort_unstable();
    hull_points.dedup();

    let mut vertices = Vec::new();
    for &p in &hull_points {
        let incident: Vec<&Facet> = facets
            .iter()
            .filter(|f| (f.normal.dot(&points[p]) - f.offset).abs() <= dist_tol)
            .collect();
        if incident.len() < 3 {
            continue;
        }
        // A corner needs three incident facet normals spanning 3-space;
        // points interior to a facet or on an edge fail this.
        let mut rank3 = false;
        'outer: for (a, fa) in incident.iter().enumerate() {
            for (b, fb) in incident.iter().enumerate().skip(a + 1) {
                let cross = fa.normal.cross(&fb.normal);
                if cross.norm() <= 1e-6 {
                    continue;
                }
                for fc in incident.iter().skip(b + 1) {
                    if cross.dot(&fc.normal).abs() > 1e-6 {
                        rank3 = true;
                        break 'outer;
                    }
                }
            }
        }
        if rank3 {
            vertices.push(points[p]);
        }
    }
    vertices.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
    vertices
}

fn mesh_volume(points: &[Vector3<f64>], mesh: &Mesh) -> f64 {
    let mut reference = Vector3::zeros();
    let mut count = 0.0;
    for (_, tri) in mesh.alive() {
        for &v in &tri.verts {
            reference += points[v];
            count += 1.0;
        }
    }
    if count == 0.0 {
        return 0.0;
    }
    reference /= count;
    let mut six_volume = 0.0;
    for (_, tri) in mesh.alive() {
        let [a, b, c] = tri.verts;
        let pa = points[a] - reference;
        let pb = points[b] - reference;
        let pc = points[c] - reference;
        six_volume += pa.dot(&pb.cross(&pc));
    }
    (six_volume / 6.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box_corners(half: Vector3<f64>) -> Vec<Vector3<f64>> {
        let mut corners = Vec::new();
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    corners.push(Vector3::new(sx * half.x, sy * half.y, sz * half.z));
                }
            }
        }
        corners
    }

    #[test]
    fn cube_with_interior_point() {
        let mut pts = box_corners(Vector3::new(1.0, 1.0, 1.0));
        pts.push(Vector3::zeros());
        let hull = Polytope::convex_hull(&pts).unwrap();
        assert_eq!(hull.n_vertices(), 8);
        assert_eq!(hull.n_halfspaces(), 6);
        assert_relative_eq!(hull.volume(), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn cube_with_coplanar_midpoints() {
        // Face and edge midpoints must not become vertices or split facets.
        let mut pts = box_corners(Vector3::new(1.0, 1.0, 1.0));
        pts.push(Vector3::new(1.0, 0.0, 0.0));
        pts.push(Vector3::new(1.0, 1.0, 0.0));
        pts.push(Vector3::new(0.0, 0.0, 1.0));
        let hull = Polytope::convex_hull(&pts).unwrap();
        assert_eq!(hull.n_vertices(), 8);
        assert_eq!(hull.n_halfspaces(), 6);
        assert_relative_eq!(hull.volume(), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn unit_simplex() {
        let pts = vec![
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let hull = Polytope::convex_hull(&pts).unwrap();
        assert_eq!(hull.n_vertices(), 4);
        assert_eq!(hull.n_halfspaces(), 4);
        assert_relative_eq!(hull.volume(), 1.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        let planar = vec![
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.3, 0.9, 0.0),
        ];
        assert!(matches!(Polytope::convex_hull(&planar), Err(GeomError::Degenerate)));
        assert!(matches!(
            Polytope::convex_hull(&planar[..3]),
            Err(GeomError::TooFewPoints(3))
        ));
    }

    #[test]
    fn reference_box_volumes() {
        // 8 * 0.815^2 * 3.27 = 17.3761 with the corner values rounded to
        // three digits; the published 17.39 refers to the unrounded optimum.
        let slab = Polytope::convex_hull(&box_corners(Vector3::new(0.815, 0.815, 3.27))).unwrap();
        assert_abs_diff_eq!(slab.volume(), 17.39, epsilon = 0.02);
        let cube =
            Polytope::convex_hull(&box_corners(Vector3::new(1.0875, 1.0875, 1.0875))).unwrap();
        assert_abs_diff_eq!(cube.volume(), 10.29, epsilon = 0.01);
        assert_eq!(slab.n_vertices(), 8);
        assert_eq!(slab.n_halfspaces(), 6);
    }

    #[test]
    fn zonotope_candidate_hull_volume() {
        use crate::zonotope::{default_generator_basis, Zonotope};
        let z = Zonotope::with_unit_scaling(default_generator_basis(), Vector3::zeros()).unwrap();
        let hull = Polytope::convex_hull(&z.vertex_candidates().unwrap()).unwrap();
        assert_relative_eq!(hull.volume(), 88.0, max_relative = 1e-10);
        for p in z.vertex_candidates().unwrap() {
            assert!(hull.contains(&p, 1e-9));
        }
    }

    #[test]
    fn containment_queries() {
        let hull = Polytope::convex_hull(&box_corners(Vector3::new(1.0, 1.0, 1.0))).unwrap();
        assert!(hull.contains(&Vector3::zeros(), 1e-12));
        assert!(hull.contains(&Vector3::new(1.0, 1.0, 1.0), 1e-12));
        let tol = 1e-9;
        assert!(!hull.contains(&Vector3::new(1.0 + 2.0 * tol, 0.0, 0.0), tol));
    }

    #[test]
    fn duality_consistency() {
        use crate::zonotope::{default_generator_basis, Zonotope};
        let z = Zonotope::new(
            default_generator_basis(),
            Vector3::new(0.2, -0.1, 1.0),
            vec![1.0, 0.6, 1.4, 0.8, 0.5],
        )
        .unwrap();
        let hull = Polytope::convex_hull(&z.vertex_candidates().unwrap()).unwrap();
        let tol = 1e-9 * 16.0;
        for v in hull.vertices() {
            let tight = hull
                .halfspaces()
                .iter()
                .filter(|hs| (hs.normal.dot(v) - hs.offset).abs() <= tol)
                .count();
            assert!(tight >= 3, "vertex {v:?} tight on only {tight} facets");
            assert!(hull.contains(v, 1e-9));
        }
        for hs in hull.halfspaces() {
            let support = hull
                .vertices()
                .iter()
                .filter(|v| (hs.normal.dot(v) - hs.offset).abs() <= tol)
                .count();
            assert!(support >= 3, "facet {hs:?} supported by {support} vertices");
        }
    }

    #[test]
    fn volume_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-0.7..0.7),
                )
            })
            .collect();
        let hull = Polytope::convex_hull(&pts).unwrap();
        let (lo, hi) = hull.bounding_box();
        let span = hi - lo;
        let box_volume = span.x * span.y * span.z;
        let samples = 1_000_000usize;
        let mut inside = 0usize;
        for _ in 0..samples {
            let p = Vector3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            );
            if hull.contains(&p, 0.0) {
                inside += 1;
            }
        }
        let fraction = inside as f64 / samples as f64;
        let mc_volume = fraction * box_volume;
        let std_err = box_volume * (fraction * (1.0 - fraction) / samples as f64).sqrt();
        assert!(
            (hull.volume() - mc_volume).abs() <= 3.0 * std_err,
            "tetra {} vs mc {} (3se {})",
            hull.volume(),
            mc_volume,
            3.0 * std_err
        );
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join("flatcap_geom_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let hull = Polytope::convex_hull(&box_corners(Vector3::new(1.0, 2.0, 0.5))).unwrap();
        let hpath = dir.join("h.csv");
        let vpath = dir.join("v.csv");
        hull.write_hrep_csv(&hpath).unwrap();
        hull.write_vrep_csv(&vpath).unwrap();
        let hs = read_hrep_csv(&hpath).unwrap();
        assert_eq!(hs.len(), hull.n_halfspaces());
        for (a, b) in hs.iter().zip(hull.halfspaces()) {
            assert_eq!(a.offset, b.offset);
            assert_eq!(a.normal, b.normal);
        }
        let vs = read_vrep_csv(&vpath).unwrap();
        assert_eq!(vs.len(), hull.n_vertices());
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn hull_idempotence(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vector3<f64>> = (0..30)
                .map(|_| Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ))
                .collect();
            let hull = Polytope::convex_hull(&pts).unwrap();
            let again = Polytope::convex_hull(hull.vertices()).unwrap();
            prop_assert_eq!(hull.n_vertices(), again.n_vertices());
            for (a, b) in hull.vertices().iter().zip(again.vertices()) {
                prop_assert!((a - b).amax() <= 1e-12);
            }
            prop_assert!((hull.volume() - again.volume()).abs() <= 1e-10 * hull.volume());
        }

        #[test]
        fn inclusion_monotonicity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
            let sample = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vector3<f64>> {
                (0..n).map(|_| Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )).collect()
            };
            let a = sample(&mut rng, 20);
            let b = sample(&mut rng, 10);
            let hull_a = Polytope::convex_hull(&a).unwrap();
            let mut ab = a.clone();
            ab.extend_from_slice(&b);
            let hull_ab = Polytope::convex_hull(&ab).unwrap();
            prop_assert!(hull_a.volume() <= hull_ab.volume() + 1e-12);
        }
    }
}
