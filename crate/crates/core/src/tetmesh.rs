//! Tetrahedral objects, point location and geodesic distances over the
//! face-adjacency graph of tetrahedra.
//!
//! Geodesics are shortest paths between tetrahedra, weighted by the rest-pose
//! distance between neighbouring centroids. Because the graph topology never
//! changes, the all-pairs table is computed once from the rest pose and stays
//! valid for every deformed pose; only the tet a point falls into depends on
//! the current vertex positions.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::{par, Vec3};

/// Tolerance on barycentric coordinates for the containment test.
pub const CONTAINMENT_EPS: f64 = 1e-9;
/// Snap radius as a fraction of the rest bounding-box diagonal.
pub const SNAP_FRACTION: f64 = 0.05;
/// Edge weights are rounded to multiples of this length (meters) so that path
/// sums are exact in double precision regardless of summation order.
pub const WEIGHT_QUANTUM: f64 = 1.0 / (1u64 << 32) as f64;

/// On-disk mesh description, in meters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
}

#[derive(Debug, Clone)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    /// Face-sharing neighbours of each tet, sorted ascending.
    pub adjacency: Vec<Vec<usize>>,
    /// `edge_weights[i][k]` is the length of the edge `i -> adjacency[i][k]`.
    pub edge_weights: Vec<Vec<f64>>,
    /// Boundary triangles (faces owned by exactly one tet), outward oriented.
    pub boundary_faces: Vec<[usize; 3]>,
    /// Vertices that lie on at least one boundary face, ascending.
    pub surface_vertices: Vec<usize>,
    /// First tet (lowest index) incident to each vertex.
    pub vertex_tet: Vec<usize>,
    rest_diagonal: f64,
    id: String,
}

fn quantize(w: f64) -> f64 {
    (w / WEIGHT_QUANTUM).round() * WEIGHT_QUANTUM
}

fn signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

pub fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

impl TetMesh {
    /// Builds a mesh and derives adjacency, weights and boundary. Every
    /// violated invariant is reported as its own line.
    pub fn new(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>) -> Result<Self> {
        let mut problems = Vec::new();
        if vertices.is_empty() {
            problems.push("vertices: empty".to_string());
        }
        if tets.is_empty() {
            problems.push("tets: empty".to_string());
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                problems.push(format!("vertices[{i}]: non-finite coordinate"));
            }
        }
        for (t, tet) in tets.iter().enumerate() {
            for (k, &v) in tet.iter().enumerate() {
                if v >= vertices.len() {
                    problems.push(format!(
                        "tets[{t}][{k}]: vertex index {v} out of range (have {})",
                        vertices.len()
                    ));
                }
            }
            for a in 0..4 {
                for b in a + 1..4 {
                    if tet[a] == tet[b] {
                        problems.push(format!("tets[{t}]: repeated vertex index {}", tet[a]));
                    }
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidMesh(problems));
        }

        let mut faces: HashMap<[usize; 3], Vec<(usize, usize)>> = HashMap::new();
        for (t, tet) in tets.iter().enumerate() {
            for opp in 0..4 {
                let mut f = [0usize; 3];
                let mut n = 0;
                for (k, &v) in tet.iter().enumerate() {
                    if k != opp {
                        f[n] = v;
                        n += 1;
                    }
                }
                f.sort_unstable();
                faces.entry(f).or_default().push((t, opp));
            }
        }

        let centroids: Vec<Vec3> = tets
            .iter()
            .map(|t| t.iter().map(|&v| vertices[v]).sum::<Vec3>() / 4.0)
            .collect();
        let mut adjacency = vec![Vec::new(); tets.len()];
        let mut boundary = Vec::new();
        let mut sorted_faces: Vec<_> = faces.into_iter().collect();
        sorted_faces.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        for (face, owners) in sorted_faces {
            match owners.as_slice() {
                [(t, opp)] => {
                    let tet = tets[*t];
                    let mut tri = [0usize; 3];
                    let mut n = 0;
                    for (k, &v) in tet.iter().enumerate() {
                        if k != *opp {
                            tri[n] = v;
                            n += 1;
                        }
                    }
                    // orient away from the opposite vertex
                    let a = vertices[tri[0]];
                    let normal = (vertices[tri[1]] - a).cross(&(vertices[tri[2]] - a));
                    if normal.dot(&(vertices[tet[*opp]] - a)) > 0.0 {
                        tri.swap(1, 2);
                    }
                    boundary.push((*t, tri));
                }
                [(a, _), (b, _)] => {
                    adjacency[*a].push(*b);
                    adjacency[*b].push(*a);
                }
                more => problems.push(format!(
                    "face {face:?}: shared by {} tets (non-manifold)",
                    more.len()
                )),
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidMesh(problems));
        }
        boundary.sort_unstable();
        let boundary_faces: Vec<[usize; 3]> = boundary.into_iter().map(|(_, f)| f).collect();

        let mut edge_weights = Vec::with_capacity(tets.len());
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.sort_unstable();
            nbrs.dedup();
            edge_weights.push(
                nbrs.iter()
                    .map(|&j| quantize((centroids[i] - centroids[j]).norm()).max(WEIGHT_QUANTUM))
                    .collect(),
            );
        }

        let mut on_surface = vec![false; vertices.len()];
        for f in &boundary_faces {
            for &v in f {
                on_surface[v] = true;
            }
        }
        let surface_vertices = (0..vertices.len()).filter(|&v| on_surface[v]).collect();

        let mut vertex_tet = vec![usize::MAX; vertices.len()];
        for (t, tet) in tets.iter().enumerate() {
            for &v in tet {
                if vertex_tet[v] == usize::MAX {
                    vertex_tet[v] = t;
                }
            }
        }
        let orphans: Vec<String> = vertex_tet
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == usize::MAX)
            .map(|(v, _)| format!("vertices[{v}]: not referenced by any tet"))
            .collect();
        if !orphans.is_empty() {
            return Err(Error::InvalidMesh(orphans));
        }

        let (lo, hi) = bounding_box(&vertices);
        let mut hasher = Sha256::new();
        for v in &vertices {
            for c in v.iter() {
                hasher.update(c.to_le_bytes());
            }
        }
        for t in &tets {
            for &v in t {
                hasher.update((v as u64).to_le_bytes());
            }
        }
        let id = hex::encode(&hasher.finalize()[..8]);

        Ok(Self {
            vertices,
            tets,
            adjacency,
            edge_weights,
            boundary_faces,
            surface_vertices,
            vertex_tet,
            rest_diagonal: (hi - lo).norm(),
            id,
        })
    }

    /// Loads from the JSON mesh format and validates, including connectivity.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: MeshFile) -> Result<Self> {
        let vertices = file.vertices.iter().map(|v| Vec3::from(*v)).collect();
        let mesh = Self::new(vertices, file.tets)?;
        if let Err(Error::Disconnected { sizes, firsts }) = mesh.check_connected() {
            return Err(Error::InvalidMesh(vec![format!(
                "tets: graph has {} disconnected components (sizes {sizes:?}, first tets {firsts:?})",
                sizes.len()
            )]));
        }
        Ok(mesh)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            tets: self.tets.clone(),
        }
    }

    /// Short content hash identifying this mesh.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rest_diagonal(&self) -> f64 {
        self.rest_diagonal
    }

    pub fn snap_radius(&self) -> f64 {
        SNAP_FRACTION * self.rest_diagonal
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn centroid(&self, positions: &[Vec3], t: usize) -> Vec3 {
        self.tets[t].iter().map(|&v| positions[v]).sum::<Vec3>() / 4.0
    }

    pub fn rest_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t].map(|v| self.vertices[v]);
        signed_volume(&a, &b, &c, &d)
    }

    /// Unique undirected vertex edges of all tets, ascending.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges = Vec::with_capacity(self.tets.len() * 6);
        for t in &self.tets {
            for a in 0..4 {
                for b in a + 1..4 {
                    edges.push([t[a].min(t[b]), t[a].max(t[b])]);
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Connected components of the tet graph; error if more than one.
    pub fn check_connected(&self) -> Result<()> {
        let n = self.tets.len();
        let mut comp = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        let mut firsts = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let c = sizes.len();
            let mut stack = vec![start];
            comp[start] = c;
            let mut size = 0;
            while let Some(t) = stack.pop() {
                size += 1;
                for &u in &self.adjacency[t] {
                    if comp[u] == usize::MAX {
                        comp[u] = c;
                        stack.push(u);
                    }
                }
            }
            sizes.push(size);
            firsts.push(start);
        }
        if sizes.len() > 1 {
            Err(Error::Disconnected { sizes, firsts })
        } else {
            Ok(())
        }
    }
}

/// Barycentric coordinates of `p` in tet `(a,b,c,d)`; `None` for a
/// zero-volume tet.
pub fn barycentric(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3, p: &Vec3) -> Option<[f64; 4]> {
    let vol = signed_volume(a, b, c, d);
    let scale = (b - a).norm().max((c - a).norm()).max((d - a).norm());
    if !(vol.abs() > 1e-12 * scale * scale * scale) {
        return None;
    }
    let wa = signed_volume(p, b, c, d) / vol;
    let wb = signed_volume(a, p, c, d) / vol;
    let wc = signed_volume(a, b, p, d) / vol;
    let wd = signed_volume(a, b, c, p) / vol;
    Some([wa, wb, wc, wd])
}

/// Lowest-index tet whose current-pose tetrahedron contains `p`. Degenerate
/// tets are skipped.
pub fn containing_tet(mesh: &TetMesh, positions: &[Vec3], p: &Vec3) -> Option<usize> {
    mesh.tets.iter().position(|t| {
        let [a, b, c, d] = t.map(|v| positions[v]);
        barycentric(&a, &b, &c, &d, p)
            .map(|w| w.iter().all(|&x| x >= -CONTAINMENT_EPS))
            .unwrap_or(false)
    })
}

/// Containing tet if any; otherwise the tet with the nearest centroid when it
/// lies within the snap radius.
pub fn locate_tet(mesh: &TetMesh, positions: &[Vec3], p: &Vec3) -> Option<usize> {
    debug_assert_eq!(positions.len(), mesh.vertices.len());
    if let Some(t) = containing_tet(mesh, positions, p) {
        return Some(t);
    }
    let mut best: Option<(f64, usize)> = None;
    for t in 0..mesh.tets.len() {
        let d = (mesh.centroid(positions, t) - p).norm();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, t));
        }
    }
    best.filter(|(d, _)| *d <= mesh.snap_radius()).map(|(_, t)| t)
}

/// Dense all-pairs shortest-path distances between tets, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicTable {
    n: usize,
    dist: Vec<f64>,
    pub mesh_id: String,
}

impl GeodesicTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.n..(i + 1) * self.n]
    }

    /// Largest finite entry.
    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Geodesic between two mesh vertices via their first incident tets.
    pub fn vertex_dist(&self, mesh: &TetMesh, u: usize, v: usize) -> f64 {
        self.dist(mesh.vertex_tet[u], mesh.vertex_tet[v])
    }
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra over an adjacency list with parallel weight lists.
pub fn dijkstra(adjacency: &[Vec<usize>], weights: &[Vec<f64>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut done = vec![false; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { dist: 0.0, node: source });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for (&next, &w) in adjacency[node].iter().zip(&weights[node]) {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Frontier { dist: nd, node: next });
            }
        }
    }
    dist
}

/// All-pairs shortest paths by Dijkstra from every source.
pub fn all_pairs(adjacency: &[Vec<usize>], weights: &[Vec<f64>]) -> Vec<f64> {
    par::map_indexed(adjacency.len(), |s| dijkstra(adjacency, weights, s))
        .into_iter()
        .flatten()
        .collect()
}

pub fn geodesic_table(mesh: &TetMesh) -> Result<GeodesicTable> {
    mesh.check_connected()?;
    Ok(GeodesicTable {
        n: mesh.num_tets(),
        dist: all_pairs(&mesh.adjacency, &mesh.edge_weights),
        mesh_id: mesh.id().to_string(),
    })
}

/// Geodesic distance between two points of the current pose.
pub fn geodesic(
    mesh: &TetMesh,
    table: &GeodesicTable,
    positions: &[Vec3],
    p: &Vec3,
    q: &Vec3,
) -> Result<f64> {
    let tp = locate_tet(mesh, positions, p).ok_or(Error::Unlocatable([p.x, p.y, p.z]))?;
    let tq = locate_tet(mesh, positions, q).ok_or(Error::Unlocatable([q.x, q.y, q.z]))?;
    Ok(table.dist(tp, tq))
}
