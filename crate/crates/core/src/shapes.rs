//! Built-in test objects assembled from unit cubes, each split into six
//! tetrahedra around its main diagonal. The split is conforming across shared
//! cube faces, so any face-connected set of cells yields a valid mesh.

use std::collections::HashMap;

use crate::tetmesh::TetMesh;
use crate::Vec3;

/// Kuhn split of the unit cube into six tets sharing the 000-111 diagonal.
/// Corners are indexed by bit pattern `x | y << 1 | z << 2`.
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Builds a tet mesh from integer cube cells of edge length `cell` (meters),
/// with the lowest cell corner at the origin. Vertex order follows first use.
pub fn polycube(cells: &[[i32; 3]], cell: f64) -> TetMesh {
    let mut index: HashMap<[i32; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut tets = Vec::with_capacity(cells.len() * 6);
    let lo = cells.iter().fold([i32::MAX; 3], |acc, c| {
        [acc[0].min(c[0]), acc[1].min(c[1]), acc[2].min(c[2])]
    });
    for c in cells {
        let mut corner = [0usize; 8];
        for (bits, slot) in corner.iter_mut().enumerate() {
            let g = [
                c[0] + (bits & 1) as i32,
                c[1] + ((bits >> 1) & 1) as i32,
                c[2] + ((bits >> 2) & 1) as i32,
            ];
            *slot = *index.entry(g).or_insert_with(|| {
                vertices.push(Vec3::new(
                    (g[0] - lo[0]) as f64 * cell,
                    (g[1] - lo[1]) as f64 * cell,
                    (g[2] - lo[2]) as f64 * cell,
                ));
                vertices.len() - 1
            });
        }
        for k in KUHN {
            tets.push(k.map(|b| corner[b]));
        }
    }
    TetMesh::new(vertices, tets).expect("polycube cells produce a valid mesh")
}

fn block(nx: i32, ny: i32, nz: i32) -> Vec<[i32; 3]> {
    let mut cells = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                cells.push([x, y, z]);
            }
        }
    }
    cells
}

/// 0.20 x 0.15 x 0.15 m box, 216 tets.
pub fn box_mesh() -> TetMesh {
    polycube(&block(4, 3, 3), 0.05)
}

/// L-shaped slab, 0.24 x 0.24 x 0.08 m, 240 tets.
pub fn l_mesh() -> TetMesh {
    let cells: Vec<_> = block(6, 6, 2)
        .into_iter()
        .filter(|c| c[0] < 2 || c[1] < 2)
        .collect();
    polycube(&cells, 0.04)
}

/// Straight bendable chain of 18 cells, 0.36 m long, 108 tets.
pub fn snake_mesh() -> TetMesh {
    polycube(&block(18, 1, 1), 0.02)
}

/// Star-shaped toy: a 2x2x2 body with four 3-cell limbs, 120 tets.
pub fn toy_mesh() -> TetMesh {
    let mut cells = block(2, 2, 2);
    for k in 0..3 {
        cells.push([2 + k, 0, 0]);
        cells.push([-1 - k, 1, 0]);
        cells.push([1, 2 + k, 0]);
        cells.push([0, -1 - k, 0]);
    }
    polycube(&cells, 0.04)
}

/// U-shaped chain whose two arms run side by side one cell apart: the ends
/// are close in space but far along the object. 21 cells, 126 tets.
pub fn folded_chain_mesh() -> TetMesh {
    let mut cells = Vec::new();
    for x in 0..10 {
        cells.push([x, 0, 0]);
    }
    cells.push([9, 1, 0]);
    cells.push([9, 2, 0]);
    for x in (0..9).rev() {
        cells.push([x, 2, 0]);
    }
    polycube(&cells, 0.03)
}

/// Looks up a built-in mesh by name.
pub fn by_name(name: &str) -> Option<TetMesh> {
    Some(match name {
        "box" => box_mesh(),
        "l" | "l-shape" => l_mesh(),
        "snake" => snake_mesh(),
        "toy" => toy_mesh(),
        "folded" | "folded-chain" => folded_chain_mesh(),
        _ => return None,
    })
}

pub const NAMES: [&str; 5] = ["box", "l-shape", "snake", "toy", "folded-chain"];
