//! Marching-cubes extraction of a colored mesh from the TSDF, whole or per
//! changed block.

mod table;

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap as HashMap;

use crate::geometry::TriangleMesh;
use crate::par;
use crate::spatial::VoxelKey;
use crate::tsdf::{TsdfVolume, TsdfVoxel};

pub use table::{corner_offset, EDGES, TRIANGLES};

/// Color given to corners no colored point has reached.
pub const UNCOLORED: [f64; 3] = [128.0; 3];

/// Color at `t` along the edge from `a` to `b`. An uncolored corner takes
/// the other corner's color; with neither colored the vertex is gray.
fn edge_color(a: &TsdfVoxel, b: &TsdfVoxel, t: f64) -> [f64; 3] {
    match (a.color_weight > 0.0, b.color_weight > 0.0) {
        (true, true) => std::array::from_fn(|i| a.color[i] + t * (b.color[i] - a.color[i])),
        (true, false) => a.color,
        (false, true) => b.color,
        (false, false) => UNCOLORED,
    }
}

/// Mesh of the cubes whose lowest corner lies in `block`. Cubes reach into the
/// +x/+y/+z neighbors for their upper corners and are skipped unless all
/// eight corners are observed. Vertices are shared within the block.
pub fn extract_block(vol: &TsdfVolume, block: &VoxelKey) -> TriangleMesh {
    let mut mesh = TriangleMesh::default();
    let Some(b) = vol.block(block) else { return mesh };
    let n = vol.voxels_per_side() as i64;
    let base = block.map(|c| c * n);
    let local = |v: &VoxelKey| -> Option<&TsdfVoxel> {
        let l = [v[0] - base[0], v[1] - base[1], v[2] - base[2]];
        if l.iter().all(|c| (0..n).contains(c)) {
            Some(&b.voxels[(l[0] + n * (l[1] + n * l[2])) as usize])
        } else {
            vol.voxel(v)
        }
    };
    let mut shared: HashMap<(VoxelKey, usize), u32> = HashMap::default();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let g = [base[0] + x, base[1] + y, base[2] + z];
                let mut corners = [TsdfVoxel::default(); 8];
                let mut complete = true;
                for (k, c) in corners.iter_mut().enumerate() {
                    let o = corner_offset(k);
                    match local(&[g[0] + o[0], g[1] + o[1], g[2] + o[2]]) {
                        Some(v) if v.is_observed() => *c = *v,
                        _ => {
                            complete = false;
                            break;
                        }
                    }
                }
                if !complete {
                    continue;
                }
                let case = (0..8).filter(|&k| corners[k].distance < 0.0).fold(0usize, |m, k| m | (1 << k));
                for tri in &TRIANGLES[case] {
                    let idx = tri.map(|e| {
                        let (a, b, axis) = EDGES[e as usize];
                        let oa = corner_offset(a);
                        let lower = [g[0] + oa[0], g[1] + oa[1], g[2] + oa[2]];
                        *shared.entry((lower, axis)).or_insert_with(|| {
                            let (va, vb) = (&corners[a], &corners[b]);
                            let t = va.distance / (va.distance - vb.distance);
                            let pa = vol.voxel_center(&lower);
                            let mut upper = lower;
                            upper[axis] += 1;
                            let pb = vol.voxel_center(&upper);
                            let color = edge_color(va, vb, t);
                            mesh.vertices.push(pa + (pb - pa) * t);
                            mesh.vertex_colors.push(TsdfVoxel { color, ..Default::default() }.rgb());
                            (mesh.vertices.len() - 1) as u32
                        })
                    });
                    mesh.triangles.push(idx);
                }
            }
        }
    }
    mesh
}

fn concat<'a>(parts: impl IntoIterator<Item = &'a TriangleMesh>) -> TriangleMesh {
    let mut out = TriangleMesh::default();
    for m in parts {
        out.append(m);
    }
    out
}

/// Full extraction: per-block meshes concatenated in ascending block order.
pub fn extract_mesh(vol: &TsdfVolume) -> TriangleMesh {
    let blocks = vol.block_indices();
    let meshes = par::map(&blocks, |b| extract_block(vol, b));
    concat(&meshes)
}

/// Blocks whose mesh depends on `block`: itself and the seven blocks below it
/// along any combination of axes.
pub fn dependents(block: &VoxelKey) -> impl Iterator<Item = VoxelKey> + '_ {
    (0..8).map(move |k| {
        let o = corner_offset(k);
        [block[0] - o[0], block[1] - o[1], block[2] - o[2]]
    })
}

/// Blocks re-meshed by one [`IncrementalMesher::update`] and their new meshes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeshPatch {
    pub blocks: Vec<(VoxelKey, TriangleMesh)>,
}

impl MeshPatch {
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Per-block mesh cache kept current from the TSDF's dirty-block set.
#[derive(Clone, Debug, Default)]
pub struct IncrementalMesher {
    meshes: BTreeMap<VoxelKey, TriangleMesh>,
}

impl IncrementalMesher {
    pub fn new() -> Self {
        IncrementalMesher::default()
    }

    /// Re-meshes every allocated block that depends on a dirty block.
    pub fn update(&mut self, vol: &TsdfVolume, dirty: &BTreeSet<VoxelKey>) -> MeshPatch {
        let affected: BTreeSet<VoxelKey> =
            dirty.iter().flat_map(|b| dependents(b)).filter(|b| vol.block(b).is_some()).collect();
        let affected: Vec<VoxelKey> = affected.into_iter().collect();
        let meshes = par::map(&affected, |b| extract_block(vol, b));
        let mut patch = MeshPatch::default();
        for (b, m) in affected.into_iter().zip(meshes) {
            if m.triangles.is_empty() {
                self.meshes.remove(&b);
            } else {
                self.meshes.insert(b, m.clone());
            }
            patch.blocks.push((b, m));
        }
        patch
    }

    pub fn num_blocks(&self) -> usize {
        self.meshes.len()
    }

    /// Union of the cached block meshes, ascending block order.
    pub fn mesh(&self) -> TriangleMesh {
        concat(self.meshes.values())
    }
}

/// Merges vertices with identical coordinates, for topology checks across
/// block boundaries.
pub fn weld(mesh: &TriangleMesh) -> TriangleMesh {
    let mut index: HashMap<[u64; 3], u32> = HashMap::default();
    let mut out = TriangleMesh::default();
    let remap: Vec<u32> = mesh
        .vertices
        .iter()
        .zip(&mesh.vertex_colors)
        .map(|(v, c)| {
            *index.entry([v.x.to_bits(), v.y.to_bits(), v.z.to_bits()]).or_insert_with(|| {
                out.vertices.push(*v);
                out.vertex_colors.push(*c);
                (out.vertices.len() - 1) as u32
            })
        })
        .collect();
    out.triangles = mesh.triangles.iter().map(|t| t.map(|i| remap[i as usize])).collect();
    out
}

/// `V − E + F` of a welded mesh.
pub fn euler_characteristic(mesh: &TriangleMesh) -> i64 {
    let mut edges = BTreeSet::new();
    for t in &mesh.triangles {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    mesh.vertices.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64
}

/// Signed volume enclosed by a closed, outward-oriented mesh.
pub fn enclosed_volume(mesh: &TriangleMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}
