//! Marching-cubes case table, derived from the cube topology at first use.
//!
//! Corner `k` sits at offset `(k & 1, (k >> 1) & 1, (k >> 2) & 1)`; a case
//! index has bit `k` set when corner `k` is inside (negative distance). On each
//! cube face the crossing edges are joined into segments; where a face has
//! four crossings the inside corners are separated. Because that choice
//! depends only on the face, neighboring cubes agree and the surface is closed.
//! Segments are chained into loops and fanned into triangles whose normals
//! point toward the outside.

use std::sync::LazyLock;

/// Edge `i` joins `EDGES[i].0` to `EDGES[i].1`, which differ along axis
/// `EDGES[i].2`; the first corner is the lower one.
pub const EDGES: [(usize, usize, usize); 12] = {
    let mut out = [(0, 0, 0); 12];
    let mut n = 0;
    let mut axis = 0;
    while axis < 3 {
        let mut c = 0;
        while c < 8 {
            if c & (1 << axis) == 0 {
                out[n] = (c, c | (1 << axis), axis);
                n += 1;
            }
            c += 1;
        }
        axis += 1;
    }
    out
};

pub fn corner_offset(k: usize) -> [i64; 3] {
    [(k & 1) as i64, ((k >> 1) & 1) as i64, ((k >> 2) & 1) as i64]
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(p, q, _)| (p == a && q == b) || (p == b && q == a))
        .expect("corners share an edge")
}

/// Face corners in counter-clockwise order seen from outside the cube.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let corner = |u: usize, v: usize| (side << axis) | (u << b) | (v << c);
            let ccw = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            out.push(if side == 1 { ccw } else { [ccw[0], ccw[3], ccw[2], ccw[1]] });
        }
    }
    out
}

fn triangulate(case: usize) -> Vec<[u8; 3]> {
    let inside = |k: usize| case & (1 << k) != 0;
    // next[e] = edge that follows e along the surface loop.
    let mut next = [usize::MAX; 12];
    for f in faces() {
        let crossing: Vec<usize> = (0..4).filter(|&i| inside(f[i]) != inside(f[(i + 1) % 4])).collect();
        for (j, &i) in crossing.iter().enumerate() {
            // A segment starts where the boundary walk enters the inside and
            // ends at the next crossing, leaving it again.
            if !inside(f[i]) && inside(f[(i + 1) % 4]) {
                let end = crossing[(j + 1) % crossing.len()];
                next[edge_between(f[i], f[(i + 1) % 4])] = edge_between(f[end], f[(end + 1) % 4]);
            }
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut ring = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            ring.push(e as u8);
            e = next[e];
        }
        for i in 1..ring.len() - 1 {
            tris.push([ring[0], ring[i], ring[i + 1]]);
        }
    }
    tris
}

/// Triangles (as edge triples) for each of the 256 cases.
pub static TRIANGLES: LazyLock<Vec<Vec<[u8; 3]>>> = LazyLock::new(|| (0..256).map(triangulate).collect());
