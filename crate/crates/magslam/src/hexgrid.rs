//! Geometry of 3D hexagonal prism tilings.
//!
//! Flat-top hexagons with axial integer coordinates `(a, b)` plus a vertical
//! `layer` index. Tile `(0, 0, 0)` is centered at `spec.origin`; lateral
//! neighbor centers are `sqrt(3) * radius` apart in-plane and layers stack
//! every `2 * half_height` in z.
//!
//! Face numbering (fixed across the crate):
//! faces 1..6 are the lateral faces, with outward normals at 30, 90, 150,
//! 210, 270 and 330 degrees from the +x axis respectively; face 7 is the top
//! (+z) and face 8 the bottom (-z). `opposite` pairs 1-4, 2-5, 3-6, 7-8.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Specification of one hexagonal prism tiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexGridSpec {
    /// Hexagon circumradius (center to vertex), meters.
    pub radius: f64,
    /// Prism half-height, meters.
    pub half_height: f64,
    /// World position of tile (0, 0, 0)'s center.
    pub origin: Vector3<f64>,
}

impl HexGridSpec {
    pub fn new(radius: f64, half_height: f64, origin: Vector3<f64>) -> Self {
        assert!(radius > 0.0 && half_height > 0.0);
        HexGridSpec {
            radius,
            half_height,
            origin,
        }
    }

    /// Hexagon inradius (center to edge midpoint).
    pub fn inradius(&self) -> f64 {
        self.radius * 3f64.sqrt() / 2.0
    }
}

/// Axial tile index: `(a, b)` in-plane plus a vertical layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HexIndex {
    pub a: i64,
    pub b: i64,
    pub layer: i64,
}

impl HexIndex {
    pub const fn new(a: i64, b: i64, layer: i64) -> Self {
        HexIndex { a, b, layer }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HexGridError {
    #[error("face index {0} out of range 1..=8")]
    FaceOutOfRange(u8),
}

/// One face crossing of a step segment, ordered by `fraction` along the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceCrossing {
    pub from: HexIndex,
    pub to: HexIndex,
    /// 1..6 lateral, 7 top, 8 bottom.
    pub face: u8,
    /// Parameter in [0, 1] along the segment where the crossing occurs.
    pub fraction: f64,
}

/// Axial steps for lateral faces 1..6, matching the normal angles
/// 30 + 60*(j-1) degrees.
const LATERAL_STEPS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

/// Outward unit normal of lateral face `j` (1-based), in the xy-plane.
fn lateral_normal(face: u8) -> Vector2<f64> {
    let angle = (30.0 + 60.0 * (face as f64 - 1.0)).to_radians();
    Vector2::new(angle.cos(), angle.sin())
}

/// The face opposite to `face`.
pub fn opposite(face: u8) -> u8 {
    match face {
        1..=6 => (face + 2) % 6 + 1,
        7 => 8,
        8 => 7,
        _ => panic!("face index {face} out of range"),
    }
}

/// Center of tile `idx` in world coordinates.
pub fn center(idx: HexIndex, spec: &HexGridSpec) -> Vector3<f64> {
    let r = spec.radius;
    let x = 1.5 * r * idx.a as f64;
    let y = 3f64.sqrt() * r * (idx.b as f64 + idx.a as f64 / 2.0);
    let z = 2.0 * spec.half_height * idx.layer as f64;
    spec.origin + Vector3::new(x, y, z)
}

/// Neighbor of `idx` across `face`.
pub fn neighbor(idx: HexIndex, face: u8) -> Result<HexIndex, HexGridError> {
    match face {
        1..=6 => {
            let (da, db) = LATERAL_STEPS[face as usize - 1];
            Ok(HexIndex::new(idx.a + da, idx.b + db, idx.layer))
        }
        7 => Ok(HexIndex::new(idx.a, idx.b, idx.layer + 1)),
        8 => Ok(HexIndex::new(idx.a, idx.b, idx.layer - 1)),
        _ => Err(HexGridError::FaceOutOfRange(face)),
    }
}

/// Signed distance from `p` to the boundary of tile `idx` (negative inside):
/// the largest signed plane excess over the 8 bounding planes.
pub fn boundary_excess(p: &Vector3<f64>, idx: HexIndex, spec: &HexGridSpec) -> f64 {
    let c = center(idx, spec);
    let d = p - c;
    let dxy = Vector2::new(d.x, d.y);
    let mut worst = d.z.abs() - spec.half_height;
    let inr = spec.inradius();
    for face in 1..=6u8 {
        worst = worst.max(lateral_normal(face).dot(&dxy) - inr);
    }
    worst
}

/// Tile containing `p`.
///
/// Points on shared boundaries resolve to the tile with lexicographically
/// smallest `(a, b, layer)` among the tiles whose closed prism contains `p`.
pub fn locate(p: &Vector3<f64>, spec: &HexGridSpec) -> HexIndex {
    let local = p - spec.origin;
    let r = spec.radius;
    // Fractional axial coordinates for the flat-top layout.
    let af = (2.0 / 3.0) * local.x / r;
    let bf = (-local.x / 3.0 + 3f64.sqrt() / 3.0 * local.y) / r;
    let (a, b) = axial_round(af, bf);
    let layer = (local.z / (2.0 * spec.half_height)).round() as i64;
    let guess = HexIndex::new(a, b, layer);

    // Deterministic tie-break on (near-)boundary points: among the guess and
    // its immediate neighbors whose closed prism contains p, take the
    // lexicographically smallest index.
    const EPS: f64 = 1e-9;
    let mut best: Option<HexIndex> = None;
    for dl in -1..=1i64 {
        for (da, db) in std::iter::once((0, 0)).chain(LATERAL_STEPS) {
            let cand = HexIndex::new(guess.a + da, guess.b + db, guess.layer + dl);
            if boundary_excess(p, cand, spec) <= EPS * r {
                best = Some(match best {
                    Some(cur) if cur <= cand => cur,
                    _ => cand,
                });
            }
        }
    }
    best.unwrap_or(guess)
}

/// Round fractional axial coordinates to the nearest hexagon (cube rounding).
fn axial_round(af: f64, bf: f64) -> (i64, i64) {
    let cf = -af - bf;
    let mut a = af.round();
    let mut b = bf.round();
    let c = cf.round();
    let da = (a - af).abs();
    let db = (b - bf).abs();
    let dc = (c - cf).abs();
    if da > db && da > dc {
        a = -b - c;
    } else if db > dc {
        b = -a - c;
    }
    (a as i64, b as i64)
}

/// Face crossings of the segment `p_prev -> p_curr`, advancing tile by tile
/// via exact segment-plane intersection against each tile's 8 bounding
/// planes.
pub fn face_crossings(
    p_prev: &Vector3<f64>,
    p_curr: &Vector3<f64>,
    spec: &HexGridSpec,
) -> Vec<FaceCrossing> {
    let start = locate(p_prev, spec);
    let goal = locate(p_curr, spec);
    let mut out = Vec::new();
    if start == goal {
        return out;
    }
    let dir = p_curr - p_prev;
    let mut tile = start;
    let mut t_cur = 0.0f64;
    // Bounded walk; the chain length is at most the segment length over the
    // inradius plus slack.
    let max_steps = (dir.norm() / spec.inradius().min(spec.half_height)) as usize + 8;
    for _ in 0..max_steps {
        let c = center(tile, spec);
        let inr = spec.inradius();
        // Find the earliest exit among the 8 planes, at t > t_cur.
        let mut best: Option<(f64, u8)> = None;
        for face in 1..=8u8 {
            let (n, offset) = match face {
                1..=6 => {
                    let n2 = lateral_normal(face);
                    (Vector3::new(n2.x, n2.y, 0.0), inr)
                }
                7 => (Vector3::new(0.0, 0.0, 1.0), spec.half_height),
                _ => (Vector3::new(0.0, 0.0, -1.0), spec.half_height),
            };
            let denom = n.dot(&dir);
            if denom <= 0.0 {
                continue;
            }
            let t = (offset - n.dot(&(p_prev - c))) / denom;
            if t >= t_cur - 1e-12 && t <= 1.0 + 1e-12 {
                let t = t.clamp(t_cur, 1.0);
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, face));
                }
            }
        }
        let Some((t, face)) = best else { break };
        let next = neighbor(tile, face).expect("face in range");
        out.push(FaceCrossing {
            from: tile,
            to: next,
            face,
            fraction: t,
        });
        tile = next;
        t_cur = t;
        if tile == goal {
            break;
        }
    }
    out
}
