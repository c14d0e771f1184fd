//! Relative pose descriptors for directed edges.
//!
//! Every edge `source → target` is described in the target node's local
//! frame, so the descriptor is unchanged by any rigid motion applied to the
//! whole scene.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Global 2-D pose. `theta` is kept in `(−π, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub p: [f64; 2],
    pub theta: f64,
}

impl Pose {
    pub fn new(p: [f64; 2], theta: f64) -> Self {
        Self {
            p,
            theta: wrap(theta),
        }
    }

    /// Expresses a global point in this pose's frame.
    pub fn to_local(&self, q: [f64; 2]) -> [f64; 2] {
        rotate([q[0] - self.p[0], q[1] - self.p[1]], -self.theta)
    }

    /// Maps a local point back to the global frame.
    pub fn to_global(&self, q: [f64; 2]) -> [f64; 2] {
        let r = rotate(q, self.theta);
        [r[0] + self.p[0], r[1] + self.p[1]]
    }

    /// Rotates a global direction vector into this frame.
    pub fn vec_to_local(&self, v: [f64; 2]) -> [f64; 2] {
        rotate(v, -self.theta)
    }
}

pub fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Wraps an angle to `(−π, π]`; `wrap(−π) = π`.
pub fn wrap(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle.rem_euclid(two_pi);
    if a > PI {
        a -= two_pi;
    }
    if a <= -PI {
        a += two_pi;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    A2L,
    L2A,
    L2L,
    A2A,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::A2L, EdgeType::L2A, EdgeType::L2L, EdgeType::A2A];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Geometry of one directed edge in the target's frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeGeom {
    pub dx: f64,
    pub dy: f64,
    pub cos_dt: f64,
    pub sin_dt: f64,
    pub etype: EdgeType,
}

impl EdgeGeom {
    pub fn features(&self) -> [f64; 4] {
        [self.dx, self.dy, self.cos_dt, self.sin_dt]
    }
}

/// Relative position and heading of `source` seen from `target`.
pub fn rel_pose(target: &Pose, source: &Pose, etype: EdgeType) -> EdgeGeom {
    let [dx, dy] = target.to_local(source.p);
    let dt = wrap(source.theta - target.theta);
    let (sin_dt, cos_dt) = dt.sin_cos();
    EdgeGeom {
        dx,
        dy,
        cos_dt,
        sin_dt,
        etype,
    }
}
