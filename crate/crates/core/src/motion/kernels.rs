//! Rotation and kinematic-chain kernels, with hand-written adjoints. These
//! back the `rot6d_to_matrix` and `forward_kinematics` tape primitives; both
//! directions are plain functions over flat slices so they can also run
//! outside any tape (metrics, data preparation).
//!
//! Layout conventions, used consistently everywhere:
//! * a 6-D rotation is the first two COLUMNS (a, b) of the matrix it encodes;
//! * 3x3 matrices are row-major, `m[3*row + col]`;
//! * rotation inputs to the chain are in pose-slot order (lower-body slots
//!   first, then upper), positions come out in skeleton joint order.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::Skeleton;

/// Below this norm the Gram-Schmidt frame is considered lost.
const DEGENERATE_NORM: f64 = 1e-6;

#[inline]
fn dot3<S: Scalar>(a: &[S], b: &[S]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross3<S: Scalar>(a: &[S], b: &[S]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn mat3_mul<S: Scalar>(a: &[S], b: &[S]) -> [S; 9] {
    let mut c = [S::zero(); 9];
    for r in 0..3 {
        for cc in 0..3 {
            c[3 * r + cc] = a[3 * r] * b[cc] + a[3 * r + 1] * b[3 + cc] + a[3 * r + 2] * b[6 + cc];
        }
    }
    c
}

/// a^T * b
#[inline]
fn mat3_tmul<S: Scalar>(a: &[S], b: &[S]) -> [S; 9] {
    let mut c = [S::zero(); 9];
    for r in 0..3 {
        for cc in 0..3 {
            c[3 * r + cc] = a[r] * b[cc] + a[3 + r] * b[3 + cc] + a[6 + r] * b[6 + cc];
        }
    }
    c
}

/// a * b^T
#[inline]
fn mat3_mul_t<S: Scalar>(a: &[S], b: &[S]) -> [S; 9] {
    let mut c = [S::zero(); 9];
    for r in 0..3 {
        for cc in 0..3 {
            c[3 * r + cc] = a[3 * r] * b[3 * cc] + a[3 * r + 1] * b[3 * cc + 1] + a[3 * r + 2] * b[3 * cc + 2];
        }
    }
    c
}

#[inline]
fn mat3_vec<S: Scalar>(m: &[S], v: &[S]) -> [S; 3] {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}

/// Gram-Schmidt: x = a/|a|, y = normalize(b - (x.b)x), z = x cross y.
/// Input `[t, 6*j]`, output `[t, 9*j]` with (x, y, z) as matrix columns.
pub fn rot6d_to_mats<S: Scalar>(x: &[S], t: usize, j: usize) -> Result<Vec<S>> {
    let mut out = vec![S::zero(); t * j * 9];
    let tiny = S::of(DEGENERATE_NORM);
    for r in 0..t {
        for k in 0..j {
            let base = (r * j + k) * 6;
            let a = &x[base..base + 3];
            let b = &x[base + 3..base + 6];
            let na = dot3(a, a).sqrt();
            if na < tiny {
                return Err(CoreError::DegenerateRotation(format!(
                    "frame {r}, slot {k}: first 6-D axis has norm {na}"
                )));
            }
            let xv = [a[0] / na, a[1] / na, a[2] / na];
            let d = dot3(&xv, b);
            let u = [b[0] - d * xv[0], b[1] - d * xv[1], b[2] - d * xv[2]];
            let nu = dot3(&u, &u).sqrt();
            if nu < tiny {
                return Err(CoreError::DegenerateRotation(format!(
                    "frame {r}, slot {k}: 6-D axes are collinear (residual norm {nu})"
                )));
            }
            let yv = [u[0] / nu, u[1] / nu, u[2] / nu];
            let zv = cross3(&xv, &yv);
            let o = (r * j + k) * 9;
            for row in 0..3 {
                out[o + 3 * row] = xv[row];
                out[o + 3 * row + 1] = yv[row];
                out[o + 3 * row + 2] = zv[row];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`rot6d_to_mats`]; recomputes the forward intermediates.
pub fn rot6d_to_mats_backward<S: Scalar>(x: &[S], g: &[S], t: usize, j: usize) -> Vec<S> {
    let mut dx = vec![S::zero(); t * j * 6];
    for r in 0..t {
        for k in 0..j {
            let base = (r * j + k) * 6;
            let a = &x[base..base + 3];
            let b = &x[base + 3..base + 6];
            let na = dot3(a, a).sqrt();
            let xv = [a[0] / na, a[1] / na, a[2] / na];
            let d = dot3(&xv, b);
            let u = [b[0] - d * xv[0], b[1] - d * xv[1], b[2] - d * xv[2]];
            let nu = dot3(&u, &u).sqrt();
            let yv = [u[0] / nu, u[1] / nu, u[2] / nu];

            let o = (r * j + k) * 9;
            let mut dxc = [g[o], g[o + 3], g[o + 6]];
            let mut dyc = [g[o + 1], g[o + 4], g[o + 7]];
            let dzc = [g[o + 2], g[o + 5], g[o + 8]];

            // z = x cross y
            let cy = cross3(&yv, &dzc);
            let cx = cross3(&dzc, &xv);
            for i in 0..3 {
                dxc[i] += cy[i];
                dyc[i] += cx[i];
            }
            // y = u / |u|  =>  du = (dy - y (y.dy)) / |u|
            let ydy = dot3(&yv, &dyc);
            let du = [
                (dyc[0] - yv[0] * ydy) / nu,
                (dyc[1] - yv[1] * ydy) / nu,
                (dyc[2] - yv[2] * ydy) / nu,
            ];
            // u = b - d x
            let mut db = du;
            for i in 0..3 {
                dxc[i] -= d * du[i];
            }
            let dd = -dot3(&du, &xv);
            // d = x.b
            for i in 0..3 {
                dxc[i] += dd * b[i];
                db[i] += dd * xv[i];
            }
            // x = a / |a|
            let xdx = dot3(&xv, &dxc);
            for i in 0..3 {
                dx[base + i] += (dxc[i] - xv[i] * xdx) / na;
                dx[base + 3 + i] += db[i];
            }
        }
    }
    dx
}

/// Walk the chain: global rotation and position per joint, positions only as
/// output. `mats` is `[t, 9*J]` in pose-slot order, `tau` is `[t, 3]` root
/// translation; output `[t, 3*J]` in skeleton joint order.
pub fn fk_positions<S: Scalar>(mats: &[S], tau: &[S], skel: &Skeleton<S>, t: usize) -> Vec<S> {
    let j = skel.joint_count();
    let mut out = vec![S::zero(); t * j * 3];
    let mut rg = vec![[S::zero(); 9]; j];
    let mut pos = vec![[S::zero(); 3]; j];
    for r in 0..t {
        for jj in 0..j {
            let slot = skel.slot_of(jj);
            let rl = &mats[(r * j + slot) * 9..(r * j + slot) * 9 + 9];
            match skel.parent(jj) {
                None => {
                    rg[jj].copy_from_slice(rl);
                    pos[jj] = [tau[r * 3], tau[r * 3 + 1], tau[r * 3 + 2]];
                }
                Some(par) => {
                    rg[jj] = mat3_mul(&rg[par], rl);
                    let step = mat3_vec(&rg[par], skel.offset(jj));
                    pos[jj] = [
                        pos[par][0] + step[0],
                        pos[par][1] + step[1],
                        pos[par][2] + step[2],
                    ];
                }
            }
            out[(r * j + jj) * 3] = pos[jj][0];
            out[(r * j + jj) * 3 + 1] = pos[jj][1];
            out[(r * j + jj) * 3 + 2] = pos[jj][2];
        }
    }
    out
}

/// Adjoint of [`fk_positions`]: walks each frame's chain forward to rebuild
/// global rotations, then sweeps joints in reverse pushing position and
/// rotation cotangents down to each joint's local rotation and the root.
pub fn fk_positions_backward<S: Scalar>(
    mats: &[S],
    skel: &Skeleton<S>,
    g: &[S],
    t: usize,
) -> (Vec<S>, Vec<S>) {
    let j = skel.joint_count();
    let mut dmats = vec![S::zero(); t * j * 9];
    let mut dtau = vec![S::zero(); t * 3];
    let mut rg = vec![[S::zero(); 9]; j];
    for r in 0..t {
        for jj in 0..j {
            let slot = skel.slot_of(jj);
            let rl = &mats[(r * j + slot) * 9..(r * j + slot) * 9 + 9];
            match skel.parent(jj) {
                None => rg[jj].copy_from_slice(rl),
                Some(par) => rg[jj] = mat3_mul(&rg[par], rl),
            }
        }
        let mut dpos: Vec<[S; 3]> = (0..j)
            .map(|jj| {
                [
                    g[(r * j + jj) * 3],
                    g[(r * j + jj) * 3 + 1],
                    g[(r * j + jj) * 3 + 2],
                ]
            })
            .collect();
        let mut drg = vec![[S::zero(); 9]; j];
        for jj in (0..j).rev() {
            let slot = skel.slot_of(jj);
            let rl = &mats[(r * j + slot) * 9..(r * j + slot) * 9 + 9];
            let drl: [S; 9];
            match skel.parent(jj) {
                None => {
                    for i in 0..3 {
                        dtau[r * 3 + i] += dpos[jj][i];
                    }
                    drl = drg[jj];
                }
                Some(par) => {
                    // pos[jj] = pos[par] + rg[par] * off
                    let off = skel.offset(jj);
                    for row in 0..3 {
                        for col in 0..3 {
                            drg[par][3 * row + col] += dpos[jj][row] * off[col];
                        }
                    }
                    let dpj = dpos[jj];
                    for i in 0..3 {
                        dpos[par][i] += dpj[i];
                    }
                    // rg[jj] = rg[par] * rl
                    drl = mat3_tmul(&rg[par], &drg[jj]);
                    let add = mat3_mul_t(&drg[jj], rl);
                    for i in 0..9 {
                        drg[par][i] += add[i];
                    }
                }
            }
            let o = (r * j + slot) * 9;
            for i in 0..9 {
                dmats[o + i] += drl[i];
            }
        }
    }
    (dmats, dtau)
}

/// Rotation by `angle` about a coordinate axis (0 = x, 1 = y, 2 = z),
/// row-major. Handy for building test poses and synthetic motion.
pub fn rot_about_axis<S: Scalar>(axis: usize, angle: S) -> [S; 9] {
    let (s, c) = (angle.sin(), angle.cos());
    let (zero, one) = (S::zero(), S::one());
    match axis {
        0 => [one, zero, zero, zero, c, -s, zero, s, c],
        1 => [c, zero, s, zero, one, zero, -s, zero, c],
        2 => [c, -s, zero, s, c, zero, zero, zero, one],
        _ => panic!("axis must be 0, 1, or 2"),
    }
}

/// First two columns of a rotation matrix — the 6-D encoding of it.
pub fn mat_to_rot6d<S: Scalar>(m: &[S; 9]) -> [S; 6] {
    [m[0], m[3], m[6], m[1], m[4], m[7]]
}

/// Apply a rotation to a 3-vector (row-major matrix).
pub fn rotate_vec<S: Scalar>(m: &[S; 9], v: &[S; 3]) -> [S; 3] {
    mat3_vec(m, v)
}

/// Compose two rotations; the result applies `b` first, then `a`.
pub fn compose<S: Scalar>(a: &[S; 9], b: &[S; 9]) -> [S; 9] {
    mat3_mul(a, b)
}
