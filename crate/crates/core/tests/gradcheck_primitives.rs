//! Finite-difference validation of every tape primitive's adjoint at f64.
//! The oracle is a central difference through the forward pass only — it
//! shares no code with the backward pass it checks.

use std::sync::Arc;

use rand::Rng;

use tokendance_core::autodiff::{ParamId, ParamStore, Tape, Tensor, ValueId};
use tokendance_core::gradcheck::{all_coords, max_rel_error};
use tokendance_core::motion::Skeleton;
use tokendance_core::rng::stream;
use tokendance_core::Result;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-7;

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = stream(seed, "gradcheck", 0);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| lo + (hi - lo) * r.gen::<f64>()).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Build a store of named params, run `graph` to a scalar loss, and compare
/// the tape's gradients against central differences at every coordinate.
fn fd_check(
    params: &[(&str, Tensor<f64>)],
    graph: impl Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
) {
    let mut store = ParamStore::<f64>::new();
    let ids: Vec<ParamId> = params
        .iter()
        .map(|(name, t)| store.add(name, t.clone()))
        .collect();

    let run = |st: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(st);
        let vids: Vec<ValueId> = ids.iter().map(|&p| tape.param(p)).collect();
        let loss = graph(&mut tape, &vids)?;
        Ok(tape.value(loss).item())
    };

    let grads = {
        let mut tape = Tape::new(&store);
        let vids: Vec<ValueId> = ids.iter().map(|&p| tape.param(p)).collect();
        let loss = graph(&mut tape, &vids).expect("graph builds");
        tape.backward(loss).expect("backward runs")
    };

    let coords = all_coords(&store);
    let err = max_rel_error(&mut store, &grads, &coords, EPS, run).expect("fd eval");
    assert!(err < TOL, "max relative gradient error {err}");
}

/// Reduce a matrix output to a scalar with a fixed random quadratic readout.
fn readout(tape: &mut Tape<f64>, y: ValueId, seed: u64) -> Result<ValueId> {
    let shape = tape.value(y).shape().to_vec();
    let target = tape.constant(rand_tensor(&shape, seed, -0.7, 0.7));
    tape.mse(y, target)
}

#[test]
fn grad_matmul() {
    fd_check(
        &[
            ("a", rand_tensor(&[3, 4], 1, -1.0, 1.0)),
            ("b", rand_tensor(&[4, 2], 2, -1.0, 1.0)),
        ],
        |t, p| {
            let y = t.matmul(p[0], p[1])?;
            readout(t, y, 100)
        },
    );
}

#[test]
fn grad_conv1d() {
    // stride 2, pad 1, k 4: the stage-1 downsampling shape
    fd_check(
        &[
            ("x", rand_tensor(&[6, 3], 3, -1.0, 1.0)),
            ("w", rand_tensor(&[4, 3, 2], 4, -0.8, 0.8)),
            ("b", rand_tensor(&[1, 2], 5, -0.3, 0.3)),
        ],
        |t, p| {
            let y = t.conv1d(p[0], p[1], p[2], 2, 1)?;
            readout(t, y, 101)
        },
    );
}

#[test]
fn grad_conv1d_transpose() {
    fd_check(
        &[
            ("x", rand_tensor(&[3, 2], 6, -1.0, 1.0)),
            ("w", rand_tensor(&[2, 4, 3], 7, -0.8, 0.8)),
            ("b", rand_tensor(&[1, 3], 8, -0.3, 0.3)),
        ],
        |t, p| {
            let y = t.conv1d_transpose(p[0], p[1], p[2], 2, 1)?;
            readout(t, y, 102)
        },
    );
}

#[test]
fn grad_dwconv_causal() {
    fd_check(
        &[
            ("x", rand_tensor(&[5, 3], 9, -1.0, 1.0)),
            ("w", rand_tensor(&[4, 3], 10, -0.8, 0.8)),
            ("b", rand_tensor(&[1, 3], 11, -0.3, 0.3)),
        ],
        |t, p| {
            let y = t.dwconv_causal(p[0], p[1], p[2])?;
            readout(t, y, 103)
        },
    );
}

#[test]
fn grad_add_sub_mul_scale() {
    fd_check(
        &[
            ("a", rand_tensor(&[3, 3], 12, -1.0, 1.0)),
            ("b", rand_tensor(&[3, 3], 13, -1.0, 1.0)),
            ("c", rand_tensor(&[3, 3], 14, -1.0, 1.0)),
        ],
        |t, p| {
            let s = t.add(p[0], p[1])?;
            let d = t.sub(s, p[2])?;
            let m = t.mul(d, p[0])?;
            let y = t.scale(m, -1.7)?;
            readout(t, y, 104)
        },
    );
}

#[test]
fn grad_row_broadcasts() {
    fd_check(
        &[
            ("x", rand_tensor(&[4, 3], 15, -1.0, 1.0)),
            ("m", rand_tensor(&[1, 3], 16, 0.2, 1.5)),
            ("v", rand_tensor(&[1, 3], 17, -0.5, 0.5)),
        ],
        |t, p| {
            let y = t.mul_row(p[0], p[1])?;
            let z = t.add_row(y, p[2])?;
            readout(t, z, 105)
        },
    );
}

#[test]
fn grad_col_affine() {
    fd_check(
        &[("x", rand_tensor(&[4, 3], 18, -1.0, 1.0))],
        |t, p| {
            let y = t.col_affine(p[0], vec![1.3, -0.4, 2.0], vec![0.1, 0.0, -0.7])?;
            readout(t, y, 106)
        },
    );
}

#[test]
fn grad_pointwise_nonlinearities() {
    fd_check(
        &[("x", rand_tensor(&[4, 3], 19, -2.0, 2.0))],
        |t, p| {
            let a = t.sigmoid(p[0])?;
            let b = t.tanh(a)?;
            let c = t.silu(b)?;
            let d = t.softplus(c)?;
            readout(t, d, 107)
        },
    );
}

#[test]
fn grad_exp() {
    fd_check(&[("x", rand_tensor(&[3, 3], 20, -1.0, 1.0))], |t, p| {
        let y = t.exp(p[0])?;
        readout(t, y, 108)
    });
}

#[test]
fn grad_softmax() {
    fd_check(&[("x", rand_tensor(&[3, 5], 21, -2.0, 2.0))], |t, p| {
        let y = t.softmax(p[0])?;
        readout(t, y, 109)
    });
}

#[test]
fn grad_embedding() {
    fd_check(
        &[("table", rand_tensor(&[6, 4], 22, -1.0, 1.0))],
        |t, p| {
            // repeated ids exercise gradient accumulation into one row
            let y = t.embedding(p[0], &[1, 3, 1, 5, 0])?;
            readout(t, y, 110)
        },
    );
}

#[test]
fn grad_cumsum_reverse_timediff() {
    fd_check(&[("x", rand_tensor(&[5, 3], 23, -1.0, 1.0))], |t, p| {
        let a = t.cumsum(p[0])?;
        let b = t.reverse_time(a)?;
        let c = t.time_diff(b, 30.0)?;
        readout(t, c, 111)
    });
}

#[test]
fn grad_concat_slice() {
    fd_check(
        &[
            ("a", rand_tensor(&[4, 2], 24, -1.0, 1.0)),
            ("b", rand_tensor(&[4, 3], 25, -1.0, 1.0)),
        ],
        |t, p| {
            let y = t.concat_cols(p[0], p[1])?;
            let z = t.slice_cols(y, 1, 4)?;
            readout(t, z, 112)
        },
    );
}

#[test]
fn grad_selective_scan() {
    // direct inputs, delta kept strictly positive under the probe step
    fd_check(
        &[
            ("u", rand_tensor(&[6, 2], 26, -1.0, 1.0)),
            ("delta", rand_tensor(&[6, 2], 27, 0.05, 0.4)),
            ("a", rand_tensor(&[2, 3], 28, -2.0, -0.1)),
            ("b", rand_tensor(&[6, 3], 29, -1.0, 1.0)),
            ("c", rand_tensor(&[6, 3], 30, -1.0, 1.0)),
        ],
        |t, p| {
            let y = t.selective_scan(p[0], p[1], p[2], p[3], p[4])?;
            readout(t, y, 113)
        },
    );
}

#[test]
fn grad_selective_scan_through_heads() {
    // delta/a produced the way the block produces them: softplus and -exp
    fd_check(
        &[
            ("u", rand_tensor(&[5, 2], 31, -1.0, 1.0)),
            ("dt", rand_tensor(&[5, 2], 32, -2.0, 0.5)),
            ("a_log", rand_tensor(&[2, 3], 33, -1.0, 1.0)),
            ("b", rand_tensor(&[5, 3], 34, -1.0, 1.0)),
            ("c", rand_tensor(&[5, 3], 35, -1.0, 1.0)),
        ],
        |t, p| {
            let delta = t.softplus(p[1])?;
            let a_exp = t.exp(p[2])?;
            let a = t.scale(a_exp, -1.0)?;
            let y = t.selective_scan(p[0], delta, a, p[3], p[4])?;
            readout(t, y, 114)
        },
    );
}

fn rot6d_friendly(t: usize, j: usize, seed: u64) -> Tensor<f64> {
    // keep both axes well away from zero norm and collinearity
    let mut r = stream(seed, "rot6d-input", 0);
    let mut data = Vec::with_capacity(t * j * 6);
    for _ in 0..t * j {
        let a = [
            1.0 + r.gen::<f64>(),
            r.gen::<f64>() - 0.5,
            r.gen::<f64>() - 0.5,
        ];
        let b = [
            r.gen::<f64>() - 0.5,
            1.0 + r.gen::<f64>(),
            r.gen::<f64>() - 0.5,
        ];
        data.extend_from_slice(&a);
        data.extend_from_slice(&b);
    }
    Tensor::from_vec(&[t, 6 * j], data).unwrap()
}

#[test]
fn grad_rot6d() {
    fd_check(&[("x", rot6d_friendly(3, 2, 36))], |t, p| {
        let y = t.rot6d_to_mats(p[0])?;
        readout(t, y, 115)
    });
}

#[test]
fn grad_forward_kinematics() {
    let skel = Skeleton::<f64>::smpl24();
    fd_check(
        &[
            ("rot", rot6d_friendly(2, 24, 37)),
            ("tau", rand_tensor(&[2, 3], 38, -0.5, 0.5)),
        ],
        move |t, p| {
            let mats = t.rot6d_to_mats(p[0])?;
            let pos = t.forward_kinematics(mats, p[1], Arc::clone(&skel))?;
            readout(t, pos, 116)
        },
    );
}

#[test]
fn grad_cross_entropy() {
    fd_check(&[("logits", rand_tensor(&[4, 5], 39, -2.0, 2.0))], |t, p| {
        t.cross_entropy(p[0], &[2, 0, 4, 2])
    });
}

#[test]
fn grad_mse_l1() {
    fd_check(
        &[
            ("a", rand_tensor(&[3, 4], 40, -1.0, 1.0)),
            ("b", rand_tensor(&[3, 4], 41, 2.0, 3.0)), // keep a-b away from the l1 kink
        ],
        |t, p| {
            let m = t.mse(p[0], p[1])?;
            let l = t.l1(p[0], p[1])?;
            t.add(m, l)
        },
    );
}

#[test]
fn grad_round_st_passes_upstream_gradient() {
    // FD straight through rounding measures zero everywhere, so the straight-
    // through claim is split: (1) FD-check the graph with the rounding node
    // removed, (2) under a LINEAR readout — where the upstream gradient does
    // not depend on the rounded values — the tape gradient with the node
    // present must equal the gradient with it absent, bit for bit.
    let x0 = rand_tensor(&[3, 4], 42, -2.0, 2.0);

    fd_check(&[("x", x0.clone())], |t, p| {
        let y = t.scale(p[0], 1.3)?;
        readout(t, y, 117)
    });

    let linear_grads_for = |with_round: bool| {
        let mut store = ParamStore::<f64>::new();
        let pid = store.add("x", x0.clone());
        let mut tape = Tape::new(&store);
        let x = tape.param(pid);
        let mut y = tape.scale(x, 1.3).unwrap();
        if with_round {
            y = tape.round_st(y).unwrap();
        }
        let wconst = tape.constant(rand_tensor(&[4, 1], 118, -1.0, 1.0));
        let v = tape.matmul(y, wconst).unwrap(); // [3,1]
        let ones = tape.constant(Tensor::from_vec(&[1, 3], vec![1.0; 3]).unwrap());
        let s = tape.matmul(ones, v).unwrap(); // [1,1]
        let loss = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(loss).unwrap();
        g.get(pid).unwrap().clone()
    };
    let with = linear_grads_for(true);
    let without = linear_grads_for(false);
    assert_eq!(
        with.data(),
        without.data(),
        "straight-through must pass the upstream gradient unchanged"
    );
}

#[test]
fn grad_deep_composite() {
    // a little of everything chained together
    fd_check(
        &[
            ("x", rand_tensor(&[6, 4], 43, -1.0, 1.0)),
            ("w1", rand_tensor(&[4, 6], 44, -0.7, 0.7)),
            ("w2", rand_tensor(&[3, 3], 45, -0.7, 0.7)),
        ],
        |t, p| {
            let h = t.matmul(p[0], p[1])?; // [6,6]
            let h = t.silu(h)?;
            let lo = t.slice_cols(h, 0, 3)?;
            let hi = t.slice_cols(h, 3, 6)?;
            let prod = t.mul(lo, hi)?;
            let mixed = t.matmul(prod, p[2])?;
            let r = t.reverse_time(mixed)?;
            let cs = t.cumsum(r)?;
            let y = t.tanh(cs)?;
            readout(t, y, 119)
        },
    );
}
