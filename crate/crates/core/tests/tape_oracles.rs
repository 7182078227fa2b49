//! Hand-computed values pinned as tests: known derivatives, known losses,
//! and end-to-end optimizer convergence on a problem with a closed-form
//! answer.

use tokendance_core::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor};

#[test]
fn sigmoid_gradient_at_zero_is_quarter() {
    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", Tensor::scalar(0.0));
    let mut tape = Tape::new(&store);
    let xi = tape.param(x);
    let y = tape.sigmoid(xi).unwrap();
    assert_eq!(tape.value(y).item(), 0.5);
    let g = tape.backward(y).unwrap();
    assert!((g.get(x).unwrap().item() - 0.25).abs() < 1e-15);
}

#[test]
fn square_gradient_at_three_is_six() {
    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", Tensor::scalar(3.0));
    let mut tape = Tape::new(&store);
    let xi = tape.param(x);
    let y = tape.mul(xi, xi).unwrap();
    assert_eq!(tape.value(y).item(), 9.0);
    let g = tape.backward(y).unwrap();
    assert!((g.get(x).unwrap().item() - 6.0).abs() < 1e-15);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::from_vec(&[1, 4], vec![1.7; 4]).unwrap());
    let y = tape.softmax(x).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_vocab() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::from_vec(&[2, 7], vec![0.3; 14]).unwrap());
    let l = tape.cross_entropy(x, &[4, 0]).unwrap();
    assert!((tape.value(l).item() - (7.0f64).ln()).abs() < 1e-12);
}

#[test]
fn adam_drives_a_quadratic_to_its_minimum() {
    // loss = (a - 1.5)^2 + (b + 2)^2, minimized at (1.5, -2)
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::scalar(5.0));
    let b = store.add("b", Tensor::scalar(-7.0));
    let mut opt = Adam::new(
        AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut last = f64::MAX;
    for _ in 0..200 {
        let mut tape = Tape::new(&store);
        let ai = tape.param(a);
        let bi = tape.param(b);
        let ta = tape.constant(Tensor::scalar(1.5));
        let tb = tape.constant(Tensor::scalar(-2.0));
        let da = tape.sub(ai, ta).unwrap();
        let db = tape.sub(bi, tb).unwrap();
        let qa = tape.mul(da, da).unwrap();
        let qb = tape.mul(db, db).unwrap();
        let loss = tape.add(qa, qb).unwrap();
        last = tape.value(loss).item();
        let g = tape.backward(loss).unwrap();
        opt.step(&mut store, &g).unwrap();
    }
    assert!(last < 1e-6, "loss after 200 steps: {last}");
    assert!((store.get(a).item() - 1.5).abs() < 1e-3);
    assert!((store.get(b).item() + 2.0).abs() < 1e-3);
}

#[test]
fn adam_rejects_detached_trainable_params() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::scalar(1.0));
    let _b = store.add("unused", Tensor::scalar(2.0));
    let mut opt = Adam::new(AdamConfig::default(), &store);
    let mut tape = Tape::new(&store);
    let ai = tape.param(a);
    let loss = tape.mul(ai, ai).unwrap();
    let g = tape.backward(loss).unwrap();
    let err = opt.step(&mut store, &g).unwrap_err();
    assert!(err.to_string().contains("unused"), "{err}");
}

#[test]
fn buffers_are_saved_but_not_optimized() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::scalar(4.0));
    let stat = store.add_buffer("stat", Tensor::scalar(9.0));
    let mut opt = Adam::new(AdamConfig::default(), &store);
    let mut tape = Tape::new(&store);
    let ai = tape.param(a);
    let loss = tape.mul(ai, ai).unwrap();
    let g = tape.backward(loss).unwrap();
    opt.step(&mut store, &g).unwrap();
    assert_eq!(store.get(stat).item(), 9.0);
    assert!(store.get(a).item() < 4.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tdck");
    tokendance_core::autodiff::checkpoint::save(&store, &path).unwrap();
    let mut store2 = ParamStore::<f64>::new();
    let _ = store2.add("a", Tensor::scalar(0.0));
    let stat2 = store2.add_buffer("stat", Tensor::scalar(0.0));
    tokendance_core::autodiff::checkpoint::load_into(&mut store2, &path).unwrap();
    assert_eq!(store2.get(stat2).item(), 9.0);
}

#[test]
fn checkpoint_round_trip_preserves_all_values() {
    let mut store = ParamStore::<f32>::new();
    let w = store.add(
        "layer.w",
        Tensor::from_vec(&[2, 3], vec![0.5, -1.25, 3.0, 0.0, -0.0078125, 42.5]).unwrap(),
    );
    let b = store.add("layer.b", Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tdck");
    tokendance_core::autodiff::checkpoint::save(&store, &path).unwrap();

    let mut store2 = ParamStore::<f32>::new();
    let w2 = store2.add("layer.w", Tensor::zeros(&[2, 3]));
    let b2 = store2.add("layer.b", Tensor::zeros(&[1, 3]));
    tokendance_core::autodiff::checkpoint::load_into(&mut store2, &path).unwrap();
    assert_eq!(store.get(w).data(), store2.get(w2).data());
    assert_eq!(store.get(b).data(), store2.get(b2).data());
}

#[test]
fn checkpoint_shape_mismatch_is_rejected() {
    let mut store = ParamStore::<f32>::new();
    store.add("w", Tensor::zeros(&[2, 3]));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tdck");
    tokendance_core::autodiff::checkpoint::save(&store, &path).unwrap();

    let mut wrong = ParamStore::<f32>::new();
    wrong.add("w", Tensor::zeros(&[3, 2]));
    assert!(tokendance_core::autodiff::checkpoint::load_into(&mut wrong, &path).is_err());

    let mut missing = ParamStore::<f32>::new();
    missing.add("other", Tensor::zeros(&[2, 3]));
    assert!(tokendance_core::autodiff::checkpoint::load_into(&mut missing, &path).is_err());
}

#[test]
fn nonfinite_forward_is_caught_and_named() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::from_vec(&[1, 2], vec![1e308, 1.0]).unwrap());
    let err = tape.exp(x).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("exp"), "{msg}");
}

#[test]
fn gradient_clipping_rescales_to_unit_norm() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::scalar(0.0));
    let b = store.add("b", Tensor::scalar(0.0));
    let mut tape = Tape::new(&store);
    let ai = tape.param(a);
    let bi = tape.param(b);
    let c3 = tape.constant(Tensor::scalar(3.0));
    let c4 = tape.constant(Tensor::scalar(4.0));
    let ta = tape.mul(ai, c3).unwrap();
    let tb = tape.mul(bi, c4).unwrap();
    let loss = tape.add(ta, tb).unwrap();
    let mut g = tape.backward(loss).unwrap();
    // gradient is (3, 4), norm 5
    assert!((g.global_norm() - 5.0).abs() < 1e-12);
    let pre = g.clip_global_norm(1.0);
    assert!((pre - 5.0).abs() < 1e-12);
    assert!((g.get(a).unwrap().item() - 0.6).abs() < 1e-12);
    assert!((g.get(b).unwrap().item() - 0.8).abs() < 1e-12);
}
