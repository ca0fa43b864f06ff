use std::rc::Rc;

use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn elementary_values() {
    let mut tape = Tape::new();
    let z = tape.constant(t(1, 2, &[0.0, -3.0]));
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.value(s).data()[0], 0.5);
    let r = tape.relu(z).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0]);
    let x = tape.constant(t(3, 1, &[1.0, 2.0, 3.0]));
    let seg = tape.segment_sum(x, Rc::new(vec![0, 0, 1]), 2).unwrap();
    assert_eq!(tape.value(seg).data(), &[3.0, 3.0]);
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { left: (2, 3), right: (2, 3), .. }));
    assert!(err.to_string().contains("2x3"), "{err}");
    let c = tape.constant(Tensor::zeros(3, 2));
    assert!(tape.add(a, c).is_err());
    let ab = tape.matmul(a, c).unwrap();
    assert!(matches!(tape.backward(ab), Err(Error::NonScalarLoss((2, 2)))));
}

#[test]
fn polynomial_and_sigmoid_gradients() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let sq = tape.mul(x, x).unwrap();
    assert_eq!(tape.backward(sq).unwrap().get(x).unwrap().data(), &[6.0]);

    let mut tape = Tape::new();
    let w = tape.param(Tensor::scalar(0.0));
    let xv = tape.constant(Tensor::scalar(1.7));
    let wx = tape.matmul(w, xv).unwrap();
    let s = tape.sigmoid(wx).unwrap();
    let g = tape.backward(s).unwrap();
    assert!((g.get(w).unwrap().data()[0] - 0.25 * 1.7).abs() < 1e-15);
}

#[test]
fn focal_loss_values() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::scalar(0.5));
    let l = focal_loss(&mut tape, p, &Tensor::scalar(1.0), 1.0).unwrap();
    assert!((tape.value(l).data()[0] - 0.5 * 2f64.ln()).abs() < 1e-12);

    let probs = [0.1, 0.35, 0.8, 0.999];
    let labels = [1.0, 0.0, 1.0, 0.0];
    let mut tape = Tape::new();
    let p = tape.constant(t(4, 1, &probs));
    let l = focal_loss(&mut tape, p, &t(4, 1, &labels), 0.0).unwrap();
    let bce: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / 4.0;
    assert!((tape.value(l).data()[0] - bce).abs() < 1e-12);

    let mut tape = Tape::new();
    let p = tape.constant(Tensor::scalar(1.0 - 1e-9));
    let l = focal_loss(&mut tape, p, &Tensor::scalar(1.0), 1.0).unwrap();
    assert!(tape.value(l).data()[0] < 1e-15);
}

/// Builds a small mixed graph from parameter values and returns the loss.
fn composite(params: &[Tensor], tape: &mut Tape) -> (Vec<Var>, Var) {
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let x = tape.constant(t(4, 3, &[0.3, -1.2, 0.5, 1.1, 0.2, -0.7, -0.4, 0.9, 1.3, 0.05, -0.6, 0.8]));
    let h = tape.matmul(x, vars[0]).unwrap();
    let h = tape.add_row(h, vars[1]).unwrap();
    let h = tape.relu(h).unwrap();
    let g = tape.gather(h, Rc::new(vec![0, 2, 1, 2, 3])).unwrap();
    let c = tape.concat(&[g, g]).unwrap();
    let s = tape.segment_sum(c, Rc::new(vec![1, 0, 1, 2, 0]), 3).unwrap();
    let o = tape.matmul(s, vars[2]).unwrap();
    let o = tape.clamp(o, -30.0, 30.0).unwrap();
    let p = tape.sigmoid(o).unwrap();
    let loss = focal_loss(tape, p, &t(3, 1, &[1.0, 0.0, 1.0]), 1.0).unwrap();
    (vars, loss)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand_t = |r, c| Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let params = vec![rand_t(3, 5), rand_t(1, 5), rand_t(10, 1)];
    let mut tape = Tape::new();
    let (vars, loss) = composite(&params, &mut tape);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-4;
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let eval = |delta: f64| {
                let mut ps = params.clone();
                ps[pi].data_mut()[k] += delta;
                let mut tape = Tape::new();
                let (_, l) = composite(&ps, &mut tape);
                tape.value(l).data()[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grads.get(vars[pi]).unwrap().data()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {pi}[{k}]: analytic {an}, numeric {fd}");
        }
    }
}

#[test]
fn adam_behaviour() {
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::scalar(1.0));
    let cfg = AdamConfig {
        lr: 0.1,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut st = AdamState::new(&ps, cfg);
    adam_step(&mut ps, &[Some(Tensor::scalar(0.0))], &mut st).unwrap();
    assert_eq!(ps.get("w").unwrap().data(), &[1.0]);
    // f(w) = w^2 / 2 has gradient w
    let g = ps.get("w").unwrap().clone();
    adam_step(&mut ps, &[Some(g)], &mut st).unwrap();
    assert!(ps.get("w").unwrap().data()[0] < 1.0);
    assert!(adam_step(&mut ps, &[Some(Tensor::zeros(2, 1))], &mut st).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let mut ps = ParamSet::new();
    ps.insert("a", t(2, 2, &[1.0, -2.5, 3.25, 1e-300]));
    ps.insert("b", t(1, 3, &[0.1, 0.2, f64::MIN_POSITIVE]));
    save_checkpoint(&path, &ps, serde_json::json!({"k": 10})).unwrap();
    let (back, manifest) = load_checkpoint(&path).unwrap();
    assert_eq!(back, ps);
    assert_eq!(manifest.hyperparameters["k"], 10);
    assert_eq!(manifest.tensors[1].offset, 4);
    std::fs::write(&path, [0u8; 12]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn non_finite_values_are_rejected() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    assert!(matches!(tape.log(z), Err(Error::NonFinite("log"))));
}

proptest! {
    #[test]
    fn segment_sum_is_order_invariant(rows in prop::collection::vec((0usize..4, -100i32..100), 1..30), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let sums = |order: &[usize]| {
            let mut tape = Tape::new();
            let vals: Vec<f64> = order.iter().map(|&i| f64::from(rows[i].1)).collect();
            let ids: Vec<usize> = order.iter().map(|&i| rows[i].0).collect();
            let x = tape.constant(Tensor::new(vals.len(), 1, vals).unwrap());
            let s = tape.segment_sum(x, Rc::new(ids), 4).unwrap();
            tape.value(s).data().to_vec()
        };
        let ident: Vec<usize> = (0..rows.len()).collect();
        prop_assert_eq!(sums(&ident), sums(&perm));
    }
}
