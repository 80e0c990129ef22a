use glw::numerics::gradcheck::check_gradients;
use glw::numerics::linalg::gaussian_matrix;
use glw::numerics::{rng, Activation, Tape, Tensor};

#[test]
fn affine_matches_naive_triple_loop() {
    let x = gaussian_matrix(3, 4, 1.0, &mut rng(0));
    let w = gaussian_matrix(4, 2, 1.0, &mut rng(1));
    let b = Tensor::vector(vec![0.25, -0.5]);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()).unwrap(),
        tape.constant(w.clone()).unwrap(),
        tape.constant(b.clone()).unwrap(),
    );
    let out = tape.affine(xv, wv, bv).unwrap();
    let got = tape.value(out);
    for r in 0..3 {
        for c in 0..2 {
            let mut acc = b.data()[c];
            for k in 0..4 {
                acc += x.get(r, k) * w.get(k, c);
            }
            assert!((got.get(r, c) - acc).abs() <= 1e-12);
        }
    }
}

#[test]
fn mse_matches_scalar_loop() {
    let p = gaussian_matrix(5, 3, 1.0, &mut rng(2));
    let t = gaussian_matrix(5, 3, 1.0, &mut rng(3));
    let mut tape = Tape::new();
    let (pv, tv) = (tape.constant(p.clone()).unwrap(), tape.constant(t.clone()).unwrap());
    let l = tape.mse(pv, tv).unwrap();
    let want: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 15.0;
    assert!((tape.value(l).item() - want).abs() <= 1e-12);
}

#[test]
fn two_layer_tanh_net_passes_finite_difference_check() {
    for seed in 0..5 {
        let x = gaussian_matrix(6, 3, 1.0, &mut rng(seed));
        let y = gaussian_matrix(6, 2, 1.0, &mut rng(seed + 10));
        let params = vec![
            gaussian_matrix(3, 5, 0.7, &mut rng(seed + 20)),
            Tensor::vector(gaussian_matrix(1, 5, 0.1, &mut rng(seed + 30)).into_data()),
            gaussian_matrix(5, 2, 0.7, &mut rng(seed + 40)),
            Tensor::vector(gaussian_matrix(1, 2, 0.1, &mut rng(seed + 50)).into_data()),
        ];
        let check = check_gradients(&params, 1e-5, |tape, v| {
            let xv = tape.constant(x.clone())?;
            let yv = tape.constant(y.clone())?;
            let h = tape.affine(xv, v[0], v[1])?;
            let h = tape.act(h, Activation::Tanh)?;
            let o = tape.affine(h, v[2], v[3])?;
            tape.mse(o, yv)
        })
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "seed {seed}: {}", check.max_rel_error);
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x0 = gaussian_matrix(4, 3, 1.0, &mut rng(7));
    let grad_of = |a: f64, b: f64| {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true).unwrap();
        let t = tape.act(x, Activation::Tanh).unwrap();
        let l1 = tape.mean_row_sq_norm(t).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let l2 = tape.sum(sq).unwrap();
        let s1 = tape.scale(l1, a).unwrap();
        let s2 = tape.scale(l2, b).unwrap();
        let l = tape.add(s1, s2).unwrap();
        tape.backward(l).unwrap();
        tape.grad(x).unwrap().clone()
    };
    let (a, b) = (1.7, -0.6);
    let g1 = grad_of(1.0, 0.0);
    let g2 = grad_of(0.0, 1.0);
    let g = grad_of(a, b);
    for k in 0..g.len() {
        assert!((g.data()[k] - (a * g1.data()[k] + b * g2.data()[k])).abs() <= 1e-10);
    }
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.backward(l).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0, 12.0]);
}
