mod common;

use fusionrec::numerics::{finite_difference_gradient, forward_backward, ParamStore, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..4 {
        for mag in [1.0, 10.0] {
            for (name, err) in common::all_primitives_error(seed, mag) {
                assert!(err < 1e-6, "{name} (seed {seed}, magnitude {mag}): {err}");
            }
        }
    }
}

#[test]
fn composed_sigmoid_example() {
    let mut s = ParamStore::new();
    let w = s.register("w", Tensor::scalar(0.5));
    let build = |t: &mut Tape, s: &ParamStore| {
        let wv = t.param(s, w);
        let x = t.scale(wv, 2.0);
        t.sigmoid(x)
    };
    let mut t = Tape::new();
    let out = build(&mut t, &s);
    let g = forward_backward(&t, out, &s).unwrap();
    let fd = finite_difference_gradient(
        |s| {
            let mut t = Tape::new();
            let o = build(&mut t, s);
            Ok(t.value(o).item())
        },
        &s,
        1e-5,
    )
    .unwrap();
    assert!((g.get(w).item() - fd.get(w).item()).abs() < 1e-8);
}

#[test]
fn non_finite_objective_is_a_numerical_error() {
    let mut s = ParamStore::new();
    s.register("x", Tensor::scalar(1.0));
    let err = finite_difference_gradient(|_| Ok(f64::NAN), &s, 1e-5).unwrap_err();
    assert_eq!(err.kind(), "numerical");
    assert_eq!(
        finite_difference_gradient(|_| Ok(0.0), &s, 0.0)
            .unwrap_err()
            .kind(),
        "contract"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_reproduces_forward_bits(vals in prop::collection::vec(-10.0f64..10.0, 6)) {
        let mut s = ParamStore::new();
        let a = s.register("a", Tensor::matrix(2, 3, vals.clone()));
        let mut t = Tape::new();
        let x = t.param(&s, a);
        let y = t.tanh(x);
        let z = t.mul(y, x);
        let m = t.mean_all(z);
        let first = t.replay(&s);
        let second = t.replay(&s);
        prop_assert_eq!(first.len(), t.len());
        for (p, q) in first.iter().zip(&second) {
            let pb: Vec<u64> = p.data().iter().map(|v| v.to_bits()).collect();
            let qb: Vec<u64> = q.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(pb, qb);
        }
        prop_assert_eq!(first[m.index()].item().to_bits(), t.value(m).item().to_bits());
    }

    #[test]
    fn constant_objective_has_zero_gradient(v in -10.0f64..10.0) {
        let mut s = ParamStore::new();
        let id = s.register("x", Tensor::scalar(v));
        let g = finite_difference_gradient(|_| Ok(3.0), &s, 1e-5).unwrap();
        prop_assert_eq!(g.get(id).item(), 0.0);
    }
}
