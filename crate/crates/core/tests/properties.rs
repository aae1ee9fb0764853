use hypergrad::ad::{Dataset, FlatVector};
use hypergrad::bilevel::{inner_optimize, BilevelProblem, OptimizerState, Rule};
use hypergrad::expcli::records::fmt_f64;
use hypergrad::hypergrad::{approx_ihvp, dense_hessian, hypergradient, InverseStrategy};
use hypergrad::problems::{
    gen_blobs, make_penalized, make_quadratic, Activation, DecayRegime, ModelKind, ModelShape, PenalizedModelSpec,
    QuadraticBilevelSpec,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn vec_in(layout: &std::sync::Arc<hypergrad::ad::Layout>, xs: &[f64]) -> FlatVector {
    FlatVector::from_vec(layout.clone(), xs.iter().cycle().take(layout.len()).copied().collect()).unwrap()
}

fn mlp_problem(seed: u64) -> (BilevelProblem, ModelShape) {
    let data = gen_blobs(2, 6, 3, 0.7, seed).unwrap();
    let model = ModelKind::Mlp {
        hidden: vec![4],
        activation: Activation::Tanh,
    };
    let shape = ModelShape::new(&model, 3, 2);
    let spec = PenalizedModelSpec {
        model,
        decay: DecayRegime::PerParam,
    };
    (make_penalized(&spec, data.clone(), data, Dataset::empty()).unwrap(), shape)
}

fn strategies() -> impl Strategy<Value = InverseStrategy> {
    prop_oneof![
        Just(InverseStrategy::Identity),
        (1usize..8, 0.01f64..0.2).prop_map(|(terms, alpha)| InverseStrategy::Neumann { terms, alpha }),
        (1usize..8).prop_map(|max_iter| InverseStrategy::Cg { tol: 1e-12, max_iter }),
        Just(InverseStrategy::ExactDense),
        (0usize..6, 0.01f64..0.2).prop_map(|(steps, alpha)| InverseStrategy::Unrolled { steps, alpha }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dense_hessian_is_symmetric(seed in 0u64..1000, scale in 0.1f64..2.0) {
        let (p, shape) = mlp_problem(seed);
        let lam = FlatVector::filled(p.lambda_layout().clone(), -1.0);
        let w = shape.init_weights(seed).with_layout(p.weights_layout().clone()).unwrap().scaled(scale);
        let h = dense_hessian(&p, &lam, &w, 0).unwrap();
        let asym = (&h - h.transpose()).amax();
        prop_assert!(asym <= 1e-10 * h.amax().max(1.0), "asymmetry {asym}");
    }

    #[test]
    fn hvp_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0,
                     xs in prop::collection::vec(-1.0f64..1.0, 8), ys in prop::collection::vec(-1.0f64..1.0, 8)) {
        let (p, shape) = mlp_problem(seed);
        let lam = FlatVector::filled(p.lambda_layout().clone(), -0.5);
        let w = shape.init_weights(seed + 1).with_layout(p.weights_layout().clone()).unwrap();
        let u = vec_in(p.weights_layout(), &xs);
        let v = vec_in(p.weights_layout(), &ys);
        let hvp = |x: &FlatVector| p.train_loss.hvp(&lam, &w, &p.train_data, 0, x).unwrap();
        let lhs = hvp(&u.scaled(a).add(&v.scaled(b)));
        let rhs = hvp(&u).scaled(a).add(&hvp(&v).scaled(b));
        let scale = lhs.norm().max(1.0);
        prop_assert!(lhs.sub(&rhs).norm() <= 1e-10 * scale);
    }

    #[test]
    fn hypergradient_is_deterministic_and_total_is_direct_plus_indirect(
        seed in 0u64..1000, s in strategies(), xs in prop::collection::vec(-1.0f64..1.0, 4)
    ) {
        let spec = QuadraticBilevelSpec::random(5, 3, seed);
        let p = make_quadratic(&spec).unwrap();
        let lam = vec_in(&spec.lambda_layout(), &xs);
        let w = vec_in(&spec.weights_layout(), &xs[1..]);
        let r1 = hypergradient(&p, &lam, &w, &s, seed).unwrap();
        let r2 = hypergradient(&p, &lam, &w, &s, seed).unwrap();
        prop_assert_eq!(r1.total.as_slice(), r2.total.as_slice());
        for i in 0..lam.len() {
            prop_assert_eq!(r1.total.as_slice()[i], r1.direct.as_slice()[i] + r1.indirect.as_slice()[i]);
        }
    }

    #[test]
    fn inner_runs_compose(seed in 0u64..1000, n in 1usize..6, m in 1usize..6, rule in 0usize..3) {
        let (p, shape) = mlp_problem(seed);
        let lam = FlatVector::filled(p.lambda_layout().clone(), -1.0);
        let w0 = shape.init_weights(seed).with_layout(p.weights_layout().clone()).unwrap();
        let r = [Rule::Sgd, Rule::adam(), Rule::rmsprop()][rule];
        let opt = OptimizerState::new(r, 0.05).unwrap();
        let whole = inner_optimize(&p, &lam, &w0, n + m, opt.clone(), seed).unwrap();
        let first = inner_optimize(&p, &lam, &w0, n, opt, seed).unwrap();
        let rest = inner_optimize(&p, &lam, &first.weights, m, first.optimizer, seed).unwrap();
        prop_assert_eq!(whole.weights.as_slice(), rest.weights.as_slice());
        prop_assert_eq!(whole.optimizer, rest.optimizer);
    }

    #[test]
    fn neumann_error_shrinks_with_terms(seed in 0u64..1000, frac in 0.2f64..1.0) {
        let spec = QuadraticBilevelSpec::random(6, 2, seed);
        let p = make_quadratic(&spec).unwrap();
        let (_, lmax) = spec.hessian_spectrum();
        let alpha = frac / lmax;
        let lam = FlatVector::zeros(spec.lambda_layout());
        let w = FlatVector::zeros(spec.weights_layout());
        let v = FlatVector::filled(spec.weights_layout(), 1.0);
        let exact = spec.a.clone().lu().solve(&DVector::from_element(6, 1.0)).unwrap();
        let err = |terms| {
            let (u, _) = approx_ihvp(&InverseStrategy::Neumann { terms, alpha }, &p, &lam, &w, &v, 0).unwrap();
            (DVector::from_column_slice(u.as_slice()) - &exact).norm()
        };
        let mut prev = err(0);
        for terms in [1, 2, 4, 8, 16] {
            let e = err(terms);
            prop_assert!(e <= prev * (1.0 + 1e-12), "terms {terms}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn csv_floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let back: f64 = fmt_f64(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }
}
