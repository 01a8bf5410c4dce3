use std::f64::consts::{PI, TAU};

use groklab::group::*;
use groklab::ka::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn p97() -> Prime {
    Prime::new(97).unwrap()
}

fn nonzero_complex() -> impl Strategy<Value = Complex64> {
    (1e-3f64..1e3, -PI..PI).prop_map(|(r, t)| Complex64::from_polar(r, t))
}

fn twist_mod(m: u32) -> impl Strategy<Value = i64> {
    (1..m as i64).prop_filter("coprime", move |&k| gcd(k as u64, m as u64) == 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn wrap_turns_log_of_product_into_sum(z1 in nonzero_complex(), z2 in nonzero_complex()) {
        let lhs = wrap(z1.ln() + z2.ln());
        let rhs = wrap((z1 * z2).ln());
        let d = (lhs - rhs).norm();
        // a result sitting at the 0/2π seam may land on either side
        prop_assert!(d < 1e-10 || (d - TAU).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

proptest! {
    #[test]
    fn wrapped_imaginary_part_lies_in_one_turn(re in -10.0f64..10.0, im in -100.0f64..100.0) {
        let w = wrap(Complex64::new(re, im));
        prop_assert_eq!(w.re, re);
        prop_assert!((0.0..TAU).contains(&w.im));
    }

    #[test]
    fn add_twists_decode_like_the_untwisted_rep(k in twist_mod(97), a in 0u32..97, b in 0u32..97) {
        let base = KaRep::cyclic_add(p97(), 1).unwrap();
        let twisted = KaRep::cyclic_add(p97(), k).unwrap();
        prop_assert_eq!(twisted.eval_rep(&[a, b]).unwrap(), base.eval_rep(&[a, b]).unwrap());
        prop_assert_eq!(twisted.eval_rep(&[a, b]).unwrap(), eval_op(OpId::Add, a, b, p97()).unwrap());
        if k != 1 {
            prop_assert_ne!(twisted.phi(1).unwrap(), base.phi(1).unwrap());
        }
    }

    #[test]
    fn mul_twists_decode_products(k in twist_mod(96), a in 1u32..97, b in 1u32..97) {
        let rep = KaRep::cyclic_mul(p97(), k).unwrap();
        prop_assert_eq!(rep.eval_rep(&[a, b]).unwrap(), eval_op(OpId::Mul, a, b, p97()).unwrap());
    }

    #[test]
    fn anti_abelian_of_equal_inputs_is_the_identity(x in 1u32..97) {
        let sub = KaRep::anti_abelian(KaRep::cyclic_add(p97(), 1).unwrap()).unwrap();
        prop_assert_eq!(sub.eval_anti_abelian(x, x).unwrap(), 0);
        let div = KaRep::anti_abelian(KaRep::cyclic_mul(p97(), 1).unwrap()).unwrap();
        prop_assert_eq!(div.eval_anti_abelian(x, x).unwrap(), 1);
    }

    #[test]
    fn one_rep_decodes_every_arity(xs in proptest::collection::vec(1u32..97, 2..7)) {
        let add = KaRep::cyclic_add(p97(), 3).unwrap();
        prop_assert_eq!(add.eval_rep(&xs).unwrap(), eval_composition(OpId::Add, &xs, p97()).unwrap());
        let mul = KaRep::cyclic_mul(p97(), 5).unwrap();
        prop_assert_eq!(mul.eval_rep(&xs).unwrap(), eval_composition(OpId::Mul, &xs, p97()).unwrap());
    }

    #[test]
    fn two_factor_rep_multiplies(i in 0usize..3, a in 1u32..97, b in 1u32..97) {
        let (q1, q2) = [(32, 3), (48, 2), (16, 6)][i];
        let rep = KaRep::product_of_cyclics(p97(), q1, q2, 1, 1).unwrap();
        prop_assert_eq!(rep.eval_two_factor_mul(a, b).unwrap(), eval_op(OpId::Mul, a, b, p97()).unwrap());
    }

    #[test]
    fn rho_lies_on_the_unit_circle(k in twist_mod(97), x in 0u32..97) {
        let rep = KaRep::cyclic_add(p97(), k).unwrap();
        for z in rep.rho(x).unwrap() {
            prop_assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn non_coprime_twists_are_rejected() {
    assert!(matches!(KaRep::cyclic_mul(p97(), 2), Err(KaError::GcdViolation { .. })));
    assert!(matches!(KaRep::cyclic_add(p97(), 97), Err(KaError::GcdViolation { .. })));
}
