//! Constructive Kolmogorov–Arnold representations of finite cyclic group
//! operations.
//!
//! Each representation maps a residue to a point on a product of unit circles
//! (the embedding `φ = log ∘ ρ`), sums embeddings, and decodes the sum with an
//! outer function `ψ` built on the wrapping map [`wrap`]. The same `φ`/`ψ`
//! pair decodes any number of operands, and the difference `φ(x₁) − φ(x₂)`
//! decodes the anti-abelian operation `x₁ ∘ x₂⁻¹`.
//!
//! All arithmetic here is `f64`; decodes round to the nearest integer and
//! reject residuals above [`DECODE_TOLERANCE`].

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, Sub};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::group::{self, eval_composition, eval_op, gcd, inv_mod, DlogTable, GroupError, OpId, Prime};

/// Maximum distance from an integer accepted when decoding.
pub const DECODE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KaError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("twist {k} is not coprime with {modulus}")]
    GcdViolation { k: i64, modulus: u32 },
    #[error("{q1} x {q2} is not a nontrivial factorization of {order}")]
    BadFactorization { q1: u32, q2: u32, order: u32 },
    #[error("unsupported twist {k}: {reason}")]
    UnsupportedTwist { k: i64, reason: &'static str },
    #[error("embedding sum does not decode to an integer (residual {residual:.3e})")]
    NonIntegerDecoding { residual: f64 },
    #[error("{0} is not in the carrier of this representation")]
    NotInGroup(u32),
    #[error("operation not supported by a {0} representation")]
    WrongKind(GroupKind),
    #[error("embedding has {got} components, representation expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("at least one operand is required")]
    Empty,
}

pub type Result<T> = std::result::Result<T, KaError>;

/// `T(a + bi) = a + i·(b mod 2π)` with the imaginary part in `[0, 2π)`.
pub fn wrap(z: Complex64) -> Complex64 {
    let mut im = z.im.rem_euclid(TAU);
    // rem_euclid of a tiny negative number rounds up to exactly 2π
    if im >= TAU {
        im = 0.0;
    }
    Complex64::new(z.re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    CyclicAdd,
    CyclicMul,
    ProductOfCyclics,
    AntiAbelian,
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKind::CyclicAdd => "cyclic_add",
            GroupKind::CyclicMul => "cyclic_mul",
            GroupKind::ProductOfCyclics => "product_of_cyclics",
            GroupKind::AntiAbelian => "anti_abelian",
        })
    }
}

/// A point of `(ℂ*)^m` in log coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<Complex64>);

impl Embedding {
    pub fn zeros(m: usize) -> Self {
        Embedding(vec![Complex64::new(0.0, 0.0); m])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// The `2m` real coordinates `[re₀, im₀, re₁, im₁, …]`.
    pub fn to_real(&self) -> Vec<f64> {
        self.0.iter().flat_map(|z| [z.re, z.im]).collect()
    }
}

impl Add for &Embedding {
    type Output = Embedding;
    fn add(self, rhs: &Embedding) -> Embedding {
        Embedding(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Embedding {
    type Output = Embedding;
    fn sub(self, rhs: &Embedding) -> Embedding {
        Embedding(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

#[derive(Debug, Clone)]
pub struct KaRep {
    kind: GroupKind,
    /// For anti-abelian reps, the kind of the underlying abelian rep.
    base: GroupKind,
    p: Prime,
    k: i64,
    k2: i64,
    factors: Option<(u32, u32)>,
    dlog: Option<DlogTable>,
}

fn check_twist(k: i64, modulus: u32) -> Result<u64> {
    let reduced = k.rem_euclid(modulus as i64) as u64;
    if gcd(reduced, modulus as u64) != 1 {
        return Err(KaError::GcdViolation { k, modulus });
    }
    Ok(reduced)
}

impl KaRep {
    /// `ρ_k(x) = exp(2πi·xk/p)` on `ℤ_p` under addition; requires `gcd(k, p) = 1`.
    pub fn cyclic_add(p: Prime, k: i64) -> Result<Self> {
        check_twist(k, p.get())?;
        Ok(KaRep {
            kind: GroupKind::CyclicAdd,
            base: GroupKind::CyclicAdd,
            p,
            k,
            k2: 1,
            factors: None,
            dlog: None,
        })
    }

    /// `ρ_k(x) = exp(2πi·lg(x)k/(p−1))` on `ℤ_p*` with the smallest primitive root.
    pub fn cyclic_mul(p: Prime, k: i64) -> Result<Self> {
        Self::cyclic_mul_with_generator(p, k, group::primitive_root(p))
    }

    pub fn cyclic_mul_with_generator(p: Prime, k: i64, generator: u32) -> Result<Self> {
        let dlog = DlogTable::new(generator, p)?;
        check_twist(k, dlog.order())?;
        Ok(KaRep {
            kind: GroupKind::CyclicMul,
            base: GroupKind::CyclicMul,
            p,
            k,
            k2: 1,
            factors: None,
            dlog: Some(dlog),
        })
    }

    /// Two-component representation of `ℤ_p*` via mixed-radix digits of the
    /// discrete log: `lg(x) = b·q₁ + r` with `r ∈ [0, q₁)` and `b ∈ [0, q₂)`.
    ///
    /// The remainder component carries into the quotient component during
    /// decoding, so the remainder twist `k2` must be 1; `k1` must be coprime
    /// with `q₂`.
    pub fn product_of_cyclics(p: Prime, q1: u32, q2: u32, k1: i64, k2: i64) -> Result<Self> {
        let order = p.get() - 1;
        if q1 < 2 || q2 < 2 || q1 as u64 * q2 as u64 != order as u64 {
            return Err(KaError::BadFactorization { q1, q2, order });
        }
        check_twist(k1, q2)?;
        if k2 != 1 {
            return Err(KaError::UnsupportedTwist {
                k: k2,
                reason: "the carry digit must be untwisted",
            });
        }
        Ok(KaRep {
            kind: GroupKind::ProductOfCyclics,
            base: GroupKind::ProductOfCyclics,
            p,
            k: k1,
            k2,
            factors: Some((q1, q2)),
            dlog: Some(DlogTable::smallest(p)),
        })
    }

    /// Reinterprets a cyclic rep as the representation of its anti-abelian
    /// operation (`sub` for add, `div` for mul).
    pub fn anti_abelian(base: KaRep) -> Result<Self> {
        match base.kind {
            GroupKind::CyclicAdd | GroupKind::CyclicMul => Ok(KaRep {
                kind: GroupKind::AntiAbelian,
                base: base.kind,
                ..base
            }),
            other => Err(KaError::WrongKind(other)),
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    pub fn twist(&self) -> i64 {
        self.k
    }

    pub fn factors(&self) -> Option<(u32, u32)> {
        self.factors
    }

    pub fn generator(&self) -> Option<u32> {
        self.dlog.as_ref().map(|d| d.generator())
    }

    /// Number of circle factors `m`; the embedding lives in `ℝ^{2m}`.
    pub fn num_components(&self) -> usize {
        if self.factors.is_some() {
            2
        } else {
            1
        }
    }

    /// The abelian operation whose sums this rep decodes.
    pub fn group_op(&self) -> OpId {
        match self.base {
            GroupKind::CyclicAdd => OpId::Add,
            _ => OpId::Mul,
        }
    }

    /// The operation checked by [`verify_rep`].
    pub fn target_op(&self) -> OpId {
        match (self.kind, self.base) {
            (GroupKind::AntiAbelian, GroupKind::CyclicAdd) => OpId::Sub,
            (GroupKind::AntiAbelian, _) => OpId::Div,
            _ => self.group_op(),
        }
    }

    /// Residues in the carrier: all of `ℤ_p` for addition, `ℤ_p*` otherwise.
    pub fn carrier(&self) -> std::ops::Range<u32> {
        match self.group_op() {
            OpId::Add => 0..self.p.get(),
            _ => 1..self.p.get(),
        }
    }

    pub fn label(&self) -> String {
        let p = self.p.get();
        match (self.kind, self.factors) {
            (GroupKind::ProductOfCyclics, Some((q1, q2))) => {
                format!("product_of_cyclics(p={p},q1={q1},q2={q2},k1={},k2={})", self.k, self.k2)
            }
            (GroupKind::AntiAbelian, _) => {
                format!("anti_abelian({},p={p},k={})", self.target_op(), self.k)
            }
            (kind, _) => match self.generator() {
                Some(g) => format!("{kind}(p={p},k={},g={g})", self.k),
                None => format!("{kind}(p={p},k={})", self.k),
            },
        }
    }

    fn dlog(&self) -> &DlogTable {
        self.dlog.as_ref().expect("multiplicative reps carry a dlog table")
    }

    /// Integer angle coordinates: each component is `2πi·a/n` with `a ∈ [0, n)`.
    fn angles(&self, x: u32) -> Result<Vec<(u64, u32)>> {
        if !self.carrier().contains(&x) {
            return Err(KaError::NotInGroup(x));
        }
        let p = self.p.get();
        Ok(match (self.base, self.factors) {
            (GroupKind::CyclicAdd, _) => {
                let k = self.k.rem_euclid(p as i64) as u64;
                vec![((x as u64 * k) % p as u64, p)]
            }
            (_, Some((q1, q2))) => {
                let e = self.dlog().log(x)?;
                let (b, r) = (e / q1, e % q1);
                let k1 = self.k.rem_euclid(q2 as i64) as u64;
                vec![((b as u64 * k1) % q2 as u64, q2), (r as u64, q1)]
            }
            _ => {
                let n = p - 1;
                let e = self.dlog().log(x)?;
                let k = self.k.rem_euclid(n as i64) as u64;
                vec![((e as u64 * k) % n as u64, n)]
            }
        })
    }

    /// `ρ(x)`: a point on the unit torus.
    pub fn rho(&self, x: u32) -> Result<Vec<Complex64>> {
        Ok(self.phi(x)?.0.into_iter().map(|z| z.exp()).collect())
    }

    /// `φ(x) = log ρ(x)`, on the branch with argument in `[0, 2π)`.
    pub fn phi(&self, x: u32) -> Result<Embedding> {
        Ok(Embedding(
            self.angles(x)?
                .into_iter()
                .map(|(a, n)| Complex64::new(0.0, TAU * a as f64 / n as f64))
                .collect(),
        ))
    }

    /// Decodes a summed embedding back to a residue.
    pub fn psi(&self, z: &Embedding) -> Result<u32> {
        let m = self.num_components();
        if z.dim() != m {
            return Err(KaError::DimensionMismatch { expected: m, got: z.dim() });
        }
        let p = self.p.get();
        match (self.base, self.factors) {
            (GroupKind::CyclicAdd, _) => {
                let s = decode_turn(z.0[0], p)?;
                let kinv = twist_inverse(self.k, p)?;
                Ok(((s * kinv) % p as u64) as u32)
            }
            (_, Some((q1, q2))) => {
                // T₂(z₁, z₂) = (T(z₁ + R(z₂)), T(z₂)): R moves the whole turns of the
                // remainder digit into the quotient digit as a carry.
                let steps = decode_steps(z.0[1], q1)?;
                let carry = steps.div_euclid(q1 as i64);
                let r = steps.rem_euclid(q1 as i64) as u64;
                let k1 = self.k.rem_euclid(q2 as i64);
                let shifted = z.0[0] + Complex64::new(0.0, TAU * (carry * k1) as f64 / q2 as f64);
                let b = (decode_turn(shifted, q2)? * twist_inverse(self.k, q2)?) % q2 as u64;
                Ok(self.dlog().exp(b * q1 as u64 + r))
            }
            _ => {
                let n = p - 1;
                let s = decode_turn(z.0[0], n)?;
                let kinv = twist_inverse(self.k, n)?;
                Ok(self.dlog().exp((s * kinv) % n as u64))
            }
        }
    }

    pub fn eval_rep(&self, xs: &[u32]) -> Result<u32> {
        if xs.is_empty() {
            return Err(KaError::Empty);
        }
        let mut sum = Embedding::zeros(self.num_components());
        for &x in xs {
            sum = &sum + &self.phi(x)?;
        }
        self.psi(&sum)
    }

    /// `ψ(φ(x₁) − φ(x₂)) = x₁ ∘ x₂⁻¹`.
    pub fn eval_anti_abelian(&self, x1: u32, x2: u32) -> Result<u32> {
        match self.kind {
            GroupKind::CyclicAdd | GroupKind::CyclicMul | GroupKind::AntiAbelian => {
                self.psi(&(&self.phi(x1)? - &self.phi(x2)?))
            }
            other => Err(KaError::WrongKind(other)),
        }
    }

    pub fn eval_two_factor_mul(&self, x1: u32, x2: u32) -> Result<u32> {
        match self.kind {
            GroupKind::ProductOfCyclics => self.eval_rep(&[x1, x2]),
            other => Err(KaError::WrongKind(other)),
        }
    }

    fn eval_pair(&self, x1: u32, x2: u32) -> Result<u32> {
        match self.kind {
            GroupKind::AntiAbelian => self.eval_anti_abelian(x1, x2),
            _ => self.eval_rep(&[x1, x2]),
        }
    }
}

fn twist_inverse(k: i64, n: u32) -> Result<u64> {
    let reduced = check_twist(k, n)?;
    Ok(inv_mod(reduced, n as u64).expect("coprime twist is invertible"))
}

/// `(n / 2π)·Im z` rounded to an integer, without wrapping.
fn decode_steps(z: Complex64, n: u32) -> Result<i64> {
    if z.re.abs() >= DECODE_TOLERANCE {
        return Err(KaError::NonIntegerDecoding { residual: z.re.abs() });
    }
    let v = z.im * n as f64 / TAU;
    let r = v.round();
    let residual = (v - r).abs();
    if residual >= DECODE_TOLERANCE {
        return Err(KaError::NonIntegerDecoding { residual });
    }
    Ok(r as i64)
}

/// `(n / 2π)·Im T(z)` rounded to an integer in `[0, n)`.
fn decode_turn(z: Complex64, n: u32) -> Result<u64> {
    // an imaginary part just below 2π rounds to n, which reduces to 0
    Ok(decode_steps(wrap(z), n)?.rem_euclid(n as i64) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub inputs: Vec<u32>,
    pub expected: u32,
    pub got: Option<u32>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rep: String,
    pub checked: usize,
    pub failures: Vec<Failure>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn record(
    failures: &mut Vec<Failure>,
    inputs: &[u32],
    expected: u32,
    got: Result<u32>,
) {
    match got {
        Ok(v) if v == expected => {}
        Ok(v) => failures.push(Failure { inputs: inputs.to_vec(), expected, got: Some(v), error: None }),
        Err(e) => failures.push(Failure {
            inputs: inputs.to_vec(),
            expected,
            got: None,
            error: Some(e.to_string()),
        }),
    }
}

/// Checks the rep against exact arithmetic on every pair of the carrier.
pub fn verify_rep(rep: &KaRep) -> VerifyReport {
    let op = rep.target_op();
    let mut failures = Vec::new();
    let mut checked = 0;
    for a in rep.carrier() {
        for b in rep.carrier() {
            checked += 1;
            let expected = eval_op(op, a, b, rep.p).expect("carrier operands are valid");
            record(&mut failures, &[a, b], expected, rep.eval_pair(a, b));
        }
    }
    VerifyReport { rep: rep.label(), checked, failures }
}

/// Checks that the same rep decodes `samples` random `n`-tuples.
pub fn verify_nary(rep: &KaRep, n: usize, samples: usize, seed: u64) -> VerifyReport {
    let op = rep.group_op();
    let carrier = rep.carrier();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut xs = vec![0u32; n];
    for _ in 0..samples {
        for x in xs.iter_mut() {
            *x = rng.random_range(carrier.clone());
        }
        let expected = eval_composition(op, &xs, rep.p).expect("carrier operands are valid");
        record(&mut failures, &xs, expected, rep.eval_rep(&xs));
    }
    VerifyReport { rep: format!("{}[n={n}]", rep.label()), checked: samples, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p97() -> Prime {
        Prime::new(97).unwrap()
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn wrap_examples() {
        let z = Complex64::new(1.0, 0.0);
        assert_eq!(wrap(z), z);
        let w = wrap(Complex64::new(0.0, TAU));
        assert!(close(w, Complex64::new(0.0, 0.0), 1e-12));
        let w = wrap(Complex64::new(2.5, -0.5));
        assert!(close(w, Complex64::new(2.5, TAU - 0.5), 1e-12));
        assert!(wrap(Complex64::new(0.0, -1e-18)).im < TAU);
    }

    #[test]
    fn wrap_of_log_sum_matches_log_of_product() {
        let z1 = Complex64::from_polar(2.0, 3.0);
        let z2 = Complex64::from_polar(3.0, 5.0);
        let lhs = wrap(z1.ln() + z2.ln());
        let rhs = wrap((z1 * z2).ln());
        assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn phi_examples() {
        let add = KaRep::cyclic_add(p97(), 1).unwrap();
        assert_eq!(add.phi(0).unwrap().0[0], Complex64::new(0.0, 0.0));
        assert!(close(add.phi(1).unwrap().0[0], Complex64::new(0.0, 2.0 * PI / 97.0), 1e-15));

        let mul = KaRep::cyclic_mul(p97(), 1).unwrap();
        assert_eq!(mul.generator(), Some(5));
        // lg_5(25) = 2 in a group of order 96
        assert!(close(mul.phi(25).unwrap().0[0], Complex64::new(0.0, 4.0 * PI / 96.0), 1e-15));
        assert_eq!(mul.phi(0), Err(KaError::NotInGroup(0)));
    }

    #[test]
    fn rho_has_unit_modulus() {
        let rep = KaRep::cyclic_add(p97(), 3).unwrap();
        for x in 0..97 {
            assert!((rep.rho(x).unwrap()[0].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_examples() {
        let add = KaRep::cyclic_add(p97(), 1).unwrap();
        assert_eq!(add.psi(&add.phi(0).unwrap()).unwrap(), 0);
        let s = &add.phi(96).unwrap() + &add.phi(5).unwrap();
        assert_eq!(add.psi(&s).unwrap(), 4);

        let mul = KaRep::cyclic_mul(p97(), 1).unwrap();
        let s = &mul.phi(2).unwrap() + &mul.phi(49).unwrap();
        assert_eq!(mul.psi(&s).unwrap(), 1);
    }

    #[test]
    fn psi_rejects_malformed_sums() {
        let add = KaRep::cyclic_add(p97(), 1).unwrap();
        let off = Embedding(vec![Complex64::new(0.0, 0.5 * TAU / 97.0)]);
        assert!(matches!(add.psi(&off), Err(KaError::NonIntegerDecoding { .. })));
        let radial = Embedding(vec![Complex64::new(0.3, 0.0)]);
        assert!(matches!(add.psi(&radial), Err(KaError::NonIntegerDecoding { .. })));
        assert!(matches!(add.psi(&Embedding::zeros(2)), Err(KaError::DimensionMismatch { .. })));
    }

    #[test]
    fn eval_rep_examples() {
        let add = KaRep::cyclic_add(p97(), 1).unwrap();
        assert_eq!(add.eval_rep(&[1, 2, 3]).unwrap(), 6);
        let add5 = KaRep::cyclic_add(p97(), 5).unwrap();
        assert_eq!(add5.eval_rep(&[50, 60, 70]).unwrap(), (50 + 60 + 70) % 97);
        assert_eq!(add5.eval_rep(&[50, 60, 70]).unwrap(), 83);
        let mul = KaRep::cyclic_mul(p97(), 1).unwrap();
        assert_eq!(mul.eval_rep(&[96, 96, 96]).unwrap(), 96);
        assert_eq!(add.eval_rep(&[]), Err(KaError::Empty));
    }

    #[test]
    fn anti_abelian_examples() {
        let add = KaRep::cyclic_add(p97(), 1).unwrap();
        assert_eq!(add.eval_anti_abelian(5, 5).unwrap(), 0);
        assert_eq!(add.eval_anti_abelian(3, 10).unwrap(), 90);
        let mul = KaRep::cyclic_mul(p97(), 1).unwrap();
        assert_eq!(
            mul.eval_anti_abelian(1, 2).unwrap(),
            eval_op(OpId::Div, 1, 2, p97()).unwrap()
        );
        assert_eq!(mul.eval_anti_abelian(1, 2).unwrap(), 49);
    }

    #[test]
    fn two_factor_examples() {
        let p = p97();
        let r32 = KaRep::product_of_cyclics(p, 32, 3, 1, 1).unwrap();
        assert_eq!(r32.eval_two_factor_mul(1, 1).unwrap(), 1);
        assert_eq!(r32.eval_two_factor_mul(2, 3).unwrap(), 6);
        let r48 = KaRep::product_of_cyclics(p, 48, 2, 1, 1).unwrap();
        assert_eq!(r48.eval_two_factor_mul(96, 96).unwrap(), 1);
        assert_eq!(r48.num_components(), 2);
        assert_eq!(
            KaRep::cyclic_add(p, 1).unwrap().eval_two_factor_mul(1, 1),
            Err(KaError::WrongKind(GroupKind::CyclicAdd))
        );
    }

    #[test]
    fn construction_errors() {
        let p = p97();
        assert_eq!(
            KaRep::cyclic_add(p, 97).unwrap_err(),
            KaError::GcdViolation { k: 97, modulus: 97 }
        );
        assert_eq!(
            KaRep::cyclic_mul(p, 2).unwrap_err(),
            KaError::GcdViolation { k: 2, modulus: 96 }
        );
        assert!(matches!(
            KaRep::product_of_cyclics(p, 96, 1, 1, 1),
            Err(KaError::BadFactorization { .. })
        ));
        assert!(matches!(
            KaRep::product_of_cyclics(p, 10, 9, 1, 1),
            Err(KaError::BadFactorization { .. })
        ));
        assert!(matches!(
            KaRep::product_of_cyclics(p, 32, 3, 1, 5),
            Err(KaError::UnsupportedTwist { .. })
        ));
        assert!(matches!(
            KaRep::cyclic_mul_with_generator(p, 1, 4),
            Err(KaError::Group(GroupError::NotPrimitiveRoot { .. }))
        ));
    }

    #[test]
    fn verify_examples() {
        let p = p97();
        let report = verify_rep(&KaRep::cyclic_add(p, 1).unwrap());
        assert_eq!(report.checked, 9409);
        assert!(report.failures.is_empty());

        let anti = KaRep::anti_abelian(KaRep::cyclic_add(p, 1).unwrap()).unwrap();
        let report = verify_rep(&anti);
        assert_eq!(report.checked, 9409);
        assert!(report.failures.is_empty());

        let report = verify_rep(&KaRep::cyclic_mul(p, 5).unwrap());
        assert_eq!(report.checked, 96 * 96);
        assert!(report.failures.is_empty());
    }

    #[test]
    fn twisted_reps_decode_like_untwisted() {
        let p = Prime::new(31).unwrap();
        let base = KaRep::cyclic_add(p, 1).unwrap();
        for k in [2, 7, -1, 30] {
            let rep = KaRep::cyclic_add(p, k).unwrap();
            for a in 0..31 {
                for b in 0..31 {
                    assert_eq!(rep.eval_rep(&[a, b]).unwrap(), base.eval_rep(&[a, b]).unwrap());
                }
            }
            assert_ne!(rep.phi(1).unwrap(), base.phi(1).unwrap());
        }
    }

    #[test]
    fn anti_abelian_identity_for_every_element() {
        let p = p97();
        let add = KaRep::cyclic_add(p, 7).unwrap();
        let mul = KaRep::cyclic_mul(p, 7).unwrap();
        for x in 0..97 {
            assert_eq!(add.eval_anti_abelian(x, x).unwrap(), 0);
            if x > 0 {
                assert_eq!(mul.eval_anti_abelian(x, x).unwrap(), 1);
            }
        }
    }

    #[test]
    fn nary_universality_small() {
        let p = p97();
        for rep in [
            KaRep::cyclic_add(p, 3).unwrap(),
            KaRep::cyclic_mul(p, 5).unwrap(),
            KaRep::product_of_cyclics(p, 16, 6, 5, 1).unwrap(),
        ] {
            for n in [3, 4, 7] {
                let report = verify_nary(&rep, n, 500, 11);
                assert!(report.passed(), "{}: {:?}", report.rep, report.failures.first());
            }
        }
    }
}
