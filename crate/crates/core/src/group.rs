//! Exact arithmetic over the residues modulo a small prime.
//!
//! Everything here works on `u32` residues and widens to `u64` for products,
//! which is plenty for the moduli used by the lab (p ≤ 97 in every shipped
//! experiment, but any prime below 2^16 is safe).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("{0} is not prime")]
    NotPrime(u32),
    #[error("operand {value} is out of range for modulus {p}")]
    OperandOutOfRange { value: u32, p: u32 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("{0} has no inverse under {1}")]
    NoInverse(u32, OpId),
    #[error("{0} is not associative")]
    NonAssociativeOp(OpId),
    #[error("{0} does not form a group on the residues")]
    NotAGroup(OpId),
    #[error("{0} is not in the multiplicative group")]
    NotInGroup(u32),
    #[error("{a} is not a primitive root modulo {p}")]
    NotPrimitiveRoot { a: u32, p: u32 },
    #[error("composition needs at least two operands, got {0}")]
    TooFewOperands(usize),
}

pub type Result<T> = std::result::Result<T, GroupError>;

/// A prime modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Prime(u32);

impl Prime {
    pub fn new(p: u32) -> Result<Self> {
        if is_prime(p) {
            Ok(Prime(p))
        } else {
            Err(GroupError::NotPrime(p))
        }
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    /// Checks `0 <= x < p`.
    pub fn check(self, x: u32) -> Result<u32> {
        if x < self.0 {
            Ok(x)
        } else {
            Err(GroupError::OperandOutOfRange { value: x, p: self.0 })
        }
    }
}

impl TryFrom<u32> for Prime {
    type Error = GroupError;
    fn try_from(p: u32) -> Result<Self> {
        Prime::new(p)
    }
}

impl From<Prime> for u32 {
    fn from(p: Prime) -> u32 {
        p.0
    }
}

impl fmt::Display for Prime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u32;
    while (d as u64) * (d as u64) <= n as u64 {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// The ten binary operations studied by the lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpId {
    /// x + y
    Add,
    /// x · y
    Mul,
    /// x² + y²
    SqSum,
    /// x² + y² + x + y
    SqSumLin,
    /// x³ + y³ + x + y
    CubeSumLin,
    /// x² + y² + xy
    SqSumCross,
    /// x − y
    Sub,
    /// x / y
    Div,
    /// (x + y)²
    SumSq,
    /// (x + y)³
    SumCube,
}

impl OpId {
    pub const ALL: [OpId; 10] = [
        OpId::Add,
        OpId::Mul,
        OpId::SqSum,
        OpId::SqSumLin,
        OpId::CubeSumLin,
        OpId::SqSumCross,
        OpId::Sub,
        OpId::Div,
        OpId::SumSq,
        OpId::SumCube,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpId::Add => "add",
            OpId::Mul => "mul",
            OpId::SqSum => "sq_sum",
            OpId::SqSumLin => "sq_sum_lin",
            OpId::CubeSumLin => "cube_sum_lin",
            OpId::SqSumCross => "sq_sum_cross",
            OpId::Sub => "sub",
            OpId::Div => "div",
            OpId::SumSq => "sum_sq",
            OpId::SumCube => "sum_cube",
        }
    }

    pub fn from_name(s: &str) -> Option<OpId> {
        OpId::ALL.into_iter().find(|op| op.name() == s)
    }

    /// Human-readable formula, used in report tables.
    pub fn formula(self) -> &'static str {
        match self {
            OpId::Add => "x1+x2",
            OpId::Mul => "x1*x2",
            OpId::SqSum => "x1^2+x2^2",
            OpId::SqSumLin => "x1^2+x2^2+x1+x2",
            OpId::CubeSumLin => "x1^3+x2^3+x1+x2",
            OpId::SqSumCross => "x1^2+x2^2+x1*x2",
            OpId::Sub => "x1-x2",
            OpId::Div => "x1/x2",
            OpId::SumSq => "(x1+x2)^2",
            OpId::SumCube => "(x1+x2)^3",
        }
    }

    pub fn commutative(self) -> bool {
        !matches!(self, OpId::Sub | OpId::Div)
    }

    /// True for add (on all residues) and mul (on the nonzero residues).
    pub fn is_abelian_group(self) -> bool {
        matches!(self, OpId::Add | OpId::Mul)
    }

    pub fn is_associative(self) -> bool {
        self.is_abelian_group()
    }

    /// The abelian operation `∘` such that `x • y = x ∘ y⁻¹`.
    pub fn anti_abelian_of(self) -> Option<OpId> {
        match self {
            OpId::Sub => Some(OpId::Add),
            OpId::Div => Some(OpId::Mul),
            _ => None,
        }
    }

    /// Whether `(a, b)` is in the operation's domain. Only division excludes pairs.
    pub fn accepts(self, _a: u32, b: u32) -> bool {
        !(self == OpId::Div && b == 0)
    }

    pub fn identity(self) -> Result<u32> {
        match self {
            OpId::Add => Ok(0),
            OpId::Mul => Ok(1),
            other => Err(GroupError::NotAGroup(other)),
        }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn mulm(a: u32, b: u32, p: u32) -> u32 {
    ((a as u64 * b as u64) % p as u64) as u32
}

#[inline]
fn addm(a: u32, b: u32, p: u32) -> u32 {
    ((a as u64 + b as u64) % p as u64) as u32
}

pub fn pow_mod(base: u32, mut exp: u64, m: u32) -> u32 {
    if m == 1 {
        return 0;
    }
    let mut result = 1u32;
    let mut b = base % m;
    while exp > 0 {
        if exp & 1 == 1 {
            result = mulm(result, b, m);
        }
        b = mulm(b, b, m);
        exp >>= 1;
    }
    result
}

/// Extended Euclid: returns `(g, s, t)` with `s·a + t·b = g = gcd(a, b)`.
pub fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    let (mut old_r, mut r) = (a, b);
    let (mut old_s, mut s) = (1i64, 0i64);
    let (mut old_t, mut t) = (0i64, 1i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
        (old_t, t) = (t, old_t - q * t);
    }
    (old_r, old_s, old_t)
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Inverse of `a` modulo `m` (any modulus), if `gcd(a, m) = 1`.
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    if m == 1 {
        return Some(0);
    }
    let (g, s, _) = ext_gcd((a % m) as i64, m as i64);
    if g != 1 {
        return None;
    }
    Some(s.rem_euclid(m as i64) as u64)
}

pub fn eval_op(op: OpId, a: u32, b: u32, p: Prime) -> Result<u32> {
    let pv = p.get();
    p.check(a)?;
    p.check(b)?;
    let sq = |x: u32| mulm(x, x, pv);
    let cube = |x: u32| mulm(sq(x), x, pv);
    let v = match op {
        OpId::Add => addm(a, b, pv),
        OpId::Mul => mulm(a, b, pv),
        OpId::SqSum => addm(sq(a), sq(b), pv),
        OpId::SqSumLin => addm(addm(sq(a), sq(b), pv), addm(a, b, pv), pv),
        OpId::CubeSumLin => addm(addm(cube(a), cube(b), pv), addm(a, b, pv), pv),
        OpId::SqSumCross => addm(addm(sq(a), sq(b), pv), mulm(a, b, pv), pv),
        OpId::Sub => (a + pv - b) % pv,
        OpId::Div => {
            if b == 0 {
                return Err(GroupError::DivisionByZero);
            }
            let inv = inv_mod(b as u64, pv as u64).ok_or(GroupError::DivisionByZero)? as u32;
            mulm(a, inv, pv)
        }
        OpId::SumSq => sq(addm(a, b, pv)),
        OpId::SumCube => cube(addm(a, b, pv)),
    };
    Ok(v)
}

/// Group inverse of `x` under add or mul.
pub fn inverse(x: u32, op: OpId, p: Prime) -> Result<u32> {
    p.check(x)?;
    match op {
        OpId::Add => Ok((p.get() - x) % p.get()),
        OpId::Mul => {
            if x == 0 {
                return Err(GroupError::NoInverse(x, op));
            }
            inv_mod(x as u64, p.get() as u64)
                .map(|v| v as u32)
                .ok_or(GroupError::NoInverse(x, op))
        }
        other => Err(GroupError::NotAGroup(other)),
    }
}

/// Left fold `x1 ∘ x2 ∘ … ∘ xn` for an associative operation.
pub fn eval_composition(op: OpId, xs: &[u32], p: Prime) -> Result<u32> {
    if !op.is_associative() {
        return Err(GroupError::NonAssociativeOp(op));
    }
    if xs.len() < 2 {
        return Err(GroupError::TooFewOperands(xs.len()));
    }
    let mut acc = p.check(xs[0])?;
    for &x in &xs[1..] {
        acc = eval_op(op, acc, x, p)?;
    }
    Ok(acc)
}

/// Multiplicative order of `a` modulo `p`, by brute force.
pub fn multiplicative_order(a: u32, p: Prime) -> Option<u32> {
    let pv = p.get();
    if a % pv == 0 {
        return None;
    }
    let mut x = a % pv;
    for k in 1..pv {
        if x == 1 {
            return Some(k);
        }
        x = mulm(x, a, pv);
    }
    None
}

/// The smallest primitive root modulo `p`.
pub fn primitive_root(p: Prime) -> u32 {
    let pv = p.get();
    if pv == 2 {
        return 1;
    }
    // Factor p - 1 and test a^((p-1)/q) != 1 for each prime factor q.
    let n = pv - 1;
    let mut factors = Vec::new();
    let mut m = n;
    let mut d = 2;
    while d * d <= m {
        if m % d == 0 {
            factors.push(d);
            while m % d == 0 {
                m /= d;
            }
        }
        d += 1;
    }
    if m > 1 {
        factors.push(m);
    }
    (2..pv)
        .find(|&a| factors.iter().all(|&q| pow_mod(a, (n / q) as u64, pv) != 1))
        .expect("every prime has a primitive root")
}

/// Full discrete-log / power table for a primitive root.
#[derive(Debug, Clone)]
pub struct DlogTable {
    p: Prime,
    generator: u32,
    // pow[e] = g^e for e in [0, p-2]
    pow: Vec<u32>,
    // log[x] = e with g^e = x; log[0] unused
    log: Vec<u32>,
}

impl DlogTable {
    pub fn new(generator: u32, p: Prime) -> Result<Self> {
        let pv = p.get();
        if multiplicative_order(generator, p) != Some(pv - 1) {
            return Err(GroupError::NotPrimitiveRoot { a: generator, p: pv });
        }
        let mut pow = Vec::with_capacity(pv as usize - 1);
        let mut log = vec![0u32; pv as usize];
        let mut x = 1u32;
        for e in 0..pv - 1 {
            pow.push(x);
            log[x as usize] = e;
            x = mulm(x, generator, pv);
        }
        Ok(DlogTable { p, generator, pow, log })
    }

    /// Table for the smallest primitive root.
    pub fn smallest(p: Prime) -> Self {
        DlogTable::new(primitive_root(p), p).expect("primitive_root returns a generator")
    }

    pub fn generator(&self) -> u32 {
        self.generator
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    /// Order of the multiplicative group, `p - 1`.
    pub fn order(&self) -> u32 {
        self.p.get() - 1
    }

    pub fn log(&self, x: u32) -> Result<u32> {
        if x == 0 || x >= self.p.get() {
            return Err(GroupError::NotInGroup(x));
        }
        Ok(self.log[x as usize])
    }

    /// `g^e`, with `e` reduced modulo `p - 1`.
    pub fn exp(&self, e: u64) -> u32 {
        self.pow[(e % self.order() as u64) as usize]
    }
}

/// `e ∈ [0, p-2]` with `a^e ≡ x (mod p)`.
pub fn discrete_log(a: u32, x: u32, p: Prime) -> Result<u32> {
    DlogTable::new(a, p)?.log(x)
}

/// The two system-of-equations layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemTemplate {
    /// `a ∘ b = A & A ∘ c = B`, asking for `B`.
    AskB,
    /// `a ∘ A = b & A ∘ c = B`, asking for `A`.
    AskA,
}

impl SystemTemplate {
    pub const ALL: [SystemTemplate; 2] = [SystemTemplate::AskB, SystemTemplate::AskA];

    pub fn name(self) -> &'static str {
        match self {
            SystemTemplate::AskB => "ask_b",
            SystemTemplate::AskA => "ask_a",
        }
    }
}

/// Solves for the unknowns `(A, B)` of a system template.
pub fn solve_system(
    template: SystemTemplate,
    op: OpId,
    a: u32,
    b: u32,
    c: u32,
    p: Prime,
) -> Result<(u32, u32)> {
    if !op.is_abelian_group() {
        return Err(GroupError::NotAGroup(op));
    }
    let unknown_a = match template {
        SystemTemplate::AskB => eval_op(op, a, b, p)?,
        SystemTemplate::AskA => eval_op(op, inverse(a, op, p)?, b, p)?,
    };
    let unknown_b = eval_op(op, unknown_a, c, p)?;
    Ok((unknown_a, unknown_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p97() -> Prime {
        Prime::new(97).unwrap()
    }

    #[test]
    fn prime_validation() {
        assert!(Prime::new(97).is_ok());
        assert_eq!(Prime::new(96), Err(GroupError::NotPrime(96)));
        assert_eq!(Prime::new(1), Err(GroupError::NotPrime(1)));
        assert!(Prime::new(2).is_ok());
    }

    #[test]
    fn eval_op_examples() {
        let p = p97();
        assert_eq!(eval_op(OpId::Add, 95, 4, p).unwrap(), 2);
        assert_eq!(eval_op(OpId::Div, 1, 2, p).unwrap(), 49);
        assert_eq!(eval_op(OpId::Sub, 3, 3, p).unwrap(), 0);
        assert_eq!(eval_op(OpId::Div, 1, 0, p), Err(GroupError::DivisionByZero));
        assert_eq!(
            eval_op(OpId::Add, 97, 0, p),
            Err(GroupError::OperandOutOfRange { value: 97, p: 97 })
        );
    }

    #[test]
    fn polynomial_ops_match_integer_formulas() {
        let p = p97();
        for a in 0..97u64 {
            for b in 0..97u64 {
                let m = |v: u64| (v % 97) as u32;
                let (a32, b32) = (a as u32, b as u32);
                assert_eq!(eval_op(OpId::SqSum, a32, b32, p).unwrap(), m(a * a + b * b));
                assert_eq!(eval_op(OpId::SqSumLin, a32, b32, p).unwrap(), m(a * a + b * b + a + b));
                assert_eq!(
                    eval_op(OpId::CubeSumLin, a32, b32, p).unwrap(),
                    m(a * a * a + b * b * b + a + b)
                );
                assert_eq!(eval_op(OpId::SqSumCross, a32, b32, p).unwrap(), m(a * a + b * b + a * b));
                assert_eq!(eval_op(OpId::SumSq, a32, b32, p).unwrap(), m((a + b) * (a + b)));
                assert_eq!(eval_op(OpId::SumCube, a32, b32, p).unwrap(), m((a + b).pow(3)));
            }
        }
    }

    #[test]
    fn commutative_flags_are_exhaustively_correct() {
        let p = p97();
        for op in OpId::ALL {
            let symmetric = (0..97).all(|a| {
                (1..97).all(|b| {
                    let ab = eval_op(op, a, b, p);
                    let ba = if op.accepts(b, a) { eval_op(op, b, a, p) } else { return false };
                    ab == ba
                })
            });
            assert_eq!(symmetric, op.commutative(), "{op}");
        }
        assert_eq!(OpId::ALL.iter().filter(|o| o.commutative()).count(), 8);
    }

    #[test]
    fn algebraic_tags() {
        assert_eq!(OpId::Sub.anti_abelian_of(), Some(OpId::Add));
        assert_eq!(OpId::Div.anti_abelian_of(), Some(OpId::Mul));
        assert_eq!(OpId::Add.anti_abelian_of(), None);
        let groups: Vec<_> = OpId::ALL.into_iter().filter(|o| o.is_abelian_group()).collect();
        assert_eq!(groups, vec![OpId::Add, OpId::Mul]);
    }

    #[test]
    fn associativity_add_mul_exhaustive() {
        let p = Prime::new(31).unwrap();
        for op in [OpId::Add, OpId::Mul] {
            for a in 0..31 {
                for b in 0..31 {
                    for c in 0..31 {
                        let l = eval_op(op, eval_op(op, a, b, p).unwrap(), c, p).unwrap();
                        let r = eval_op(op, a, eval_op(op, b, c, p).unwrap(), p).unwrap();
                        assert_eq!(l, r);
                    }
                }
            }
        }
    }

    #[test]
    fn non_associative_counterexample_over_integers() {
        // a ∘ b = a² + ab over the integers: 1∘(2∘1) = 1∘6 = 7, (1∘2)∘1 = 3∘1 = 12.
        let op = |a: i64, b: i64| a * a + a * b;
        let left = op(1, op(2, 1));
        let right = op(op(1, 2), 1);
        assert_eq!(op(2, 1), 6);
        assert_eq!(left, 7);
        assert_eq!(op(1, 2), 3);
        assert_eq!(right, 12);
        assert_ne!(left, right);
    }

    #[test]
    fn inverse_examples() {
        let p = p97();
        assert_eq!(inverse(0, OpId::Add, p).unwrap(), 0);
        assert_eq!(inverse(2, OpId::Mul, p).unwrap(), 49);
        assert_eq!(inverse(96, OpId::Add, p).unwrap(), 1);
        assert_eq!(inverse(0, OpId::Mul, p), Err(GroupError::NoInverse(0, OpId::Mul)));
        assert_eq!(inverse(3, OpId::SqSum, p), Err(GroupError::NotAGroup(OpId::SqSum)));
        for x in 1..97 {
            let y = inverse(x, OpId::Mul, p).unwrap();
            assert_eq!(eval_op(OpId::Mul, x, y, p).unwrap(), 1);
        }
    }

    #[test]
    fn composition_examples() {
        let p = p97();
        assert_eq!(eval_composition(OpId::Add, &[1, 2, 3], p).unwrap(), 6);
        assert_eq!(eval_composition(OpId::Mul, &[96, 96], p).unwrap(), 1);
        assert_eq!(eval_composition(OpId::Add, &[96, 1, 1], p).unwrap(), 1);
        assert_eq!(
            eval_composition(OpId::Sub, &[1, 2, 3], p),
            Err(GroupError::NonAssociativeOp(OpId::Sub))
        );
        assert_eq!(eval_composition(OpId::Add, &[1], p), Err(GroupError::TooFewOperands(1)));
    }

    #[test]
    fn primitive_root_examples() {
        // brute-force oracle: smallest a whose order is p-1
        for (p, expected) in [(5, 2), (7, 3), (97, 5)] {
            let prime = Prime::new(p).unwrap();
            let brute = (2..p).find(|&a| multiplicative_order(a, prime) == Some(p - 1)).unwrap();
            assert_eq!(brute, expected);
            assert_eq!(primitive_root(prime), expected);
        }
    }

    #[test]
    fn discrete_log_examples_and_round_trips() {
        let p = p97();
        assert_eq!(discrete_log(5, 1, p).unwrap(), 0);
        assert_eq!(discrete_log(5, 25, p).unwrap(), 2);
        assert_eq!(discrete_log(5, pow_mod(5, 10, 97), p).unwrap(), 10);
        assert_eq!(discrete_log(5, 0, p), Err(GroupError::NotInGroup(0)));
        assert_eq!(discrete_log(4, 3, p), Err(GroupError::NotPrimitiveRoot { a: 4, p: 97 }));

        let table = DlogTable::smallest(p);
        for e in 0..96 {
            assert_eq!(table.log(table.exp(e)).unwrap() as u64, e);
        }
        for x in 1..97 {
            assert_eq!(table.exp(table.log(x).unwrap() as u64), x);
        }
    }

    #[test]
    fn solve_system_examples() {
        let p = p97();
        assert_eq!(solve_system(SystemTemplate::AskB, OpId::Add, 2, 3, 4, p).unwrap(), (5, 9));
        assert_eq!(solve_system(SystemTemplate::AskA, OpId::Add, 2, 5, 4, p).unwrap(), (3, 7));
        assert_eq!(solve_system(SystemTemplate::AskB, OpId::Mul, 2, 3, 4, p).unwrap(), (6, 24));
        assert_eq!(
            solve_system(SystemTemplate::AskA, OpId::Mul, 0, 3, 4, p),
            Err(GroupError::NoInverse(0, OpId::Mul))
        );
    }

    #[test]
    fn solve_system_satisfies_both_equations() {
        let p = Prime::new(13).unwrap();
        for op in [OpId::Add, OpId::Mul] {
            let lo = if op == OpId::Mul { 1 } else { 0 };
            for a in lo..13 {
                for b in lo..13 {
                    for c in lo..13 {
                        for t in SystemTemplate::ALL {
                            let (ua, ub) = solve_system(t, op, a, b, c, p).unwrap();
                            match t {
                                SystemTemplate::AskB => assert_eq!(eval_op(op, a, b, p).unwrap(), ua),
                                SystemTemplate::AskA => assert_eq!(eval_op(op, a, ua, p).unwrap(), b),
                            }
                            assert_eq!(eval_op(op, ua, c, p).unwrap(), ub);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn op_names_round_trip() {
        for op in OpId::ALL {
            assert_eq!(OpId::from_name(op.name()), Some(op));
            let json = serde_json::to_string(&op).unwrap();
            assert_eq!(json, format!("\"{}\"", op.name()));
        }
    }
}
