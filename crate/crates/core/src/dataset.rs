//! Tokenization and task generators.
//!
//! Numerals occupy token ids `0..p`, so embedding rows for numbers line up
//! across every task at the same modulus. Special tokens follow in a fixed
//! order: one `<op:NAME>` per operation, `=`, then (for systems) `&`, `?`,
//! `A`, `B`, and finally `<pad>`.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{eval_composition, eval_op, solve_system, GroupError, OpId, Prime, SystemTemplate};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("requested {requested} examples but only {available} exist")]
    TooFewPairs { requested: usize, available: usize },
    #[error("operation {0:?} is not commutative")]
    NotCommutative(OpId),
    #[error("operation {0:?} is not associative")]
    NonAssociativeOp(OpId),
    #[error("operand count must be 3 or 4, got {0}")]
    BadOperandCount(usize),
    #[error("no training examples left after limiting operands to < {0}")]
    EmptyAfterFilter(u32),
    #[error("malformed example: {0}")]
    Malformed(String),
    #[error("line {line}: target {got} but the prompt evaluates to {expected}")]
    LabelMismatch { line: usize, expected: u32, got: u32 },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

pub const EQ: &str = "=";
pub const AND: &str = "&";
pub const ASK: &str = "?";
pub const UNK_A: &str = "A";
pub const UNK_B: &str = "B";
pub const PAD: &str = "<pad>";

pub fn op_token(op: OpId) -> String {
    format!("<op:{}>", op.name())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    p: Prime,
    tokens: Vec<String>,
}

impl Vocab {
    pub fn new(p: Prime, ops: &[OpId], system: bool) -> Self {
        let mut tokens: Vec<String> = (0..p.get()).map(|x| x.to_string()).collect();
        for &op in ops {
            let t = op_token(op);
            if !tokens.contains(&t) {
                tokens.push(t);
            }
        }
        tokens.push(EQ.into());
        if system {
            tokens.extend([AND, ASK, UNK_A, UNK_B].map(String::from));
        }
        tokens.push(PAD.into());
        Vocab { p, tokens }
    }

    /// Rebuilds a vocabulary from its token list (e.g. a checkpoint sidecar).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let p = tokens.iter().take_while(|t| t.parse::<u32>().is_ok()).count() as u32;
        let prime = Prime::new(p)?;
        if (0..p).any(|i| tokens[i as usize] != i.to_string()) {
            return Err(DatasetError::Malformed("numerals must occupy ids 0..p in order".into()));
        }
        Ok(Vocab { p: prime, tokens })
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.tokens.iter().position(|t| t == token).map(|i| i as u32)
    }

    fn expect_id(&self, token: &str) -> Result<u32> {
        self.id(token).ok_or_else(|| DatasetError::Malformed(format!("token {token:?} not in vocabulary")))
    }

    pub fn is_numeral(&self, id: u32) -> bool {
        id < self.p.get()
    }

    /// Whether every token of `other` is present here.
    pub fn contains_all(&self, other: &Vocab) -> bool {
        other.tokens.iter().all(|t| self.tokens.contains(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub target: u32,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub vocab: Vocab,
    pub train: Vec<Example>,
    /// Held-out set used for grokking detection when non-empty.
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub seed: u64,
}

impl Split {
    pub fn seq_len(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |e| e.tokens.len())
    }

    /// The set used to decide grokking during training.
    pub fn eval_set(&self) -> &[Example] {
        if self.val.is_empty() {
            &self.test
        } else {
            &self.val
        }
    }
}

fn binary_example(vocab: &Vocab, op: OpId, a: u32, b: u32, target: u32) -> Example {
    let op_t = vocab.id(&op_token(op)).expect("op in vocab");
    let eq = vocab.id(EQ).expect("= in vocab");
    Example { tokens: vec![a, op_t, b, eq], target, task: format!("binary/{}", op.name()) }
}

/// All valid `(a, b)` pairs, shuffled by `seed`; the first `n_train` train,
/// the rest test.
pub fn gen_binary(op: OpId, p: Prime, n_train: usize, seed: u64) -> Result<Split> {
    let vocab = Vocab::new(p, &[op], false);
    let mut all = Vec::new();
    for a in 0..p.get() {
        for b in 0..p.get() {
            if op.accepts(a, b) {
                all.push(binary_example(&vocab, op, a, b, eval_op(op, a, b, p)?));
            }
        }
    }
    if n_train > all.len() {
        return Err(DatasetError::TooFewPairs { requested: n_train, available: all.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let test = all.split_off(n_train);
    Ok(Split { vocab, train: all, val: Vec::new(), test, seed })
}

/// Operand pair of a binary example.
pub fn binary_operands(e: &Example) -> Option<(u32, u32)> {
    match e.tokens.as_slice() {
        [a, _, b, _] => Some((*a, *b)),
        _ => None,
    }
}

fn swapped(e: &Example) -> Example {
    let mut t = e.clone();
    t.tokens.swap(0, 2);
    t
}

/// Adds the operand-swapped twin of every example (none when `a = b`).
/// Twins whose operand pair is in `exclude` are dropped.
pub fn augment_commutative(
    batch: &[Example],
    op: OpId,
    exclude: Option<&HashSet<(u32, u32)>>,
) -> Result<Vec<Example>> {
    if !op.commutative() {
        return Err(DatasetError::NotCommutative(op));
    }
    let mut out = batch.to_vec();
    let present: HashSet<(u32, u32)> = batch.iter().filter_map(binary_operands).collect();
    let mut added = HashSet::new();
    for e in batch {
        let (a, b) = binary_operands(e).ok_or_else(|| DatasetError::Malformed("not a binary example".into()))?;
        if a == b || present.contains(&(b, a)) || !added.insert((b, a)) {
            continue;
        }
        if exclude.is_some_and(|x| x.contains(&(b, a))) {
            continue;
        }
        out.push(swapped(e));
    }
    Ok(out)
}

/// Draws `counts.iter().sum()` distinct indices below `space`, partitioned
/// into consecutive groups of the given sizes.
fn sample_distinct(space: u128, counts: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<u128>>> {
    let total: usize = counts.iter().sum();
    if total as u128 > space {
        return Err(DatasetError::TooFewPairs { requested: total, available: space.min(usize::MAX as u128) as usize });
    }
    let mut seen = HashSet::with_capacity(total);
    let mut groups = Vec::with_capacity(counts.len());
    if (total as u128) * 2 > space {
        // dense: shuffle the whole index space
        let mut all: Vec<u128> = (0..space).collect();
        all.shuffle(rng);
        let mut it = all.into_iter();
        for &c in counts {
            groups.push(it.by_ref().take(c).collect());
        }
        return Ok(groups);
    }
    for &c in counts {
        let mut g = Vec::with_capacity(c);
        while g.len() < c {
            let i = rng.random_range(0..space);
            if seen.insert(i) {
                g.push(i);
            }
        }
        groups.push(g);
    }
    Ok(groups)
}

fn decode_tuple(mut index: u128, n: usize, base: u32, offset: u32) -> Vec<u32> {
    let mut xs = vec![0; n];
    for x in xs.iter_mut().rev() {
        *x = (index % base as u128) as u32 + offset;
        index /= base as u128;
    }
    xs
}

/// Operand range for group tasks: multiplication leaves out 0.
fn carrier(op: OpId, p: Prime) -> (u32, u32) {
    match op {
        OpId::Mul => (p.get() - 1, 1),
        _ => (p.get(), 0),
    }
}

/// `x₁ ∘ x₂ ∘ … ∘ xₙ` prompts with distinct tuples across train, val and test.
pub fn gen_composition(
    op: OpId,
    n_operands: usize,
    p: Prime,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Split> {
    if !op.is_associative() {
        return Err(DatasetError::NonAssociativeOp(op));
    }
    if !(3..=4).contains(&n_operands) {
        return Err(DatasetError::BadOperandCount(n_operands));
    }
    let vocab = Vocab::new(p, &[op], false);
    let op_t = vocab.expect_id(&op_token(op))?;
    let eq = vocab.expect_id(EQ)?;
    let (base, offset) = carrier(op, p);
    let space = (base as u128).pow(n_operands as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = sample_distinct(space, &[n_train, n_val, n_test], &mut rng)?;
    let task = format!("composition{n_operands}/{}", op.name());
    let mut sets = Vec::new();
    for g in groups {
        let mut set = Vec::with_capacity(g.len());
        for idx in g {
            let xs = decode_tuple(idx, n_operands, base, offset);
            let mut tokens = Vec::with_capacity(2 * n_operands);
            for (i, &x) in xs.iter().enumerate() {
                if i > 0 {
                    tokens.push(op_t);
                }
                tokens.push(x);
            }
            tokens.push(eq);
            set.push(Example { tokens, target: eval_composition(op, &xs, p)?, task: task.clone() });
        }
        sets.push(set);
    }
    let test = sets.pop().expect("three groups");
    let val = sets.pop().expect("three groups");
    let train = sets.pop().expect("three groups");
    Ok(Split { vocab, train, val, test, seed })
}

fn system_example(vocab: &Vocab, op: OpId, t: SystemTemplate, a: u32, b: u32, c: u32, p: Prime) -> Result<Example> {
    let id = |s: &str| vocab.expect_id(s);
    let (o, eq, and, ask, ua, ub) = (id(&op_token(op))?, id(EQ)?, id(AND)?, id(ASK)?, id(UNK_A)?, id(UNK_B)?);
    let (va, vb) = solve_system(t, op, a, b, c, p)?;
    let (tokens, target) = match t {
        SystemTemplate::AskB => (vec![a, o, b, eq, ua, and, ua, o, c, eq, ub, ub, ask], vb),
        SystemTemplate::AskA => (vec![a, o, ua, eq, b, and, ua, o, c, eq, ub, ua, ask], va),
    };
    Ok(Example { tokens, target, task: format!("system/{}/{}", op.name(), t.name()) })
}

/// Two-equation systems, half of each set per template.
pub fn gen_system(op: OpId, p: Prime, n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Split> {
    if !op.is_abelian_group() {
        return Err(GroupError::NotAGroup(op).into());
    }
    let vocab = Vocab::new(p, &[op], true);
    let (base, offset) = carrier(op, p);
    let space = (base as u128).pow(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let halves = |n: usize| (n - n / 2, n / 2);
    let (tb, ta) = halves(n_train);
    let (vb, va) = halves(n_val);
    let (sb, sa) = halves(n_test);
    let ask_b = sample_distinct(space, &[tb, vb, sb], &mut rng)?;
    let ask_a = sample_distinct(space, &[ta, va, sa], &mut rng)?;
    let mut sets: Vec<Vec<Example>> = Vec::new();
    for (gb, ga) in ask_b.into_iter().zip(ask_a) {
        let mut set = Vec::with_capacity(gb.len() + ga.len());
        for (t, g) in [(SystemTemplate::AskB, gb), (SystemTemplate::AskA, ga)] {
            for idx in g {
                let xs = decode_tuple(idx, 3, base, offset);
                set.push(system_example(&vocab, op, t, xs[0], xs[1], xs[2], p)?);
            }
        }
        set.shuffle(&mut rng);
        sets.push(set);
    }
    let test = sets.pop().expect("three groups");
    let val = sets.pop().expect("three groups");
    let train = sets.pop().expect("three groups");
    Ok(Split { vocab, train, val, test, seed })
}

/// Keeps training examples whose numeral operands are all `< max_operand`.
/// Validation and test sets are left alone.
pub fn limit_tokens(split: &Split, max_operand: u32) -> Result<Split> {
    let p = split.vocab.prime().get();
    if max_operand > p {
        return Err(DatasetError::Malformed(format!("max_operand {max_operand} exceeds p = {p}")));
    }
    let train: Vec<Example> = split
        .train
        .iter()
        .filter(|e| e.tokens.iter().all(|&t| t >= p || t < max_operand))
        .cloned()
        .collect();
    if train.is_empty() {
        return Err(DatasetError::EmptyAfterFilter(max_operand));
    }
    Ok(Split { train, ..split.clone() })
}

/// Re-derives the answer of a prompt from its tokens alone.
pub fn evaluate_prompt(tokens: &[u32], vocab: &Vocab) -> Result<u32> {
    let p = vocab.prime();
    let bad = || DatasetError::Malformed(format!("unrecognised prompt {tokens:?}"));
    let name = |id: u32| vocab.token(id).ok_or_else(bad);
    let op_of = |id: u32| -> Result<OpId> {
        name(id)?
            .strip_prefix("<op:")
            .and_then(|s| s.strip_suffix('>'))
            .and_then(OpId::from_name)
            .ok_or_else(bad)
    };
    let num = |id: u32| if vocab.is_numeral(id) { Ok(id) } else { Err(bad()) };
    let last = *tokens.last().ok_or_else(bad)?;
    match name(last)? {
        EQ => {
            let body = &tokens[..tokens.len() - 1];
            if body.len() < 3 || body.len() % 2 == 0 {
                return Err(bad());
            }
            let op = op_of(body[1])?;
            let xs = body.iter().step_by(2).map(|&t| num(t)).collect::<Result<Vec<_>>>()?;
            if body.iter().skip(1).step_by(2).any(|&t| t != body[1]) {
                return Err(bad());
            }
            Ok(if xs.len() == 2 { eval_op(op, xs[0], xs[1], p)? } else { eval_composition(op, &xs, p)? })
        }
        ASK if tokens.len() == 13 => {
            let op = op_of(tokens[1])?;
            let s: Vec<&str> = tokens.iter().map(|&t| name(t)).collect::<Result<_>>()?;
            let template = match (s[2], s[4], s[11]) {
                (UNK_A, _, UNK_A) => SystemTemplate::AskA,
                (_, UNK_A, UNK_B) => SystemTemplate::AskB,
                _ => return Err(bad()),
            };
            let (a, b) = match template {
                SystemTemplate::AskB => (num(tokens[0])?, num(tokens[2])?),
                SystemTemplate::AskA => (num(tokens[0])?, num(tokens[4])?),
            };
            let (va, vb) = solve_system(template, op, a, b, num(tokens[8])?, p)?;
            Ok(if template == SystemTemplate::AskA { va } else { vb })
        }
        _ => Err(bad()),
    }
}

pub fn write_jsonl(examples: &[Example], path: &Path) -> Result<()> {
    let err = |source| DatasetError::File { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(err)?);
    for e in examples {
        let line = serde_json::to_string(e).expect("example serializes");
        writeln!(f, "{line}").map_err(err)?;
    }
    f.flush().map_err(err)
}

/// Reads examples back, rejecting any whose target disagrees with the prompt.
pub fn read_jsonl(path: &Path, vocab: &Vocab) -> Result<Vec<Example>> {
    let err = |source| DatasetError::File { path: path.to_path_buf(), source };
    let f = fs::File::open(path).map_err(err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(err)?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Example = serde_json::from_str(&line).map_err(|source| DatasetError::Json { line: i + 1, source })?;
        let expected = evaluate_prompt(&e.tokens, vocab)?;
        if expected != e.target {
            return Err(DatasetError::LabelMismatch { line: i + 1, expected, got: e.target });
        }
        out.push(e);
    }
    Ok(out)
}
