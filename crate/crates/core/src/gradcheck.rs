//! Central finite-difference gradient checking.
//!
//! The output of the function under test is reduced to a scalar by a fixed
//! random projection `Σ out·R`. Analytic gradients come from [`Tape::backward`];
//! numerical ones from `(L(x+ε) − L(x−ε)) / 2ε`, with the projection evaluated
//! in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Result, Tape, Tensor, Var};

/// Outcome of a gradient check over every element of every input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Options for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f32,
    /// Denominator floor for the relative error. Entries with gradient
    /// magnitude below the floor are judged on absolute error, since `f32`
    /// forward rounding puts a noise floor of roughly `1e-7 / eps` on the
    /// numerical estimate.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-3, floor: 1.0, seed: 0 }
    }
}

fn projection(tape: &Tape, out: Var, r: &[f32]) -> f64 {
    tape.value(out).data().iter().zip(r).map(|(&o, &w)| o as f64 * w as f64).sum()
}

/// Compares analytic and numerical gradients of `build` with respect to each
/// tensor in `inputs`. `build` receives one leaf per input and returns the
/// output variable.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &leaves)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r: Vec<f32> = (0..tape.value(out).numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let out_shape = tape.value(out).shape().to_vec();
    let rv = tape.constant(Tensor::new(&out_shape, r.clone())?);
    let prod = tape.mul(out, rv)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ls: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = build(&mut t, &ls)?;
        Ok(projection(&t, o, &r))
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + opts.eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - opts.eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            // the step actually taken in f32
            let h = ((x0 + opts.eps) as f64) - ((x0 - opts.eps) as f64);
            let numeric = (plus - minus) / h;
            let a = analytic[j] as f64;
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Deterministic pseudo-random tensor with entries in `[-scale, scale)`.
pub fn random_tensor(shape: &[usize], scale: f32, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
