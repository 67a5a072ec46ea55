//! Copy-augmented output distribution.
//!
//! Given encoder states `H` (d×T), a decoder state `h`, generator weights
//! `W` (V×d), gate weights `w` and the source token ids `x`:
//!
//! ```text
//! s = softmax(Hᵀh / √d)      o = H s
//! g = softmax(W h)           c = Σ_j s_j e_{x_j}
//! α = sigmoid(wᵀo)           p = (1 − α) g + α c
//! ```
//!
//! Analytic gradients of `−ln p[y]` are checked against central
//! differences.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};

/// Numerically stable softmax (shifted by the maximum logit).
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.map(|z| (z - max).exp());
    let sum = exp.sum();
    exp / sum
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyMixInputs {
    pub h_enc: DMatrix<f64>,
    pub h_dec: DVector<f64>,
    pub w_gen: DMatrix<f64>,
    pub w_alpha: DVector<f64>,
    pub source_ids: Vec<usize>,
}

impl CopyMixInputs {
    pub fn new(
        h_enc: DMatrix<f64>,
        h_dec: DVector<f64>,
        w_gen: DMatrix<f64>,
        w_alpha: DVector<f64>,
        source_ids: Vec<usize>,
    ) -> Result<Self> {
        let inputs = CopyMixInputs {
            h_enc,
            h_dec,
            w_gen,
            w_alpha,
            source_ids,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn hidden(&self) -> usize {
        self.h_dec.len()
    }

    pub fn source_len(&self) -> usize {
        self.h_enc.ncols()
    }

    pub fn vocab(&self) -> usize {
        self.w_gen.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden();
        let mismatch = |what: &str, got: String| {
            Err(Error::validation(format!(
                "{what}: expected d = {d}, got {got}"
            )))
        };
        if d == 0 {
            return Err(Error::validation("hidden size must be at least 1"));
        }
        if self.h_enc.nrows() != d {
            return mismatch("encoder states", format!("{} rows", self.h_enc.nrows()));
        }
        if self.w_gen.ncols() != d {
            return mismatch(
                "generator weights",
                format!("{} columns", self.w_gen.ncols()),
            );
        }
        if self.w_alpha.len() != d {
            return mismatch("gate weights", format!("length {}", self.w_alpha.len()));
        }
        if self.source_len() == 0 {
            return Err(Error::validation("source must have at least one position"));
        }
        if self.source_ids.len() != self.source_len() {
            return Err(Error::validation(format!(
                "{} source ids for {} encoder states",
                self.source_ids.len(),
                self.source_len()
            )));
        }
        if self.vocab() == 0 {
            return Err(Error::validation("vocabulary must be non-empty"));
        }
        if let Some(id) = self.source_ids.iter().find(|&&id| id >= self.vocab()) {
            return Err(Error::validation(format!(
                "source id {id} outside vocabulary of {}",
                self.vocab()
            )));
        }
        Ok(())
    }

    fn attention_logits(&self) -> DVector<f64> {
        self.h_enc.tr_mul(&self.h_dec) / (self.hidden() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub scores: DVector<f64>,
    pub output: DVector<f64>,
}

pub fn copy_attention(inputs: &CopyMixInputs) -> Result<Attention> {
    inputs.validate()?;
    Ok(attention_unchecked(inputs))
}

fn attention_unchecked(inputs: &CopyMixInputs) -> Attention {
    let scores = softmax(&inputs.attention_logits());
    let output = &inputs.h_enc * &scores;
    Attention { scores, output }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputDistribution {
    pub p: DVector<f64>,
    pub p_gen: DVector<f64>,
    pub p_copy: DVector<f64>,
    pub alpha: f64,
    pub attention: Attention,
}

pub fn output_distribution(inputs: &CopyMixInputs) -> Result<OutputDistribution> {
    inputs.validate()?;
    Ok(distribution_unchecked(inputs))
}

fn distribution_unchecked(inputs: &CopyMixInputs) -> OutputDistribution {
    let attention = attention_unchecked(inputs);
    let p_gen = softmax(&(&inputs.w_gen * &inputs.h_dec));
    let mut p_copy = DVector::zeros(inputs.vocab());
    for (j, &id) in inputs.source_ids.iter().enumerate() {
        p_copy[id] += attention.scores[j];
    }
    let alpha = sigmoid(inputs.w_alpha.dot(&attention.output));
    let p = &p_gen * (1.0 - alpha) + &p_copy * alpha;
    OutputDistribution {
        p,
        p_gen,
        p_copy,
        alpha,
        attention,
    }
}

pub fn loss(inputs: &CopyMixInputs, target: usize) -> Result<f64> {
    check_target(inputs, target)?;
    Ok(-distribution_unchecked(inputs).p[target].ln())
}

fn check_target(inputs: &CopyMixInputs, target: usize) -> Result<()> {
    inputs.validate()?;
    if target >= inputs.vocab() {
        return Err(Error::validation(format!(
            "target {target} outside vocabulary of {}",
            inputs.vocab()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub h_dec: DVector<f64>,
    pub w_gen: DMatrix<f64>,
    pub w_alpha: DVector<f64>,
}

/// Gradient of the loss with respect to the generator logits. Zero when
/// `alpha == 1`, where the output no longer depends on the generator.
pub fn generator_logit_grad(
    p_gen: &DVector<f64>,
    target: usize,
    alpha: f64,
    p_target: f64,
) -> DVector<f64> {
    let mut e = -p_gen;
    e[target] += 1.0;
    e * (-(1.0 - alpha) * p_gen[target] / p_target)
}

/// Analytic gradients of `−ln p[target]`.
pub fn gradients(inputs: &CopyMixInputs, target: usize) -> Result<Gradients> {
    check_target(inputs, target)?;
    let out = distribution_unchecked(inputs);
    let d = inputs.hidden() as f64;
    let (alpha, s, o) = (out.alpha, &out.attention.scores, &out.attention.output);
    let p_y = out.p[target];

    let dz = generator_logit_grad(&out.p_gen, target, alpha, p_y);
    let w_gen = &dz * inputs.h_dec.transpose();

    // Through the gate: u = wᵀo, α = sigmoid(u).
    let du = -(out.p_copy[target] - out.p_gen[target]) * alpha * (1.0 - alpha) / p_y;
    let w_alpha = o * du;
    let d_o = &inputs.w_alpha * du;

    // Attention scores feed both the copy distribution and o.
    let mut ds = inputs.h_enc.tr_mul(&d_o);
    for (j, &id) in inputs.source_ids.iter().enumerate() {
        if id == target {
            ds[j] -= alpha / p_y;
        }
    }
    let da = s.component_mul(&ds.add_scalar(-s.dot(&ds)));
    let h_dec = inputs.w_gen.tr_mul(&dz) + &inputs.h_enc * da / d.sqrt();

    Ok(Gradients {
        h_dec,
        w_gen,
        w_alpha,
    })
}

/// Relative error with an absolute floor on the denominator, so entries
/// whose true gradient is near zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Largest relative error between the analytic gradients and central
/// differences with step `h`, over every entry of `h_dec`, `W_gen` and
/// `w_alpha`.
pub fn grad_check(inputs: &CopyMixInputs, target: usize, h: f64) -> Result<f64> {
    let grads = gradients(inputs, target)?;
    let f = |x: &CopyMixInputs| -distribution_unchecked(x).p[target].ln();
    let mut probe = inputs.clone();
    let mut worst: f64 = 0.0;
    let mut central =
        |probe: &mut CopyMixInputs, get: &dyn Fn(&mut CopyMixInputs) -> &mut f64, analytic: f64| {
            let orig = *get(probe);
            *get(probe) = orig + h;
            let up = f(probe);
            *get(probe) = orig - h;
            let down = f(probe);
            *get(probe) = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic, numeric));
        };
    for i in 0..inputs.hidden() {
        central(&mut probe, &|x| &mut x.h_dec[i], grads.h_dec[i]);
        central(&mut probe, &|x| &mut x.w_alpha[i], grads.w_alpha[i]);
        for v in 0..inputs.vocab() {
            central(&mut probe, &|x| &mut x.w_gen[(v, i)], grads.w_gen[(v, i)]);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// JSON instances and random instances

/// JSON form of an instance. `h_enc` lists the encoder states (one d-vector
/// per source position); `w_gen` lists the V rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceJson {
    pub h_enc: Vec<Vec<f64>>,
    pub h_dec: Vec<f64>,
    pub w_gen: Vec<Vec<f64>>,
    pub w_alpha: Vec<f64>,
    pub source_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

fn columns(d: usize, cols: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = cols.iter().find(|c| c.len() != d) {
        return Err(Error::validation(format!(
            "{what}: vector of length {} (expected {d})",
            c.len()
        )));
    }
    Ok(DMatrix::from_fn(d, cols.len(), |r, c| cols[c][r]))
}

impl InstanceJson {
    pub fn to_inputs(&self) -> Result<CopyMixInputs> {
        let d = self.h_dec.len();
        let h_enc = columns(d, &self.h_enc, "h_enc")?;
        let w_gen = columns(d, &self.w_gen, "w_gen")?.transpose();
        CopyMixInputs::new(
            h_enc,
            DVector::from_vec(self.h_dec.clone()),
            w_gen,
            DVector::from_vec(self.w_alpha.clone()),
            self.source_ids.clone(),
        )
    }

    pub fn from_inputs(inputs: &CopyMixInputs, target: Option<usize>) -> Self {
        InstanceJson {
            h_enc: inputs
                .h_enc
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            h_dec: inputs.h_dec.iter().copied().collect(),
            w_gen: inputs
                .w_gen
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            w_alpha: inputs.w_alpha.iter().copied().collect(),
            source_ids: inputs.source_ids.clone(),
            target,
        }
    }
}

/// Entries uniform in `[-scale, scale]`; source ids uniform over the vocab.
pub fn random_instance(
    rng: &mut StreamRng,
    d: usize,
    t: usize,
    v: usize,
    scale: f64,
) -> Result<CopyMixInputs> {
    let mut u = || rng.gen_range(-scale..=scale);
    let h_enc = DMatrix::from_fn(d, t, |_, _| u());
    let h_dec = DVector::from_fn(d, |_, _| u());
    let w_gen = DMatrix::from_fn(v, d, |_, _| u());
    let w_alpha = DVector::from_fn(d, |_, _| u());
    let source_ids = (0..t).map(|_| rng.gen_range(0..v.max(1))).collect();
    CopyMixInputs::new(h_enc, h_dec, w_gen, w_alpha, source_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTestReport {
    pub trials: u64,
    pub max_sum_error: f64,
    pub min_alpha: f64,
    pub max_alpha: f64,
    /// |α − 0.5| when the gate weights are zeroed, worst case.
    pub max_zero_gate_error: f64,
    pub max_grad_rel_error: f64,
    pub convexity_violations: u64,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.max_sum_error <= 1e-12
            && self.min_alpha > 0.0
            && self.max_alpha < 1.0
            && self.max_zero_gate_error == 0.0
            && self.max_grad_rel_error < 1e-4
            && self.convexity_violations == 0
    }
}

/// Runs the invariant suite over `trials` random instances with d ≤ 8,
/// T' ≤ 5 and V ≤ 20. Trial `i` draws from stream `(seed, i, 0)`.
pub fn selftest(seed: u64, trials: u64) -> Result<SelfTestReport> {
    let mut r = SelfTestReport {
        trials,
        max_sum_error: 0.0,
        min_alpha: 1.0,
        max_alpha: 0.0,
        max_zero_gate_error: 0.0,
        max_grad_rel_error: 0.0,
        convexity_violations: 0,
    };
    for i in 0..trials {
        let mut rng = substream(seed, i, 0);
        let (d, t, v) = (
            rng.gen_range(1..=8),
            rng.gen_range(1..=5),
            rng.gen_range(1..=20),
        );
        let inputs = random_instance(&mut rng, d, t, v, 1.0)?;
        let target = rng.gen_range(0..v);
        let out = distribution_unchecked(&inputs);
        r.max_sum_error = r.max_sum_error.max((out.p.sum() - 1.0).abs());
        r.min_alpha = r.min_alpha.min(out.alpha);
        r.max_alpha = r.max_alpha.max(out.alpha);
        let a = out.alpha;
        let tol = 1e-15;
        let convex = out.p.iter().zip(out.p_gen.iter()).all(|(&p, &g)| {
            let lo = (1.0 - a) * g;
            p >= lo - tol && p <= lo + a + tol
        });
        if !convex {
            r.convexity_violations += 1;
        }
        let mut zero_gate = inputs.clone();
        zero_gate.w_alpha.fill(0.0);
        r.max_zero_gate_error = r
            .max_zero_gate_error
            .max((distribution_unchecked(&zero_gate).alpha - 0.5).abs());
        r.max_grad_rel_error = r.max_grad_rel_error.max(grad_check(&inputs, target, 1e-5)?);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(d: usize, t: usize, v: usize, seed: u64) -> CopyMixInputs {
        random_instance(&mut substream(seed, 0, 0), d, t, v, 1.0).unwrap()
    }

    #[test]
    fn single_position_attends_fully() {
        let x = inst(4, 1, 6, 1);
        let a = copy_attention(&x).unwrap();
        assert_eq!(a.scores.as_slice(), [1.0]);
        assert_eq!(a.output, x.h_enc.column(0));
    }

    #[test]
    fn zero_decoder_state_is_uniform() {
        let mut x = inst(3, 4, 5, 2);
        x.h_dec.fill(0.0);
        let a = copy_attention(&x).unwrap();
        for s in a.scores.iter() {
            assert!((s - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gate_is_half() {
        let mut x = inst(5, 3, 7, 3);
        x.w_alpha.fill(0.0);
        assert_eq!(output_distribution(&x).unwrap().alpha, 0.5);
    }

    #[test]
    fn duplicate_ids_scatter_add() {
        let mut x = inst(2, 2, 5, 4);
        x.source_ids = vec![3, 3];
        let out = output_distribution(&x).unwrap();
        assert!((out.p_copy[3] - 1.0).abs() < 1e-15);
        assert_eq!(out.p_copy.iter().filter(|&&c| c != 0.0).count(), 1);
    }

    #[test]
    fn closed_gate_limit_is_generator() {
        let mut x = inst(6, 4, 9, 5);
        let o = copy_attention(&x).unwrap().output;
        x.w_alpha = o.normalize() * -1e6;
        let out = output_distribution(&x).unwrap();
        assert!(out.alpha < 1e-12);
        for (p, g) in out.p.iter().zip(out.p_gen.iter()) {
            assert!((p - g).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_invariance() {
        let z = DVector::from_vec(vec![0.3, -1.2, 2.5, 0.0]);
        let a = softmax(&z);
        let b = softmax(&z.add_scalar(123.456));
        assert!((a - b).amax() < 1e-12);
        let huge = softmax(&DVector::from_vec(vec![1000.0, 999.0]));
        assert!(huge.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn dimension_errors() {
        let x = inst(3, 2, 4, 6);
        let mut bad = x.clone();
        bad.source_ids = vec![0, 4];
        assert!(output_distribution(&bad).is_err());
        let mut bad = x.clone();
        bad.w_alpha = DVector::zeros(2);
        assert!(copy_attention(&bad).is_err());
        let mut bad = x.clone();
        bad.source_ids.push(1);
        assert!(output_distribution(&bad).is_err());
        assert!(loss(&x, 4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..50 {
            let x = inst(
                1 + seed as usize % 8,
                1 + seed as usize % 5,
                2 + seed as usize % 19,
                seed,
            );
            let err = grad_check(&x, seed as usize % x.vocab(), 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn open_gate_cuts_generator_gradient() {
        let g = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        assert_eq!(generator_logit_grad(&g, 1, 1.0, 0.7), DVector::zeros(3));
    }

    #[test]
    fn all_zero_inputs_have_finite_gradients() {
        let x = CopyMixInputs::new(
            DMatrix::zeros(3, 2),
            DVector::zeros(3),
            DMatrix::zeros(4, 3),
            DVector::zeros(3),
            vec![0, 1],
        )
        .unwrap();
        let g = gradients(&x, 2).unwrap();
        assert!(g
            .h_dec
            .iter()
            .chain(g.w_gen.iter())
            .chain(g.w_alpha.iter())
            .all(|v| v.is_finite()));
    }

    #[test]
    fn json_round_trip() {
        let x = inst(3, 2, 4, 7);
        let j = InstanceJson::from_inputs(&x, Some(1));
        let text = serde_json::to_string(&j).unwrap();
        let back: InstanceJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_inputs().unwrap(), x);
    }

    #[test]
    fn small_selftest_passes() {
        let r = selftest(11, 30).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
