//! Path-attention fusion for multiple-choice QA.
//!
//! For one answer choice with question/choice embedding `h_us` (length h_E)
//! and path embeddings `H` (k x h_D):
//!
//! ```text
//! alpha  = softmax(tanh(H W_A) h_us)          (length k)
//! pooled = sum_i alpha_i H_i                   (length h_D)
//! score  = w . [h_us ; pooled] + b
//! ```
//!
//! Choice scores are softmaxed across choices and trained with cross-entropy.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::tokenize_spans;
use crate::embed::Embedder;
use crate::kg::Path;
use crate::seeding;

pub const INTERROGATIVES: [&str; 9] = ["what", "who", "where", "when", "which", "why", "how", "whom", "whose"];
pub const INIT_RANGE: f64 = 0.05;
pub const DEFAULT_HIDDEN: usize = 64;

pub const SCORER_FORMAT: &str = "kgpath-scorer";
pub const SCORER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Divergence { epoch: usize, what: &'static str },
    #[error("example {index}: {message}")]
    Data { index: usize, message: String },
    #[error("scorer file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Puts `choice` in place of the first interrogative word and turns a
/// trailing `?` into `.`; without an interrogative word, appends
/// ` The answer is {choice}.`
pub fn augment_choice(question: &str, choice: &str) -> String {
    let hit = tokenize_spans(question)
        .into_iter()
        .find(|(t, _)| INTERROGATIVES.contains(&t.as_str()));
    match hit {
        Some((_, span)) => {
            let mut out = format!("{}{}{}", &question[..span.start], choice, &question[span.end..]);
            let trimmed = out.trim_end().len();
            if out[..trimmed].ends_with('?') {
                out.replace_range(trimmed - 1..trimmed, ".");
            }
            out
        }
        None => format!("{question} The answer is {choice}."),
    }
}

/// Inputs for one answer choice.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceInput {
    /// Question+choice embedding, length h_E.
    pub h_us: Array1<f64>,
    /// One row per path, k x h_D.
    pub h_s: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub alpha: Array1<f64>,
    pub pooled: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaExample {
    pub choices: Vec<ChoiceInput>,
    pub gold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionScorer {
    pub w_a: Array2<f64>,
    pub w: Array1<f64>,
    pub b: f64,
    pub use_bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_a: Array2<f64>,
    pub w: Array1<f64>,
    pub b: f64,
}

fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exp = logits.mapv(|x| (x - max).exp());
    let z = exp.sum();
    exp / z
}

fn log_sum_exp(logits: ArrayView1<f64>) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    max + logits.mapv(|x| (x - max).exp()).sum().ln()
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

/// Intermediate values kept for the backward pass.
struct Forward {
    tanh: Array2<f64>,
    alpha: Array1<f64>,
    pooled: Array1<f64>,
    /// `w . [h_us ; pooled]`, without the bias.
    logit: f64,
}

impl AttentionScorer {
    /// Parameters drawn uniformly from `[-0.05, 0.05]`.
    pub fn new(h_d: usize, h_e: usize, seed: u64) -> Self {
        let mut rng = seeding::rng(seed, 0);
        let mut draw = || rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        let w_a = Array2::from_shape_simple_fn((h_d, h_e), &mut draw);
        let w = Array1::from_shape_simple_fn(h_e + h_d, &mut draw);
        let b = draw();
        AttentionScorer { w_a, w, b, use_bias: true }
    }

    pub fn zeros(h_d: usize, h_e: usize) -> Self {
        AttentionScorer {
            w_a: Array2::zeros((h_d, h_e)),
            w: Array1::zeros(h_e + h_d),
            b: 0.0,
            use_bias: true,
        }
    }

    /// Disables the output bias and zeroes it.
    pub fn without_bias(mut self) -> Self {
        self.use_bias = false;
        self.b = 0.0;
        self
    }

    pub fn h_d(&self) -> usize {
        self.w_a.nrows()
    }

    pub fn h_e(&self) -> usize {
        self.w_a.ncols()
    }

    fn check(&self, ci: &ChoiceInput) -> Result<(), QaError> {
        if ci.h_us.len() != self.h_e() {
            return Err(QaError::Dimension(format!(
                "h_us has length {}, scorer expects {}",
                ci.h_us.len(),
                self.h_e()
            )));
        }
        if ci.h_s.ncols() != self.h_d() {
            return Err(QaError::Dimension(format!(
                "path embeddings have {} columns, scorer expects {}",
                ci.h_s.ncols(),
                self.h_d()
            )));
        }
        if ci.h_s.nrows() == 0 {
            return Err(QaError::Dimension("a choice needs at least one path".into()));
        }
        Ok(())
    }

    fn forward(&self, ci: &ChoiceInput) -> Result<Forward, QaError> {
        self.check(ci)?;
        let tanh = ci.h_s.dot(&self.w_a).mapv(f64::tanh);
        let alpha = softmax(tanh.dot(&ci.h_us).view());
        let pooled = ci.h_s.t().dot(&alpha);
        let h_e = self.h_e();
        let logit = self.w.slice(s![..h_e]).dot(&ci.h_us) + self.w.slice(s![h_e..]).dot(&pooled);
        Ok(Forward {
            tanh,
            alpha,
            pooled,
            logit,
        })
    }

    pub fn attend(&self, ci: &ChoiceInput) -> Result<AttentionOutput, QaError> {
        let f = self.forward(ci)?;
        Ok(AttentionOutput {
            alpha: f.alpha,
            pooled: f.pooled,
        })
    }

    /// Softmax over per-choice scores.
    pub fn score_choices(&self, choices: &[ChoiceInput]) -> Result<Array1<f64>, QaError> {
        if choices.len() < 2 {
            return Err(QaError::InvalidArgument(format!(
                "scoring needs at least two choices, got {}",
                choices.len()
            )));
        }
        let scores: Array1<f64> = choices
            .iter()
            .map(|c| self.forward(c).map(|f| f.logit + self.b))
            .collect::<Result<_, _>>()?;
        Ok(softmax(scores.view()))
    }

    pub fn predict(&self, example: &QaExample) -> Result<usize, QaError> {
        let probs = self.score_choices(&example.choices)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Cross-entropy of one example and its analytic gradient.
    pub fn loss_and_gradients(&self, example: &QaExample) -> Result<(f64, Gradients), QaError> {
        if example.gold >= example.choices.len() {
            return Err(QaError::InvalidArgument(format!(
                "gold index {} out of range for {} choices",
                example.gold,
                example.choices.len()
            )));
        }
        if example.choices.len() < 2 {
            return Err(QaError::InvalidArgument("an example needs at least two choices".into()));
        }
        let forwards: Vec<Forward> = example
            .choices
            .iter()
            .map(|c| self.forward(c))
            .collect::<Result<_, _>>()?;
        // b is added to every choice and cancels in the softmax: the loss is
        // taken over bias-free scores so it is exactly invariant to b, and
        // b's gradient sum_c (p_c - y_c) is exactly zero.
        let scores: Array1<f64> = forwards.iter().map(|f| f.logit).collect();
        let loss = log_sum_exp(scores.view()) - scores[example.gold];
        let probs = softmax(scores.view());

        let h_e = self.h_e();
        let w_pooled = self.w.slice(s![h_e..]);
        let mut grads = Gradients {
            w_a: Array2::zeros(self.w_a.raw_dim()),
            w: Array1::zeros(self.w.len()),
            b: 0.0,
        };
        for (c, (ci, f)) in example.choices.iter().zip(&forwards).enumerate() {
            let g = probs[c] - if c == example.gold { 1.0 } else { 0.0 };
            grads.w.slice_mut(s![..h_e]).scaled_add(g, &ci.h_us);
            grads.w.slice_mut(s![h_e..]).scaled_add(g, &f.pooled);
            let d_pooled = &w_pooled * g;
            let d_alpha = ci.h_s.dot(&d_pooled);
            let centered = &d_alpha - f.alpha.dot(&d_alpha);
            let d_logits = &f.alpha * &centered;
            let d_tanh = outer(d_logits.view(), ci.h_us.view());
            let d_pre = d_tanh * f.tanh.mapv(|t| 1.0 - t * t);
            grads.w_a += &ci.h_s.t().dot(&d_pre);
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, example: &QaExample) -> Result<f64, QaError> {
        Ok(self.loss_and_gradients(example)?.0)
    }

    /// Mean loss and mean gradient over examples, summed in example order.
    pub fn batch_gradients(&self, examples: &[QaExample]) -> Result<(f64, Gradients), QaError> {
        let mut total = 0.0;
        let mut acc = Gradients {
            w_a: Array2::zeros(self.w_a.raw_dim()),
            w: Array1::zeros(self.w.len()),
            b: 0.0,
        };
        for (index, ex) in examples.iter().enumerate() {
            let (l, g) = self.loss_and_gradients(ex).map_err(|e| match e {
                QaError::InvalidArgument(message) | QaError::Dimension(message) => QaError::Data { index, message },
                other => other,
            })?;
            total += l;
            acc.w_a += &g.w_a;
            acc.w += &g.w;
            acc.b += g.b;
        }
        let n = examples.len().max(1) as f64;
        acc.w_a /= n;
        acc.w /= n;
        acc.b /= n;
        Ok((total / n, acc))
    }

    pub fn mean_loss(&self, examples: &[QaExample]) -> Result<f64, QaError> {
        Ok(self.batch_gradients(examples)?.0)
    }

    fn step(&mut self, g: &Gradients, lr: f64) {
        self.w_a.scaled_add(-lr, &g.w_a);
        self.w.scaled_add(-lr, &g.w);
        if self.use_bias {
            self.b -= lr * g.b;
        }
    }

    /// Full-batch gradient descent on mean cross-entropy.
    pub fn train(&mut self, examples: &[QaExample], config: &TrainConfig) -> Result<TrainHistory, QaError> {
        if !(config.lr >= 0.0 && config.lr.is_finite()) {
            return Err(QaError::InvalidArgument(format!("learning rate must be >= 0, got {}", config.lr)));
        }
        if examples.is_empty() {
            return Err(QaError::InvalidArgument("no training examples".into()));
        }
        let mut losses = Vec::with_capacity(config.epochs + 1);
        for epoch in 0..config.epochs {
            let (loss, grads) = self.batch_gradients(examples)?;
            if !loss.is_finite() {
                return Err(QaError::Divergence { epoch, what: "loss" });
            }
            if !grads.is_finite() {
                return Err(QaError::Divergence { epoch, what: "gradient" });
            }
            losses.push(loss);
            if config.line_search {
                self.line_search_step(examples, &grads, config.lr, loss)?;
            } else {
                self.step(&grads, config.lr);
            }
        }
        let final_loss = self.mean_loss(examples)?;
        if !final_loss.is_finite() {
            return Err(QaError::Divergence {
                epoch: config.epochs,
                what: "loss",
            });
        }
        losses.push(final_loss);
        Ok(TrainHistory { losses })
    }

    /// Backtracking: halve the step until the loss does not increase.
    fn line_search_step(&mut self, examples: &[QaExample], g: &Gradients, lr: f64, loss: f64) -> Result<(), QaError> {
        let mut step = lr;
        for _ in 0..40 {
            let mut trial = self.clone();
            trial.step(g, step);
            let l = trial.mean_loss(examples)?;
            if l.is_finite() && l <= loss {
                *self = trial;
                return Ok(());
            }
            step *= 0.5;
        }
        Ok(())
    }

    pub fn accuracy(&self, examples: &[QaExample]) -> Result<f64, QaError> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for ex in examples {
            if self.predict(ex)? == ex.gold {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Max relative error between analytic gradients and central finite
    /// differences over every parameter of `W_A`, `w` and `b`.
    pub fn grad_check(&self, example: &QaExample, eps: f64) -> Result<f64, QaError> {
        if eps <= 0.0 {
            return Err(QaError::InvalidArgument("eps must be positive".into()));
        }
        let (_, analytic) = self.loss_and_gradients(example)?;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
        let numeric = |perturb: &dyn Fn(&mut AttentionScorer, f64)| -> Result<f64, QaError> {
            let mut plus = self.clone();
            perturb(&mut plus, eps);
            let mut minus = self.clone();
            perturb(&mut minus, -eps);
            Ok((plus.loss(example)? - minus.loss(example)?) / (2.0 * eps))
        };
        let mut worst: f64 = 0.0;
        for ((i, j), &a) in analytic.w_a.indexed_iter() {
            let n = numeric(&|s, d| s.w_a[[i, j]] += d)?;
            worst = worst.max(rel(a, n));
        }
        for (i, &a) in analytic.w.indexed_iter() {
            let n = numeric(&|s, d| s.w[i] += d)?;
            worst = worst.max(rel(a, n));
        }
        if self.use_bias {
            let n = numeric(&|s, d| s.b += d)?;
            worst = worst.max(rel(analytic.b, n));
        }
        Ok(worst)
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), QaError> {
        let file = ScorerFile {
            format: SCORER_FORMAT.to_string(),
            version: SCORER_VERSION,
            scorer: self.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, QaError> {
        let file: ScorerFile = serde_json::from_reader(reader)?;
        if file.format != SCORER_FORMAT || file.version != SCORER_VERSION {
            return Err(QaError::Format(format!(
                "expected {SCORER_FORMAT} v{SCORER_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let sc = file.scorer;
        if sc.w.len() != sc.h_d() + sc.h_e() {
            return Err(QaError::Format("w length disagrees with W_A shape".into()));
        }
        Ok(sc)
    }
}

impl Gradients {
    fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|x| x.is_finite()) && self.w_a.iter().all(|x| x.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct ScorerFile {
    format: String,
    version: u32,
    scorer: AttentionScorer,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Backtrack each step so the loss never increases.
    pub line_search: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 200,
            line_search: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainHistory {
    /// Mean loss before each epoch, then after the last one.
    pub losses: Vec<f64>,
}

/// One line of a QA example file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub choices: Vec<String>,
    pub gold: usize,
    /// Linearized paths per choice text.
    pub paths: BTreeMap<String, Vec<String>>,
}

fn path_text(linearized: &str) -> String {
    Path::parse(linearized)
        .map(|p| p.surface_text())
        .unwrap_or_else(|_| linearized.replace('_', " "))
}

/// Embeds a QA record: `h_us` from the augmented question followed by the
/// choice, path rows from each path's surface text.
pub fn encode_record(
    record: &QaRecord,
    question_embedder: &dyn Embedder,
    path_embedder: &dyn Embedder,
) -> Result<QaExample, String> {
    if record.choices.len() < 2 {
        return Err(format!("needs at least two choices, got {}", record.choices.len()));
    }
    if record.gold >= record.choices.len() {
        return Err(format!("gold index {} out of range", record.gold));
    }
    let mut choices = Vec::with_capacity(record.choices.len());
    for choice in &record.choices {
        let paths = record
            .paths
            .get(choice)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| format!("no paths for choice `{choice}`"))?;
        let text = format!("{} {}", augment_choice(&record.question, choice), choice);
        let h_us = Array1::from(question_embedder.embed(&text).into_inner());
        let rows: Vec<Array1<f64>> = paths
            .iter()
            .map(|p| Array1::from(path_embedder.embed(&path_text(p)).into_inner()))
            .collect();
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        let h_s = concatenate(Axis(0), &views).map_err(|e| e.to_string())?;
        choices.push(ChoiceInput { h_us, h_s });
    }
    Ok(QaExample {
        choices,
        gold: record.gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn random_input(rng: &mut impl Rng, k: usize, h_d: usize, h_e: usize) -> ChoiceInput {
        let n = Normal::new(0.0, 1.0).unwrap();
        ChoiceInput {
            h_us: Array1::from_shape_simple_fn(h_e, || n.sample(rng)),
            h_s: Array2::from_shape_simple_fn((k, h_d), || n.sample(rng)),
        }
    }

    #[test]
    fn augmentation_rules() {
        assert_eq!(
            augment_choice("Google maps and other GPS services have replaced what?", "atlas"),
            "Google maps and other GPS services have replaced atlas."
        );
        assert_eq!(augment_choice("Where is it?", "home"), "home is it.");
        assert_eq!(augment_choice("Name the capital.", "paris"), "Name the capital. The answer is paris.");
        assert_eq!(augment_choice("WHO wrote it ?", "she"), "she wrote it .");
    }

    #[test]
    fn zero_attention_weights_are_uniform() {
        let mut rng = seeding::rng(1, 0);
        let ci = random_input(&mut rng, 4, 3, 5);
        let mut sc = AttentionScorer::new(3, 5, 2);
        sc.w_a.fill(0.0);
        let out = sc.attend(&ci).unwrap();
        for a in out.alpha.iter() {
            assert_relative_eq!(*a, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_path_passes_through() {
        let mut rng = seeding::rng(3, 0);
        let ci = random_input(&mut rng, 1, 4, 2);
        let out = AttentionScorer::new(4, 2, 9).attend(&ci).unwrap();
        assert_eq!(out.alpha.to_vec(), vec![1.0]);
        assert_eq!(out.pooled, ci.h_s.row(0));
    }

    #[test]
    fn identical_rows_pool_to_that_row() {
        let row = Array1::from(vec![0.5, -1.0, 2.0]);
        let h_s = Array2::from_shape_fn((3, 3), |(_, j)| row[j]);
        let ci = ChoiceInput {
            h_us: Array1::from(vec![1.0, 2.0]),
            h_s,
        };
        let out = AttentionScorer::new(3, 2, 4).attend(&ci).unwrap();
        for (p, r) in out.pooled.iter().zip(row.iter()) {
            assert_relative_eq!(p, r, epsilon = 1e-12);
        }
        for a in out.alpha.iter() {
            assert_relative_eq!(*a, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn choice_score_symmetries() {
        let mut rng = seeding::rng(5, 0);
        let ci = random_input(&mut rng, 2, 3, 3);
        let sc = AttentionScorer::new(3, 3, 1);
        let probs = sc.score_choices(&[ci.clone(), ci.clone(), ci.clone()]).unwrap();
        for p in probs.iter() {
            assert_relative_eq!(*p, 1.0 / 3.0, epsilon = 1e-12);
        }
        let choices = [ci, random_input(&mut rng, 3, 3, 3)];
        let base = sc.score_choices(&choices).unwrap();
        let mut shifted = sc.clone();
        shifted.b += 7.5;
        let moved = shifted.score_choices(&choices).unwrap();
        for (a, b) in base.iter().zip(moved.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let mut flat = sc.clone();
        flat.w.fill(0.0);
        flat.b = 3.0;
        assert_relative_eq!(flat.score_choices(&choices).unwrap()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dimension_and_argument_errors() {
        let sc = AttentionScorer::new(3, 2, 0);
        let bad = ChoiceInput {
            h_us: Array1::zeros(3),
            h_s: Array2::zeros((2, 3)),
        };
        assert!(matches!(sc.attend(&bad), Err(QaError::Dimension(_))));
        let empty = ChoiceInput {
            h_us: Array1::zeros(2),
            h_s: Array2::zeros((0, 3)),
        };
        assert!(matches!(sc.attend(&empty), Err(QaError::Dimension(_))));
        let ok = ChoiceInput {
            h_us: Array1::zeros(2),
            h_s: Array2::zeros((1, 3)),
        };
        assert!(matches!(sc.score_choices(&[ok]), Err(QaError::InvalidArgument(_))));
    }

    #[test]
    fn zero_epochs_and_zero_lr() {
        let mut rng = seeding::rng(8, 0);
        let examples: Vec<QaExample> = (0..5)
            .map(|i| QaExample {
                choices: (0..3).map(|_| random_input(&mut rng, 2, 4, 4)).collect(),
                gold: i % 3,
            })
            .collect();
        let sc = AttentionScorer::new(4, 4, 3);
        let mut trained = sc.clone();
        trained
            .train(&examples, &TrainConfig { lr: 0.1, epochs: 0, line_search: false })
            .unwrap();
        assert_eq!(trained, sc);
        let mut frozen = sc.clone();
        let hist = frozen
            .train(&examples, &TrainConfig { lr: 0.0, epochs: 5, line_search: false })
            .unwrap();
        assert!(hist.losses.windows(2).all(|w| w[0] == w[1]));
        let mut searched = sc.clone();
        let hist = searched
            .train(&examples, &TrainConfig { lr: 50.0, epochs: 20, line_search: true })
            .unwrap();
        assert!(hist.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn divergence_is_reported() {
        let ex = QaExample {
            choices: vec![
                ChoiceInput { h_us: Array1::from(vec![f64::NAN]), h_s: Array2::ones((1, 1)) },
                ChoiceInput { h_us: Array1::from(vec![1.0]), h_s: Array2::ones((1, 1)) },
            ],
            gold: 0,
        };
        let mut sc = AttentionScorer::new(1, 1, 0);
        let err = sc.train(&[ex], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, QaError::Divergence { epoch: 0, .. }));
    }

    #[test]
    fn bias_can_be_disabled() {
        let mut rng = seeding::rng(2, 0);
        let ex = QaExample {
            choices: (0..2).map(|_| random_input(&mut rng, 2, 2, 2)).collect(),
            gold: 1,
        };
        let mut sc = AttentionScorer::new(2, 2, 5).without_bias();
        sc.train(std::slice::from_ref(&ex), &TrainConfig { lr: 0.5, epochs: 3, line_search: false })
            .unwrap();
        assert_eq!(sc.b, 0.0);
        assert!(sc.grad_check(&ex, 1e-5).unwrap() <= 1e-4);
    }

    #[test]
    fn scorer_file_roundtrip() {
        let sc = AttentionScorer::new(3, 2, 11);
        let mut buf = Vec::new();
        sc.save(&mut buf).unwrap();
        assert_eq!(AttentionScorer::load(buf.as_slice()).unwrap(), sc);
    }

    #[test]
    fn record_encoding() {
        let rec = QaRecord {
            question: "What do you play with a bow?".into(),
            choices: vec!["violin".into(), "drum".into()],
            gold: 0,
            paths: BTreeMap::from([
                ("violin".into(), vec!["violin hasproperty strings".into(), "bow usedfor violin".into()]),
                ("drum".into(), vec!["drum _usedfor stick".into()]),
            ]),
        };
        let qe = crate::embed::HashedTfIdf::new(8);
        let pe = crate::embed::HashedTfIdf::new(6);
        let ex = encode_record(&rec, &qe, &pe).unwrap();
        assert_eq!(ex.choices[0].h_s.dim(), (2, 6));
        assert_eq!(ex.choices[1].h_us.len(), 8);
        let mut missing = rec.clone();
        missing.paths.remove("drum");
        assert!(encode_record(&missing, &qe, &pe).is_err());
    }
}
