//! Class-weighted logistic regression for conversation outcomes.
//!
//! The positive class is `Failure` throughout: probabilities are
//! probabilities of failure, and a tie at the decision threshold resolves to
//! `Failure`. Training is full-batch gradient descent from zero-initialized
//! weights on the weighted binary cross-entropy
//!
//! ```text
//! L(w, b) = Σᵢ w'_{yᵢ}·BCEᵢ / Σᵢ w'_{yᵢ}  +  (λ/2)·‖w‖²
//! ```
//!
//! where the per-class weights w'_c come from [`class_weights`] and the L2
//! term excludes the bias. Everything is deterministic: same inputs and
//! config, bitwise-identical model.
//!
//! [`OutcomePredictor`] is the abstraction the intervention engine targets;
//! it is implemented by the local logistic-on-counts path and by a remote
//! neural predictor behind the wire protocol.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Conversation, Outcome};
use crate::features::{
    render_prepend_text, social_count_features, FeatureError, FeatureSchema, FeatureVector,
};
use crate::tagging::TagAssignment;
use crate::wire::{post_json, PredictRequest, PredictResponse, WireError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("class `{0}` has zero examples")]
    EmptyClass(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training diverged: loss became non-finite")]
    DivergenceDetected,
    #[error("corrupt model file, line {line}: {message}")]
    CorruptModel { line: usize, message: String },
    #[error("no tag assignments for conversation `{0}`")]
    MissingTags(String),
    #[error("conversation `{0}` has no outcome label")]
    Unlabeled(String),
    #[error("predictor transport: {0}")]
    Transport(String),
    #[error("predictor protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-class loss weights `w'_c = C·(N/N_c) / Σ_k (N/N_k)`. They sum to the
/// number of classes, and balanced counts give every class weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights<K: Ord> {
    weights: BTreeMap<K, f64>,
    per_class: BTreeMap<K, usize>,
    n_total: usize,
}

impl<K: Ord + Clone> ClassWeights<K> {
    pub fn weight(&self, class: &K) -> f64 {
        self.weights[class]
    }

    pub fn weights(&self) -> &BTreeMap<K, f64> {
        &self.weights
    }

    pub fn per_class(&self) -> &BTreeMap<K, usize> {
        &self.per_class
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }
}

/// Computes class weights from per-class example counts.
pub fn class_weights<K: Ord + Clone + std::fmt::Display>(
    per_class: &BTreeMap<K, usize>,
) -> Result<ClassWeights<K>, ModelError> {
    if per_class.is_empty() {
        return Err(ModelError::EmptyClass("<none>".to_string()));
    }
    if let Some((class, _)) = per_class.iter().find(|(_, n)| **n == 0) {
        return Err(ModelError::EmptyClass(class.to_string()));
    }
    let n_total: usize = per_class.values().sum();
    let n = n_total as f64;
    let c = per_class.len() as f64;
    let raw: BTreeMap<K, f64> =
        per_class.iter().map(|(k, n_c)| (k.clone(), n / *n_c as f64)).collect();
    let sum: f64 = raw.values().sum();
    let weights = raw.into_iter().map(|(k, w)| (k, c * w / sum)).collect();
    Ok(ClassWeights { weights, per_class: per_class.clone(), n_total })
}

/// Training hyperparameters. Defaults favor convergence and determinism over
/// speed; the small L2 penalty keeps separable data from driving weights to
/// infinity and can be set to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub l2_penalty: f64,
    /// Converged when the epoch-to-epoch loss delta drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            max_epochs: 2000,
            l2_penalty: 1e-4,
            tolerance: 1e-7,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub schema_id: String,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_meta: TrainMeta,
}

/// A predicted outcome for one conversation. `label` is `Failure` exactly
/// when `probability_failure` reached the decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomePrediction {
    pub conversation_id: String,
    pub probability_failure: f64,
    pub label: Outcome,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// ln(1 + e^z) without overflow for any finite z.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// σ(z), exact to f64 for |z| well beyond 1e3.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn failure_indicator(outcome: Outcome) -> f64 {
    match outcome {
        Outcome::Failure => 1.0,
        Outcome::Success => 0.0,
    }
}

fn dot(weights: &[f64], x: &FeatureVector) -> f64 {
    x.nonzero().into_iter().map(|(i, v)| weights[i] * v).sum()
}

/// The training objective at `(weights, bias)`.
pub fn weighted_loss(
    x: &[FeatureVector],
    y: &[Outcome],
    cw: &ClassWeights<Outcome>,
    weights: &[f64],
    bias: f64,
    l2_penalty: f64,
) -> f64 {
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let z = dot(weights, xi) + bias;
        let wi = cw.weight(yi);
        total += wi * (softplus(z) - failure_indicator(*yi) * z);
        weight_sum += wi;
    }
    let penalty = 0.5 * l2_penalty * weights.iter().map(|w| w * w).sum::<f64>();
    total / weight_sum + penalty
}

/// Analytic gradient of [`weighted_loss`]: `(∂L/∂w, ∂L/∂b)`.
pub fn weighted_gradient(
    x: &[FeatureVector],
    y: &[Outcome],
    cw: &ClassWeights<Outcome>,
    weights: &[f64],
    bias: f64,
    l2_penalty: f64,
) -> (Vec<f64>, f64) {
    let mut grad = vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    let mut weight_sum = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let z = dot(weights, xi) + bias;
        let wi = cw.weight(yi);
        let residual = wi * (sigmoid(z) - failure_indicator(*yi));
        for (i, v) in xi.nonzero() {
            grad[i] += residual * v;
        }
        grad_bias += residual;
        weight_sum += wi;
    }
    for (g, w) in grad.iter_mut().zip(weights) {
        *g = *g / weight_sum + l2_penalty * w;
    }
    (grad, grad_bias / weight_sum)
}

fn validate_training_inputs(
    x: &[FeatureVector],
    y: &[Outcome],
    schema: &FeatureSchema,
) -> Result<(), ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} feature vectors but {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(ModelError::DimensionMismatch(
            "training needs at least 2 examples".to_string(),
        ));
    }
    if let Some(bad) = x
        .iter()
        .find(|v| v.schema_id != schema.schema_id || v.dim() != schema.dimension())
    {
        return Err(ModelError::DimensionMismatch(format!(
            "vector for `{}` has schema `{}` ({} dims), expected `{}` ({} dims)",
            bad.conversation_id,
            bad.schema_id,
            bad.dim(),
            schema.schema_id,
            schema.dimension()
        )));
    }
    let failures = y.iter().filter(|o| **o == Outcome::Failure).count();
    if failures == 0 || failures == y.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

/// [`train_logistic`], additionally returning the loss observed at the start
/// of every epoch (the descent trace).
pub fn train_logistic_traced(
    x: &[FeatureVector],
    y: &[Outcome],
    schema: &FeatureSchema,
    cw: &ClassWeights<Outcome>,
    cfg: &TrainConfig,
) -> Result<(LogisticModel, Vec<f64>), ModelError> {
    validate_training_inputs(x, y, schema)?;
    let mut weights = vec![0.0; schema.dimension()];
    let mut bias = 0.0;
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        let loss = weighted_loss(x, y, cw, &weights, bias, cfg.l2_penalty);
        if !loss.is_finite() {
            return Err(ModelError::DivergenceDetected);
        }
        trace.push(loss);
        if (previous - loss).abs() < cfg.tolerance {
            break;
        }
        let (grad, grad_bias) = weighted_gradient(x, y, cw, &weights, bias, cfg.l2_penalty);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
        bias -= cfg.learning_rate * grad_bias;
        previous = loss;
        epochs_run = epoch + 1;
    }
    let final_loss = weighted_loss(x, y, cw, &weights, bias, cfg.l2_penalty);
    if !final_loss.is_finite() {
        return Err(ModelError::DivergenceDetected);
    }
    let model = LogisticModel {
        schema_id: schema.schema_id.clone(),
        feature_names: schema.names.clone(),
        weights,
        bias,
        train_meta: TrainMeta { seed: cfg.seed, epochs_run, final_loss },
    };
    Ok((model, trace))
}

/// Trains a logistic model on feature vectors and outcome labels.
pub fn train_logistic(
    x: &[FeatureVector],
    y: &[Outcome],
    schema: &FeatureSchema,
    cw: &ClassWeights<Outcome>,
    cfg: &TrainConfig,
) -> Result<LogisticModel, ModelError> {
    train_logistic_traced(x, y, schema, cw, cfg).map(|(model, _)| model)
}

/// Failure probability σ(w·x + b) for one feature vector.
pub fn predict_proba(model: &LogisticModel, x: &FeatureVector) -> Result<f64, ModelError> {
    if x.schema_id != model.schema_id || x.dim() != model.weights.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "vector for `{}` has schema `{}` ({} dims), model wants `{}` ({} dims)",
            x.conversation_id,
            x.schema_id,
            x.dim(),
            model.schema_id,
            model.weights.len()
        )));
    }
    Ok(sigmoid(dot(&model.weights, x) + model.bias))
}

/// Thresholded prediction; probability exactly at the threshold labels
/// `Failure` (the positive class).
pub fn predict(
    model: &LogisticModel,
    x: &FeatureVector,
    threshold: f64,
) -> Result<OutcomePrediction, ModelError> {
    let probability_failure = predict_proba(model, x)?;
    Ok(OutcomePrediction {
        conversation_id: x.conversation_id.clone(),
        probability_failure,
        label: if probability_failure >= threshold { Outcome::Failure } else { Outcome::Success },
    })
}

const MODEL_FILE_VERSION: &str = "outcome-model v1";

/// Writes a model as versioned plain text: header, schema and training
/// metadata, bias, then one `name,weight` line per feature.
pub fn save_model(model: &LogisticModel, path: &Path) -> Result<(), ModelError> {
    let mut out = String::new();
    writeln!(out, "{MODEL_FILE_VERSION}").unwrap();
    writeln!(out, "schema,{}", model.schema_id).unwrap();
    writeln!(out, "seed,{}", model.train_meta.seed).unwrap();
    writeln!(out, "epochs_run,{}", model.train_meta.epochs_run).unwrap();
    writeln!(out, "final_loss,{}", model.train_meta.final_loss).unwrap();
    writeln!(out, "bias,{}", model.bias).unwrap();
    for (name, weight) in model.feature_names.iter().zip(&model.weights) {
        writeln!(out, "{name},{weight}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LogisticModel, ModelError> {
    let corrupt = |line: usize, message: String| ModelError::CorruptModel { line, message };
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, MODEL_FILE_VERSION)) => {}
        Some((_, other)) => {
            return Err(corrupt(1, format!("expected `{MODEL_FILE_VERSION}`, found `{other}`")))
        }
        None => return Err(corrupt(1, "empty model file".to_string())),
    }

    fn field<'a>(
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
        key: &str,
    ) -> Result<(usize, &'a str), ModelError> {
        match lines.next() {
            Some((i, line)) => line
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(','))
                .map(|value| (i, value))
                .ok_or(ModelError::CorruptModel {
                    line: i + 1,
                    message: format!("expected `{key},<value>`"),
                }),
            None => Err(ModelError::CorruptModel {
                line: 0,
                message: format!("missing `{key}` line"),
            }),
        }
    }
    fn parsed<T: std::str::FromStr>(at: (usize, &str)) -> Result<T, ModelError> {
        at.1.parse().map_err(|_| ModelError::CorruptModel {
            line: at.0 + 1,
            message: format!("unparseable value `{}`", at.1),
        })
    }

    let schema_id = field(&mut lines, "schema")?.1.to_string();
    let seed: u64 = parsed(field(&mut lines, "seed")?)?;
    let epochs_run: usize = parsed(field(&mut lines, "epochs_run")?)?;
    let final_loss: f64 = parsed(field(&mut lines, "final_loss")?)?;
    let bias: f64 = parsed(field(&mut lines, "bias")?)?;

    let mut feature_names = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in lines {
        let (name, weight) = line
            .rsplit_once(',')
            .ok_or_else(|| corrupt(i + 1, "expected `name,weight`".to_string()))?;
        let weight: f64 = weight
            .parse()
            .map_err(|_| corrupt(i + 1, format!("unparseable weight `{weight}`")))?;
        if !weight.is_finite() {
            return Err(corrupt(i + 1, "non-finite weight".to_string()));
        }
        feature_names.push(name.to_string());
        weights.push(weight);
    }
    if !bias.is_finite() {
        return Err(corrupt(6, "non-finite bias".to_string()));
    }
    Ok(LogisticModel {
        schema_id,
        feature_names,
        weights,
        bias,
        train_meta: TrainMeta { seed, epochs_run, final_loss },
    })
}

impl From<WireError> for ModelError {
    fn from(e: WireError) -> ModelError {
        match e {
            WireError::Transport(m) => ModelError::Transport(m),
            WireError::Protocol(m) => ModelError::Protocol(m),
        }
    }
}

/// Asks the remote predictor at `endpoint` for the failure probability of a
/// tagged conversation (sent in the prepend-text rendering).
pub fn predictor_remote(
    endpoint: &str,
    conv: &Conversation,
    tags: &[TagAssignment],
) -> Result<OutcomePrediction, ModelError> {
    let request = PredictRequest {
        conversation_id: conv.conversation_id.clone(),
        rendered_text: render_prepend_text(conv, tags)?,
    };
    let response: PredictResponse = post_json(endpoint, &request)?;
    let p = response.probability_failure;
    if !(0.0..=1.0).contains(&p) {
        return Err(ModelError::Protocol(format!(
            "probability_failure {p} outside [0, 1]"
        )));
    }
    Ok(OutcomePrediction {
        conversation_id: conv.conversation_id.clone(),
        probability_failure: p,
        label: if p >= DEFAULT_THRESHOLD { Outcome::Failure } else { Outcome::Success },
    })
}

/// Anything that can predict a conversation's outcome from its tags. The
/// intervention engine perturbs `tags` and compares predictions, so
/// implementations must be pure functions of `(conv, tags)`.
pub trait OutcomePredictor: Sync {
    fn predict_outcome(
        &self,
        conv: &Conversation,
        tags: &[TagAssignment],
    ) -> Result<OutcomePrediction, ModelError>;
}

/// The local pipeline: social count features into a trained logistic model.
pub struct CountModelPredictor {
    pub model: LogisticModel,
    pub threshold: f64,
}

impl CountModelPredictor {
    pub fn new(model: LogisticModel) -> CountModelPredictor {
        CountModelPredictor { model, threshold: DEFAULT_THRESHOLD }
    }
}

impl OutcomePredictor for CountModelPredictor {
    fn predict_outcome(
        &self,
        conv: &Conversation,
        tags: &[TagAssignment],
    ) -> Result<OutcomePrediction, ModelError> {
        let features = social_count_features(&conv.conversation_id, tags)?;
        predict(&self.model, &features, self.threshold)
    }
}

/// A neural predictor served behind the wire protocol.
pub struct RemotePredictor {
    pub endpoint: String,
}

impl OutcomePredictor for RemotePredictor {
    fn predict_outcome(
        &self,
        conv: &Conversation,
        tags: &[TagAssignment],
    ) -> Result<OutcomePrediction, ModelError> {
        predictor_remote(&self.endpoint, conv, tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counts<K: Ord>(pairs: Vec<(K, usize)>) -> BTreeMap<K, usize> {
        pairs.into_iter().collect()
    }

    #[test]
    fn balanced_counts_give_unit_weights() {
        let cw = class_weights(&counts(vec![("A", 50), ("B", 50)])).unwrap();
        assert_eq!(cw.weight(&"A"), 1.0);
        assert_eq!(cw.weight(&"B"), 1.0);
        assert_eq!(cw.n_total(), 100);
        assert_eq!(cw.n_classes(), 2);

        let nine = class_weights(&counts((0..9).map(|i| (i, 7)).collect())).unwrap();
        assert!(nine.weights().values().all(|w| *w == 1.0));
    }

    #[test]
    fn imbalanced_example_is_exact() {
        let cw = class_weights(&counts(vec![("A", 90), ("B", 10)])).unwrap();
        assert_eq!(cw.weight(&"A"), 0.2);
        assert_eq!(cw.weight(&"B"), 1.8);
    }

    #[test]
    fn zero_count_class_is_rejected() {
        assert!(matches!(
            class_weights(&counts(vec![("A", 3), ("B", 0)])).unwrap_err(),
            ModelError::EmptyClass(c) if c == "B"
        ));
        assert!(class_weights(&BTreeMap::<&str, usize>::new()).is_err());
    }

    #[test]
    fn weights_sum_to_class_count_and_scale_invariantly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let k = rng.gen_range(2..8usize);
            let per_class: BTreeMap<usize, usize> =
                (0..k).map(|c| (c, rng.gen_range(1..500usize))).collect();
            let cw = class_weights(&per_class).unwrap();
            let sum: f64 = cw.weights().values().sum();
            assert!((sum - k as f64).abs() < 1e-12);

            let factor = rng.gen_range(2..5usize);
            let scaled: BTreeMap<usize, usize> =
                per_class.iter().map(|(c, n)| (*c, n * factor)).collect();
            let cw_scaled = class_weights(&scaled).unwrap();
            // Scaling counts preserves every ratio, so weights are identical
            // (bitwise: IEEE division depends only on the true quotient).
            assert_eq!(cw.weights(), cw_scaled.weights());
        }
    }

    fn schema2() -> FeatureSchema {
        FeatureSchema::new("pair", vec!["x1".into(), "x2".into()])
    }

    /// Four points separable by x1: failures at x1 ≥ 2, successes at x1 ≤ 1.
    fn separable() -> (Vec<FeatureVector>, Vec<Outcome>) {
        let x = vec![
            FeatureVector::dense("c1", "pair", vec![0.0, 1.0]),
            FeatureVector::dense("c2", "pair", vec![1.0, 0.0]),
            FeatureVector::dense("c3", "pair", vec![2.0, 1.0]),
            FeatureVector::dense("c4", "pair", vec![3.0, 0.0]),
        ];
        let y = vec![Outcome::Success, Outcome::Success, Outcome::Failure, Outcome::Failure];
        (x, y)
    }

    fn outcome_counts(y: &[Outcome]) -> BTreeMap<Outcome, usize> {
        let mut map = BTreeMap::new();
        for o in y {
            *map.entry(*o).or_insert(0) += 1;
        }
        map
    }

    #[test]
    fn separable_data_trains_to_perfect_accuracy() {
        let (x, y) = separable();
        let cw = class_weights(&outcome_counts(&y)).unwrap();
        let model =
            train_logistic(&x, &y, &schema2(), &cw, &TrainConfig::default()).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let pred = predict(&model, xi, DEFAULT_THRESHOLD).unwrap();
            assert_eq!(pred.label, *yi, "misclassified {}", xi.conversation_id);
        }
        assert!(model.train_meta.epochs_run > 0);
        assert!(model.train_meta.final_loss.is_finite());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (x, y) = separable();
        let cw = class_weights(&outcome_counts(&y)).unwrap();
        let a = train_logistic(&x, &y, &schema2(), &cw, &TrainConfig::default()).unwrap();
        let b = train_logistic(&x, &y, &schema2(), &cw, &TrainConfig::default()).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
        assert_eq!(a.train_meta, b.train_meta);
    }

    #[test]
    fn loss_descends_monotonically_on_the_toy_set() {
        let (x, y) = separable();
        let cw = class_weights(&outcome_counts(&y)).unwrap();
        let (_, trace) =
            train_logistic_traced(&x, &y, &schema2(), &cw, &TrainConfig::default()).unwrap();
        assert!(trace.len() > 2);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15, "loss rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn constant_features_learn_the_class_prior() {
        // 3 failures, 1 success, all with the same feature vector: with unit
        // class weights and no penalty the optimum predicts the prior 0.75.
        let schema = FeatureSchema::new("const", vec!["one".into()]);
        let x: Vec<FeatureVector> = (0..4)
            .map(|i| FeatureVector::dense(&format!("c{i}"), "const", vec![1.0]))
            .collect();
        let y = vec![Outcome::Failure, Outcome::Failure, Outcome::Failure, Outcome::Success];
        let unit = class_weights(&counts(vec![(Outcome::Success, 1), (Outcome::Failure, 1)]))
            .unwrap();
        let cfg = TrainConfig { l2_penalty: 0.0, max_epochs: 20_000, ..TrainConfig::default() };
        let model = train_logistic(&x, &y, &schema, &unit, &cfg).unwrap();
        let p = predict_proba(&model, &x[0]).unwrap();
        assert!((p - 0.75).abs() < 1e-3, "got {p}");
    }

    #[test]
    fn mean_probability_matches_positive_rate_at_convergence() {
        // BCE stationarity: with unit weights and no penalty, Σ(σ(zᵢ) − yᵢ)=0.
        let (x, y) = separable();
        let unit = class_weights(&counts(vec![(Outcome::Success, 1), (Outcome::Failure, 1)]))
            .unwrap();
        let cfg = TrainConfig { l2_penalty: 0.0, max_epochs: 50_000, ..TrainConfig::default() };
        let model = train_logistic(&x, &y, &schema2(), &unit, &cfg).unwrap();
        let mean: f64 = x
            .iter()
            .map(|xi| predict_proba(&model, xi).unwrap())
            .sum::<f64>()
            / x.len() as f64;
        assert!((mean - 0.5).abs() < 1e-3, "mean probability {mean}");
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let d = rng.gen_range(1..=10usize);
            let n = rng.gen_range(2..=50usize);
            let x: Vec<FeatureVector> = (0..n)
                .map(|i| {
                    let values: Vec<f64> =
                        (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    FeatureVector::dense(&format!("c{i}"), "g", values)
                })
                .collect();
            let y: Vec<Outcome> = (0..n)
                .map(|i| {
                    // Force both classes, then randomize the rest.
                    if i == 0 {
                        Outcome::Failure
                    } else if i == 1 {
                        Outcome::Success
                    } else if rng.gen_bool(0.5) {
                        Outcome::Failure
                    } else {
                        Outcome::Success
                    }
                })
                .collect();
            let cw = class_weights(&outcome_counts(&y)).unwrap();
            let weights: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: f64 = rng.gen_range(-1.0..1.0);
            let l2 = 1e-4;

            let (grad, grad_bias) = weighted_gradient(&x, &y, &cw, &weights, bias, l2);
            let step = 1e-5;
            let mut numeric = Vec::with_capacity(d);
            for j in 0..d {
                let mut plus = weights.clone();
                plus[j] += step;
                let mut minus = weights.clone();
                minus[j] -= step;
                numeric.push(
                    (weighted_loss(&x, &y, &cw, &plus, bias, l2)
                        - weighted_loss(&x, &y, &cw, &minus, bias, l2))
                        / (2.0 * step),
                );
            }
            let numeric_bias = (weighted_loss(&x, &y, &cw, &weights, bias + step, l2)
                - weighted_loss(&x, &y, &cw, &weights, bias - step, l2))
                / (2.0 * step);

            for (a, n) in grad.iter().chain([&grad_bias]).zip(numeric.iter().chain([&numeric_bias])) {
                let scale = a.abs().max(n.abs()).max(1e-8);
                assert!((a - n).abs() / scale <= 1e-6, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn degenerate_training_inputs_are_rejected() {
        let (x, _) = separable();
        let all_failure = vec![Outcome::Failure; 4];
        let cw = class_weights(&counts(vec![(Outcome::Success, 1), (Outcome::Failure, 1)]))
            .unwrap();
        assert!(matches!(
            train_logistic(&x, &all_failure, &schema2(), &cw, &TrainConfig::default())
                .unwrap_err(),
            ModelError::SingleClass
        ));

        let short = vec![Outcome::Failure];
        assert!(matches!(
            train_logistic(&x[..1], &short, &schema2(), &cw, &TrainConfig::default())
                .unwrap_err(),
            ModelError::DimensionMismatch(_)
        ));

        let wrong_schema = FeatureSchema::new("other", vec!["a".into(), "b".into()]);
        let (x, y) = separable();
        assert!(matches!(
            train_logistic(&x, &y, &wrong_schema, &cw, &TrainConfig::default()).unwrap_err(),
            ModelError::DimensionMismatch(_)
        ));
    }

    #[test]
    fn runaway_learning_rate_is_divergence() {
        let (x, y) = separable();
        let cw = class_weights(&outcome_counts(&y)).unwrap();
        let cfg = TrainConfig { learning_rate: 1e300, ..TrainConfig::default() };
        assert!(matches!(
            train_logistic(&x, &y, &schema2(), &cw, &cfg).unwrap_err(),
            ModelError::DivergenceDetected
        ));
    }

    fn hand_model(weights: Vec<f64>, bias: f64) -> LogisticModel {
        LogisticModel {
            schema_id: "pair".to_string(),
            feature_names: vec!["x1".to_string(), "x2".to_string()],
            weights,
            bias,
            train_meta: TrainMeta { seed: 42, epochs_run: 0, final_loss: 0.0 },
        }
    }

    #[test]
    fn probabilities_match_the_sigmoid() {
        let zero = hand_model(vec![0.0, 0.0], 0.0);
        let x = FeatureVector::dense("c", "pair", vec![3.0, -1.0]);
        assert_eq!(predict_proba(&zero, &x).unwrap(), 0.5);

        let biased = hand_model(vec![0.0, 0.0], 20.0);
        assert!(predict_proba(&biased, &x).unwrap() >= 0.999999);

        let hand = hand_model(vec![0.4, -0.3], 0.1);
        let z: f64 = 0.4 * 3.0 + (-0.3) * (-1.0) + 0.1;
        assert!((predict_proba(&hand, &x).unwrap() - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);

        // Stability far out in the tails.
        let extreme = hand_model(vec![1000.0, 0.0], 0.0);
        assert_eq!(predict_proba(&extreme, &x).unwrap(), 1.0);
        let negative = hand_model(vec![-1000.0, 0.0], 0.0);
        assert!(predict_proba(&negative, &x).unwrap() >= 0.0);

        let wrong = FeatureVector::dense("c", "other", vec![1.0, 2.0]);
        assert!(matches!(
            predict_proba(&zero, &wrong).unwrap_err(),
            ModelError::DimensionMismatch(_)
        ));
    }

    #[test]
    fn threshold_semantics_favor_failure_on_ties() {
        let zero = hand_model(vec![0.0, 0.0], 0.0);
        let x = FeatureVector::dense("c", "pair", vec![1.0, 1.0]);
        // p is exactly 0.5 here.
        assert_eq!(predict(&zero, &x, 0.5).unwrap().label, Outcome::Failure);
        assert_eq!(predict(&zero, &x, 0.51).unwrap().label, Outcome::Success);

        let model = hand_model(vec![1.0, 0.0], 0.0);
        let p = predict_proba(&model, &x).unwrap();
        assert!(p > 0.5 && p < 0.9);
        assert_eq!(predict(&model, &x, 0.9).unwrap().label, Outcome::Success);

        // Raising the threshold never converts Success to Failure.
        let mut previous = Outcome::Failure;
        for threshold in [0.0, 0.2, 0.5, p, 0.9, 1.0] {
            let label = predict(&model, &x, threshold).unwrap().label;
            if previous == Outcome::Success {
                assert_eq!(label, Outcome::Success);
            }
            previous = label;
        }
    }

    #[test]
    fn model_files_round_trip() {
        let (x, y) = separable();
        let cw = class_weights(&outcome_counts(&y)).unwrap();
        let model = train_logistic(&x, &y, &schema2(), &cw, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        for xi in &x {
            assert_eq!(
                predict_proba(&model, xi).unwrap(),
                predict_proba(&loaded, xi).unwrap()
            );
        }
    }

    #[test]
    fn non_model_files_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        std::fs::write(&path, "n_docs,3\nthe,0,3\n").unwrap();
        assert!(matches!(
            load_model(&path).unwrap_err(),
            ModelError::CorruptModel { line: 1, .. }
        ));

        std::fs::write(
            &path,
            "outcome-model v1\nschema,s\nseed,42\nepochs_run,5\nfinal_loss,0.5\nbias,0.1\nx1,notanumber\n",
        )
        .unwrap();
        assert!(matches!(
            load_model(&path).unwrap_err(),
            ModelError::CorruptModel { line: 7, .. }
        ));
    }

    #[test]
    fn remote_predictor_round_trips_and_validates() {
        use crate::tagging::{SocialOrientationTag, TagSource};
        use crate::testserver::TestServer;

        let conv = Conversation::from_turns("c1", None, None, &[("u1", "a", "hello")]);
        let tags = vec![TagAssignment {
            utterance_id: "u1".into(),
            tag: SocialOrientationTag::Cold,
            source: TagSource::Lexicon,
            confidence: None,
        }];

        let server = TestServer::start(|body| {
            let request: PredictRequest = serde_json::from_str(&body).unwrap();
            assert_eq!(request.conversation_id, "c1");
            assert_eq!(request.rendered_text, "a (Cold): hello");
            (200, "{\"probability_failure\": 0.7}".to_string())
        });
        let predictor = RemotePredictor { endpoint: server.url() };
        let prediction = predictor.predict_outcome(&conv, &tags).unwrap();
        assert_eq!(prediction.probability_failure, 0.7);
        assert_eq!(prediction.label, Outcome::Failure);
        drop(server);

        let out_of_range = TestServer::start(|_| (200, "{\"probability_failure\": 1.2}".into()));
        assert!(matches!(
            predictor_remote(&out_of_range.url(), &conv, &tags).unwrap_err(),
            ModelError::Protocol(_)
        ));
        drop(out_of_range);

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        assert!(matches!(
            predictor_remote(&format!("http://{addr}"), &conv, &tags).unwrap_err(),
            ModelError::Transport(_)
        ));
    }

    #[test]
    fn count_predictor_runs_the_local_pipeline() {
        use crate::tagging::{SocialOrientationTag, TagSource};

        // Failure iff the Cold share is high: weight on the Cold column.
        let schema = crate::features::social_count_schema();
        let mut weights = vec![0.0; 9];
        weights[SocialOrientationTag::Cold.index()] = 10.0;
        let model = LogisticModel {
            schema_id: schema.schema_id.clone(),
            feature_names: schema.names.clone(),
            weights,
            bias: -5.0,
            train_meta: TrainMeta { seed: 42, epochs_run: 0, final_loss: 0.0 },
        };
        let predictor = CountModelPredictor::new(model);

        let conv = Conversation::from_turns("c1", None, None, &[("u1", "a", "x"), ("u2", "b", "y")]);
        let tag = |id: &str, tag| TagAssignment {
            utterance_id: id.into(),
            tag,
            source: TagSource::Lexicon,
            confidence: None,
        };
        let cold = vec![
            tag("u1", SocialOrientationTag::Cold),
            tag("u2", SocialOrientationTag::Cold),
        ];
        let warm = vec![
            tag("u1", SocialOrientationTag::WarmAgreeable),
            tag("u2", SocialOrientationTag::WarmAgreeable),
        ];
        assert_eq!(predictor.predict_outcome(&conv, &cold).unwrap().label, Outcome::Failure);
        assert_eq!(predictor.predict_outcome(&conv, &warm).unwrap().label, Outcome::Success);
    }
}
