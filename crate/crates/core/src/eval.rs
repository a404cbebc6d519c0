//! Scoring, significance testing, agreement statistics, and the data-ablation
//! harness.
//!
//! The statistical kernel is self-contained: Welch's unequal-variance t-test
//! gets its two-sided p-value from a regularized incomplete beta function
//! computed by continued fraction (Lentz's method, 1e-14 stopping target)
//! with a Lanczos log-gamma — no external stats dependency.
//!
//! The ablation harness trains one model per (fraction, seed) grid cell on a
//! stratified subset of the Train split and always evaluates on the full,
//! fixed Test split. Cells are independent and run in parallel; results are
//! folded in deterministic (fraction, seed) order, so reports are
//! byte-identical across reruns.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Outcome, Split, stratified_subset};
use crate::model::{
    predict, train_logistic, ModelError, OutcomePrediction, OutcomePredictor, TrainConfig,
    DEFAULT_THRESHOLD,
};
use crate::features::social_count_features;
use crate::tagging::{SocialOrientationTag, TagMap};
use crate::util::sample_std;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),
    #[error("expected agreement is 1 with imperfect observed agreement; kappa undefined")]
    PerfectExpectedAgreement,
    #[error("malformed rating matrix: {0}")]
    MalformedRatings(String),
    #[error("ablation needs conversations in both the Train and Test splits")]
    MissingSplits,
    #[error("ablation fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("no tag assignments for conversation `{0}`")]
    MissingTags(String),
    #[error("conversation `{0}` has no outcome label")]
    Unlabeled(String),
    #[error("baseline method `{0}` is not among the summarized methods")]
    UnknownBaseline(String),
    #[error("field `{0}` contains a comma or newline and cannot be a CSV field")]
    UnsafeCsvField(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

// ---------------------------------------------------------------------------
// Statistical kernel

/// Lanczos approximation (g = 7, 9 terms), accurate to ~15 significant
/// digits for positive arguments.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.3234287776531,
        -176.6150291621406,
        12.507343278686905,
        -0.13857109526572012,
        9.984369578019572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut series = 0.9999999999998099;
    for (i, c) in COEFFS.iter().enumerate() {
        series += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Continued fraction for the incomplete beta function (Lentz's method).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-14;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast only on one side of the mean;
    // use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) for the other.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom; 0 in the zero-variance
    /// degenerate cases where the statistic is defined by convention.
    pub df: f64,
    pub p_two_sided: f64,
}

/// Welch's unequal-variance t-test on two independent samples.
///
/// Degenerate zero-variance inputs take conventional values instead of
/// failing: equal means give (t = 0, p = 1), unequal means give p = 0 with an
/// infinite statistic.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::DegenerateSamples(format!(
            "need at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mean_a, var_a) = mean_and_variance(a);
    let (mean_b, var_b) = mean_and_variance(b);
    let sq_a = var_a / a.len() as f64;
    let sq_b = var_b / b.len() as f64;
    let se2 = sq_a + sq_b;
    if se2 == 0.0 {
        return Ok(if mean_a == mean_b {
            WelchResult { t: 0.0, df: 0.0, p_two_sided: 1.0 }
        } else {
            let t = if mean_a > mean_b { f64::INFINITY } else { f64::NEG_INFINITY };
            WelchResult { t, df: 0.0, p_two_sided: 0.0 }
        });
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2
        / (sq_a * sq_a / (a.len() as f64 - 1.0) + sq_b * sq_b / (b.len() as f64 - 1.0));
    let p_two_sided = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    Ok(WelchResult { t, df, p_two_sided })
}

// ---------------------------------------------------------------------------
// Agreement

/// Item-by-category matrix of rater counts: `counts[i][j]` raters put item i
/// in category j, and every row sums to the same number of raters.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    counts: Vec<Vec<usize>>,
    raters_per_item: usize,
}

impl RatingMatrix {
    pub fn new(counts: Vec<Vec<usize>>) -> Result<RatingMatrix, EvalError> {
        let first = counts
            .first()
            .ok_or_else(|| EvalError::MalformedRatings("no items".to_string()))?;
        if first.is_empty() {
            return Err(EvalError::MalformedRatings("no categories".to_string()));
        }
        let k = first.len();
        let raters_per_item: usize = first.iter().sum();
        if raters_per_item == 0 {
            return Err(EvalError::MalformedRatings("zero raters".to_string()));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != k {
                return Err(EvalError::MalformedRatings(format!(
                    "item {i} has {} categories, item 0 has {k}",
                    row.len()
                )));
            }
            let sum: usize = row.iter().sum();
            if sum != raters_per_item {
                return Err(EvalError::MalformedRatings(format!(
                    "item {i} counts {sum} raters, item 0 counts {raters_per_item}"
                )));
            }
        }
        Ok(RatingMatrix { counts, raters_per_item })
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn raters_per_item(&self) -> usize {
        self.raters_per_item
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }
}

/// Builds a rating matrix over the 9 tag categories from aligned per-rater
/// tag lists.
pub fn rating_matrix_from_raters(
    raters: &[Vec<SocialOrientationTag>],
) -> Result<RatingMatrix, EvalError> {
    if raters.len() < 2 {
        return Err(EvalError::MalformedRatings(format!(
            "need at least 2 raters, got {}",
            raters.len()
        )));
    }
    let n = raters[0].len();
    if let Some(odd) = raters.iter().find(|r| r.len() != n) {
        return Err(EvalError::LengthMismatch(format!(
            "raters disagree on item count: {} vs {n}",
            odd.len()
        )));
    }
    let mut counts = vec![vec![0usize; SocialOrientationTag::ALL.len()]; n];
    for rater in raters {
        for (item, tag) in rater.iter().enumerate() {
            counts[item][tag.index()] += 1;
        }
    }
    RatingMatrix::new(counts)
}

/// Fleiss' kappa: κ = (P̄ − P̄ₑ)/(1 − P̄ₑ), with per-item agreement
/// P_i = Σ_j n_ij(n_ij − 1) / r(r − 1).
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64, EvalError> {
    let r = m.raters_per_item() as f64;
    if m.raters_per_item() < 2 {
        return Err(EvalError::MalformedRatings(
            "kappa needs at least 2 raters per item".to_string(),
        ));
    }
    let n = m.items() as f64;
    let p_bar = m
        .counts()
        .iter()
        .map(|row| {
            row.iter().map(|&c| (c * (c.saturating_sub(1))) as f64).sum::<f64>() / (r * (r - 1.0))
        })
        .sum::<f64>()
        / n;
    let p_e: f64 = (0..m.categories())
        .map(|j| {
            let share = m.counts().iter().map(|row| row[j] as f64).sum::<f64>() / (n * r);
            share * share
        })
        .sum();
    if p_e >= 1.0 {
        return if p_bar >= 1.0 - 1e-12 {
            Ok(1.0)
        } else {
            Err(EvalError::PerfectExpectedAgreement)
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Exact-match fraction between two aligned label lists.
pub fn pairwise_agreement<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::LengthMismatch(format!(
            "need equal nonempty lists, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let matches = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(matches as f64 / a.len() as f64)
}

// ---------------------------------------------------------------------------
// Outcome scoring

/// Fraction of predictions whose label matches gold.
pub fn accuracy(preds: &[OutcomePrediction], gold: &[Outcome]) -> Result<f64, EvalError> {
    if preds.len() != gold.len() || preds.is_empty() {
        return Err(EvalError::LengthMismatch(format!(
            "need equal nonempty lists, got {} predictions and {} labels",
            preds.len(),
            gold.len()
        )));
    }
    let correct = preds.iter().zip(gold).filter(|(p, g)| p.label == **g).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Gold-by-predicted counts over the canonical tag order (the 8 circumplex
/// tags in circular order, then NotAvailable).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub labels: Vec<SocialOrientationTag>,
    /// `counts[gold][predicted]`, indexed like `labels`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// trace / total.
    pub fn accuracy(&self) -> f64 {
        let trace: usize = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        trace as f64 / self.total() as f64
    }

    /// Fraction of errors (off-diagonal mass) landing on a circumplex
    /// neighbor of the gold tag; 0 when there are no errors.
    pub fn neighbor_error_fraction(&self) -> f64 {
        let mut errors = 0usize;
        let mut neighbor = 0usize;
        for (g, row) in self.counts.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                if g == p {
                    continue;
                }
                errors += count;
                if self.labels[g].is_circumplex_neighbor(self.labels[p]) {
                    neighbor += count;
                }
            }
        }
        if errors == 0 {
            0.0
        } else {
            neighbor as f64 / errors as f64
        }
    }
}

pub fn confusion_matrix(
    gold: &[SocialOrientationTag],
    pred: &[SocialOrientationTag],
) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() || gold.is_empty() {
        return Err(EvalError::LengthMismatch(format!(
            "need equal nonempty lists, got {} gold and {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let labels = SocialOrientationTag::ALL.to_vec();
    let mut counts = vec![vec![0usize; labels.len()]; labels.len()];
    for (g, p) in gold.iter().zip(pred) {
        counts[g.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { labels, counts })
}

// ---------------------------------------------------------------------------
// Ablation harness

/// One training recipe for the ablation grid: given a training sub-corpus and
/// the tag map, produce a predictor to score on the Test split.
pub trait AblationTrainer: Sync {
    fn method_name(&self) -> &str;
    fn train(
        &self,
        train: &Corpus,
        tags: &TagMap,
    ) -> Result<Box<dyn OutcomePredictor>, ModelError>;
}

/// The low-resource reference recipe: class-weighted logistic regression on
/// normalized social orientation counts.
pub struct SocialCountTrainer {
    pub config: TrainConfig,
    pub threshold: f64,
}

impl SocialCountTrainer {
    pub fn new() -> SocialCountTrainer {
        SocialCountTrainer { config: TrainConfig::default(), threshold: DEFAULT_THRESHOLD }
    }
}

impl Default for SocialCountTrainer {
    fn default() -> SocialCountTrainer {
        SocialCountTrainer::new()
    }
}

impl AblationTrainer for SocialCountTrainer {
    fn method_name(&self) -> &str {
        "logistic_social_counts"
    }

    fn train(
        &self,
        train: &Corpus,
        tags: &TagMap,
    ) -> Result<Box<dyn OutcomePredictor>, ModelError> {
        let schema = crate::features::social_count_schema();
        let mut x = Vec::with_capacity(train.conversations.len());
        let mut y = Vec::with_capacity(train.conversations.len());
        for conv in &train.conversations {
            let id = &conv.conversation_id;
            let assignments = tags
                .get(id)
                .ok_or_else(|| ModelError::MissingTags(id.clone()))?;
            x.push(social_count_features(id, assignments)?);
            y.push(conv.outcome.ok_or_else(|| ModelError::Unlabeled(id.clone()))?);
        }
        let mut per_class = std::collections::BTreeMap::new();
        for outcome in &y {
            *per_class.entry(*outcome).or_insert(0usize) += 1;
        }
        let cw = crate::model::class_weights(&per_class)?;
        let model = train_logistic(&x, &y, &schema, &cw, &self.config)?;
        let threshold = self.threshold;
        struct Trained {
            model: crate::model::LogisticModel,
            threshold: f64,
        }
        impl OutcomePredictor for Trained {
            fn predict_outcome(
                &self,
                conv: &crate::corpus::Conversation,
                tags: &[crate::tagging::TagAssignment],
            ) -> Result<OutcomePrediction, ModelError> {
                let features = social_count_features(&conv.conversation_id, tags)?;
                predict(&self.model, &features, self.threshold)
            }
        }
        Ok(Box::new(Trained { model, threshold }))
    }
}

/// One grid cell's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub fraction: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.01, 0.1, 0.2, 0.5, 1.0];
pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

/// Runs the full (fraction × seed) ablation grid: per cell, train on a
/// stratified seeded subset of the Train split, evaluate on the full Test
/// split. Results come back in grid order (fractions outer, seeds inner).
pub fn run_ablation(
    corpus: &Corpus,
    tags: &TagMap,
    trainer: &dyn AblationTrainer,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<RunResult>, EvalError> {
    if let Some(bad) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::InvalidFraction(*bad));
    }
    let train: Vec<_> = corpus
        .conversations
        .iter()
        .filter(|c| c.split == Split::Train)
        .cloned()
        .collect();
    let test: Vec<_> =
        corpus.conversations.iter().filter(|c| c.split == Split::Test).collect();
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::MissingSplits);
    }
    let train_corpus = Corpus { corpus_id: corpus.corpus_id.clone(), conversations: train };

    let mut gold = Vec::with_capacity(test.len());
    for conv in &test {
        gold.push(
            conv.outcome
                .ok_or_else(|| EvalError::Unlabeled(conv.conversation_id.clone()))?,
        );
    }

    let cells: Vec<(f64, u64)> = fractions
        .iter()
        .flat_map(|f| seeds.iter().map(move |s| (*f, *s)))
        .collect();
    cells
        .par_iter()
        .map(|&(fraction, seed)| {
            let subset = stratified_subset(&train_corpus, fraction, seed);
            let predictor = trainer.train(&subset, tags)?;
            let mut preds = Vec::with_capacity(test.len());
            for conv in &test {
                let assignments = tags
                    .get(&conv.conversation_id)
                    .ok_or_else(|| EvalError::MissingTags(conv.conversation_id.clone()))?;
                preds.push(predictor.predict_outcome(conv, assignments)?);
            }
            Ok(RunResult {
                fraction,
                seed,
                accuracy: accuracy(&preds, &gold)?,
                n_train: subset.conversations.len(),
                n_test: test.len(),
            })
        })
        .collect()
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fraction: f64,
    pub method: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub n_runs: usize,
    /// Welch p against the baseline method's same-fraction seed sample;
    /// `None` for the baseline itself or when no test applies.
    pub p_vs_baseline: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

fn distinct_fractions(runs: &[RunResult]) -> Vec<f64> {
    let mut fractions: Vec<f64> = Vec::new();
    for run in runs {
        if !fractions.iter().any(|f| f == &run.fraction) {
            fractions.push(run.fraction);
        }
    }
    fractions.sort_by(f64::total_cmp);
    fractions
}

fn sample_at(runs: &[RunResult], fraction: f64) -> Vec<f64> {
    runs.iter().filter(|r| r.fraction == fraction).map(|r| r.accuracy).collect()
}

/// Aggregates per-method run lists into the report: one row per
/// (method, fraction) with mean and sample standard deviation over seeds,
/// plus a Welch p-value against the named baseline method where both sides
/// have at least two runs.
pub fn summarize(
    dataset: &str,
    methods: &[(String, Vec<RunResult>)],
    baseline: Option<&str>,
) -> Result<AblationReport, EvalError> {
    let baseline_runs = match baseline {
        Some(name) => Some(
            methods
                .iter()
                .find(|(m, _)| m == name)
                .map(|(_, runs)| runs)
                .ok_or_else(|| EvalError::UnknownBaseline(name.to_string()))?,
        ),
        None => None,
    };
    let mut rows = Vec::new();
    for (method, runs) in methods {
        let is_baseline = baseline == Some(method.as_str());
        for fraction in distinct_fractions(runs) {
            let sample = sample_at(runs, fraction);
            let p_vs_baseline = match baseline_runs {
                Some(base) if !is_baseline => {
                    let base_sample = sample_at(base, fraction);
                    if sample.len() >= 2 && base_sample.len() >= 2 {
                        Some(welch_t_test(&sample, &base_sample)?.p_two_sided)
                    } else {
                        None
                    }
                }
                _ => None,
            };
            rows.push(AblationRow {
                fraction,
                method: method.clone(),
                mean_accuracy: sample.iter().sum::<f64>() / sample.len() as f64,
                std_accuracy: sample_std(&sample),
                n_runs: sample.len(),
                significant: p_vs_baseline.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
                p_vs_baseline,
            });
        }
    }
    Ok(AblationReport { dataset: dataset.to_string(), rows })
}

// ---------------------------------------------------------------------------
// Report rendering

fn csv_field<'a>(value: &'a str, what: &str) -> Result<&'a str, EvalError> {
    if value.contains(',') || value.contains('\n') || value.contains('\r') {
        return Err(EvalError::UnsafeCsvField(format!("{what} `{value}`")));
    }
    Ok(value)
}

/// Renders the cell-level run log.
pub fn render_runs_csv(
    dataset: &str,
    method: &str,
    runs: &[RunResult],
) -> Result<String, EvalError> {
    let dataset = csv_field(dataset, "dataset")?;
    let method = csv_field(method, "method")?;
    let mut out = String::from("dataset,fraction,method,seed,accuracy,n_train,n_test\n");
    for run in runs {
        writeln!(
            out,
            "{dataset},{},{method},{},{:.6},{},{}",
            run.fraction, run.seed, run.accuracy, run.n_train, run.n_test
        )
        .unwrap();
    }
    Ok(out)
}

/// Renders the aggregated ablation table. Rows without a baseline comparison
/// leave the last two columns empty.
pub fn render_ablation_csv(report: &AblationReport) -> Result<String, EvalError> {
    let dataset = csv_field(&report.dataset, "dataset")?;
    let mut out = String::from(
        "dataset,fraction,method,mean_accuracy,std_accuracy,n_runs,p_vs_baseline,significant_at_0.1\n",
    );
    for row in &report.rows {
        let method = csv_field(&row.method, "method")?;
        let (p, significant) = match row.p_vs_baseline {
            Some(p) => (format!("{p:.6}"), if row.significant { "true" } else { "false" }),
            None => (String::new(), ""),
        };
        writeln!(
            out,
            "{dataset},{},{method},{:.6},{:.6},{},{},{}",
            row.fraction, row.mean_accuracy, row.std_accuracy, row.n_runs, p, significant
        )
        .unwrap();
    }
    Ok(out)
}

/// Renders the inter-annotator report: a square table of pairwise agreement
/// rates over named raters, then a `fleiss_kappa` scalar line.
pub fn render_agreement_csv(
    raters: &[(String, Vec<SocialOrientationTag>)],
) -> Result<String, EvalError> {
    if raters.len() < 2 {
        return Err(EvalError::MalformedRatings(format!(
            "need at least 2 raters, got {}",
            raters.len()
        )));
    }
    let mut out = String::from("annotator");
    for (name, _) in raters {
        write!(out, ",{}", csv_field(name, "annotator")?).unwrap();
    }
    out.push('\n');
    for (name, tags) in raters {
        write!(out, "{}", csv_field(name, "annotator")?).unwrap();
        for (_, other) in raters {
            write!(out, ",{:.6}", pairwise_agreement(tags, other)?).unwrap();
        }
        out.push('\n');
    }
    let lists: Vec<Vec<SocialOrientationTag>> =
        raters.iter().map(|(_, tags)| tags.clone()).collect();
    let kappa = fleiss_kappa(&rating_matrix_from_raters(&lists)?)?;
    writeln!(out, "fleiss_kappa,{kappa:.6}").unwrap();
    Ok(out)
}
