//! Feature-set selection: which per-conversation representations feed the
//! classifier, how they are fitted on a training corpus, and how a fitted
//! set is reconstructed from saved artifacts at prediction time.

use std::path::Path;

use anyhow::{bail, Result};

use sorient_core::corpus::{Corpus, Outcome};
use sorient_core::features::{
    concat_features, concat_schemas, fit_tfidf, sentiment_count_features, sentiment_count_schema,
    social_count_features, social_count_schema, transform_tfidf, FeatureSchema, FeatureVector,
    TfidfVocab,
};
use sorient_core::model::{
    class_weights, predict, train_logistic, LogisticModel, ModelError, OutcomePrediction,
    OutcomePredictor, TrainConfig,
};
use sorient_core::tagging::{sentiment_with_lexicon, TagAssignment, TagMap};

/// Which feature blocks are active. Blocks always concatenate in the fixed
/// social, sentiment, tf-idf order, so the same selection always yields the
/// same schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSelection {
    pub social: bool,
    pub sentiment: bool,
    pub tfidf: bool,
}

const SOCIAL: &str = "social_counts";
const SENTIMENT: &str = "sentiment_counts";
const TFIDF: &str = "tfidf";

impl FeatureSelection {
    /// Parses a `+`-joined selection such as `social_counts+tfidf`.
    pub fn parse(spec: &str) -> Result<FeatureSelection> {
        let mut selection = FeatureSelection { social: false, sentiment: false, tfidf: false };
        for part in spec.split('+') {
            let flag = match part.trim() {
                SOCIAL => &mut selection.social,
                SENTIMENT => &mut selection.sentiment,
                TFIDF => &mut selection.tfidf,
                other => bail!(
                    "unknown feature set `{other}` (expected {SOCIAL}, {SENTIMENT}, or {TFIDF}, \
                     joined with `+`)"
                ),
            };
            if *flag {
                bail!("feature set `{}` is listed twice in `{spec}`", part.trim());
            }
            *flag = true;
        }
        Ok(selection)
    }

    /// Recovers the selection from a saved model's schema id, the inverse of
    /// [`FeatureSelection::key`] (composite schema ids join part ids with
    /// `+` in selection order).
    pub fn from_schema_id(schema_id: &str) -> Result<FeatureSelection> {
        let selection = FeatureSelection::parse(schema_id)?;
        if selection.key() != schema_id {
            bail!(
                "model schema `{schema_id}` is not in canonical {SOCIAL}+{SENTIMENT}+{TFIDF} order"
            );
        }
        Ok(selection)
    }

    pub fn key(&self) -> String {
        let mut parts = Vec::new();
        if self.social {
            parts.push(SOCIAL);
        }
        if self.sentiment {
            parts.push(SENTIMENT);
        }
        if self.tfidf {
            parts.push(TFIDF);
        }
        parts.join("+")
    }

    pub fn needs_vocab(&self) -> bool {
        self.tfidf
    }
}

/// A selection plus everything fitted on the training data (currently just
/// the tf-idf vocabulary). Vectorizes any conversation into the combined
/// schema.
pub struct FittedFeatures {
    selection: FeatureSelection,
    vocab: Option<TfidfVocab>,
    schema: FeatureSchema,
}

fn combined_schema(
    selection: &FeatureSelection,
    vocab: Option<&TfidfVocab>,
) -> Result<FeatureSchema, ModelError> {
    let mut parts = Vec::new();
    if selection.social {
        parts.push(social_count_schema());
    }
    if selection.sentiment {
        parts.push(sentiment_count_schema());
    }
    if let Some(vocab) = vocab {
        parts.push(vocab.schema());
    }
    let refs: Vec<&FeatureSchema> = parts.iter().collect();
    Ok(concat_schemas(&refs)?)
}

impl FittedFeatures {
    /// Fits on a training corpus (the tf-idf vocabulary sees only `corpus`).
    pub fn fit(selection: FeatureSelection, corpus: &Corpus) -> Result<FittedFeatures, ModelError> {
        let vocab = if selection.tfidf { Some(fit_tfidf(corpus)?) } else { None };
        let schema = combined_schema(&selection, vocab.as_ref())?;
        Ok(FittedFeatures { selection, vocab, schema })
    }

    /// Reconstructs a fitted set from saved artifacts for prediction.
    pub fn load(selection: FeatureSelection, vocab_path: Option<&Path>) -> Result<FittedFeatures> {
        let vocab = match (selection.tfidf, vocab_path) {
            (true, Some(path)) => Some(TfidfVocab::load(path)?),
            (true, None) => bail!(
                "feature set `{}` needs a tf-idf vocabulary; set `vocab` or retrain",
                selection.key()
            ),
            (false, _) => None,
        };
        let schema = combined_schema(&selection, vocab.as_ref())?;
        Ok(FittedFeatures { selection, vocab, schema })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn save_vocab(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(vocab) = &self.vocab {
            vocab.save(path)?;
        }
        Ok(())
    }

    pub fn vectorize(
        &self,
        conv: &sorient_core::corpus::Conversation,
        tags: &[TagAssignment],
    ) -> Result<FeatureVector, ModelError> {
        let mut parts = Vec::new();
        if self.selection.social {
            parts.push(social_count_features(&conv.conversation_id, tags)?);
        }
        if self.selection.sentiment {
            let sentiments = sentiment_with_lexicon(conv);
            parts.push(sentiment_count_features(&conv.conversation_id, &sentiments)?);
        }
        if let Some(vocab) = &self.vocab {
            parts.push(transform_tfidf(conv, vocab));
        }
        Ok(concat_features(&parts)?)
    }
}

/// A model bound to the fitted features that produced its inputs.
pub struct FittedPredictor {
    pub features: FittedFeatures,
    pub model: LogisticModel,
    pub threshold: f64,
}

impl OutcomePredictor for FittedPredictor {
    fn predict_outcome(
        &self,
        conv: &sorient_core::corpus::Conversation,
        tags: &[TagAssignment],
    ) -> Result<OutcomePrediction, ModelError> {
        let x = self.features.vectorize(conv, tags)?;
        predict(&self.model, &x, self.threshold)
    }
}

/// Fits the selection on `train`, trains a class-weighted logistic model,
/// and returns both halves of the resulting predictor.
pub fn fit_and_train(
    selection: FeatureSelection,
    train: &Corpus,
    tags: &TagMap,
    config: &TrainConfig,
) -> Result<(FittedFeatures, LogisticModel), ModelError> {
    let features = FittedFeatures::fit(selection, train)?;
    let mut x = Vec::with_capacity(train.conversations.len());
    let mut y: Vec<Outcome> = Vec::with_capacity(train.conversations.len());
    for conv in &train.conversations {
        let id = &conv.conversation_id;
        let assignments =
            tags.get(id).ok_or_else(|| ModelError::MissingTags(id.clone()))?;
        x.push(features.vectorize(conv, assignments)?);
        y.push(conv.outcome.ok_or_else(|| ModelError::Unlabeled(id.clone()))?);
    }
    let mut per_class = std::collections::BTreeMap::new();
    for outcome in &y {
        *per_class.entry(*outcome).or_insert(0usize) += 1;
    }
    let cw = class_weights(&per_class)?;
    let model = train_logistic(&x, &y, features.schema(), &cw, config)?;
    Ok((features, model))
}

/// The configurable grid trainer: any feature selection, one logistic recipe.
pub struct ConfiguredTrainer {
    pub selection: FeatureSelection,
    pub config: TrainConfig,
    pub threshold: f64,
    method: String,
}

impl ConfiguredTrainer {
    pub fn new(selection: FeatureSelection, config: TrainConfig, threshold: f64) -> ConfiguredTrainer {
        let method = format!("logistic_{}", selection.key());
        ConfiguredTrainer { selection, config, threshold, method }
    }
}

impl sorient_core::eval::AblationTrainer for ConfiguredTrainer {
    fn method_name(&self) -> &str {
        &self.method
    }

    fn train(
        &self,
        train: &Corpus,
        tags: &TagMap,
    ) -> Result<Box<dyn OutcomePredictor>, ModelError> {
        let (features, model) = fit_and_train(self.selection, train, tags, &self.config)?;
        Ok(Box::new(FittedPredictor { features, model, threshold: self.threshold }))
    }
}
