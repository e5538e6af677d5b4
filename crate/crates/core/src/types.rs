use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label identifier. Valid labels are `1..=L`; id 0 is the reserved STOP
/// symbol that terminates a decoded sequence.
pub type LabelId = usize;

/// Reserved terminal symbol. Its embedding row doubles as the
/// beginning-of-sequence input on the first decode step.
pub const STOP: LabelId = 0;

/// Reserved token ids inside documents.
pub const TOKEN_PAD: usize = 0;
pub const TOKEN_NUM: usize = 1;
pub const TOKEN_OOV: usize = 2;
/// First id available for real vocabulary words.
pub const TOKEN_FIRST_WORD: usize = 3;

/// A preprocessed document: token ids padded/truncated to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub tokens: Vec<usize>,
    /// Token count before truncation/padding was applied.
    pub original_length: usize,
}

impl Document {
    /// Pads with `TOKEN_PAD` or truncates so `tokens.len() == max_doc_len`.
    pub fn from_tokens(mut tokens: Vec<usize>, max_doc_len: usize) -> Self {
        let original_length = tokens.len();
        tokens.truncate(max_doc_len);
        tokens.resize(max_doc_len, TOKEN_PAD);
        Document {
            tokens,
            original_length,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An ordered, duplicate-free list of label ids. STOP is implicit: complete
/// sequences are scored with a terminal STOP factor but never store it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSequence(pub Vec<LabelId>);

impl LabelSequence {
    pub fn new(labels: Vec<LabelId>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &l in &labels {
            if l == STOP {
                return Err(Error::input("STOP may not appear inside a label sequence"));
            }
            if !seen.insert(l) {
                return Err(Error::input(format!("duplicate label {l} in sequence")));
            }
        }
        Ok(LabelSequence(labels))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_set(&self) -> LabelSet {
        LabelSet::new(self.0.clone())
    }
}

/// An unordered collection of distinct label ids (the prediction target).
/// Stored sorted so equality and ordering are canonical.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(Vec<LabelId>);

impl LabelSet {
    pub fn new(mut labels: Vec<LabelId>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        LabelSet(labels)
    }

    pub fn empty() -> Self {
        LabelSet(Vec::new())
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, l: LabelId) -> bool {
        self.0.binary_search(&l).is_ok()
    }

    pub fn intersection_size(&self, other: &LabelSet) -> usize {
        self.0.iter().filter(|&&l| other.contains(l)).count()
    }
}

impl FromIterator<LabelId> for LabelSet {
    fn from_iter<I: IntoIterator<Item = LabelId>>(iter: I) -> Self {
        LabelSet::new(iter.into_iter().collect())
    }
}

/// The decoder's per-step output: a normalized log-distribution over
/// labels ∪ {STOP} (index 0 = STOP), plus the attention weights that
/// produced the context vector, when the model has attention.
#[derive(Debug, Clone)]
pub struct StepDistribution {
    pub log_probs: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}

impl StepDistribution {
    pub fn log_prob(&self, symbol: LabelId) -> f64 {
        self.log_probs[symbol]
    }
}

/// Token ids of the `k` largest attention weights, ties broken by earlier
/// document position.
pub fn top_attended_tokens(step: &StepDistribution, doc: &Document, k: usize) -> Vec<usize> {
    let weights = match &step.attention {
        Some(w) => w,
        None => return Vec::new(),
    };
    let n = weights.len().min(doc.tokens.len());
    let mut idx: Vec<usize> = (0..n).collect();
    // stable sort keeps earlier positions first among equal weights
    idx.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap());
    idx.truncate(k);
    idx.into_iter().map(|i| doc.tokens[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_sequence_rejects_duplicates_and_stop() {
        assert!(LabelSequence::new(vec![1, 2, 1]).is_err());
        assert!(LabelSequence::new(vec![1, STOP]).is_err());
        assert!(LabelSequence::new(vec![3, 1, 2]).is_ok());
    }

    #[test]
    fn label_set_is_canonical() {
        assert_eq!(LabelSet::new(vec![3, 1, 2]), LabelSet::new(vec![2, 3, 1]));
        assert_eq!(LabelSet::new(vec![1, 1, 2]).len(), 2);
    }

    #[test]
    fn document_pads_and_truncates() {
        let d = Document::from_tokens(vec![5, 6, 7], 5);
        assert_eq!(d.tokens, vec![5, 6, 7, TOKEN_PAD, TOKEN_PAD]);
        assert_eq!(d.original_length, 3);
        let d = Document::from_tokens(vec![5, 6, 7], 2);
        assert_eq!(d.tokens, vec![5, 6]);
        assert_eq!(d.original_length, 3);
    }

    #[test]
    fn top_attended_uniform_prefers_earlier_positions() {
        let doc = Document::from_tokens(vec![10, 11, 12, 13], 4);
        let step = StepDistribution {
            log_probs: vec![],
            attention: Some(vec![0.25; 4]),
        };
        assert_eq!(top_attended_tokens(&step, &doc, 2), vec![10, 11]);
    }

    #[test]
    fn top_attended_one_hot() {
        let doc = Document::from_tokens(vec![10, 11, 12, 13], 4);
        let mut att = vec![0.0; 4];
        att[2] = 1.0;
        let step = StepDistribution {
            log_probs: vec![],
            attention: Some(att),
        };
        assert_eq!(top_attended_tokens(&step, &doc, 1), vec![12]);
    }

    #[test]
    fn top_attended_full_permutation() {
        let doc = Document::from_tokens(vec![10, 11, 12], 3);
        let step = StepDistribution {
            log_probs: vec![],
            attention: Some(vec![0.2, 0.5, 0.3]),
        };
        assert_eq!(top_attended_tokens(&step, &doc, 3), vec![11, 12, 10]);
    }
}
