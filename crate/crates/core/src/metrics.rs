//! Evaluation metrics: AUC and log-loss for classification, HR@K / NDCG@K /
//! MRR for single-positive ranked lists, RMSE for regression.

use serde::Serialize;

use crate::error::{Result, RimError};

/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub score: f64,
    pub label: f64,
}

impl PredictionRecord {
    pub fn new(score: f64, label: f64) -> Self {
        PredictionRecord { score, label }
    }

    fn is_positive(&self) -> bool {
        self.label >= 0.5
    }
}

fn check_finite(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(RimError::UndefinedMetric("no records".into()));
    }
    if let Some(r) = records.iter().find(|r| !r.score.is_finite() || !r.label.is_finite()) {
        return Err(RimError::Data(format!("non-finite prediction record {r:?}")));
    }
    Ok(())
}

/// Area under the ROC curve via the rank-sum statistic; tied scores get
/// their average rank, so each tied positive/negative pair counts ½.
pub fn auc(records: &[PredictionRecord]) -> Result<f64> {
    check_finite(records)?;
    let positives = records.iter().filter(|r| r.is_positive()).count();
    let negatives = records.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(RimError::UndefinedMetric(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].score.total_cmp(&records[b].score));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && records[order[j + 1]].score == records[order[i]].score {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the mean rank
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| records[k].is_positive()).count();
        positive_rank_sum += mean_rank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean binary cross-entropy with scores clamped to `[ε, 1 − ε]`.
pub fn log_loss(records: &[PredictionRecord]) -> Result<f64> {
    check_finite(records)?;
    let total: f64 = records.iter().map(|r| binary_cross_entropy(r.score, r.label)).sum();
    Ok(total / records.len() as f64)
}

pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn rmse(records: &[PredictionRecord]) -> Result<f64> {
    check_finite(records)?;
    let mse = records.iter().map(|r| (r.score - r.label).powi(2)).sum::<f64>() / records.len() as f64;
    Ok(mse.sqrt())
}

/// Candidate scores with exactly one ground-truth positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    scores: Vec<f64>,
    positive: usize,
}

impl RankedList {
    pub fn new(scores: Vec<f64>, labels: &[bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(RimError::Data("scores and labels differ in length".into()));
        }
        let mut positives = labels.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i);
        let positive = positives
            .next()
            .ok_or_else(|| RimError::Data("ranked list has no positive".into()))?;
        if positives.next().is_some() {
            return Err(RimError::Data("ranked list has more than one positive".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(RimError::Data("non-finite score in ranked list".into()));
        }
        Ok(RankedList { scores, positive })
    }

    /// List whose positive is the candidate at `positive`.
    pub fn with_positive(scores: Vec<f64>, positive: usize) -> Result<Self> {
        let mut labels = vec![false; scores.len()];
        *labels
            .get_mut(positive)
            .ok_or_else(|| RimError::Data("positive index out of range".into()))? = true;
        RankedList::new(scores, &labels)
    }

    /// 1-based rank of the positive; it loses every tie.
    pub fn rank(&self) -> usize {
        let s = self.scores[self.positive];
        1 + self
            .scores
            .iter()
            .enumerate()
            .filter(|&(i, &x)| i != self.positive && x >= s)
            .count()
    }
}

pub fn hr_at_k(list: &RankedList, k: usize) -> f64 {
    f64::from(u8::from(list.rank() <= k))
}

pub fn ndcg_at_k(list: &RankedList, k: usize) -> f64 {
    let rank = list.rank();
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn mrr(list: &RankedList) -> f64 {
    1.0 / list.rank() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankingSummary {
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub lists: usize,
    pub k: usize,
}

/// Means of HR@K, NDCG@K and MRR over `lists`.
pub fn ranking_summary(lists: &[RankedList], k: usize) -> Result<RankingSummary> {
    if lists.is_empty() {
        return Err(RimError::UndefinedMetric("no ranked lists".into()));
    }
    let n = lists.len() as f64;
    Ok(RankingSummary {
        hr: lists.iter().map(|l| hr_at_k(l, k)).sum::<f64>() / n,
        ndcg: lists.iter().map(|l| ndcg_at_k(l, k)).sum::<f64>() / n,
        mrr: lists.iter().map(mrr).sum::<f64>() / n,
        lists: lists.len(),
        k,
    })
}
