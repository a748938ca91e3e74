use crate::corpus::{PairLabel, SentencePair, Vocab};
use crate::error::{Error, Result};
use crate::model::{encode_sentence, ModelState};
use crate::numerics::Real;
use crate::par::{map_range, Execution};

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of tie-averaged ranks.
/// Returns 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs two equal-length samples of size ≥ 2".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    pub mean_cos_paraphrase: f64,
    pub mean_cos_unrelated: f64,
    /// Fraction of paraphrase-pair sentences whose nearest other sentence
    /// is their partner.
    pub retrieval_accuracy: f64,
    /// Spearman correlation between pair cosine and the binary label.
    pub spearman: f64,
    pub pairs: usize,
    /// Number of retrieval queries.
    pub queries: usize,
    pub candidates: usize,
}

/// Scores labeled pairs with raw last-token encodings (no projection head).
pub fn similarity_eval<T: Real>(
    state: &ModelState<T>,
    pairs: &[SentencePair],
    vocab: &Vocab,
    exec: Execution,
) -> Result<SimilarityReport> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument("similarity_eval needs at least two pairs".into()));
    }
    let sentences: Vec<&str> = pairs.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]).collect();
    let enc: Vec<Vec<f64>> = map_range(exec, sentences.len(), |i| {
        encode_sentence(sentences[i], vocab, state, false).map(|e| e.into_iter().map(Real::to_f64).collect())
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let cos: Vec<f64> = (0..pairs.len()).map(|i| cosine(&enc[2 * i], &enc[2 * i + 1])).collect();
    let labels: Vec<f64> = pairs.iter().map(|p| if p.label == PairLabel::Paraphrase { 1.0 } else { 0.0 }).collect();
    let mean_of = |want: f64| {
        let v: Vec<f64> = cos.iter().zip(&labels).filter(|(_, &l)| l == want).map(|(c, _)| *c).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };

    let n = enc.len();
    let hits: Vec<Option<bool>> = map_range(exec, n, |q| {
        if pairs[q / 2].label != PairLabel::Paraphrase {
            return None;
        }
        let partner = q ^ 1;
        let mut best = usize::MAX;
        let mut best_cos = f64::NEG_INFINITY;
        for c in (0..n).filter(|&c| c != q) {
            let s = cosine(&enc[q], &enc[c]);
            if s > best_cos {
                best_cos = s;
                best = c;
            }
        }
        Some(best == partner)
    });
    let queries = hits.iter().flatten().count();
    let correct = hits.iter().flatten().filter(|&&h| h).count();
    Ok(SimilarityReport {
        mean_cos_paraphrase: mean_of(1.0),
        mean_cos_unrelated: mean_of(0.0),
        retrieval_accuracy: if queries == 0 { f64::NAN } else { correct as f64 / queries as f64 },
        spearman: spearman(&cos, &labels)?,
        pairs: pairs.len(),
        queries,
        candidates: n - 1,
    })
}
