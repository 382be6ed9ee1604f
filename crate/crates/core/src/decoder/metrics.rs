use crate::error::{Error, Result};
use crate::model::Label;

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[Label], b: &[Label]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Total edits and total reference length over a corpus.
pub fn error_counts(references: &[Vec<Label>], hypotheses: &[Vec<Label>]) -> Result<(usize, usize)> {
    if references.len() != hypotheses.len() {
        return Err(Error::Contract(format!("{} references but {} hypotheses", references.len(), hypotheses.len())));
    }
    let edits = references.iter().zip(hypotheses).map(|(r, h)| edit_distance(r, h)).sum();
    let words = references.iter().map(Vec::len).sum();
    Ok((edits, words))
}

/// `100 · Σ edits / Σ reference lengths`.
pub fn wer(references: &[Vec<Label>], hypotheses: &[Vec<Label>]) -> Result<f64> {
    let (edits, words) = error_counts(references, hypotheses)?;
    if words == 0 {
        return Err(Error::UndefinedMetric("word error rate with no reference labels".into()));
    }
    Ok(100.0 * edits as f64 / words as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[u32]) -> Vec<Label> {
        ids.iter().map(|i| Label::new(*i)).collect()
    }

    #[test]
    fn distances() {
        assert_eq!(edit_distance(&seq(&[0, 1, 2]), &seq(&[0, 1, 2])), 0);
        assert_eq!(edit_distance(&[], &seq(&[0, 1])), 2);
        assert_eq!(edit_distance(&seq(&[0, 1, 2]), &seq(&[0, 2])), 1);
        assert_eq!(edit_distance(&seq(&[0, 1, 2]), &seq(&[2, 1, 0])), 2);
        assert_eq!(edit_distance(&seq(&[1, 1, 1, 1]), &seq(&[2])), 4);
    }

    #[test]
    fn word_error_rate() {
        let r = vec![seq(&[0, 1])];
        assert_eq!(wer(&r, &r).unwrap(), 0.0);
        assert_eq!(wer(&r, &[seq(&[0])]).unwrap(), 50.0);
        // 1 substitution / 3, 1 insertion / 1, 2 deletions / 2: 4 edits over 6 labels.
        let refs = vec![seq(&[0, 1, 2]), seq(&[1]), seq(&[2, 2])];
        let hyps = vec![seq(&[0, 2, 2]), seq(&[1, 0]), seq(&[])];
        assert!((wer(&refs, &hyps).unwrap() - 400.0 / 6.0).abs() < 1e-12);
        assert!(matches!(wer(&[seq(&[])], &[seq(&[0])]), Err(Error::UndefinedMetric(_))));
        assert!(wer(&r, &[]).is_err());
    }
}
