/// Recall weight used by the canonical ROUGE-L F-measure.
pub const DEFAULT_BETA: f64 = 1.2;

/// Longest common subsequence length, two-row dynamic program.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F-measure from an LCS length: `(1 + β²)PR / (R + β²P)`.
pub fn rouge_l_from_lcs(lcs: usize, pred_len: usize, ref_len: usize, beta: f64) -> f64 {
    if lcs == 0 || pred_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = lcs as f64 / pred_len as f64;
    let r = lcs as f64 / ref_len as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l_tokens<T: PartialEq>(prediction: &[T], reference: &[T], beta: f64) -> f64 {
    rouge_l_from_lcs(
        lcs_length(prediction, reference),
        prediction.len(),
        reference.len(),
        beta,
    )
}

/// Sentence-level ROUGE-L over lowercased whitespace tokens.
pub fn rouge_l_with_beta(prediction: &str, reference: &str, beta: f64) -> f64 {
    let lower_p = prediction.to_lowercase();
    let lower_r = reference.to_lowercase();
    let p: Vec<&str> = lower_p.split_whitespace().collect();
    let r: Vec<&str> = lower_r.split_whitespace().collect();
    rouge_l_tokens(&p, &r, beta)
}

pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    rouge_l_with_beta(prediction, reference, DEFAULT_BETA)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        assert!((rouge_l("a b c", "a b c") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn worked_example() {
        // LCS 3, P = 3/4, R = 1, β² = 1.44: 2.44 * 0.75 / (1 + 1.08)
        let f = rouge_l("a b c d", "a c d");
        assert!((f - 1.83 / 2.08).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(rouge_l("a b", "c d"), 0.0);
        assert_eq!(rouge_l("", "a"), 0.0);
        assert_eq!(rouge_l("a", ""), 0.0);
    }
}
