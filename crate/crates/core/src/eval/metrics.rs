use crate::template::TokenKind;

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")).collect::<Vec<_>>().join(" ")
}

/// 1 when the normalized prediction equals any normalized gold.
pub fn exact_match(prediction: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(prediction);
    u8::from(golds.iter().any(|g| normalize_answer(g) == p))
}

/// Lowercased word and number tokens; punctuation is dropped.
pub fn metric_tokens(text: &str) -> Vec<String> {
    crate::template::scan(text)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Punctuation)
        .map(|t| t.surface.to_lowercase())
        .collect()
}

/// Longest common subsequence length, two-row dynamic programme.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F1 over token sequences; 0 when either side is empty or nothing is
/// shared.
pub fn rouge_l_tokens<T: PartialEq>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(pred, gold);
    if lcs == 0 {
        return 0.0;
    }
    // 2PR / (P + R) with P = lcs/|pred| and R = lcs/|gold| reduces to this,
    // which is exactly symmetric in floating point.
    2.0 * lcs as f64 / (pred.len() + gold.len()) as f64
}

pub fn rouge_l(prediction: &str, gold: &str) -> f64 {
    rouge_l_tokens(&metric_tokens(prediction), &metric_tokens(gold))
}

/// Best ROUGE-L over the gold answers.
pub fn rouge_l_max(prediction: &str, golds: &[String]) -> f64 {
    let p = metric_tokens(prediction);
    golds.iter().map(|g| rouge_l_tokens(&p, &metric_tokens(g))).fold(0.0, f64::max)
}
