//! QA-F1, exact match and ROUGE-L over normalized answers.
//!
//! English answers are lowercased, stripped of punctuation and (for F1 and
//! EM) of the articles a/an/the, then split on whitespace. Chinese answers
//! are lowercased, stripped of punctuation and whitespace, and compared per
//! character.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Zh,
}

const ZH_PUNCTUATION: &str = "！？｡。＂＃＄％＆＇（）＊＋，－／：；＜＝＞＠［＼］＾＿｀｛｜｝～｟｠｢｣､、〃》「」『』【】〔〕〖〗〘〙〚〛〜〝〞〟〰〾〿–—‘’‛“”„‟…‧﹏.";

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || ZH_PUNCTUATION.contains(c)
}

fn tokens(text: &str, language: Language, drop_articles: bool) -> Vec<String> {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered.chars().filter(|c| !is_punct(*c)).collect();
    match language {
        Language::En => cleaned
            .split_whitespace()
            .filter(|w| !(drop_articles && matches!(*w, "a" | "an" | "the")))
            .map(str::to_string)
            .collect(),
        Language::Zh => cleaned
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
    }
}

/// Normalized answer string used for exact match.
pub fn normalize_answer(text: &str, language: Language) -> String {
    let sep = match language {
        Language::En => " ",
        Language::Zh => "",
    };
    tokens(text, language, true).join(sep)
}

fn token_f1(prediction: &[String], gold: &[String]) -> f64 {
    if prediction.is_empty() || gold.is_empty() {
        return if prediction.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in prediction {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / prediction.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn best<F: Fn(&str) -> f64>(golds: &[String], f: F) -> f64 {
    golds.iter().map(|g| f(g)).fold(0.0, f64::max)
}

/// Token-level F1, maximized over the gold answers. In [0, 1].
pub fn qa_f1(prediction: &str, golds: &[String], language: Language) -> f64 {
    let pred = tokens(prediction, language, true);
    best(golds, |g| token_f1(&pred, &tokens(g, language, true)))
}

/// 1.0 when the normalized prediction equals some normalized gold, else 0.0.
pub fn exact_match(prediction: &str, golds: &[String], language: Language) -> f64 {
    let pred = normalize_answer(prediction, language);
    if golds.iter().any(|g| normalize_answer(g, language) == pred) {
        1.0
    } else {
        0.0
    }
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diagonal = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diagonal + 1 } else { above.max(row[j]) };
            diagonal = above;
        }
    }
    row[b.len()]
}

fn rouge_pair(prediction: &[String], gold: &[String]) -> f64 {
    if prediction.is_empty() || gold.is_empty() {
        return if prediction.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let lcs = lcs_len(prediction, gold);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / prediction.len() as f64;
    let recall = lcs as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// ROUGE-L F-measure (beta = 1), maximized over the gold answers. Articles
/// are kept, since word order matters here.
pub fn rouge_l(prediction: &str, golds: &[String], language: Language) -> f64 {
    let pred = tokens(prediction, language, false);
    best(golds, |g| rouge_pair(&pred, &tokens(g, language, false)))
}
