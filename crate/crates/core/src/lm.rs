//! Interpolated Modified Kneser-Ney n-gram language model.
//!
//! Sentences are padded with `order - 1` start symbols and one end symbol.
//! The highest order uses raw counts; lower orders use continuation counts
//! (the number of distinct left neighbors of an n-gram). The unigram level
//! interpolates with a uniform distribution over every token that can be
//! predicted, i.e. the vocabulary without the start symbol.
//!
//! A trained model is stored in backoff form. For an n-gram `h w` seen in
//! training the table holds the interpolated `ln p(w | h)`; for a seen
//! context `h` it holds `ln γ(h)`, the interpolation weight. Unseen n-grams
//! back off exactly as in an ARPA file:
//!
//! `ln p(w | h) = ln γ(h) + ln p(w | h[1..])`, with `γ(h) = 1` for unseen `h`.
//!
//! All probabilities are natural logs.
//!
//! # Model file
//!
//! ```text
//! \arct-lm v1
//! order 4
//! \vocab
//! <unk>
//! <s>
//! ...
//! \discounts
//! 1 0.4 1.1 1.6 modified
//! ...
//! \1-grams:
//! <ln prob>\t<tokens>\t<ln backoff>
//! ...
//! \end\
//! ```
//!
//! The backoff column is omitted when the n-gram is never a context. N-grams
//! that only occur as contexts (e.g. `<s> <s>`) carry `-inf` as probability.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::TaskInstance;
use crate::text::tokenize;

pub const DEFAULT_ORDER: usize = 4;
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
const UNK_ID: u32 = 0;
const BOS_ID: u32 = 1;
const EOS_ID: u32 = 2;
const MAGIC: &str = "\\arct-lm v1";

#[derive(Debug, Error)]
pub enum LmError {
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("max_vocab must be at least 1 (the unknown-token slot)")]
    ZeroVocab,
    #[error("corpus has {found} tokens, need at least {needed}")]
    TooFewTokens { needed: usize, found: usize },
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Discounts for one order. `fallback` marks orders where a count-of-counts
/// needed by the modified estimate was zero or gave an out-of-range value, so
/// the single discount `Y` is used for every count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3plus: f64,
    pub fallback: bool,
}

impl Discounts {
    /// Estimates discounts from the number of n-grams seen exactly 1..=4 times.
    pub fn from_count_of_counts(n: [u64; 4]) -> Discounts {
        let [n1, n2, n3, n4] = n.map(|x| x as f64);
        let y = if n1 + 2.0 * n2 > 0.0 { n1 / (n1 + 2.0 * n2) } else { 0.0 };
        let single = Discounts {
            d1: y,
            d2: y,
            d3plus: y,
            fallback: true,
        };
        if n.iter().any(|&k| k == 0) {
            return single;
        }
        let d = Discounts {
            d1: 1.0 - 2.0 * y * n2 / n1,
            d2: 2.0 - 3.0 * y * n3 / n2,
            d3plus: 3.0 - 4.0 * y * n4 / n3,
            fallback: false,
        };
        let in_range = (0.0..=1.0).contains(&d.d1) && (0.0..=2.0).contains(&d.d2) && (0.0..=3.0).contains(&d.d3plus);
        if in_range {
            d
        } else {
            single
        }
    }

    pub fn for_count(&self, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3plus,
        }
    }
}

/// Token-to-id map. Ids 0, 1, 2 are `<unk>`, `<s>`, `</s>`; the remaining
/// words follow in descending frequency, ties in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `max_vocab - 1` most frequent words; the unknown token
    /// occupies the remaining slot.
    pub fn build(sentences: &[Vec<String>], max_vocab: usize) -> Result<Vocabulary, LmError> {
        if max_vocab == 0 {
            return Err(LmError::ZeroVocab);
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for tok in sentences.iter().flatten() {
            if tok != UNK && tok != BOS && tok != EOS {
                *freq.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_vocab - 1);
        let tokens = [UNK, BOS, EOS]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Ok(Vocabulary::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, ids }
    }

    /// Id of a token; out-of-vocabulary tokens and a literal `<s>` map to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        match self.ids.get(token) {
            Some(&BOS_ID) | None => UNK_ID,
            Some(&id) => id,
        }
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Number of entries including `<unk>`, `<s>` and `</s>`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Ids that can be predicted: everything except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.tokens.len() as u32).filter(|&i| i != BOS_ID)
    }
}

/// N-gram counts for every order, indexed by `order - 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NgramCounts {
    pub order: usize,
    /// Raw occurrence counts per order.
    pub raw: Vec<HashMap<Vec<u32>, u64>>,
}

impl NgramCounts {
    /// Counts every n-gram (n ≤ order) ending at a predicted position of the
    /// padded sentences.
    pub fn count(sentences: &[Vec<u32>], order: usize) -> NgramCounts {
        let mut raw = vec![HashMap::new(); order];
        for sentence in sentences {
            let padded = pad(sentence, order);
            for i in order - 1..padded.len() {
                for n in 1..=order {
                    *raw[n - 1].entry(padded[i + 1 - n..=i].to_vec()).or_default() += 1;
                }
            }
        }
        NgramCounts { order, raw }
    }

    pub fn raw_count(&self, ngram: &[u32]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.order {
            return 0;
        }
        self.raw[ngram.len() - 1].get(ngram).copied().unwrap_or(0)
    }

    /// Counts used by the estimator: raw at the top order, continuation
    /// counts below.
    pub fn kn_counts(&self) -> Vec<HashMap<Vec<u32>, u64>> {
        let mut out = vec![HashMap::new(); self.order];
        out[self.order - 1] = self.raw[self.order - 1].clone();
        for n in 1..self.order {
            let mut cont: HashMap<Vec<u32>, u64> = HashMap::new();
            for longer in self.raw[n].keys() {
                *cont.entry(longer[1..].to_vec()).or_default() += 1;
            }
            out[n - 1] = cont;
        }
        out
    }
}

fn pad(sentence: &[u32], order: usize) -> Vec<u32> {
    let mut padded = vec![BOS_ID; order - 1];
    padded.extend_from_slice(sentence);
    padded.push(EOS_ID);
    padded
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    ln_prob: f64,
    ln_backoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    order: usize,
    vocab: Vocabulary,
    discounts: Vec<Discounts>,
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

#[derive(Debug, Default, Clone, Copy)]
struct ContextStats {
    total: u64,
    n1: u64,
    n2: u64,
    n3plus: u64,
}

/// Tokenizes a plain-text corpus: one sentence per non-empty line.
pub fn corpus_sentences(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>, LmError> {
    let text = fs::read_to_string(path).map_err(|e| LmError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(corpus_sentences(&text))
}

/// Trains an interpolated Modified Kneser-Ney model.
pub fn train_kn(sentences: &[Vec<String>], order: usize, max_vocab: usize) -> Result<LanguageModel, LmError> {
    if order == 0 {
        return Err(LmError::ZeroOrder);
    }
    let found: usize = sentences.iter().map(Vec::len).sum();
    if found < order {
        return Err(LmError::TooFewTokens { needed: order, found });
    }
    let vocab = Vocabulary::build(sentences, max_vocab)?;
    let ids: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| s.iter().map(|t| vocab.id(t)).collect())
        .collect();
    let counts = NgramCounts::count(&ids, order);
    Ok(estimate(&counts, vocab))
}

fn estimate(counts: &NgramCounts, vocab: Vocabulary) -> LanguageModel {
    let order = counts.order;
    let kn = counts.kn_counts();
    let discounts: Vec<Discounts> = kn
        .iter()
        .map(|table| {
            let mut coc = [0u64; 4];
            for &c in table.values() {
                if (1..=4).contains(&c) {
                    coc[c as usize - 1] += 1;
                }
            }
            Discounts::from_count_of_counts(coc)
        })
        .collect();

    let mut model = LanguageModel {
        order,
        vocab,
        discounts,
        tables: vec![HashMap::new(); order],
    };
    let predictable: Vec<u32> = model.vocab.predictable().collect();
    for n in 1..=order {
        let table = &kn[n - 1];
        let d = model.discounts[n - 1];
        let mut stats: HashMap<&[u32], ContextStats> = HashMap::new();
        for (gram, &c) in table {
            let s = stats.entry(&gram[..n - 1]).or_default();
            s.total += c;
            match c {
                1 => s.n1 += 1,
                2 => s.n2 += 1,
                _ => s.n3plus += 1,
            }
        }
        let gamma = |s: &ContextStats| {
            (d.d1 * s.n1 as f64 + d.d2 * s.n2 as f64 + d.d3plus * s.n3plus as f64) / s.total as f64
        };
        let mut entries: HashMap<Vec<u32>, Entry> = HashMap::new();
        if n == 1 {
            let s = stats.get(&[][..]).copied().unwrap_or_default();
            let uniform = 1.0 / predictable.len() as f64;
            for &w in &predictable {
                let c = table.get(&vec![w]).copied().unwrap_or(0);
                let p = if s.total == 0 {
                    uniform
                } else {
                    (c as f64 - d.for_count(c)).max(0.0) / s.total as f64 + gamma(&s) * uniform
                };
                entries.insert(vec![w], Entry { ln_prob: p.ln(), ln_backoff: None });
            }
        } else {
            for (gram, &c) in table {
                let s = &stats[&gram[..n - 1]];
                let lower = model.ln_prob_ctx(&gram[1..n - 1], gram[n - 1]).exp();
                let p = (c as f64 - d.for_count(c)).max(0.0) / s.total as f64 + gamma(s) * lower;
                entries.insert(gram.clone(), Entry { ln_prob: p.ln(), ln_backoff: None });
            }
        }
        model.tables[n - 1] = entries;
        if n >= 2 {
            let ctx_table = &mut model.tables[n - 2];
            for (ctx, s) in &stats {
                let bo = gamma(s).ln();
                ctx_table
                    .entry(ctx.to_vec())
                    .or_insert(Entry {
                        ln_prob: f64::NEG_INFINITY,
                        ln_backoff: None,
                    })
                    .ln_backoff = Some(bo);
            }
        }
    }
    model
}

impl LanguageModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn discounts(&self) -> &[Discounts] {
        &self.discounts
    }

    /// `ln p(w | context)`; only the last `order - 1` context ids are used.
    pub fn ln_prob_ctx(&self, context: &[u32], w: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx = &context[context.len() - keep..];
        let mut key = ctx.to_vec();
        key.push(w);
        if let Some(e) = self.tables[key.len() - 1].get(&key) {
            if e.ln_prob.is_finite() || ctx.is_empty() {
                return e.ln_prob;
            }
        }
        if ctx.is_empty() {
            return f64::NEG_INFINITY;
        }
        let bo = self.tables[ctx.len() - 1]
            .get(ctx)
            .and_then(|e| e.ln_backoff)
            .unwrap_or(0.0);
        bo + self.ln_prob_ctx(&ctx[1..], w)
    }

    /// `ln p(word | context)` over token strings.
    pub fn ln_prob(&self, context: &[&str], word: &str) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|t| self.context_id(t)).collect();
        let w = if word == EOS { EOS_ID } else { self.vocab.id(word) };
        self.ln_prob_ctx(&ctx, w)
    }

    fn context_id(&self, token: &str) -> u32 {
        if token == BOS {
            BOS_ID
        } else {
            self.vocab.id(token)
        }
    }

    /// Sum of `ln p(t_i | previous tokens)` with start-symbol padding; the
    /// end-of-sentence term is not included.
    pub fn log_prob(&self, tokens: &[String]) -> f64 {
        let ids: Vec<u32> = tokens.iter().map(|t| self.vocab.id(t)).collect();
        let padded = pad(&ids, self.order);
        (self.order - 1..padded.len() - 1)
            .map(|i| self.ln_prob_ctx(&padded[i + 1 - self.order..i], padded[i]))
            .sum()
    }

    /// Scores sentences independently and sums the scores.
    pub fn log_prob_sentences(&self, sentences: &[Vec<String>]) -> f64 {
        sentences.iter().map(|s| self.log_prob(s)).sum()
    }

    /// Every context of length `order - 1` that occurs in training.
    pub fn observed_contexts(&self) -> Vec<Vec<u32>> {
        if self.order == 1 {
            return vec![Vec::new()];
        }
        let mut v: Vec<Vec<u32>> = self.tables[self.order - 2]
            .iter()
            .filter(|(_, e)| e.ln_backoff.is_some())
            .map(|(k, _)| k.clone())
            .collect();
        v.sort();
        v
    }

    /// Σ_w p(w | context) over every predictable token.
    pub fn total_mass(&self, context: &[u32]) -> f64 {
        self.vocab.predictable().map(|w| self.ln_prob_ctx(context, w).exp()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "order {}", self.order).unwrap();
        out.push_str("\\vocab\n");
        for t in &self.vocab.tokens {
            writeln!(out, "{t}").unwrap();
        }
        out.push_str("\\discounts\n");
        for (i, d) in self.discounts.iter().enumerate() {
            let kind = if d.fallback { "single" } else { "modified" };
            writeln!(out, "{} {} {} {} {kind}", i + 1, d.d1, d.d2, d.d3plus).unwrap();
        }
        for (i, table) in self.tables.iter().enumerate() {
            writeln!(out, "\\{}-grams:", i + 1).unwrap();
            let sorted: BTreeMap<&Vec<u32>, &Entry> = table.iter().collect();
            for (gram, e) in sorted {
                let toks: Vec<&str> = gram.iter().map(|&id| self.vocab.token(id)).collect();
                write!(out, "{}\t{}", e.ln_prob, toks.join(" ")).unwrap();
                if let Some(bo) = e.ln_backoff {
                    write!(out, "\t{bo}").unwrap();
                }
                out.push('\n');
            }
        }
        out.push_str("\\end\\\n");
        out
    }

    pub fn from_text(text: &str) -> Result<LanguageModel, LmError> {
        let err = |line: usize, message: &str| LmError::Format {
            line: line + 1,
            message: message.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&MAGIC) {
            return Err(err(0, "missing model header"));
        }
        let order: usize = lines
            .get(1)
            .and_then(|l| l.strip_prefix("order "))
            .and_then(|v| v.parse().ok())
            .filter(|&o| o >= 1)
            .ok_or_else(|| err(1, "expected `order <n>`"))?;
        let mut i = 2;
        if lines.get(i) != Some(&"\\vocab") {
            return Err(err(i, "expected \\vocab"));
        }
        i += 1;
        let mut tokens = Vec::new();
        while i < lines.len() && lines[i] != "\\discounts" {
            tokens.push(lines[i].to_string());
            i += 1;
        }
        if tokens.len() < 3 || tokens[..3] != [UNK, BOS, EOS] {
            return Err(err(i, "vocabulary must start with <unk> <s> </s>"));
        }
        let vocab = Vocabulary::from_tokens(tokens);
        i += 1;
        let mut discounts = Vec::new();
        for n in 1..=order {
            let parts: Vec<&str> = lines.get(i).copied().unwrap_or("").split(' ').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(i, "bad discount"));
            if parts.len() != 5 || parts[0] != n.to_string() {
                return Err(err(i, "expected `<n> <d1> <d2> <d3+> <kind>`"));
            }
            discounts.push(Discounts {
                d1: num(parts[1])?,
                d2: num(parts[2])?,
                d3plus: num(parts[3])?,
                fallback: parts[4] == "single",
            });
            i += 1;
        }
        let mut tables = vec![HashMap::new(); order];
        for (n, table) in tables.iter_mut().enumerate() {
            if lines.get(i).copied() != Some(&format!("\\{}-grams:", n + 1)) {
                return Err(err(i, &format!("expected \\{}-grams:", n + 1)));
            }
            i += 1;
            while i < lines.len() && !lines[i].starts_with('\\') {
                let cols: Vec<&str> = lines[i].split('\t').collect();
                if cols.len() < 2 || cols.len() > 3 {
                    return Err(err(i, "expected 2 or 3 tab-separated columns"));
                }
                let ln_prob: f64 = cols[0].parse().map_err(|_| err(i, "bad probability"))?;
                let gram: Option<Vec<u32>> = cols[1].split(' ').map(|t| vocab.ids.get(t).copied()).collect();
                let gram = gram.ok_or_else(|| err(i, "token not in vocabulary"))?;
                if gram.len() != n + 1 {
                    return Err(err(i, "n-gram has the wrong length"));
                }
                let ln_backoff = match cols.get(2) {
                    Some(b) => Some(b.parse::<f64>().map_err(|_| err(i, "bad backoff"))?),
                    None => None,
                };
                table.insert(gram, Entry { ln_prob, ln_backoff });
                i += 1;
            }
        }
        if lines.get(i) != Some(&"\\end\\") {
            return Err(err(i, "expected \\end\\"));
        }
        Ok(LanguageModel {
            order,
            vocab,
            discounts,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        fs::write(path, self.to_text()).map_err(|e| LmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<LanguageModel, LmError> {
        let text = fs::read_to_string(path).map_err(|e| LmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        LanguageModel::from_text(&text)
    }
}

/// Scores each warrant and predicts the slot with the lower log-likelihood;
/// equal scores predict slot 0. With `with_context`, the reason and claim
/// tokens are prepended to both warrants.
pub fn lm_choose(model: &LanguageModel, instance: &TaskInstance, with_context: bool) -> u8 {
    let (s0, s1) = lm_scores(model, instance, with_context);
    choose_lower(s0, s1)
}

pub fn lm_scores(model: &LanguageModel, instance: &TaskInstance, with_context: bool) -> (f64, f64) {
    let prefix: Vec<String> = if with_context {
        tokenize(&instance.reason)
            .into_iter()
            .chain(tokenize(&instance.claim))
            .collect()
    } else {
        Vec::new()
    };
    let score = |w: &str| {
        let toks: Vec<String> = prefix.iter().cloned().chain(tokenize(w)).collect();
        model.log_prob(&toks)
    };
    (score(&instance.warrant0), score(&instance.warrant1))
}

/// The decision rule alone: slot 1 only when its score is strictly lower.
pub fn choose_lower(score0: f64, score1: f64) -> u8 {
    if score1 < score0 {
        1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sents(text: &str) -> Vec<Vec<String>> {
        corpus_sentences(text)
    }

    #[test]
    fn hand_evaluated_bigrams() {
        let m = train_kn(&sents("a b a b a b"), 2, 100).unwrap();
        // c(<s> a)=1 c(a b)=3 c(b a)=2 c(b </s>)=1; n3 present but n4 absent.
        let d2 = m.discounts()[1];
        assert!(d2.fallback);
        assert_eq!(d2.d1, 0.5);
        // continuation counts a=2 b=1 </s>=1, four predictable tokens.
        let d1 = m.discounts()[0];
        assert_eq!(d1.d1, 0.5);
        let p_uni = |c: f64| (c - 0.5f64).max(0.0) / 4.0 + (0.5 * 3.0 / 4.0) / 4.0;
        assert!((m.ln_prob(&[], "a").exp() - p_uni(2.0)).abs() < 1e-12);
        assert!((m.ln_prob(&[], UNK).exp() - p_uni(0.0)).abs() < 1e-12);
        let p_b_a = 2.5 / 3.0 + (0.5 / 3.0) * p_uni(1.0);
        assert!((m.ln_prob(&["a"], "b").exp() - p_b_a).abs() < 1e-12);
        let p_a_b = 1.5 / 3.0 + (1.0 / 3.0) * p_uni(2.0);
        assert!((m.ln_prob(&["b"], "a").exp() - p_a_b).abs() < 1e-12);
        let p_eos_b = 0.5 / 3.0 + (1.0 / 3.0) * p_uni(1.0);
        assert!((m.ln_prob(&["b"], EOS).exp() - p_eos_b).abs() < 1e-12);
    }

    #[test]
    fn modified_discounts_from_count_of_counts() {
        let d = Discounts::from_count_of_counts([10, 5, 3, 2]);
        let y = 10.0 / 20.0;
        assert!(!d.fallback);
        assert!((d.d1 - (1.0 - 2.0 * y * 5.0 / 10.0)).abs() < 1e-15);
        assert!((d.d2 - (2.0 - 3.0 * y * 3.0 / 5.0)).abs() < 1e-15);
        assert!((d.d3plus - (3.0 - 4.0 * y * 2.0 / 3.0)).abs() < 1e-15);
        assert!(Discounts::from_count_of_counts([3, 0, 1, 1]).fallback);
    }

    const TOY: &str = "the cat sat on the mat .\nthe dog sat on the log .\na cat and a dog .\nthe mat is on the log\ncats sit\n";

    #[test]
    fn normalizes_for_every_observed_context() {
        for order in 1..=4 {
            let m = train_kn(&sents(TOY), order, 100).unwrap();
            for ctx in m.observed_contexts() {
                let mass = m.total_mass(&ctx);
                assert!((mass - 1.0).abs() < 1e-9, "order {order} ctx {ctx:?}: {mass}");
            }
            // unseen contexts back off and still normalize
            assert!((m.total_mass(&[5, 7, 3]) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_word_vocabulary_is_all_unknown() {
        let m = train_kn(&sents(TOY), 3, 1).unwrap();
        assert_eq!(m.vocab().len(), 3);
        assert_eq!(m.ln_prob(&[], "cat"), m.ln_prob(&[], "zebra"));
        for ctx in m.observed_contexts() {
            assert!((m.total_mass(&ctx) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vocabulary_ties_break_lexicographically() {
        let v = Vocabulary::build(&sents("b a c c"), 3).unwrap();
        assert_eq!(v.token(3), "c");
        assert_eq!(v.token(4), "a");
        assert_eq!(v.id("b"), UNK_ID);
    }

    #[test]
    fn log_prob_definitions() {
        let m = train_kn(&sents(TOY), 3, 100).unwrap();
        let one = vec!["cat".to_string()];
        assert_eq!(m.log_prob(&one), m.ln_prob(&[BOS, BOS], "cat"));
        let s1 = vec!["the".to_string(), "cat".to_string()];
        let s2 = vec!["a".to_string(), "dog".to_string(), "sat".to_string()];
        let both = m.log_prob_sentences(&[s1.clone(), s2.clone()]);
        assert!((both - (m.log_prob(&s1) + m.log_prob(&s2))).abs() < 1e-12);
        let manual = m.ln_prob(&[BOS, BOS], "the") + m.ln_prob(&[BOS, "the"], "cat");
        assert!((m.log_prob(&s1) - manual).abs() < 1e-12);
    }

    #[test]
    fn too_few_tokens() {
        assert!(matches!(train_kn(&sents("a b"), 4, 10), Err(LmError::TooFewTokens { .. })));
        assert!(matches!(train_kn(&sents("a b"), 0, 10), Err(LmError::ZeroOrder)));
    }

    #[test]
    fn lower_score_rule() {
        assert_eq!(choose_lower(-10.0, -12.0), 1);
        assert_eq!(choose_lower(-12.0, -10.0), 0);
        assert_eq!(choose_lower(-3.0, -3.0), 0);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = train_kn(&sents(TOY), 4, 100).unwrap();
        let text = m.to_text();
        let back = LanguageModel::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        for ctx in m.observed_contexts() {
            for w in m.vocab().predictable() {
                assert_eq!(m.ln_prob_ctx(&ctx, w), back.ln_prob_ctx(&ctx, w));
            }
        }
        assert!(LanguageModel::from_text("nope").is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let a = train_kn(&sents(TOY), 4, 100).unwrap().to_text();
        let b = train_kn(&sents(TOY), 4, 100).unwrap().to_text();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn adding_a_sentence_never_lowers_raw_counts(
            base in prop::collection::vec(prop::collection::vec(0u32..6, 1..6), 1..6),
            extra in prop::collection::vec(0u32..6, 1..6),
        ) {
            let before = NgramCounts::count(&base, 3);
            let mut more = base.clone();
            more.push(extra);
            let after = NgramCounts::count(&more, 3);
            for table in &before.raw {
                for (gram, &c) in table {
                    prop_assert!(after.raw_count(gram) >= c);
                }
            }
        }
    }
}
