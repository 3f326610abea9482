//! Corpus BLEU, simplified RIBES, constraint preservation and operation
//! statistics.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::decoder::DecodeTrace;
use crate::error::{Error, Result};

pub const BLEU_MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_lines(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::LineMismatch {
            left: "hypotheses".into(),
            left_lines: hyps,
            right: "references".into(),
            right_lines: refs,
        });
    }
    Ok(())
}

/// Corpus BLEU-4 in `[0, 100]`, unsmoothed.
///
/// An order for which the hypotheses contain no n-grams at all contributes a
/// precision of 1, so short but exact hypotheses are scored by the brevity
/// penalty alone.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_lines(hyps.len(), refs.len())?;
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return Ok(if ref_len == 0 { 100.0 } else { 0.0 });
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp();
    Ok(100.0 * bp * (log_sum / BLEU_MAX_ORDER as f64).exp())
}

fn unigram_counts(s: &[String]) -> HashMap<&str, usize> {
    let mut c = HashMap::new();
    for t in s {
        *c.entry(t.as_str()).or_insert(0) += 1;
    }
    c
}

/// Word-order score in `[0, 1]` from unigrams that occur exactly once in
/// both sentences: `(tau + 1) / 2 * precision^0.25`.
pub fn ribes_simplified(hyp: &[String], reference: &[String]) -> f64 {
    let (hc, rc) = (unigram_counts(hyp), unigram_counts(reference));
    // reference positions of matched tokens, in hypothesis order
    let ranks: Vec<usize> = hyp
        .iter()
        .filter(|t| hc[t.as_str()] == 1 && rc.get(t.as_str()) == Some(&1))
        .map(|t| reference.iter().position(|r| r == t).expect("counted above"))
        .collect();
    let m = ranks.len();
    if m < 2 {
        return 0.0;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..m {
        for j in i + 1..m {
            if ranks[i] < ranks[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    let tau = (concordant - discordant) as f64 / pairs;
    let precision = m as f64 / hyp.len() as f64;
    (tau + 1.0) / 2.0 * precision.powf(0.25)
}

/// Mean sentence-level simplified RIBES.
pub fn ribes_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_lines(hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = hyps.iter().zip(refs).map(|(h, r)| ribes_simplified(h, r)).sum();
    Ok(sum / hyps.len() as f64)
}

/// Preserved and total constraint tokens for one sentence.
pub fn cpr_counts(hyp: &[String], phrases: &[Vec<String>]) -> (usize, usize) {
    let flat: Vec<String> = phrases.iter().flatten().cloned().collect();
    let wanted = unigram_counts(&flat);
    let have = unigram_counts(hyp);
    let preserved = wanted
        .iter()
        .map(|(t, &c)| c.min(have.get(t).copied().unwrap_or(0)))
        .sum();
    (preserved, wanted.values().sum())
}

/// Constraint preservation rate, or `None` if no sentence has constraints.
pub fn cpr(hyps: &[Vec<String>], constraints: &[Vec<Vec<String>>]) -> Result<Option<f64>> {
    if hyps.len() != constraints.len() {
        return Err(Error::LineMismatch {
            left: "hypotheses".into(),
            left_lines: hyps.len(),
            right: "constraints".into(),
            right_lines: constraints.len(),
        });
    }
    let (mut kept, mut total) = (0, 0);
    for (h, c) in hyps.iter().zip(constraints) {
        let (k, t) = cpr_counts(h, c);
        kept += k;
        total += t;
    }
    Ok((total > 0).then(|| kept as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpStats {
    pub repositions: f64,
    pub deletions: f64,
    pub insertions: f64,
    pub iterations: f64,
    pub latency_ms: f64,
}

pub fn op_stats(traces: &[DecodeTrace]) -> Result<OpStats> {
    if traces.is_empty() {
        return Err(Error::Metric {
            msg: "operation statistics need at least one trace".into(),
        });
    }
    let n = traces.len() as f64;
    let mean = |f: fn(&DecodeTrace) -> f64| traces.iter().map(f).sum::<f64>() / n;
    Ok(OpStats {
        repositions: mean(|t| t.repositions as f64),
        deletions: mean(|t| t.deletions as f64),
        insertions: mean(|t| t.insertions as f64),
        iterations: mean(|t| t.iterations as f64),
        latency_ms: mean(|t| t.wall_ms),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub bleu: f64,
    pub ribes_s: f64,
    pub cpr: Option<f64>,
    pub ops: Option<OpStats>,
    /// Fraction of hypotheses identical to their reference.
    pub exact_match: f64,
}

impl EvalReport {
    pub fn compute(
        hyps: &[Vec<String>],
        refs: &[Vec<String>],
        constraints: Option<&[Vec<Vec<String>>]>,
        traces: Option<&[DecodeTrace]>,
    ) -> Result<Self> {
        let exact = if hyps.is_empty() {
            0.0
        } else {
            hyps.iter().zip(refs).filter(|(h, r)| h == r).count() as f64 / hyps.len() as f64
        };
        Ok(EvalReport {
            bleu: bleu(hyps, refs)?,
            ribes_s: ribes_corpus(hyps, refs)?,
            cpr: match constraints {
                Some(c) => cpr(hyps, c)?,
                None => None,
            },
            ops: traces.map(op_stats).transpose()?,
            exact_match: exact,
        })
    }

    fn fields(&self) -> Vec<(&'static str, f64)> {
        let mut f = vec![
            ("bleu", self.bleu),
            ("ribes_s", self.ribes_s),
            ("exact_match", self.exact_match),
        ];
        if let Some(c) = self.cpr {
            f.push(("cpr", c));
        }
        if let Some(o) = &self.ops {
            f.extend([
                ("repositions", o.repositions),
                ("deletions", o.deletions),
                ("insertions", o.insertions),
                ("iterations", o.iterations),
                ("latency_ms", o.latency_ms),
            ]);
        }
        f
    }

    /// `metric<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            writeln!(out, "{k}\t{v:.4}").unwrap();
        }
        out
    }

    /// The whole report as one JSON object on a single line.
    pub fn to_record(&self) -> String {
        let body: Vec<String> = self.fields().iter().map(|(k, v)| format!("\"{k}\":{v:.6}")).collect();
        format!("{{{}}}", body.join(","))
    }
}

/// Splits a line into whitespace-separated tokens.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

/// Splits a constraints-file line into phrases (tab-separated).
pub fn parse_constraint_phrases(line: &str) -> Vec<Vec<String>> {
    line.split('\t').map(tokenize).filter(|p| !p.is_empty()).collect()
}
