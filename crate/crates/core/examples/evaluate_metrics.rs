//! Scores a few hypotheses with BLEU, simplified RIBES and constraint
//! preservation.

use anyhow::Result;
use editor_core::eval::{parse_constraint_phrases, tokenize, EvalReport};

fn main() -> Result<()> {
    let refs = ["the cat sat on the mat", "a quick brown fox jumps", "we like green tea"];
    let hyps = ["the cat sat on the mat", "a brown quick fox jumps", "we like tea"];
    let constraints = ["cat", "quick brown", "green\ttea"];

    let refs: Vec<_> = refs.iter().map(|l| tokenize(l)).collect();
    let hyps: Vec<_> = hyps.iter().map(|l| tokenize(l)).collect();
    let constraints: Vec<_> = constraints.iter().map(|l| parse_constraint_phrases(l)).collect();

    let report = EvalReport::compute(&hyps, &refs, Some(&constraints), None)?;
    print!("{}", report.to_tsv());
    println!("{}", report.to_record());
    Ok(())
}
