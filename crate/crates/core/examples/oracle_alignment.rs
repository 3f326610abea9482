//! Shows the oracle's edit script and action for a pair of sentences, then
//! cross-checks the dynamic program against exhaustive search.

use anyhow::Result;
use editor_core::oracle::{check_exhaustive, num_ops, oracle_action, EditOp, OracleCheckReport};
use editor_core::types::Vocabulary;

fn main() -> Result<()> {
    let vocab = Vocabulary::from_tokens(["he", "sees", "the", "dog", "red", "big"])?;
    let y = vocab.encode("the dog sees he");
    let y_star = vocab.encode("he sees the big dog");
    let res = oracle_action(&y, &y_star);

    println!("hypothesis {}", vocab.decode_line(&y));
    println!("reference  {}", vocab.decode_line(&y_star));
    for op in &res.script.ops {
        let line = match *op {
            EditOp::Match { i, j } => format!("keep   {} -> slot {j}", vocab.token(y.ids()[i - 1])),
            EditOp::Substitute { i, j } => {
                format!("subst  {} -> {} at slot {j}", vocab.token(y.ids()[i - 1]), vocab.token(y_star.ids()[j - 1]))
            }
            EditOp::Delete { i } => format!("delete {}", vocab.token(y.ids()[i - 1])),
            EditOp::Insert { j } => format!("insert {}", vocab.token(y_star.ids()[j - 1])),
        };
        println!("  {line}");
    }
    println!("r = {:?}", res.r_target());
    println!("p = {:?}", res.p_target());
    let t: Vec<_> = res.t_target().iter().map(|&id| vocab.token(id)).collect();
    println!("t = {t:?}");
    println!("operations {}", num_ops(&y, &y_star));

    let mut report = OracleCheckReport::default();
    check_exhaustive(3, 3, &mut report)?;
    println!(
        "exhaustive check: {} pairs, {} mismatches",
        report.pairs_checked,
        report.mismatches.len()
    );
    Ok(())
}
