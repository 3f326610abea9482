//! Applies a hand-written edit action step by step.
//!
//! An action is a reposition vector `r` (1-based source slot, 0 deletes),
//! placeholder counts `p` for each gap, and tokens `t` that fill those
//! placeholders left to right.

use anyhow::Result;
use editor_core::edit::{
    apply_action, apply_placeholders, apply_reposition, check_action_laws, fill_tokens, random_action, Action,
    PlaceholderAction, RepositionAction, TokenFill,
};
use editor_core::types::{Sequence, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let vocab = Vocabulary::from_tokens(["the", "cat", "sat", "on", "mat", "a", "big"])?;
    let y = vocab.encode("cat the sat on mat");
    println!("start       {}", vocab.decode_line(&y));

    // Swap the first two words and drop "on".
    let r = RepositionAction(vec![1, 3, 2, 4, 0, 6, 7]);
    let moved = apply_reposition(&y, &r)?;
    println!("reposition  {}", vocab.decode_line(&moved));

    // One placeholder before "cat", two before "mat". Gap k sits after slot k.
    let p = PlaceholderAction(vec![0, 1, 0, 2, 0]);
    let holes = apply_placeholders(&moved, &p)?;
    println!("placeholder {}", vocab.decode_line(&holes));

    let t = TokenFill(vec![vocab.content_id("big"), vocab.content_id("on"), vocab.content_id("a")]);
    let filled = fill_tokens(&holes, &t)?;
    println!("fill        {}", vocab.decode_line(&filled));

    let whole = apply_action(&y, &Action { r, p, t })?;
    assert_eq!(whole, filled);

    // Every action, on every sequence, keeps the boundaries and takes its
    // tokens only from the input or from `t`.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let content: Vec<_> = (0..rand::Rng::gen_range(&mut rng, 0..8))
            .map(|_| vocab.content_id(&vocab.content_tokens()[rand::Rng::gen_range(&mut rng, 0..7)]))
            .collect();
        let y = Sequence::from_content(&content)?;
        let a = random_action(&mut rng, &y, 3, vocab.len());
        check_action_laws(&mut rng, &y, &a).map_err(anyhow::Error::msg)?;
    }
    println!("1000 random actions obey the edit laws");
    Ok(())
}
