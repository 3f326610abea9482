//! Edit-distance oracle.
//!
//! Alignment is Levenshtein distance where substitution is only allowed to a
//! token that already occurs in the hypothesis (so it can be realized by a
//! reposition). The minimal script is converted to an [`Action`] whose
//! components double as one-hot training targets for the three heads.

use rand::Rng;

use crate::edit::{apply_action, Action, PlaceholderAction, RepositionAction, TokenFill, K_MAX};
use crate::error::{Error, Result};
use crate::types::{Sequence, TokenId, NUM_RESERVED};

/// One alignment step. Positions are 1-based over the full sequences,
/// boundaries included (`i` indexes the hypothesis, `j` the reference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { i: usize, j: usize },
    Substitute { i: usize, j: usize },
    Delete { i: usize },
    Insert { j: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
    pub cost: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub script: EditScript,
    pub action: Action,
    /// Substitutions that had to reuse an already-claimed input index.
    pub repeated_indices: usize,
}

impl OracleResult {
    /// Reposition label for each slot of the hypothesis.
    pub fn r_target(&self) -> &[usize] {
        &self.action.r.0
    }

    /// Placeholder count for each gap of the repositioned hypothesis.
    pub fn p_target(&self) -> &[usize] {
        &self.action.p.0
    }

    /// Reference token for each placeholder, left to right.
    pub fn t_target(&self) -> &[TokenId] {
        &self.action.t.0
    }
}

const INF: u32 = u32::MAX / 4;

/// Minimal constrained-Levenshtein script from `y` to `y_star`.
///
/// Ties during backtrace prefer match/substitute, then delete, then insert.
pub fn align(y: &Sequence, y_star: &Sequence) -> EditScript {
    let a = y.content();
    let b = y_star.content();
    let (p, q) = (a.len(), b.len());
    let present = presence(a);
    let sub = |i: usize, j: usize| -> u32 {
        if a[i] == b[j] {
            0
        } else if present(b[j]) {
            1
        } else {
            INF
        }
    };

    let width = q + 1;
    let mut d = vec![0u32; (p + 1) * width];
    for j in 0..=q {
        d[j] = j as u32;
    }
    for i in 1..=p {
        d[i * width] = i as u32;
        for j in 1..=q {
            let diag = d[(i - 1) * width + j - 1].saturating_add(sub(i - 1, j - 1));
            let del = d[(i - 1) * width + j] + 1;
            let ins = d[i * width + j - 1] + 1;
            d[i * width + j] = diag.min(del).min(ins);
        }
    }

    let mut rev = Vec::with_capacity(p + q + 2);
    rev.push(EditOp::Match {
        i: p + 2,
        j: q + 2,
    });
    let (mut i, mut j) = (p, q);
    while i > 0 || j > 0 {
        let here = d[i * width + j];
        if i > 0 && j > 0 {
            let s = sub(i - 1, j - 1);
            if s < INF && d[(i - 1) * width + j - 1] + s == here {
                rev.push(if s == 0 {
                    EditOp::Match { i: i + 1, j: j + 1 }
                } else {
                    EditOp::Substitute { i: i + 1, j: j + 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * width + j] + 1 == here {
            rev.push(EditOp::Delete { i: i + 1 });
            i -= 1;
        } else {
            rev.push(EditOp::Insert { j: j + 1 });
            j -= 1;
        }
    }
    rev.push(EditOp::Match { i: 1, j: 1 });
    rev.reverse();
    EditScript {
        ops: rev,
        cost: d[p * width + q] as usize,
    }
}

fn presence(tokens: &[TokenId]) -> impl Fn(TokenId) -> bool + '_ {
    let max = tokens.iter().copied().max().unwrap_or(0) as usize;
    let mut seen = vec![false; max + 1];
    for &t in tokens {
        seen[t as usize] = true;
    }
    move |t: TokenId| seen.get(t as usize).copied().unwrap_or(false)
}

/// The oracle action and its per-head targets for reaching `y_star` from `y`.
pub fn oracle_action(y: &Sequence, y_star: &Sequence) -> OracleResult {
    let script = align(y, y_star);
    let (action, repeated_indices) = script_to_action(y, y_star, &script);
    OracleResult {
        script,
        action,
        repeated_indices,
    }
}

fn script_to_action(y: &Sequence, y_star: &Sequence, script: &EditScript) -> (Action, usize) {
    let (yi, ri) = (y.ids(), y_star.ids());
    let n = yi.len();
    let mut r = vec![0usize; n];
    let mut used = vec![false; n + 1];
    for op in &script.ops {
        if let EditOp::Match { i, .. } = *op {
            r[i - 1] = i;
            used[i] = true;
        }
    }
    let mut repeated = 0;
    for op in &script.ops {
        if let EditOp::Substitute { i, j } = *op {
            let want = ri[j - 1];
            let candidates = || (2..n).filter(|&k| yi[k - 1] == want);
            let pick = match candidates().find(|&k| !used[k]) {
                Some(k) => k,
                None => {
                    repeated += 1;
                    candidates().next().expect("substitution target occurs in input")
                }
            };
            used[pick] = true;
            r[i - 1] = pick;
        }
    }

    let mut p: Vec<usize> = Vec::with_capacity(n);
    let mut t = Vec::new();
    for op in &script.ops {
        match *op {
            EditOp::Match { .. } | EditOp::Substitute { .. } => p.push(0),
            EditOp::Insert { j } => {
                let gap = p.last_mut().expect("script starts with the BOS match");
                if *gap < K_MAX {
                    *gap += 1;
                    t.push(ri[j - 1]);
                }
            }
            EditOp::Delete { .. } => {}
        }
    }
    // the EOS match opened a gap that does not exist
    p.pop();
    let action = Action {
        r: RepositionAction(r),
        p: PlaceholderAction(p),
        t: TokenFill(t),
    };
    (action, repeated)
}

/// Inserted-token counts projected onto the gaps of the *unrepositioned*
/// input: an insertion lands in the gap after the last input position the
/// script has consumed.
pub fn insertions_on_input(y: &Sequence, script: &EditScript) -> PlaceholderAction {
    let mut p = vec![0usize; y.len() - 1];
    let mut last = 1;
    for op in &script.ops {
        match *op {
            EditOp::Match { i, .. } | EditOp::Substitute { i, .. } | EditOp::Delete { i } => {
                last = i
            }
            EditOp::Insert { .. } => {
                let gap = &mut p[last - 1];
                *gap = (*gap + 1).min(K_MAX);
            }
        }
    }
    PlaceholderAction(p)
}

pub fn num_ops(y: &Sequence, y_star: &Sequence) -> usize {
    align(y, y_star).cost
}

/// Bound on `|y|` and `|y*|` (boundaries included) for [`brute_force_oracle`].
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

/// Minimum script cost by plain recursive enumeration of every monotone
/// script (no memoization), under the same substitution rule as [`align`].
pub fn brute_force_oracle(y: &Sequence, y_star: &Sequence) -> Result<usize> {
    if y.len() > BRUTE_FORCE_MAX_LEN || y_star.len() > BRUTE_FORCE_MAX_LEN {
        return Err(Error::BruteForceBound {
            y_len: y.len(),
            ref_len: y_star.len(),
            max: BRUTE_FORCE_MAX_LEN,
        });
    }
    fn go(a: &[TokenId], b: &[TokenId], pool: &[TokenId]) -> Option<usize> {
        if a.is_empty() && b.is_empty() {
            return Some(0);
        }
        let mut best: Option<usize> = None;
        let mut consider = |c: Option<usize>| {
            if let Some(c) = c {
                best = Some(best.map_or(c, |b: usize| b.min(c)));
            }
        };
        if let Some((_, rest)) = a.split_first() {
            consider(go(rest, b, pool).map(|c| c + 1));
        }
        if let Some((_, rest)) = b.split_first() {
            consider(go(a, rest, pool).map(|c| c + 1));
        }
        if let (Some((x, ra)), Some((w, rb))) = (a.split_first(), b.split_first()) {
            if x == w {
                consider(go(ra, rb, pool));
            } else if pool.contains(w) {
                consider(go(ra, rb, pool).map(|c| c + 1));
            }
        }
        best
    }
    Ok(go(y.content(), y_star.content(), y.content()).expect("delete-all/insert-all is always feasible"))
}

/// Every content sequence of length `0..=max_len` over `vocab` content tokens.
pub fn enumerate_sequences(max_len: usize, vocab: usize) -> Vec<Sequence> {
    let mut out = vec![Sequence::empty()];
    let mut frontier: Vec<Vec<TokenId>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * vocab);
        for prefix in &frontier {
            for v in 0..vocab {
                let mut s = prefix.clone();
                s.push((NUM_RESERVED + v) as TokenId);
                out.push(Sequence::from_content(&s).expect("content tokens only"));
                next.push(s);
            }
        }
        frontier = next;
    }
    out
}

pub fn random_sequence<R: Rng + ?Sized>(rng: &mut R, max_len: usize, vocab: usize) -> Sequence {
    let len = rng.gen_range(0..=max_len);
    let content: Vec<TokenId> = (0..len)
        .map(|_| (NUM_RESERVED + rng.gen_range(0..vocab)) as TokenId)
        .collect();
    Sequence::from_content(&content).expect("content tokens only")
}

#[derive(Debug, Clone, Default)]
pub struct OracleCheckReport {
    pub pairs_checked: usize,
    pub mismatches: Vec<(Sequence, Sequence, usize, usize)>,
    pub round_trips: usize,
    pub round_trip_failures: Vec<(Sequence, Sequence)>,
    pub repeated_indices: usize,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.round_trip_failures.is_empty()
    }
}

/// Compares [`num_ops`] against [`brute_force_oracle`] on every pair of
/// sequences up to `max_len` content tokens over `vocab` tokens.
pub fn check_exhaustive(max_len: usize, vocab: usize, report: &mut OracleCheckReport) -> Result<()> {
    let all = enumerate_sequences(max_len, vocab);
    for y in &all {
        for y_star in &all {
            let dp = num_ops(y, y_star);
            let brute = brute_force_oracle(y, y_star)?;
            report.pairs_checked += 1;
            if dp != brute {
                report.mismatches.push((y.clone(), y_star.clone(), dp, brute));
            }
        }
    }
    Ok(())
}

/// Checks `apply_action(y, oracle(y, y*)) == y*` on random pairs.
pub fn check_round_trips<R: Rng + ?Sized>(
    samples: usize,
    max_len: usize,
    vocab: usize,
    rng: &mut R,
    report: &mut OracleCheckReport,
) {
    for _ in 0..samples {
        let y = random_sequence(rng, max_len, vocab);
        let y_star = random_sequence(rng, max_len, vocab);
        let res = oracle_action(&y, &y_star);
        report.round_trips += 1;
        report.repeated_indices += res.repeated_indices;
        if apply_action(&y, &res.action).ok().as_ref() != Some(&y_star) {
            report.round_trip_failures.push((y, y_star));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit::apply_reposition;

    const A: TokenId = 4;
    const B: TokenId = 5;
    const C: TokenId = 6;

    fn seq(content: &[TokenId]) -> Sequence {
        Sequence::from_content(content).unwrap()
    }

    #[test]
    fn identical_sequences_cost_nothing() {
        let y = seq(&[A, B, C]);
        let s = align(&y, &y);
        assert_eq!(s.cost, 0);
        assert!(s.ops.iter().all(|op| matches!(op, EditOp::Match { .. })));
        let res = oracle_action(&y, &y);
        assert_eq!(res.action, Action::identity(y.len()));
        assert_eq!(brute_force_oracle(&y, &y).unwrap(), 0);
    }

    #[test]
    fn pure_insertion() {
        let s = align(&Sequence::empty(), &seq(&[A, B]));
        assert_eq!(s.cost, 2);
        assert_eq!(
            s.ops,
            vec![
                EditOp::Match { i: 1, j: 1 },
                EditOp::Insert { j: 2 },
                EditOp::Insert { j: 3 },
                EditOp::Match { i: 2, j: 4 },
            ]
        );
        assert_eq!(brute_force_oracle(&Sequence::empty(), &seq(&[A])).unwrap(), 1);
    }

    #[test]
    fn swap_uses_two_substitutions() {
        let (y, y_star) = (seq(&[B, A]), seq(&[A, B]));
        let s = align(&y, &y_star);
        assert_eq!(s.cost, 2);
        assert_eq!(brute_force_oracle(&y, &y_star).unwrap(), 2);
        let res = oracle_action(&y, &y_star);
        assert_eq!(res.r_target(), &[1, 3, 2, 4]);
        assert_eq!(res.p_target(), &[0, 0, 0]);
        assert!(res.t_target().is_empty());
    }

    #[test]
    fn absent_token_forces_delete_and_insert() {
        let (y, y_star) = (seq(&[A, C]), seq(&[A, B]));
        assert_eq!(num_ops(&y, &y_star), 2);
        let res = oracle_action(&y, &y_star);
        assert_eq!(res.r_target(), &[1, 2, 0, 4]);
        assert_eq!(res.p_target(), &[0, 1]);
        assert_eq!(res.t_target(), &[B]);
    }

    #[test]
    fn forced_repetition_still_round_trips() {
        let (y, y_star) = (seq(&[A, B]), seq(&[A, A]));
        let res = oracle_action(&y, &y_star);
        assert_eq!(res.repeated_indices, 1);
        assert_eq!(res.r_target(), &[1, 2, 2, 4]);
        assert_eq!(apply_action(&y, &res.action).unwrap(), y_star);
    }

    #[test]
    fn insertions_projected_onto_input() {
        // y = [a, c], y* = [a, b]: c deleted, b inserted after a
        let (y, y_star) = (seq(&[A, C]), seq(&[A, B]));
        let res = oracle_action(&y, &y_star);
        assert_eq!(insertions_on_input(&y, &res.script).0, vec![0, 1, 0]);
        // from empty the projection equals the oracle placeholder target
        let res = oracle_action(&Sequence::empty(), &y_star);
        assert_eq!(insertions_on_input(&Sequence::empty(), &res.script).0, vec![2]);
    }

    #[test]
    fn brute_force_bound() {
        let long = seq(&[A; 7]);
        assert!(brute_force_oracle(&long, &Sequence::empty()).is_err());
    }

    #[test]
    fn exhaustive_small_agrees() {
        let mut report = OracleCheckReport::default();
        check_exhaustive(2, 3, &mut report).unwrap();
        assert_eq!(report.pairs_checked, 13 * 13);
        assert!(report.passed());
    }

    #[test]
    fn oracle_reposition_keeps_matches_in_place() {
        let (y, y_star) = (seq(&[A, B, C]), seq(&[C, A, B]));
        let res = oracle_action(&y, &y_star);
        let kept = apply_reposition(&y, &res.action.r).unwrap();
        assert_eq!(kept.len(), res.p_target().len() + 1);
        assert_eq!(apply_action(&y, &res.action).unwrap(), y_star);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn content(max: usize, vocab: u32) -> impl Strategy<Value = Vec<TokenId>> {
            proptest::collection::vec(4u32..4 + vocab, 0..=max)
        }

        proptest! {
            #[test]
            fn round_trip(a in content(12, 20), b in content(12, 20)) {
                let (y, y_star) = (seq(&a), seq(&b));
                let res = oracle_action(&y, &y_star);
                prop_assert_eq!(apply_action(&y, &res.action).unwrap(), y_star);
                prop_assert_eq!(res.script.cost, num_ops(&y, &seq(&b)));
            }

            #[test]
            fn cost_upper_bound(a in content(12, 6), b in content(12, 6)) {
                prop_assert!(num_ops(&seq(&a), &seq(&b)) <= a.len() + b.len());
            }

            #[test]
            fn renaming_invariance(a in content(8, 5), b in content(8, 5), shift in 1u32..7) {
                // bijection on 4..9: rotate by `shift`
                let f = |t: &TokenId| 4 + (t - 4 + shift) % 5;
                let fa: Vec<_> = a.iter().map(f).collect();
                let fb: Vec<_> = b.iter().map(f).collect();
                prop_assert_eq!(num_ops(&seq(&a), &seq(&b)), num_ops(&seq(&fa), &seq(&fb)));
            }

            #[test]
            fn matches_brute_force(a in content(6, 3), b in content(6, 3)) {
                let (y, y_star) = (seq(&a), seq(&b));
                prop_assert_eq!(num_ops(&y, &y_star), brute_force_oracle(&y, &y_star).unwrap());
            }
        }
    }
}
