//! The edit calculus: reposition, placeholder insertion and token filling,
//! composed into a single refinement action.
//!
//! Reposition entries are 1-based indices into the input sequence, with `0`
//! meaning "delete this slot". Output slot order follows input slot order, so
//! deleted slots compact the sequence left to right.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{Sequence, TokenId, BOS, EOS, NUM_RESERVED, PLH};

/// Largest number of placeholders insertable in one gap.
pub const K_MAX: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RepositionAction(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlaceholderAction(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenFill(pub Vec<TokenId>);

/// One refinement step, applied as reposition, then placeholders, then fill.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub r: RepositionAction,
    pub p: PlaceholderAction,
    pub t: TokenFill,
}

impl RepositionAction {
    pub fn identity(n: usize) -> Self {
        RepositionAction((1..=n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of surviving slots (`m`).
    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&r| r > 0).count()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &r)| r == i + 1)
    }

    /// Slots that move a token (excluding deletions and in-place keeps).
    pub fn num_moves(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|&(i, &r)| r != 0 && r != i + 1)
            .count()
    }

    pub fn num_deletions(&self) -> usize {
        self.0.iter().filter(|&&r| r == 0).count()
    }
}

impl PlaceholderAction {
    pub fn zeros(gaps: usize) -> Self {
        PlaceholderAction(vec![0; gaps])
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

impl Action {
    pub fn identity(n: usize) -> Self {
        Action {
            r: RepositionAction::identity(n),
            p: PlaceholderAction::zeros(n.saturating_sub(1)),
            t: TokenFill(Vec::new()),
        }
    }

    /// Checks the chained length invariants against an input of length `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.r.len() != n {
            return Err(Error::InvalidAction(format!(
                "reposition has {} entries for input length {n}",
                self.r.len()
            )));
        }
        let m = self.r.kept();
        if self.p.0.len() + 1 != m {
            return Err(Error::InvalidAction(format!(
                "placeholder action has {} gaps, expected {}",
                self.p.0.len(),
                m.saturating_sub(1)
            )));
        }
        if self.t.0.len() != self.p.total() {
            return Err(Error::InvalidAction(format!(
                "token fill has {} tokens for {} placeholders",
                self.t.0.len(),
                self.p.total()
            )));
        }
        Ok(())
    }
}

/// Output slot `i` (over slots with `r_i > 0`) receives `y[r_i]`.
pub fn apply_reposition(y: &Sequence, r: &RepositionAction) -> Result<Sequence> {
    let n = y.len();
    if r.len() != n {
        return Err(Error::InvalidAction(format!(
            "reposition has {} entries for input length {n}",
            r.len()
        )));
    }
    if r.0[0] != 1 || r.0[n - 1] != n {
        return Err(Error::InvalidAction("reposition must keep boundary slots fixed".into()));
    }
    let ids = y.ids();
    let mut out = Vec::with_capacity(n);
    for (slot, &src) in r.0.iter().enumerate() {
        if src > n {
            return Err(Error::InvalidAction(format!(
                "reposition index {src} out of range 0..={n}"
            )));
        }
        if src == 0 {
            continue;
        }
        let interior = slot != 0 && slot != n - 1;
        if interior && (src == 1 || src == n) {
            return Err(Error::InvalidAction(format!(
                "slot {} places a boundary token inside the sequence",
                slot + 1
            )));
        }
        out.push(ids[src - 1]);
    }
    Sequence::new(out)
}

/// Inserts `p_i` placeholders between `y_i` and `y_{i+1}`.
pub fn apply_placeholders(y: &Sequence, p: &PlaceholderAction) -> Result<Sequence> {
    let n = y.len();
    if p.0.len() + 1 != n {
        return Err(Error::InvalidAction(format!(
            "placeholder action has {} gaps for input length {n}",
            p.0.len()
        )));
    }
    if let Some(&bad) = p.0.iter().find(|&&c| c > K_MAX) {
        return Err(Error::InvalidAction(format!(
            "placeholder count {bad} exceeds K_max = {K_MAX}"
        )));
    }
    let ids = y.ids();
    let mut out = Vec::with_capacity(n + p.total());
    for (i, &count) in p.0.iter().enumerate() {
        out.push(ids[i]);
        out.extend(std::iter::repeat_n(PLH, count));
    }
    out.push(ids[n - 1]);
    Sequence::new(out)
}

/// Replaces placeholders left to right with `t`.
pub fn fill_tokens(y: &Sequence, t: &TokenFill) -> Result<Sequence> {
    let holes = y.count_placeholders();
    if holes != t.0.len() {
        return Err(Error::InvalidAction(format!(
            "{} fill tokens for {holes} placeholders",
            t.0.len()
        )));
    }
    if t.0.iter().any(|&tok| tok == BOS || tok == EOS || tok == PLH) {
        return Err(Error::InvalidAction("fill token must be a content token".into()));
    }
    let mut fill = t.0.iter();
    let out = y
        .ids()
        .iter()
        .map(|&id| if id == PLH { *fill.next().unwrap() } else { id })
        .collect();
    Sequence::new(out)
}

/// The transition `E(y, a)`.
pub fn apply_action(y: &Sequence, a: &Action) -> Result<Sequence> {
    let repositioned = apply_reposition(y, &a.r)?;
    let with_holes = apply_placeholders(&repositioned, &a.p)?;
    fill_tokens(&with_holes, &a.t)
}

/// A uniformly random valid action for `y`: interior slots delete or copy
/// any interior index, gaps receive up to `max_count` placeholders, and fill
/// tokens are drawn from `vocab` content ids.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R, y: &Sequence, max_count: usize, vocab: usize) -> Action {
    let n = y.len();
    let mut r = vec![1; n];
    r[n - 1] = n;
    for slot in r.iter_mut().take(n - 1).skip(1) {
        let pick = rng.gen_range(0..n - 1);
        *slot = if pick == 0 { 0 } else { pick + 1 };
    }
    let r = RepositionAction(r);
    let p = PlaceholderAction((0..r.kept() - 1).map(|_| rng.gen_range(0..=max_count)).collect());
    let t = TokenFill(
        (0..p.total())
            .map(|_| rng.gen_range(NUM_RESERVED as TokenId..vocab as TokenId))
            .collect(),
    );
    Action { r, p, t }
}

/// Checks the length, boundary, token-source and parallelism laws of
/// `apply_action(y, a)`. Entries are re-applied in a random order drawn
/// from `rng` for the parallelism check.
pub fn check_action_laws<R: Rng + ?Sized>(rng: &mut R, y: &Sequence, a: &Action) -> std::result::Result<(), String> {
    let repositioned = apply_reposition(y, &a.r).map_err(|e| e.to_string())?;
    let out = apply_action(y, a).map_err(|e| e.to_string())?;
    let m = a.r.kept();
    if repositioned.len() != m {
        return Err(format!("reposition length {} != kept slots {m}", repositioned.len()));
    }
    if out.len() != m + a.p.total() {
        return Err(format!("action length {} != {m} + {}", out.len(), a.p.total()));
    }
    let ids = out.ids();
    if ids[0] != BOS || ids[ids.len() - 1] != EOS {
        return Err("boundary tokens moved".into());
    }

    // token source: walk the output, separating repositioned from inserted
    let mut k = 0;
    let mut fill = a.t.0.iter();
    for (gap, &count) in a.p.0.iter().enumerate() {
        if ids[k] != repositioned.ids()[gap] {
            return Err(format!("output position {k} is not the repositioned token"));
        }
        k += 1;
        for _ in 0..count {
            if Some(&ids[k]) != fill.next() {
                return Err(format!("output position {k} is not its fill token"));
            }
            k += 1;
        }
    }
    let sources: Vec<TokenId> = a.r.0.iter().filter(|&&v| v > 0).map(|&v| y.ids()[v - 1]).collect();
    if repositioned.ids() != &sources[..] {
        return Err("repositioned tokens differ from the indexed input tokens".into());
    }

    // parallelism: every entry reads only the input, so any order agrees
    let mut out_slot = vec![usize::MAX; a.r.len()];
    let mut next = 0;
    for (i, &v) in a.r.0.iter().enumerate() {
        if v > 0 {
            out_slot[i] = next;
            next += 1;
        }
    }
    let mut order: Vec<usize> = (0..a.r.len()).collect();
    order.shuffle(rng);
    let mut par = vec![None; m];
    for &i in &order {
        if a.r.0[i] > 0 {
            par[out_slot[i]] = Some(y.ids()[a.r.0[i] - 1]);
        }
    }
    if par.iter().zip(repositioned.ids()).any(|(p, &t)| *p != Some(t)) {
        return Err("reposition depends on application order".into());
    }
    let mut starts = Vec::with_capacity(m);
    let mut pos = 0;
    for gap in 0..m {
        starts.push(pos);
        pos += 1 + a.p.0.get(gap).copied().unwrap_or(0);
    }
    let mut par = vec![None; out.len()];
    let mut gaps: Vec<usize> = (0..m).collect();
    gaps.shuffle(rng);
    for &g in &gaps {
        par[starts[g]] = Some(repositioned.ids()[g]);
    }
    let holes: Vec<usize> = (0..par.len()).filter(|&i| par[i].is_none()).collect();
    let mut fills: Vec<usize> = (0..holes.len()).collect();
    fills.shuffle(rng);
    for &f in &fills {
        par[holes[f]] = Some(a.t.0[f]);
    }
    if par.iter().zip(ids).any(|(p, &t)| *p != Some(t)) {
        return Err("insertion depends on application order".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 4;
    const B: TokenId = 5;
    const C: TokenId = 6;

    fn seq(content: &[TokenId]) -> Sequence {
        Sequence::from_content(content).unwrap()
    }

    #[test]
    fn reposition_examples() {
        let y = seq(&[A, B]);
        let r = |v: &[usize]| RepositionAction(v.to_vec());
        assert_eq!(apply_reposition(&y, &r(&[1, 2, 3, 4])).unwrap(), y);
        assert_eq!(apply_reposition(&y, &r(&[1, 3, 2, 4])).unwrap(), seq(&[B, A]));
        assert_eq!(apply_reposition(&y, &r(&[1, 0, 3, 4])).unwrap(), seq(&[B]));
        // repeated indices are allowed
        assert_eq!(apply_reposition(&y, &r(&[1, 2, 2, 4])).unwrap(), seq(&[A, A]));
    }

    #[test]
    fn reposition_errors() {
        let y = seq(&[A, B]);
        let r = |v: &[usize]| RepositionAction(v.to_vec());
        assert!(apply_reposition(&y, &r(&[2, 2, 3, 4])).is_err());
        assert!(apply_reposition(&y, &r(&[1, 2, 3, 0])).is_err());
        assert!(apply_reposition(&y, &r(&[1, 5, 3, 4])).is_err());
        assert!(apply_reposition(&y, &r(&[1, 2, 3])).is_err());
        assert!(apply_reposition(&y, &r(&[1, 1, 3, 4])).is_err());
        assert!(apply_reposition(&y, &r(&[1, 2, 4, 4])).is_err());
    }

    #[test]
    fn placeholder_examples() {
        let p = |v: &[usize]| PlaceholderAction(v.to_vec());
        assert_eq!(
            apply_placeholders(&seq(&[A]), &p(&[2, 0])).unwrap().ids(),
            &[BOS, PLH, PLH, A, EOS]
        );
        assert_eq!(apply_placeholders(&Sequence::empty(), &p(&[0])).unwrap(), Sequence::empty());
        assert!(apply_placeholders(&seq(&[A]), &p(&[0, 256])).is_err());
        assert!(apply_placeholders(&seq(&[A]), &p(&[0])).is_err());
    }

    #[test]
    fn fill_examples() {
        let holes = Sequence::new(vec![BOS, PLH, PLH, EOS]).unwrap();
        assert_eq!(fill_tokens(&holes, &TokenFill(vec![A, B])).unwrap(), seq(&[A, B]));
        assert_eq!(fill_tokens(&seq(&[A]), &TokenFill(vec![])).unwrap(), seq(&[A]));
        let one = Sequence::new(vec![BOS, PLH, EOS]).unwrap();
        assert!(fill_tokens(&one, &TokenFill(vec![A, B])).is_err());
        assert!(fill_tokens(&one, &TokenFill(vec![PLH])).is_err());
    }

    #[test]
    fn action_examples() {
        let act = |r: &[usize], p: &[usize], t: &[TokenId]| Action {
            r: RepositionAction(r.to_vec()),
            p: PlaceholderAction(p.to_vec()),
            t: TokenFill(t.to_vec()),
        };
        assert_eq!(
            apply_action(&Sequence::empty(), &act(&[1, 2], &[2], &[A, B])).unwrap(),
            seq(&[A, B])
        );
        assert_eq!(
            apply_action(&seq(&[B, A]), &act(&[1, 3, 2, 4], &[0, 0, 0], &[])).unwrap(),
            seq(&[A, B])
        );
        // [BOS,a,b,EOS] -> delete b -> [BOS,a,EOS] -> [BOS,a,PLH,EOS] -> [BOS,a,c,EOS]
        let a = act(&[1, 2, 0, 4], &[0, 1], &[C]);
        a.validate(4).unwrap();
        assert_eq!(apply_action(&seq(&[A, B]), &a).unwrap(), seq(&[A, C]));
        assert!(act(&[1, 2, 0, 4], &[0, 1, 0], &[C]).validate(4).is_err());
        assert!(act(&[1, 2, 0, 4], &[0, 1], &[]).validate(4).is_err());
    }

    #[test]
    fn identity_action_is_noop() {
        let y = seq(&[A, B, C]);
        let a = Action::identity(y.len());
        assert_eq!(apply_action(&y, &a).unwrap(), y);
        assert!(a.r.is_identity());
        assert_eq!(a.r.num_moves(), 0);
    }

    proptest::proptest! {
        #[test]
        fn random_actions_obey_the_laws(
            content in proptest::collection::vec(4u32..10, 0..10),
            seed in 0u64..u64::MAX,
        ) {
            use rand::SeedableRng;
            let y = seq(&content);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_action(&mut rng, &y, 3, 10);
            proptest::prop_assert_eq!(check_action_laws(&mut rng, &y, &a), Ok(()));
        }
    }
}
