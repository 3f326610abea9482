//! Greedy iterative refinement with optional hard lexical constraints.
//!
//! Each iteration picks the argmax reposition per slot, then the argmax
//! placeholder count per gap of the repositioned hypothesis, then the argmax
//! token per placeholder. Decoding stops at a fixed point or after
//! `max_iters` iterations.

use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::edit::{apply_placeholders, apply_reposition, fill_tokens, Action, PlaceholderAction, RepositionAction, TokenFill};
use crate::error::{Error, Result};
use crate::model::{Parameters, PolicyRunner, NEG_INF};
use crate::types::{ConstraintMode, ConstraintSet, Sequence, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    #[default]
    Unconstrained,
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub max_iters: usize,
    /// Penalty subtracted from the logit of "insert zero placeholders".
    pub gamma: f64,
    pub mode: DecodeMode,
    pub threads: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_iters: 10,
            gamma: 0.0,
            mode: DecodeMode::Unconstrained,
            threads: 1,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(0.0..=3.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 3], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Operation counts accumulated over every iteration of one decode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecodeTrace {
    pub iterations: usize,
    /// Slots with `r_i` outside `{0, i}`.
    pub repositions: usize,
    pub deletions: usize,
    /// Placeholders inserted (and filled).
    pub insertions: usize,
    pub wall_ms: f64,
}

impl DecodeTrace {
    /// Tab-separated record; `wall_ms` last so it is easy to strip.
    pub fn to_record(&self) -> String {
        format!(
            "iterations={}\trepositions={}\tdeletions={}\tinsertions={}\twall_ms={:.3}",
            self.iterations, self.repositions, self.deletions, self.insertions, self.wall_ms
        )
    }

    pub fn parse_record(line: &str) -> Result<Self> {
        let mut t = DecodeTrace::default();
        for field in line.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed trace field {field:?}")))?;
            let int = || v.parse::<usize>().map_err(|_| Error::Config(format!("bad trace value {v:?}")));
            match k {
                "iterations" => t.iterations = int()?,
                "repositions" => t.repositions = int()?,
                "deletions" => t.deletions = int()?,
                "insertions" => t.insertions = int()?,
                "wall_ms" => {
                    t.wall_ms = v.parse().map_err(|_| Error::Config(format!("bad trace value {v:?}")))?
                }
                other => return Err(Error::Config(format!("unknown trace field {other:?}"))),
            }
        }
        Ok(t)
    }
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = NEG_INF;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Mark {
    phrase: usize,
    offset: usize,
}

/// Tracks which positions of the current hypothesis hold hard-constraint
/// tokens, and which phrase (and offset within it) each belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintTracker {
    marks: Vec<Option<Mark>>,
    phrase_lens: Vec<usize>,
}

impl ConstraintTracker {
    /// Marks for the constraint-seeded initial hypothesis.
    pub fn new(constraints: &ConstraintSet) -> Self {
        let mut marks = vec![None];
        for (phrase, tokens) in constraints.phrases().iter().enumerate() {
            for offset in 0..tokens.len() {
                marks.push(Some(Mark { phrase, offset }));
            }
        }
        marks.push(None);
        ConstraintTracker {
            marks,
            phrase_lens: constraints.phrases().iter().map(Vec::len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrase_lens.is_empty()
    }

    /// 0-based positions currently holding constraint tokens.
    pub fn constraint_positions(&self) -> Vec<usize> {
        (0..self.marks.len()).filter(|&i| self.marks[i].is_some()).collect()
    }

    /// Positions of each phrase's tokens, in phrase order.
    fn phrase_positions(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.phrase_lens.iter().map(|&l| vec![usize::MAX; l]).collect();
        for (pos, m) in self.marks.iter().enumerate() {
            if let Some(m) = m {
                out[m.phrase][m.offset] = pos;
            }
        }
        out
    }

    /// Slot that carries the tracked copy of constraint position `j`: the
    /// slot itself if it keeps its token, else the leftmost slot copying it.
    fn holder(r: &[usize], j: usize) -> Option<usize> {
        if r[j] == j + 1 {
            return Some(j);
        }
        r.iter().position(|&v| v == j + 1)
    }

    /// Removes the delete outcome for constraint slots.
    pub fn mask_deletions(&self, logits: &mut Array2<f64>) {
        for pos in self.constraint_positions() {
            logits[[pos, 0]] = NEG_INF;
        }
    }

    /// Repairs a greedy reposition so every constraint token survives and
    /// every multi-token phrase stays contiguous and in order. Every repair
    /// pins a constraint slot to itself, so this terminates.
    pub fn enforce_reposition(&self, r: &mut [usize]) {
        let phrases = self.phrase_positions();
        loop {
            let mut changed = false;
            for j in self.constraint_positions() {
                if Self::holder(r, j).is_none() {
                    r[j] = j + 1;
                    changed = true;
                }
            }
            if changed {
                continue;
            }
            for positions in phrases.iter().filter(|p| p.len() > 1) {
                let holders: Vec<usize> = positions
                    .iter()
                    .map(|&j| Self::holder(r, j).expect("every constraint has a holder"))
                    .collect();
                let intact = holders
                    .windows(2)
                    .all(|w| w[0] < w[1] && (w[0] + 1..w[1]).all(|s| r[s] == 0));
                if !intact {
                    for &j in positions {
                        if r[j] != j + 1 {
                            r[j] = j + 1;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Marks for the repositioned hypothesis.
    pub fn after_reposition(&self, r: &[usize]) -> Self {
        let mut new_index = vec![usize::MAX; r.len()];
        let mut m = 0;
        for (s, &v) in r.iter().enumerate() {
            if v > 0 {
                new_index[s] = m;
                m += 1;
            }
        }
        let mut marks = vec![None; m];
        for j in self.constraint_positions() {
            let s = Self::holder(r, j).expect("reposition was enforced");
            marks[new_index[s]] = self.marks[j];
        }
        ConstraintTracker {
            marks,
            phrase_lens: self.phrase_lens.clone(),
        }
    }

    /// Gaps strictly inside a phrase may only receive zero placeholders.
    pub fn mask_placeholders(&self, logits: &mut Array2<f64>) {
        for gap in 0..self.marks.len().saturating_sub(1) {
            if let (Some(a), Some(b)) = (self.marks[gap], self.marks[gap + 1]) {
                if a.phrase == b.phrase && a.offset + 1 == b.offset {
                    for c in 1..logits.ncols() {
                        logits[[gap, c]] = NEG_INF;
                    }
                }
            }
        }
    }

    pub fn after_placeholders(&self, p: &[usize]) -> Self {
        let mut marks = Vec::with_capacity(self.marks.len() + p.iter().sum::<usize>());
        for (i, m) in self.marks.iter().enumerate() {
            marks.push(*m);
            if let Some(&count) = p.get(i) {
                marks.extend(std::iter::repeat_n(None, count));
            }
        }
        ConstraintTracker {
            marks,
            phrase_lens: self.phrase_lens.clone(),
        }
    }
}

/// Result of one greedy refinement step.
#[derive(Debug, Clone)]
pub struct Step {
    pub action: Action,
    pub output: Sequence,
}

/// One greedy action on `y`. With a tracker, hard-constraint masks are
/// applied before each argmax and the tracker is advanced to the output.
pub fn greedy_step(
    runner: &PolicyRunner<'_>,
    y: &Sequence,
    gamma: f64,
    mut tracker: Option<&mut ConstraintTracker>,
) -> Result<Step> {
    let h = runner.states(y);
    let mut r_logits = runner.rps_logits(y, &h);
    if let Some(t) = tracker.as_deref() {
        t.mask_deletions(&mut r_logits);
    }
    let mut r: Vec<usize> = r_logits.rows().into_iter().map(argmax).collect();
    if let Some(t) = tracker.as_deref() {
        t.enforce_reposition(&mut r);
    }
    let r = RepositionAction(r);
    let repositioned = apply_reposition(y, &r)?;
    if let Some(t) = tracker.as_deref_mut() {
        *t = t.after_reposition(&r.0);
    }

    let h = if r.is_identity() { h } else { runner.states(&repositioned) };
    let mut p_logits = runner.plh_logits(&h);
    p_logits.column_mut(0).mapv_inplace(|v| v - gamma);
    if let Some(t) = tracker.as_deref() {
        t.mask_placeholders(&mut p_logits);
    }
    let mut p: Vec<usize> = p_logits.rows().into_iter().map(argmax).collect();
    // never grow past the position table
    let mut budget = runner.params().positions.nrows().saturating_sub(repositioned.len());
    for c in &mut p {
        *c = (*c).min(budget);
        budget -= *c;
    }
    let p = PlaceholderAction(p);
    let with_holes = apply_placeholders(&repositioned, &p)?;
    if let Some(t) = tracker {
        *t = t.after_placeholders(&p.0);
    }

    let t = if p.total() == 0 {
        TokenFill(Vec::new())
    } else {
        let h = runner.states(&with_holes);
        let positions: Vec<usize> = (0..with_holes.len())
            .filter(|&i| with_holes.ids()[i] == crate::types::PLH)
            .collect();
        let logits = runner.tok_logits(&h, &positions);
        TokenFill(logits.rows().into_iter().map(|row| argmax(row) as TokenId).collect())
    };
    let output = fill_tokens(&with_holes, &t)?;
    Ok(Step {
        action: Action { r, p, t },
        output,
    })
}

/// The greedy action for state `y` (no constraint masking).
pub fn greedy_action(params: &Parameters, source: &Sequence, y: &Sequence, cfg: &DecodeConfig) -> Result<Action> {
    let runner = PolicyRunner::new(params, source);
    Ok(greedy_step(&runner, y, cfg.gamma, None)?.action)
}

fn refine(
    runner: &PolicyRunner<'_>,
    y0: Sequence,
    cfg: &DecodeConfig,
    mut tracker: Option<ConstraintTracker>,
) -> Result<(Sequence, DecodeTrace)> {
    y0.check_max_len(runner.params().positions.nrows())?;
    let start = Instant::now();
    let mut trace = DecodeTrace::default();
    let mut y = y0;
    for k in 1..=cfg.max_iters {
        let step = greedy_step(runner, &y, cfg.gamma, tracker.as_mut())?;
        trace.iterations = k;
        trace.repositions += step.action.r.num_moves();
        trace.deletions += step.action.r.num_deletions();
        trace.insertions += step.action.p.total();
        if step.output == y {
            break;
        }
        y = step.output;
    }
    trace.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((y, trace))
}

/// Refines `y0` until a fixed point or `max_iters`.
pub fn decode(params: &Parameters, source: &Sequence, y0: &Sequence, cfg: &DecodeConfig) -> Result<(Sequence, DecodeTrace)> {
    cfg.validate()?;
    let runner = PolicyRunner::new(params, source);
    refine(&runner, y0.clone(), cfg, None)
}

/// Decodes with constraints seeding the initial hypothesis; in hard mode the
/// constraint tokens are protected throughout.
pub fn decode_constrained(
    params: &Parameters,
    source: &Sequence,
    constraints: &ConstraintSet,
    cfg: &DecodeConfig,
) -> Result<(Sequence, DecodeTrace)> {
    cfg.validate()?;
    let runner = PolicyRunner::new(params, source);
    let y0 = constraints.initial_sequence();
    let hard = cfg.mode == DecodeMode::Hard || constraints.mode == ConstraintMode::Hard;
    let tracker = (hard && !constraints.is_empty()).then(|| ConstraintTracker::new(constraints));
    refine(&runner, y0, cfg, tracker)
}

/// Decodes line-aligned sources. Without constraints every line starts
/// from the empty hypothesis; an empty constraint set does the same.
pub fn decode_batch(
    params: &Parameters,
    sources: &[Sequence],
    constraints: Option<&[ConstraintSet]>,
    cfg: &DecodeConfig,
) -> Result<Vec<(Sequence, DecodeTrace)>> {
    cfg.validate()?;
    if let Some(c) = constraints {
        if c.len() != sources.len() {
            return Err(Error::LineMismatch {
                left: "input".into(),
                left_lines: sources.len(),
                right: "constraints".into(),
                right_lines: c.len(),
            });
        }
    }
    let one = |i: usize| -> Result<(Sequence, DecodeTrace)> {
        let src = &sources[i];
        match constraints.map(|c| &c[i]) {
            Some(cs) if !cs.is_empty() && cfg.mode != DecodeMode::Unconstrained => {
                decode_constrained(params, src, cs, cfg)
            }
            _ => decode(params, src, &Sequence::empty(), cfg),
        }
    };
    if cfg.threads <= 1 {
        return (0..sources.len()).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..sources.len()).into_par_iter().map(one).collect())
}

/// Mean per-sentence wall time in milliseconds.
pub fn mean_latency_ms(traces: &[DecodeTrace]) -> f64 {
    if traces.is_empty() {
        return 0.0;
    }
    traces.iter().map(|t| t.wall_ms).sum::<f64>() / traces.len() as f64
}
