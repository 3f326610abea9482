//! Synthetic toy tasks and line-aligned parallel corpora.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{build_vocabulary, Sequence, TrainingPair, Vocabulary, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Target equals source.
    Copy,
    /// Tokenwise bijection into a disjoint vocabulary, then adjacent pairs
    /// swapped.
    SwapTranslate,
    /// Every source token repeated twice.
    Duplicate,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "swap_translate" => Ok(TaskKind::SwapTranslate),
            "duplicate" => Ok(TaskKind::Duplicate),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected copy, swap_translate or duplicate)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    /// Inclusive bounds on source content length.
    pub len_range: (usize, usize),
    pub n_pairs: usize,
    pub seed: u64,
    pub max_len: usize,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, n_pairs: usize, seed: u64) -> Self {
        TaskSpec {
            kind,
            vocab_size: 20,
            len_range: (4, 10),
            n_pairs,
            seed,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.len_range;
        let factor = if self.kind == TaskKind::Duplicate { 2 } else { 1 };
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!("bad length range {lo}..={hi}")));
        }
        if hi * factor + 2 > self.max_len {
            return Err(Error::Config(format!(
                "targets of {} tokens exceed the maximum length {}",
                hi * factor + 2,
                self.max_len
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub pairs: Vec<TrainingPair>,
}

impl TaskData {
    pub fn source_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|p| self.src_vocab.decode_line(&p.source)).collect()
    }

    pub fn target_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|p| self.tgt_vocab.decode_line(&p.target)).collect()
    }
}

fn task_vocab(prefix: &str, n: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..n).map(|i| format!("{prefix}{i}"))).expect("distinct generated tokens")
}

pub fn generate(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let src_vocab = task_vocab("s", spec.vocab_size);
    let tgt_vocab = match spec.kind {
        TaskKind::SwapTranslate => task_vocab("t", spec.vocab_size),
        _ => src_vocab.clone(),
    };
    let first = src_vocab.id("s0").expect("generated token");
    // target-vocabulary offset of f(s_i)
    let mut mapping: Vec<u32> = (0..spec.vocab_size as u32).collect();
    if spec.kind == TaskKind::SwapTranslate {
        mapping.shuffle(&mut rng);
    }
    let tgt_first = tgt_vocab.id(if spec.kind == TaskKind::SwapTranslate { "t0" } else { "s0" }).expect("generated token");

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for _ in 0..spec.n_pairs {
        let len = rng.gen_range(spec.len_range.0..=spec.len_range.1);
        let offsets: Vec<u32> = (0..len).map(|_| rng.gen_range(0..spec.vocab_size as u32)).collect();
        let source: Vec<u32> = offsets.iter().map(|&o| first + o).collect();
        let target: Vec<u32> = match spec.kind {
            TaskKind::Copy => source.clone(),
            TaskKind::Duplicate => source.iter().flat_map(|&t| [t, t]).collect(),
            TaskKind::SwapTranslate => {
                let mut mapped: Vec<u32> = offsets.iter().map(|&o| tgt_first + mapping[o as usize]).collect();
                for pair in mapped.chunks_exact_mut(2) {
                    pair.swap(0, 1);
                }
                mapped
            }
        };
        pairs.push(TrainingPair {
            source: Sequence::from_content(&source)?,
            target: Sequence::from_content(&target)?,
        });
    }
    Ok(TaskData {
        src_vocab,
        tgt_vocab,
        pairs,
    })
}

/// Train, validation and test splits drawn from one generated stream, so
/// that every split shares the same vocabulary mapping.
pub fn generate_splits(spec: &TaskSpec, n_train: usize, n_valid: usize, n_test: usize) -> Result<[TaskData; 3]> {
    let all = generate(&TaskSpec {
        n_pairs: n_train + n_valid + n_test,
        ..spec.clone()
    })?;
    let mut rest = all.pairs.into_iter();
    let mut take = |n: usize| TaskData {
        src_vocab: all.src_vocab.clone(),
        tgt_vocab: all.tgt_vocab.clone(),
        pairs: rest.by_ref().take(n).collect(),
    };
    Ok([take(n_train), take(n_valid), take(n_test)])
}

/// Writes `{train,valid,test}.{src,tgt}` plus `vocab.src` / `vocab.tgt`.
pub fn write_task(dir: &Path, splits: &[TaskData; 3]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, lines: &[String]| -> Result<()> {
        let path = dir.join(name);
        let mut text = lines.join("\n");
        if !lines.is_empty() {
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    for (split, data) in ["train", "valid", "test"].iter().zip(splits) {
        write(&format!("{split}.src"), &data.source_lines())?;
        write(&format!("{split}.tgt"), &data.target_lines())?;
    }
    write("vocab.src", splits[0].src_vocab.content_tokens())?;
    write("vocab.tgt", splits[0].tgt_vocab.content_tokens())?;
    Ok(())
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Reads a one-token-per-line vocabulary file.
pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let lines = read_lines(path)?;
    Vocabulary::from_tokens(lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty()))
}

#[derive(Debug, Clone)]
pub enum VocabPolicy {
    /// Build both vocabularies from the corpus, each capped at `max_size`.
    Build { max_size: usize },
    Fixed { src: Vocabulary, tgt: Vocabulary },
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub pairs: Vec<TrainingPair>,
    /// Pairs skipped because a side exceeded the maximum length.
    pub dropped: usize,
}

pub fn load_parallel_corpus(src_path: &Path, tgt_path: &Path, policy: VocabPolicy, max_len: usize) -> Result<Corpus> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::LineMismatch {
            left: src_path.display().to_string(),
            left_lines: src.len(),
            right: tgt_path.display().to_string(),
            right_lines: tgt.len(),
        });
    }
    let (src_vocab, tgt_vocab) = match policy {
        VocabPolicy::Build { max_size } => (build_vocabulary(&src, max_size)?, build_vocabulary(&tgt, max_size)?),
        VocabPolicy::Fixed { src, tgt } => (src, tgt),
    };
    let mut pairs = Vec::with_capacity(src.len());
    let mut dropped = 0;
    for (s, t) in src.iter().zip(&tgt) {
        let source = src_vocab.encode(s);
        let target = tgt_vocab.encode(t);
        if source.len() > max_len || target.len() > max_len {
            dropped += 1;
            continue;
        }
        pairs.push(TrainingPair { source, target });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} pairs longer than {max_len} tokens");
    }
    Ok(Corpus {
        src_vocab,
        tgt_vocab,
        pairs,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(v: &Vocabulary, s: &Sequence) -> Vec<String> {
        v.decode(s)
    }

    #[test]
    fn copy_and_duplicate_targets() {
        let copy = generate(&TaskSpec::new(TaskKind::Copy, 20, 1)).unwrap();
        for p in &copy.pairs {
            assert_eq!(p.source, p.target);
            assert!((4..=10).contains(&p.source.content().len()));
        }
        let dup = generate(&TaskSpec::new(TaskKind::Duplicate, 20, 1)).unwrap();
        for p in &dup.pairs {
            let doubled: Vec<u32> = p.source.content().iter().flat_map(|&t| [t, t]).collect();
            assert_eq!(p.target.content(), &doubled[..]);
        }
    }

    #[test]
    fn swap_translate_is_invertible() {
        let d = generate(&TaskSpec::new(TaskKind::SwapTranslate, 50, 3)).unwrap();
        // recover f from the data, then undo: unswap and map back
        let mut f = std::collections::HashMap::new();
        for p in &d.pairs {
            let mut t = words(&d.tgt_vocab, &p.target);
            for c in t.chunks_exact_mut(2) {
                c.swap(0, 1);
            }
            for (s, t) in words(&d.src_vocab, &p.source).into_iter().zip(t) {
                assert!(t.starts_with('t'));
                assert_eq!(f.insert(s.clone(), t.clone()).unwrap_or(t.clone()), t, "f is a function");
            }
        }
        let mut image: Vec<_> = f.values().collect();
        image.sort();
        image.dedup();
        assert_eq!(image.len(), f.len(), "f is injective");
    }

    #[test]
    fn swap_rule_on_odd_length() {
        let spec = TaskSpec {
            len_range: (3, 3),
            ..TaskSpec::new(TaskKind::SwapTranslate, 200, 9)
        };
        let d = generate(&spec).unwrap();
        // the odd tail stays in place, which exposes f directly
        let f: std::collections::HashMap<u32, u32> =
            d.pairs.iter().map(|p| (p.source.content()[2], p.target.content()[2])).collect();
        let mut checked = 0;
        for p in &d.pairs {
            let (s, t) = (p.source.content(), p.target.content());
            if let (Some(&a), Some(&b)) = (f.get(&s[1]), f.get(&s[0])) {
                assert_eq!((t[0], t[1]), (a, b));
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = TaskSpec::new(TaskKind::SwapTranslate, 30, 5);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = TaskSpec { seed: 6, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().pairs, generate(&other).unwrap().pairs);
    }

    #[test]
    fn spec_validation() {
        let bad = TaskSpec {
            len_range: (0, 3),
            ..TaskSpec::new(TaskKind::Copy, 1, 1)
        };
        assert!(generate(&bad).is_err());
        let long = TaskSpec {
            len_range: (1, 200),
            ..TaskSpec::new(TaskKind::Duplicate, 1, 1)
        };
        assert!(generate(&long).is_err());
    }

    #[test]
    fn corpus_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let splits = generate_splits(&TaskSpec::new(TaskKind::Copy, 0, 2), 5, 2, 3).unwrap();
        write_task(dir.path(), &splits).unwrap();
        let policy = VocabPolicy::Fixed {
            src: read_vocab(&dir.path().join("vocab.src")).unwrap(),
            tgt: read_vocab(&dir.path().join("vocab.tgt")).unwrap(),
        };
        let c = load_parallel_corpus(&dir.path().join("test.src"), &dir.path().join("test.tgt"), policy, 256).unwrap();
        assert_eq!(c.pairs, splits[2].pairs);
        assert_eq!(c.dropped, 0);
    }

    #[test]
    fn corpus_errors_and_drops() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.src");
        let tgt = dir.path().join("a.tgt");
        fs::write(&src, "a b\nc\nd e f g\n").unwrap();
        fs::write(&tgt, "x\ny\nz\n").unwrap();
        let c = load_parallel_corpus(&src, &tgt, VocabPolicy::Build { max_size: 100 }, 256).unwrap();
        assert_eq!(c.pairs.len(), 3);
        let c = load_parallel_corpus(&src, &tgt, VocabPolicy::Build { max_size: 100 }, 5).unwrap();
        assert_eq!((c.pairs.len(), c.dropped), (2, 1));
        fs::write(&tgt, "x\ny\n").unwrap();
        assert!(matches!(
            load_parallel_corpus(&src, &tgt, VocabPolicy::Build { max_size: 100 }, 256),
            Err(Error::LineMismatch { left_lines: 3, right_lines: 2, .. })
        ));
    }
}
