//! Synthetic copy/reverse/sort sequence pairs and their text file format.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::SeededRng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const NUM_RESERVED: usize = 3;

const RESERVED_NAMES: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from the full ordered token list; the first three
    /// entries occupy the PAD, BOS and EOS slots.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_RESERVED + 1 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary needs at least {} tokens, got {}",
                NUM_RESERVED + 1,
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad token spelling {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Reserved tokens followed by `n_content` tokens named `t3`, `t4`, ...
    pub fn synthetic(n_content: usize) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..n_content).map(|i| format!("t{}", i + NUM_RESERVED)));
        Vocab::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_range(&self) -> std::ops::Range<usize> {
        NUM_RESERVED..self.tokens.len()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn render(&self, seq: &[usize]) -> String {
        seq.iter()
            .map(|&i| self.token(i).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub pairs: Vec<SequencePair>,
    pub vocab: Vocab,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Reverse,
    Sort,
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "sort" => Ok(TaskKind::Sort),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::Sort => "sort",
        })
    }
}

impl TaskKind {
    /// Target for `source` under this task, EOS-terminated.
    pub fn target_for(self, source: &[usize]) -> Vec<usize> {
        let mut y = source.to_vec();
        match self {
            TaskKind::Copy => {}
            TaskKind::Reverse => y.reverse(),
            TaskKind::Sort => y.sort_unstable(),
        }
        y.push(EOS);
        y
    }
}

pub fn gen_task(
    kind: TaskKind,
    n: usize,
    vocab: &Vocab,
    len_min: usize,
    len_max: usize,
    split: Split,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if len_min == 0 || len_min > len_max {
        return Err(Error::InvalidRange(format!("sequence lengths {len_min}..={len_max}")));
    }
    let content = vocab.content_range();
    if content.is_empty() {
        return Err(Error::InvalidArgument("vocabulary has no content tokens".into()));
    }
    let pairs = (0..n)
        .map(|_| {
            let len = len_min + rng.below(len_max - len_min + 1);
            let source: Vec<usize> = (0..len).map(|_| content.start + rng.below(content.len())).collect();
            let target = kind.target_for(&source);
            SequencePair { source, target }
        })
        .collect();
    Ok(Dataset {
        pairs,
        vocab: vocab.clone(),
        split,
    })
}

/// Writes the dataset as UTF-8 text: a `#vocab:` header line, a `#split:`
/// line, then one `source<TAB>target` line per pair.
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "#vocab: {}", d.vocab.tokens().join(" "))?;
    writeln!(w, "#split: {}", d.split)?;
    for p in &d.pairs {
        writeln!(w, "{}\t{}", d.vocab.render(&p.source), d.vocab.render(&p.target))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path)
}

fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing #vocab header".into()))?;
    let toks = header
        .strip_prefix("#vocab:")
        .ok_or_else(|| err(1, "first line must start with `#vocab:`".into()))?;
    let vocab = Vocab::new(toks.split_whitespace().map(str::to_string).collect()).map_err(|e| err(1, e.to_string()))?;

    let mut split = Split::Train;
    let mut pairs = Vec::new();
    for (lineno, line) in lines {
        if let Some(rest) = line.strip_prefix("#split:") {
            split = rest.trim().parse().map_err(|e: Error| err(lineno, e.to_string()))?;
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| err(lineno, "expected `source<TAB>target`".into()))?;
        let parse_seq = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| {
                    vocab
                        .index_of(t)
                        .ok_or_else(|| err(lineno, format!("unknown token {t:?}")))
                })
                .collect()
        };
        let source = parse_seq(src)?;
        let target = parse_seq(tgt)?;
        if source.is_empty() || target.is_empty() {
            return Err(err(lineno, "empty source or target".into()));
        }
        if source.contains(&PAD) || target.contains(&PAD) {
            return Err(err(lineno, "PAD inside a sequence".into()));
        }
        pairs.push(SequencePair { source, target });
    }
    Ok(Dataset { pairs, vocab, split })
}
