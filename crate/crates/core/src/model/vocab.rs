use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// A label of the output vocabulary. Blank is not a `Label`; see [`Symbol`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(u32);

impl Label {
    pub const fn new(id: u32) -> Self {
        Label(id)
    }

    #[inline]
    pub fn id(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Position of this label in a joint-network output vector (index 0 is blank).
    #[inline]
    pub fn output_index(self) -> usize {
        self.0 as usize + 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type LabelSequence = Vec<Label>;

/// Output-distribution index of blank.
pub const BLANK: usize = 0;

/// One frame of an alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Blank,
    Label(Label),
}

impl Symbol {
    pub fn output_index(self) -> usize {
        match self {
            Symbol::Blank => BLANK,
            Symbol::Label(l) => l.output_index(),
        }
    }
}

/// Drops blanks. The strictly monotonic topology never merges repeated labels.
pub fn collapse(alignment: &[Symbol]) -> LabelSequence {
    alignment
        .iter()
        .filter_map(|s| match s {
            Symbol::Blank => None,
            Symbol::Label(l) => Some(*l),
        })
        .collect()
}

/// A blank-augmented alignment together with its position sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentSequence {
    steps: Vec<Symbol>,
    positions: Vec<usize>,
}

impl AlignmentSequence {
    pub fn new(steps: Vec<Symbol>) -> Self {
        let mut s = 0;
        let positions = steps
            .iter()
            .map(|y| {
                if matches!(y, Symbol::Label(_)) {
                    s += 1;
                }
                s
            })
            .collect();
        Self { steps, positions }
    }

    pub fn steps(&self) -> &[Symbol] {
        &self.steps
    }

    /// `s_t`: number of labels emitted in frames `1..=t`.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn labels(&self) -> LabelSequence {
        collapse(&self.steps)
    }
}

/// The label set 𝒱 plus the blank symbol name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    blank: String,
    lookup: BTreeMap<String, Label>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>, blank: impl Into<String>) -> Result<Self> {
        let blank = blank.into();
        if names.is_empty() {
            return Err(Error::Vocabulary("vocabulary must contain at least one label".into()));
        }
        let mut lookup = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::Vocabulary(format!("invalid label name {n:?}")));
            }
            if *n == blank {
                return Err(Error::Vocabulary(format!("label {n:?} collides with blank")));
            }
            if lookup.insert(n.clone(), Label(i as u32)).is_some() {
                return Err(Error::Vocabulary(format!("duplicate label {n:?}")));
            }
        }
        Ok(Self { names, blank, lookup })
    }

    /// `a, b, c, …` for small sizes, `l0, l1, …` beyond 26.
    pub fn with_size(size: usize) -> Result<Self> {
        let names = (0..size)
            .map(|i| if size <= 26 { ((b'a' + i as u8) as char).to_string() } else { format!("l{i}") })
            .collect();
        Self::new(names, "<b>")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Size of the joint output, |𝒱| + 1.
    pub fn output_dim(&self) -> usize {
        self.names.len() + 1
    }

    pub fn blank_name(&self) -> &str {
        &self.blank
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        (0..self.names.len() as u32).map(Label)
    }

    pub fn name(&self, label: Label) -> Result<&str> {
        self.names
            .get(label.index())
            .map(String::as_str)
            .ok_or_else(|| Error::Vocabulary(format!("label id {} out of range", label.id())))
    }

    pub fn label(&self, name: &str) -> Result<Label> {
        self.lookup.get(name).copied().ok_or_else(|| Error::Vocabulary(format!("unknown label {name:?}")))
    }

    pub fn contains(&self, label: Label) -> bool {
        label.index() < self.names.len()
    }

    pub fn check(&self, labels: &[Label]) -> Result<()> {
        match labels.iter().find(|l| !self.contains(**l)) {
            Some(l) => Err(Error::Vocabulary(format!("label id {} outside vocabulary of size {}", l.id(), self.len()))),
            None => Ok(()),
        }
    }

    pub fn parse_sequence(&self, line: &str) -> Result<LabelSequence> {
        line.split_whitespace().map(|t| self.label(t)).collect()
    }

    pub fn format_sequence(&self, labels: &[Label]) -> Result<String> {
        let names = labels.iter().map(|l| self.name(*l)).collect::<Result<Vec<_>>>()?;
        Ok(names.join(" "))
    }
}

/// Every label sequence of length `0..=max_len`, shortest first, lexicographic within a length.
pub fn all_sequences(vocab_size: usize, max_len: usize) -> Vec<LabelSequence> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * vocab_size);
        for prefix in &frontier {
            for l in 0..vocab_size as u32 {
                let mut s = prefix.clone();
                s.push(Label(l));
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Number of sequences `all_sequences` would return, saturating.
pub fn count_sequences(vocab_size: usize, max_len: usize) -> u128 {
    let mut total: u128 = 0;
    let mut layer: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(vocab_size as u128);
    }
    total
}

/// Orders label sequences shorter first, then lexicographically.
pub fn length_then_lex(a: &[Label], b: &[Label]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(i: u32) -> Label {
        Label::new(i)
    }

    #[test]
    fn collapse_examples() {
        let a = Symbol::Label(l(0));
        let b = Symbol::Label(l(1));
        assert_eq!(collapse(&[Symbol::Blank, a, Symbol::Blank, b]), vec![l(0), l(1)]);
        assert!(collapse(&[Symbol::Blank; 3]).is_empty());
        assert_eq!(collapse(&[a, a]), vec![l(0), l(0)]);
    }

    #[test]
    fn collapse_partition_count_matches_enumeration() {
        // All 3^4 alignments over {ε, a, b}.
        let mut classes = std::collections::BTreeMap::new();
        for code in 0..81u32 {
            let mut c = code;
            let steps: Vec<Symbol> = (0..4)
                .map(|_| {
                    let d = c % 3;
                    c /= 3;
                    if d == 0 {
                        Symbol::Blank
                    } else {
                        Symbol::Label(l(d - 1))
                    }
                })
                .collect();
            *classes.entry(collapse(&steps)).or_insert(0usize) += 1;
        }
        let binom = [1usize, 4, 6, 4, 1];
        let expected: usize = (0..=4).map(|s| binom[s] * (1 << s)).sum();
        // One class per distinct label sequence of length ≤ 4 over |𝒱| = 2.
        assert_eq!(classes.len(), 31);
        // Each class of length S holds exactly C(4, S) alignments.
        let total: usize = classes.values().sum();
        assert_eq!(total, 81);
        assert_eq!(expected, 81);
        for (seq, n) in &classes {
            assert_eq!(*n, binom[seq.len()]);
        }
    }

    #[test]
    fn alignment_positions() {
        let a = AlignmentSequence::new(vec![Symbol::Blank, Symbol::Label(l(1)), Symbol::Blank, Symbol::Label(l(0))]);
        assert_eq!(a.positions(), &[0, 1, 1, 2]);
        assert_eq!(a.labels(), vec![l(1), l(0)]);
    }

    #[test]
    fn vocabulary_validation() {
        assert!(Vocabulary::new(vec![], "<b>").is_err());
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], "<b>").is_err());
        assert!(Vocabulary::new(vec!["<b>".into()], "<b>").is_err());
        let v = Vocabulary::with_size(3).unwrap();
        assert_eq!(v.output_dim(), 4);
        assert_eq!(v.parse_sequence("a c b").unwrap(), vec![l(0), l(2), l(1)]);
        assert!(v.parse_sequence("a z").is_err());
        assert_eq!(v.format_sequence(&[l(2), l(0)]).unwrap(), "c a");
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(all_sequences(2, 4).len(), 31);
        assert_eq!(count_sequences(2, 4), 31);
        assert_eq!(count_sequences(3, 0), 1);
        let s = all_sequences(2, 2);
        assert_eq!(s[0], vec![]);
        assert_eq!(s[1], vec![l(0)]);
        assert_eq!(s[6], vec![l(1), l(1)]);
    }
}
