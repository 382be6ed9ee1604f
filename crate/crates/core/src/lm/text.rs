use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::Result;
use crate::model::{LabelSequence, Vocabulary};

/// Reads one whitespace-separated label sequence per line. Empty lines are empty sequences.
pub fn read_corpus(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<LabelSequence>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        out.push(vocab.parse_sequence(&line?)?);
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, vocab: &Vocabulary, corpus: &[LabelSequence]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for seq in corpus {
        writeln!(f, "{}", vocab.format_sequence(seq)?)?;
    }
    f.flush()?;
    Ok(())
}
