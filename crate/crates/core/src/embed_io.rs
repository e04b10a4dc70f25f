//! Text embedding files (word2vec layout), dictionary files and vocabularies.
//!
//! Embedding file: a header `n d`, then `n` lines of `word x_1 … x_d`. Any
//! whitespace separates fields on read; single spaces are written.
//! Dictionary file: one `source_word target_word` pair per line.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use crate::error::{ensure_contract, Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Ordered, duplicate-free word list with reverse lookup.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::new();
        for w in words {
            let w = w.into();
            ensure_contract!(!w.is_empty(), "empty word at position {}", vocab.len());
            ensure_contract!(!vocab.contains(&w), "duplicate word {w:?}");
            vocab.push_unchecked(w);
        }
        Ok(vocab)
    }

    fn push_unchecked(&mut self, word: String) {
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Ordered list of `(source index, target index)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BilingualDictionary {
    pairs: Vec<(usize, usize)>,
}

impl BilingualDictionary {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        BilingualDictionary { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn check_bounds(&self, n_src: usize, n_trg: usize) -> Result<()> {
        for (k, &(s, t)) in self.pairs.iter().enumerate() {
            ensure_contract!(
                s < n_src && t < n_trg,
                "dictionary pair {k} = ({s}, {t}) out of range for {n_src} source / {n_trg} target words"
            );
        }
        Ok(())
    }
}

impl FromIterator<(usize, usize)> for BilingualDictionary {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        BilingualDictionary::new(iter.into_iter().collect())
    }
}

/// Evaluation dictionary: source index → acceptable target indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldDictionary {
    pub entries: BTreeMap<usize, BTreeSet<usize>>,
    /// Distinct gold source words missing from the source vocabulary.
    pub oov_sources: usize,
    /// Distinct in-vocabulary source words whose every target was missing
    /// from the target vocabulary; excluded from evaluation.
    pub unmapped_sources: usize,
}

impl GoldDictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, max_vocab: Option<usize>) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), path, max_vocab)
}

/// Reads the text embedding format from any buffered reader; `origin` only
/// labels error messages.
pub fn read_embeddings<R: BufRead>(
    mut reader: R,
    origin: impl AsRef<Path>,
    max_vocab: Option<usize>,
) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let origin = origin.as_ref();
    if let Some(m) = max_vocab {
        ensure_contract!(m > 0, "max_vocab must be positive");
    }
    let mut buf = Vec::new();
    let mut line_no = 0usize;

    let header = next_line(&mut reader, &mut buf, &mut line_no, origin)?
        .ok_or_else(|| Error::format(origin, 1, "empty file, expected header \"n d\""))?;
    let mut fields = header.split_whitespace();
    let (n, d) = match (fields.next(), fields.next(), fields.next()) {
        (Some(n), Some(d), None) => match (n.parse::<usize>(), d.parse::<usize>()) {
            (Ok(n), Ok(d)) => (n, d),
            _ => return Err(Error::format(origin, 1, format!("malformed header {header:?}, expected \"n d\""))),
        },
        _ => return Err(Error::format(origin, 1, format!("malformed header {header:?}, expected \"n d\""))),
    };

    let limit = max_vocab.map_or(n, |m| m.min(n));
    let mut vocab = Vocabulary::new();
    let mut data = Vec::with_capacity(limit.saturating_mul(d).min(1 << 28));
    let mut consumed = 0usize;
    let mut duplicates = 0usize;
    while consumed < n && vocab.len() < limit {
        let line = next_line(&mut reader, &mut buf, &mut line_no, origin)?.ok_or_else(|| {
            Error::format(origin, line_no + 1, format!("expected {n} vectors, file ends after {consumed}"))
        })?;
        if line.trim().is_empty() {
            continue;
        }
        consumed += 1;
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-blank line has a token");
        let start = data.len();
        for tok in fields {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::format(origin, line_no, format!("unparseable number {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(origin, line_no, format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        let got = data.len() - start;
        if got != d {
            return Err(Error::format(origin, line_no, format!("expected {d} values for {word:?}, found {got}")));
        }
        if vocab.contains(word) {
            warn!("{}:{line_no}: duplicate word {word:?}, keeping first occurrence", origin.display());
            data.truncate(start);
            duplicates += 1;
            continue;
        }
        vocab.push_unchecked(word.to_string());
    }
    if duplicates > 0 {
        warn!("{}: skipped {duplicates} duplicate word(s)", origin.display());
    }
    let rows = vocab.len();
    Ok((vocab, EmbeddingMatrix::from_raw(rows, d, data)))
}

fn next_line<R: BufRead>(
    reader: &mut R,
    buf: &mut Vec<u8>,
    line_no: &mut usize,
    origin: &Path,
) -> Result<Option<String>> {
    buf.clear();
    let read = reader.read_until(b'\n', buf).map_err(|e| Error::io(origin, e))?;
    if read == 0 {
        return Ok(None);
    }
    *line_no += 1;
    match std::str::from_utf8(buf) {
        Ok(s) => Ok(Some(s.trim_end_matches(['\n', '\r']).to_string())),
        Err(_) => Err(Error::format(
            origin,
            *line_no,
            "invalid UTF-8; binary embedding files are not supported, convert to the text format",
        )),
    }
}

pub fn save_embeddings(vocab: &Vocabulary, emb: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_contract!(
        vocab.len() == emb.rows(),
        "vocabulary has {} words but matrix has {} rows",
        vocab.len(),
        emb.rows()
    );
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_embeddings(vocab, emb, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings<W: Write>(vocab: &Vocabulary, emb: &EmbeddingMatrix, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{} {}", emb.rows(), emb.dim())?;
    let mut line = String::new();
    for (word, row) in vocab.words().iter().zip(emb.iter_rows()) {
        line.clear();
        line.push_str(word);
        for &v in row {
            line.push(' ');
            line.push_str(&format_value(v));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Nine significant digits, positional notation for ordinary magnitudes.
pub(crate) fn format_value(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if mag == 0.0 || (1e-5..1e16).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

fn read_pair_lines(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    let mut out = Vec::new();
    while let Some(line) = next_line(&mut reader, &mut buf, &mut line_no, path)? {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [s, t] => out.push((line_no, s.to_string(), t.to_string())),
            _ => {
                return Err(Error::format(
                    path,
                    line_no,
                    format!("expected \"source target\", found {} tokens", tokens.len()),
                ))
            }
        }
    }
    Ok(out)
}

pub fn load_gold_dictionary(path: impl AsRef<Path>, src: &Vocabulary, trg: &Vocabulary) -> Result<GoldDictionary> {
    let path = path.as_ref();
    let mut entries: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut oov: HashSet<String> = HashSet::new();
    let mut seen_sources: BTreeSet<usize> = BTreeSet::new();
    for (_, s, t) in read_pair_lines(path)? {
        let Some(si) = src.get(&s) else {
            oov.insert(s);
            continue;
        };
        seen_sources.insert(si);
        if let Some(ti) = trg.get(&t) {
            entries.entry(si).or_default().insert(ti);
        }
    }
    let unmapped: Vec<usize> = seen_sources.iter().copied().filter(|s| !entries.contains_key(s)).collect();
    if !unmapped.is_empty() {
        warn!(
            "{}: excluded {} source word(s) whose translations are all out of vocabulary (e.g. {:?})",
            path.display(),
            unmapped.len(),
            src.word(unmapped[0])
        );
    }
    Ok(GoldDictionary {
        entries,
        oov_sources: oov.len(),
        unmapped_sources: unmapped.len(),
    })
}

/// Loads an ordered pair list, dropping (with a warning) pairs that mention
/// out-of-vocabulary words.
pub fn load_dictionary(path: impl AsRef<Path>, src: &Vocabulary, trg: &Vocabulary) -> Result<BilingualDictionary> {
    let path = path.as_ref();
    let mut pairs = Vec::new();
    let mut dropped = 0usize;
    for (_, s, t) in read_pair_lines(path)? {
        match (src.get(&s), trg.get(&t)) {
            (Some(si), Some(ti)) => pairs.push((si, ti)),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} pair(s) with out-of-vocabulary words", path.display());
    }
    Ok(BilingualDictionary::new(pairs))
}

pub fn save_dictionary(
    dict: &BilingualDictionary,
    src: &Vocabulary,
    trg: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    dict.check_bounds(src.len(), trg.len())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for &(s, t) in dict.pairs() {
        writeln!(out, "{} {}", src.word(s), trg.word(t)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
