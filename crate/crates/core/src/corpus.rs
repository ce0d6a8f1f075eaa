//! Documents, visual-word quantisation and the text formats used to move
//! corpora, labels and scores between pipeline stages.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of quantised flow directions per grid cell.
pub const DIRECTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub cells_x: usize,
    pub cells_y: usize,
}

impl Grid {
    pub fn new(cells_x: usize, cells_y: usize) -> Result<Self> {
        if cells_x == 0 || cells_y == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must have at least one cell, got {cells_x}x{cells_y}"
            )));
        }
        Ok(Grid { cells_x, cells_y })
    }

    pub fn vocab_size(&self) -> usize {
        self.cells_x * self.cells_y * DIRECTIONS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    grid: Option<Grid>,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("vocabulary size must be >= 1".into()));
        }
        Ok(Vocabulary { size, grid: None })
    }

    pub fn from_grid(grid: Grid) -> Self {
        Vocabulary {
            size: grid.vocab_size(),
            grid: Some(grid),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn grid(&self) -> Option<Grid> {
        self.grid
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    pub tokens: Vec<usize>,
}

impl Document {
    pub fn new(tokens: Vec<usize>) -> Self {
        Document { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An ordered sequence of documents. Position in `documents` is the
/// document index; order matters for the dynamic model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    vocabulary: Vocabulary,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(vocabulary: Vocabulary, documents: Vec<Document>) -> Result<Self> {
        let v = vocabulary.size();
        for doc in &documents {
            if let Some(&id) = doc.tokens.iter().find(|&&w| w >= v) {
                return Err(Error::WordOutOfRange { id, vocab_size: v });
            }
        }
        Ok(Corpus { vocabulary, documents })
    }

    pub fn vocabulary(&self) -> Vocabulary {
        self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.size()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Direction {
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Direction::Up),
            1 => Some(Direction::Right),
            2 => Some(Direction::Down),
            3 => Some(Direction::Left),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::Up => "up",
            Direction::Right => "right",
            Direction::Down => "down",
            Direction::Left => "left",
        };
        f.write_str(s)
    }
}

/// Quantises a flow vector in image coordinates (y grows downward) into one
/// of four half-open 90° sectors centred on the axes.
pub fn quantize_direction(u: f64, v: f64) -> Result<Direction> {
    if u == 0.0 && v == 0.0 {
        return Err(Error::NoMotionDirection);
    }
    let theta = v.atan2(u).to_degrees();
    let dir = if (-45.0..45.0).contains(&theta) {
        Direction::Right
    } else if (45.0..135.0).contains(&theta) {
        Direction::Down
    } else if (-135.0..-45.0).contains(&theta) {
        Direction::Up
    } else {
        Direction::Left
    };
    Ok(dir)
}

/// Packs a (cell, direction) pair, cell-major and direction-minor.
pub fn word_id(cell_x: usize, cell_y: usize, direction: Direction, grid: Grid) -> Result<usize> {
    if cell_x >= grid.cells_x || cell_y >= grid.cells_y {
        return Err(Error::CellOutOfBounds {
            cell_x,
            cell_y,
            cells_x: grid.cells_x,
            cells_y: grid.cells_y,
        });
    }
    Ok((cell_y * grid.cells_x + cell_x) * DIRECTIONS + direction as usize)
}

/// Inverse of [`word_id`].
pub fn unpack_word_id(id: usize, grid: Grid) -> Result<(usize, usize, Direction)> {
    if id >= grid.vocab_size() {
        return Err(Error::WordOutOfRange {
            id,
            vocab_size: grid.vocab_size(),
        });
    }
    let cell = id / DIRECTIONS;
    let direction = Direction::from_index(id % DIRECTIONS).expect("remainder below 4");
    Ok((cell % grid.cells_x, cell / grid.cells_x, direction))
}

/// One grid-averaged optical-flow vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub frame: usize,
    pub cell_x: usize,
    pub cell_y: usize,
    pub u: f64,
    pub v: f64,
}

impl FlowRecord {
    pub fn magnitude(&self) -> f64 {
        self.u.hypot(self.v)
    }
}

pub const DEFAULT_MAGNITUDE_THRESHOLD: f64 = 0.5;

/// Turns flow records into a corpus of visual documents, one document per
/// clip of `frames_per_clip` frames. Records slower than `threshold`
/// emit nothing; clips without words become empty documents.
pub fn extract_words(records: &[FlowRecord], grid: Grid, frames_per_clip: usize, threshold: f64) -> Result<Corpus> {
    if frames_per_clip == 0 {
        return Err(Error::InvalidArgument("frames_per_clip must be >= 1".into()));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "magnitude threshold must be >= 0, got {threshold}"
        )));
    }
    let vocabulary = Vocabulary::from_grid(grid);
    if records.is_empty() {
        warn!("flow input is empty; corpus has no documents");
        return Corpus::new(vocabulary, Vec::new());
    }

    let monotone = records.windows(2).all(|w| w[0].frame <= w[1].frame);
    let mut ordered: Vec<&FlowRecord> = records.iter().collect();
    if !monotone {
        warn!("flow records are not ordered by frame; sorting");
        ordered.sort_by_key(|r| r.frame);
    }

    let n_docs = ordered.last().map_or(0, |r| r.frame / frames_per_clip + 1);
    let mut documents = vec![Document::default(); n_docs];
    for rec in ordered {
        // bounds are checked even for records that emit nothing
        let _ = word_id(rec.cell_x, rec.cell_y, Direction::Up, grid)?;
        if rec.magnitude() < threshold || (rec.u == 0.0 && rec.v == 0.0) {
            continue;
        }
        let dir = quantize_direction(rec.u, rec.v)?;
        let id = word_id(rec.cell_x, rec.cell_y, dir, grid)?;
        documents[rec.frame / frames_per_clip].tokens.push(id);
    }
    Corpus::new(vocabulary, documents)
}

pub fn read_flow(path: &Path) -> Result<Vec<FlowRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in reader.deserialize::<FlowRecord>() {
        out.push(rec.map_err(|e| csv_error(path, e))?);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

const VOCAB_HEADER: &str = "#vocab_size=";
const GRID_HEADER: &str = "#grid=";

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{VOCAB_HEADER}{}\n", corpus.vocab_size()));
    if let Some(g) = corpus.vocabulary.grid() {
        out.push_str(&format!("{GRID_HEADER}{}x{}\n", g.cells_x, g.cells_y));
    }
    for (j, doc) in corpus.documents.iter().enumerate() {
        out.push_str(&j.to_string());
        out.push('\t');
        let ids: Vec<String> = doc.tokens.iter().map(|w| w.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), path)
}

/// Parses the corpus text format; `path` is only used in error messages.
pub fn parse_corpus<R: BufRead>(reader: R, path: &Path) -> Result<Corpus> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing #vocab_size header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let v: usize = header
        .trim()
        .strip_prefix(VOCAB_HEADER)
        .ok_or_else(|| Error::parse(path, 1, "missing #vocab_size header"))?
        .parse()
        .map_err(|_| Error::parse(path, 1, "malformed #vocab_size header"))?;
    let mut vocabulary = Vocabulary::new(v).map_err(|e| Error::parse(path, 1, e.to_string()))?;

    let mut documents = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(g) = line.trim().strip_prefix(GRID_HEADER) {
            if !documents.is_empty() {
                return Err(Error::parse(path, lineno, "grid header after documents"));
            }
            let grid = parse_grid(g).ok_or_else(|| Error::parse(path, lineno, "malformed grid header"))?;
            if grid.vocab_size() != v {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!(
                        "grid {}x{} implies {} words, header says {v}",
                        grid.cells_x,
                        grid.cells_y,
                        grid.vocab_size()
                    ),
                ));
            }
            vocabulary = Vocabulary::from_grid(grid);
            continue;
        }
        let (id_part, tokens_part) = match line.split_once('\t') {
            Some((a, b)) => (a.trim(), b),
            None => (line.trim(), ""),
        };
        if !id_part.is_empty() {
            let doc_id: usize = id_part
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("malformed document id {id_part:?}")))?;
            if doc_id != documents.len() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!(
                        "document ids must be consecutive: expected {}, found {doc_id}",
                        documents.len()
                    ),
                ));
            }
        }
        let mut tokens = Vec::new();
        for tok in tokens_part.split_ascii_whitespace() {
            let w: usize = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("malformed word id {tok:?}")))?;
            if w >= v {
                return Err(Error::parse(
                    path,
                    lineno,
                    Error::WordOutOfRange { id: w, vocab_size: v }.to_string(),
                ));
            }
            tokens.push(w);
        }
        documents.push(Document::new(tokens));
    }
    Corpus::new(vocabulary, documents)
}

fn parse_grid(s: &str) -> Option<Grid> {
    let (x, y) = s.split_once('x')?;
    Grid::new(x.trim().parse().ok()?, y.trim().parse().ok()?).ok()
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    doc_id: usize,
    label: u8,
}

/// Labels are indexed by document; `true` marks an abnormal document.
pub fn write_labels(labels: &[bool], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (doc_id, &abnormal) in labels.iter().enumerate() {
        w.serialize(LabelRow {
            doc_id,
            label: u8::from(abnormal),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<(usize, bool)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let label = match row.label {
            0 => false,
            1 => true,
            other => {
                return Err(Error::parse(path, i + 2, format!("label must be 0 or 1, got {other}")));
            }
        };
        out.push((row.doc_id, label));
    }
    Ok(out)
}

/// One row of the scores file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub doc_id: usize,
    pub score: f64,
    pub n_tokens: usize,
}

pub fn write_scores(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("doc_id,score,n_tokens\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.doc_id, format_score(r.score), r.n_tokens));
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn format_score(s: f64) -> String {
    if s.is_nan() {
        "NaN".into()
    } else {
        // shortest round-trip representation
        format!("{s:?}")
    }
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ScoreRow>() {
        out.push(row.map_err(|e| csv_error(path, e))?);
    }
    Ok(out)
}
