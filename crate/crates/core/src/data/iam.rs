//! IAM-OnDB ingestion: `lineStrokes` XML documents and `ascii` transcriptions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::stroke::{HandwritingSample, Stroke};

pub const LINE_STROKES_DIR: &str = "lineStrokes-all";
pub const ASCII_DIR: &str = "ascii-all";

fn decode(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_owned(),
        // The corpus declares ISO-8859-1; every byte maps to the same code point.
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

fn element_path(node: roxmltree::Node) -> String {
    let mut parts: Vec<String> = node
        .ancestors()
        .filter(|n| n.is_element())
        .map(|n| {
            let name = n.tag_name().name();
            let same = |s: &roxmltree::Node| s.is_element() && s.tag_name().name() == name;
            // Both sibling iterators start at the node itself.
            let index = n.prev_siblings().skip(1).filter(same).count();
            let unique = index == 0 && !n.next_siblings().skip(1).any(|s| same(&s));
            if unique {
                name.to_owned()
            } else {
                format!("{name}[{}]", index + 1)
            }
        })
        .collect();
    parts.reverse();
    parts.join("/")
}

fn coord(node: roxmltree::Node, attr: &str) -> Result<f64> {
    let raw = node.attribute(attr).ok_or_else(|| Error::Xml {
        path: element_path(node),
        message: format!("missing attribute `{attr}`"),
    })?;
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Xml {
            path: element_path(node),
            message: format!("attribute `{attr}` is not a number: {raw:?}"),
        })
}

/// Parses one `lineStrokes` document.
///
/// Each `<Stroke>` becomes one stroke with its `<Point>`s in document order.
/// Coordinates are copied as stored (y grows downward on the whiteboard).
pub fn parse_iam_linestrokes(xml: &[u8]) -> Result<HandwritingSample> {
    let text = decode(xml);
    let doc = roxmltree::Document::parse(&text).map_err(|e| Error::Xml {
        path: "(document)".into(),
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "WhiteboardCaptureSession" {
        return Err(Error::Xml {
            path: element_path(root),
            message: "expected root element WhiteboardCaptureSession".into(),
        });
    }
    let stroke_set = root
        .children()
        .find(|n| n.has_tag_name("StrokeSet"))
        .ok_or_else(|| Error::Xml {
            path: element_path(root),
            message: "missing StrokeSet".into(),
        })?;

    let mut strokes = Vec::new();
    for stroke in stroke_set.children().filter(|n| n.has_tag_name("Stroke")) {
        let coords = stroke
            .children()
            .filter(|n| n.has_tag_name("Point"))
            .map(|p| Ok((coord(p, "x")?, coord(p, "y")?)))
            .collect::<Result<Vec<_>>>()?;
        if !coords.is_empty() {
            strokes.push(Stroke::from_coords(coords)?);
        }
    }
    if strokes.is_empty() {
        return Err(Error::EmptySample(format!(
            "{} contains no points",
            element_path(stroke_set)
        )));
    }
    HandwritingSample::new(strokes)
}

/// Extracts the `CSR:` section of an IAM ascii file, one entry per text line.
pub fn parse_ascii_transcription(text: &str) -> Vec<String> {
    let mut lines = text.lines().skip_while(|l| l.trim() != "CSR:").skip(1);
    // A blank separator follows the header.
    let mut out = Vec::new();
    let mut started = false;
    for line in lines.by_ref() {
        let line = line.trim_end();
        if line.is_empty() {
            if started {
                break;
            }
            continue;
        }
        started = true;
        out.push(line.to_owned());
    }
    out
}

/// Counts gathered while ingesting the corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub with_text: usize,
    pub points: usize,
    /// Characters seen in transcriptions that fall outside the vocabulary.
    pub unknown_chars: usize,
    pub char_counts: BTreeMap<String, usize>,
    /// Files that failed to parse, with the reason.
    pub skipped: Vec<String>,
}

/// Samples plus ingestion statistics.
#[derive(Clone, Debug)]
pub struct IamCorpus {
    pub samples: Vec<HandwritingSample>,
    pub stats: CorpusStats,
}

fn sorted_files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect()
}

/// Loads every line under `root/lineStrokes-all`, pairing each with its
/// transcription line from `root/ascii-all` when one exists.
///
/// Directory traversal is sorted, so the result is deterministic.
pub fn load_iam(root: &Path) -> Result<IamCorpus> {
    let strokes_dir = root.join(LINE_STROKES_DIR);
    let ascii_dir = root.join(ASCII_DIR);
    let missing: Vec<String> = [&strokes_dir, &ascii_dir]
        .iter()
        .filter(|p| !p.is_dir())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!(
            "IAM layout incomplete, missing: {}",
            missing.join(", ")
        )));
    }

    let mut transcripts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for path in sorted_files(&ascii_dir, "txt") {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        transcripts.insert(stem, parse_ascii_transcription(&decode(&fs::read(&path)?)));
    }

    let vocab = Vocabulary;
    let mut stats = CorpusStats::default();
    let mut samples = Vec::new();
    for path in sorted_files(&strokes_dir, "xml") {
        let mut sample = match parse_iam_linestrokes(&fs::read(&path)?) {
            Ok(s) => s,
            Err(e) => {
                stats.skipped.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let text = stem.rsplit_once('-').and_then(|(form, line)| {
            let line: usize = line.parse().ok()?;
            transcripts.get(form)?.get(line.checked_sub(1)?).cloned()
        });
        if let Some(t) = &text {
            stats.with_text += 1;
            for c in t.chars() {
                if vocab.contains(c) {
                    *stats.char_counts.entry(c.to_string()).or_default() += 1;
                } else {
                    stats.unknown_chars += 1;
                }
            }
        }
        sample.set_text(text);
        stats.samples += 1;
        stats.points += sample.num_points();
        samples.push(sample);
    }
    Ok(IamCorpus { samples, stats })
}
