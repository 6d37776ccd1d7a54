//! Procedural ink for tests, demos and smoke runs.
//!
//! [`cursive_sample`] draws a chain of loops shaped like joined-up
//! lowercase letters; [`random_walk_sample`] draws jagged strokes with
//! independent steps. They stand in for real and obviously fake handwriting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{ASCII_DIR, LINE_STROKES_DIR};
use crate::stroke::HandwritingSample;
use crate::Result;

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// A smooth looping stroke with `letters` loops, possibly broken into a few
/// pen lifts, sampled every ~`spacing` units.
pub fn cursive_sample<R: Rng + ?Sized>(rng: &mut R, letters: usize, spacing: f64) -> HandwritingSample {
    let letters = letters.max(1);
    let radius = rng.random_range(8.0..14.0);
    let advance = rng.random_range(0.9..1.4) * radius;
    let slant = rng.random_range(-0.3..0.3);
    let tall = rng.random_range(1.2..2.0);
    let mut strokes: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    let t_end = letters as f64 * std::f64::consts::TAU;
    let mut t = 0.0;
    let mut break_at: Vec<usize> = (1..letters).filter(|_| rng.random_bool(0.25)).collect();
    break_at.reverse();
    while t <= t_end {
        let loop_index = (t / std::f64::consts::TAU) as usize;
        if break_at.last() == Some(&loop_index) {
            break_at.pop();
            strokes.push(Vec::new());
        }
        let y = -radius * tall * (0.5 - 0.5 * t.cos());
        let x = advance * t / std::f64::consts::TAU * 1.6 - radius * 0.6 * t.sin() - slant * y;
        strokes.last_mut().unwrap().push((x, y));
        // Step in parameter space so arc spacing stays near `spacing`.
        let dx = advance * 1.6 / std::f64::consts::TAU - radius * 0.6 * t.cos();
        let dy = -radius * tall * 0.5 * t.sin();
        let speed = (dx - slant * dy).hypot(dy).max(1e-3);
        t += spacing * rng.random_range(0.8..1.2) / speed;
    }
    strokes.retain(|s| !s.is_empty());
    HandwritingSample::from_coords(strokes).expect("non-empty strokes")
}

/// Jagged strokes with Gaussian steps of scale `spacing`, `points` in total.
pub fn random_walk_sample<R: Rng + ?Sized>(rng: &mut R, points: usize, spacing: f64) -> HandwritingSample {
    let points = points.max(2);
    let n_strokes = rng.random_range(1..=3usize).min(points / 2);
    let mut strokes = vec![Vec::new(); n_strokes];
    let (mut x, mut y) = (0.0f64, 0.0f64);
    for i in 0..points {
        let k = i * n_strokes / points;
        let sx: f64 = rng.sample(StandardNormal);
        let sy: f64 = rng.sample(StandardNormal);
        x += spacing * (sx + 0.3);
        y += spacing * sy;
        strokes[k].push((x, y));
    }
    HandwritingSample::from_coords(strokes).expect("non-empty strokes")
}

/// A lowercase word of the given length.
pub fn random_word<R: Rng + ?Sized>(rng: &mut R, len: usize) -> String {
    (0..len)
        .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
        .collect()
}

/// `n` cursive samples of `1..=max_letters` loops, each labelled with a
/// random word of matching length.
pub fn cursive_corpus<R: Rng + ?Sized>(rng: &mut R, n: usize, max_letters: usize) -> Vec<HandwritingSample> {
    (0..n)
        .map(|_| {
            let letters = rng.random_range(1..=max_letters.max(1));
            let word = random_word(rng, letters);
            cursive_sample(rng, letters, 3.0).with_text(word)
        })
        .collect()
}

/// Writes samples as an IAM-OnDB style tree: `lineStrokes-all/<form>-NN.xml`
/// plus one `ascii-all/<form>.txt` transcription per form of `per_form` lines.
pub fn write_iam_layout(root: &Path, samples: &[HandwritingSample], per_form: usize) -> Result<()> {
    let per_form = per_form.max(1);
    for (f, chunk) in samples.chunks(per_form).enumerate() {
        let form = format!("a01-{f:03}");
        let sdir = root.join(LINE_STROKES_DIR).join("a01").join(&form);
        let adir = root.join(ASCII_DIR).join("a01");
        fs::create_dir_all(&sdir)?;
        fs::create_dir_all(&adir)?;
        let mut ascii = String::from("OCR:\n\n");
        for s in chunk {
            ascii.push_str(s.text().unwrap_or(""));
            ascii.push('\n');
        }
        ascii.push_str("\nCSR:\n\n");
        for (i, s) in chunk.iter().enumerate() {
            ascii.push_str(s.text().unwrap_or(""));
            ascii.push('\n');
            fs::write(sdir.join(format!("{form}-{:02}.xml", i + 1)), iam_xml(s))?;
        }
        fs::write(adir.join(format!("{form}.txt")), ascii)?;
    }
    Ok(())
}

fn iam_xml(sample: &HandwritingSample) -> String {
    let mut x = String::from(
        "<?xml version=\"1.0\" encoding=\"ISO-8859-1\"?>\n<WhiteboardCaptureSession>\n  <StrokeSet>\n",
    );
    for stroke in sample.strokes() {
        x.push_str("    <Stroke colour=\"black\">\n");
        for p in stroke.points() {
            writeln!(x, "      <Point x=\"{}\" y=\"{}\"/>", p.x.round(), p.y.round()).unwrap();
        }
        x.push_str("    </Stroke>\n");
    }
    x.push_str("  </StrokeSet>\n</WhiteboardCaptureSession>\n");
    x
}
