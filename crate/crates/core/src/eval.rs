//! Rendering and the point-spacing uniformity metric.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::psf::line_pixels;
use crate::stroke::HandwritingSample;
use crate::{pngio, Error, Result};

fn margin(sample: &HandwritingSample) -> f64 {
    let b = sample.bbox();
    let m = 0.05 * b.width().max(b.height());
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// SVG document with one path per stroke: an absolute move to the first
/// point, then relative line segments. The view box is the bounding box
/// grown by 5% of its larger side on every edge.
pub fn render_svg(sample: &HandwritingSample, stroke_width: f64) -> Result<String> {
    if sample.num_points() == 0 {
        return Err(Error::EmptySample("nothing to render".into()));
    }
    if !(stroke_width > 0.0) {
        return Err(Error::InvalidInput(format!(
            "stroke width must be positive, got {stroke_width}"
        )));
    }
    let b = sample.bbox();
    let m = margin(sample);
    let (vx, vy) = (b.min_x - m, b.min_y - m);
    let (vw, vh) = (b.width() + 2.0 * m, b.height() + 2.0 * m);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vx:.3} {vy:.3} {vw:.3} {vh:.3}" width="{vw:.3}" height="{vh:.3}">"#
    )
    .unwrap();
    for stroke in sample.strokes() {
        let pts = stroke.points();
        let mut d = format!("M {:.3} {:.3}", pts[0].x, pts[0].y);
        if pts.len() == 1 {
            d.push_str(" l 0 0");
        }
        for w in pts.windows(2) {
            write!(d, " l {:.3} {:.3}", w[1].x - w[0].x, w[1].y - w[0].y).unwrap();
        }
        writeln!(
            out,
            r#"<path d="{d}" fill="none" stroke="black" stroke-width="{stroke_width:.3}" stroke-linecap="round" stroke-linejoin="round"/>"#
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grayscale bitmap: white background, black one-pixel ink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn ink_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 0).count()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        pngio::write_gray(path, self.width as u32, self.height as u32, &self.pixels)
    }
}

/// Rasterizes the strokes at the given image height with the same line
/// traversal the signature raster uses.
pub fn render_png(sample: &HandwritingSample, height: usize) -> Result<GrayImage> {
    if sample.num_points() == 0 {
        return Err(Error::EmptySample("nothing to render".into()));
    }
    if height < 8 {
        return Err(Error::InvalidInput(format!("image height {height} is too small")));
    }
    let b = sample.bbox();
    let pad = (height / 20).max(1);
    let inner = (height - 1 - 2 * pad) as f64;
    let s = if b.height() > 0.0 { inner / b.height() } else { 1.0 };
    let width = (b.width() * s).floor() as usize + 1 + 2 * pad;
    let mut pixels = vec![255u8; width * height];
    let to_px = |x: f64, y: f64| {
        let px = ((x - b.min_x) * s).floor() as i64 + pad as i64;
        let py = ((y - b.min_y) * s).floor() as i64 + pad as i64;
        (px.clamp(0, width as i64 - 1), py.clamp(0, height as i64 - 1))
    };
    for stroke in sample.strokes() {
        let pts = stroke.points();
        let (x0, y0) = to_px(pts[0].x, pts[0].y);
        pixels[y0 as usize * width + x0 as usize] = 0;
        for w in pts.windows(2) {
            let (ax, ay) = to_px(w[0].x, w[0].y);
            let (bx, by) = to_px(w[1].x, w[1].y);
            for (x, y) in line_pixels(ax, ay, bx, by) {
                pixels[y as usize * width + x as usize] = 0;
            }
        }
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

/// Coefficient of variation (population stddev over mean) of the distances
/// between consecutive points of the same stroke. Lower is more uniform.
pub fn uniformity_cv(sample: &HandwritingSample) -> Result<f64> {
    if sample.num_points() < 3 {
        return Err(Error::UndefinedMetric(format!(
            "uniformity needs at least 3 points, got {}",
            sample.num_points()
        )));
    }
    let d: Vec<f64> = sample
        .strokes()
        .iter()
        .flat_map(|s| {
            s.points()
                .windows(2)
                .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
                .collect::<Vec<_>>()
        })
        .collect();
    if d.is_empty() {
        return Err(Error::UndefinedMetric("no pen-down segments".into()));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(Error::UndefinedMetric("zero mean spacing".into()));
    }
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    /// `None` where the metric is undefined (fewer than 3 points, no spacing).
    pub uniformity_cv: Option<f64>,
    pub points: usize,
    pub strokes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleReport>,
    pub mean_cv: Option<f64>,
    pub std_cv: Option<f64>,
    pub mean_points: f64,
    pub mean_strokes: f64,
}

/// Per-sample metrics and their batch aggregates.
pub fn eval_report(samples: &[HandwritingSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to evaluate".into()));
    }
    let per: Vec<SampleReport> = samples
        .iter()
        .enumerate()
        .map(|(index, s)| SampleReport {
            index,
            uniformity_cv: uniformity_cv(s).ok(),
            points: s.num_points(),
            strokes: s.strokes().len(),
        })
        .collect();
    let cvs: Vec<f64> = per.iter().filter_map(|r| r.uniformity_cv).collect();
    let (mean_cv, std_cv) = if cvs.is_empty() {
        (None, None)
    } else {
        let n = cvs.len() as f64;
        let m = cvs.iter().sum::<f64>() / n;
        let v = cvs.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
        (Some(m), Some(v.sqrt()))
    };
    let n = samples.len() as f64;
    Ok(EvalReport {
        mean_points: per.iter().map(|r| r.points as f64).sum::<f64>() / n,
        mean_strokes: per.iter().map(|r| r.strokes as f64).sum::<f64>() / n,
        samples: per,
        mean_cv,
        std_cv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_strokes() -> HandwritingSample {
        HandwritingSample::from_coords(vec![
            vec![(0.0, 0.0), (4.0, 2.0), (8.0, 0.0)],
            vec![(10.0, 5.0), (12.0, 9.0)],
        ])
        .unwrap()
    }

    #[test]
    fn svg_has_one_path_per_stroke_and_parses() {
        let svg = render_svg(&two_strokes(), 1.5).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let paths = doc.descendants().filter(|n| n.has_tag_name("path")).count();
        assert_eq!(paths, 2);
        let root = doc.root_element();
        // Box 12 × 9, margin 0.6 on each edge.
        assert_eq!(root.attribute("viewBox"), Some("-0.600 -0.600 13.200 10.200"));
    }

    #[test]
    fn svg_translation_moves_only_the_frame() {
        let a = two_strokes();
        let b = a.translate(100.0, -50.0);
        let sa = render_svg(&a, 1.0).unwrap();
        let sb = render_svg(&b, 1.0).unwrap();
        assert_ne!(sa, sb);
        let rel = |s: &str| -> Vec<String> {
            s.lines()
                .filter(|l| l.starts_with("<path"))
                .map(|l| l.split(" l ").skip(1).collect::<Vec<_>>().join(" l "))
                .collect()
        };
        assert_eq!(rel(&sa), rel(&sb));
        assert!(sb.contains(r#"M 100.000 -50.000"#));
    }

    #[test]
    fn svg_is_stable() {
        assert_eq!(render_svg(&two_strokes(), 2.0).unwrap(), render_svg(&two_strokes(), 2.0).unwrap());
    }

    #[test]
    fn png_draws_ink() {
        let img = render_png(&two_strokes(), 64).unwrap();
        assert_eq!(img.height, 64);
        assert!(img.ink_pixels() > 10);
        assert_eq!(img.pixels.len(), img.width * img.height);
        let dir = tempfile::tempdir().unwrap();
        img.save_png(&dir.path().join("a.png")).unwrap();
    }

    #[test]
    fn cv_examples() {
        let even = HandwritingSample::from_coords(vec![vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]]).unwrap();
        assert_eq!(uniformity_cv(&even).unwrap(), 0.0);
        let uneven = HandwritingSample::from_coords(vec![vec![(0.0, 0.0), (1.0, 0.0), (4.0, 0.0)]]).unwrap();
        assert!((uniformity_cv(&uneven).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cv_undefined_cases() {
        let two = HandwritingSample::from_coords(vec![vec![(0.0, 0.0), (1.0, 0.0)]]).unwrap();
        assert!(matches!(uniformity_cv(&two), Err(Error::UndefinedMetric(_))));
        let still = HandwritingSample::from_coords(vec![vec![(1.0, 1.0); 3]]).unwrap();
        assert!(matches!(uniformity_cv(&still), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn cv_ignores_pen_up_jumps() {
        let s = HandwritingSample::from_coords(vec![
            vec![(0.0, 0.0), (1.0, 0.0)],
            vec![(50.0, 0.0), (51.0, 0.0)],
        ])
        .unwrap();
        assert_eq!(uniformity_cv(&s).unwrap(), 0.0);
    }

    #[test]
    fn report_cases() {
        assert!(eval_report(&[]).is_err());
        let s = two_strokes();
        let r = eval_report(std::slice::from_ref(&s)).unwrap();
        assert_eq!(r.mean_cv, Some(uniformity_cv(&s).unwrap()));
        assert_eq!(r.std_cv, Some(0.0));
        let r = eval_report(&[s.clone(), s.clone(), s]).unwrap();
        assert_eq!(r.samples.len(), 3);
        assert_eq!(r.mean_points, 5.0);
        assert_eq!(r.mean_strokes, 2.0);
    }

    proptest! {
        #[test]
        fn cv_rigid_and_scale_invariant(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30),
            theta in 0.0f64..6.3,
            c in 0.1f64..10.0,
            t in (-100.0f64..100.0, -100.0f64..100.0),
        ) {
            let s = HandwritingSample::from_coords(vec![pts]).unwrap();
            if let Ok(base) = uniformity_cv(&s) {
                let (sn, cs) = theta.sin_cos();
                let m = s.map_coords(|x, y| (c * (cs * x - sn * y) + t.0, c * (sn * x + cs * y) + t.1));
                let moved = uniformity_cv(&m).unwrap();
                prop_assert!((moved - base).abs() < 1e-9 * base.max(1.0));
                prop_assert!(base >= 0.0);
            }
        }
    }
}
