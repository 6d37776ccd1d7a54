//! Digital-ink data model.
//!
//! A [`HandwritingSample`] is an ordered list of [`Stroke`]s, each an ordered
//! list of [`StrokePoint`]s in absolute coordinates (y grows downward). The
//! pen flag of a point is `true` exactly when the pen lifts after it, i.e. on
//! the last point of every stroke. Models consume the relative
//! [`OffsetPoint`] form produced by [`HandwritingSample::to_offsets`].

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrokePoint {
    pub x: f64,
    pub y: f64,
    /// Pen lifts after this point.
    pub pen: bool,
}

impl StrokePoint {
    pub fn new(x: f64, y: f64, pen: bool) -> Self {
        Self { x, y, pen }
    }
}

/// Relative point: displacement from the previous point plus end-of-stroke.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetPoint {
    pub dx: f64,
    pub dy: f64,
    pub eos: bool,
}

impl OffsetPoint {
    pub fn new(dx: f64, dy: f64, eos: bool) -> Self {
        Self { dx, dy, eos }
    }

    /// The `(0, 0, 1)` token every generator is primed with.
    pub const START: OffsetPoint = OffsetPoint {
        dx: 0.0,
        dy: 0.0,
        eos: true,
    };

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, if self.eos { 1.0 } else { 0.0 }]
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// A pen-down trace. Never empty; only the last point carries `pen = true`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stroke {
    points: Vec<StrokePoint>,
}

impl Stroke {
    /// Builds a stroke from coordinates, assigning pen flags.
    pub fn from_coords<I>(coords: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut points: Vec<StrokePoint> = coords
            .into_iter()
            .map(|(x, y)| StrokePoint::new(x, y, false))
            .collect();
        match points.last_mut() {
            Some(last) => last.pen = true,
            None => return Err(Error::InvalidInput("stroke has no points".into())),
        }
        Ok(Self { points })
    }

    /// Builds a stroke from explicit points, checking the pen-flag invariant.
    pub fn from_points(points: Vec<StrokePoint>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidInput("stroke has no points".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.pen != (i + 1 == n) {
                return Err(Error::InvalidInput(format!(
                    "pen flag of point {i} must be {} (only the last point lifts)",
                    i + 1 == n
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[StrokePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Polyline length.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }

    fn map(&self, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Stroke {
        Stroke {
            points: self
                .points
                .iter()
                .map(|p| {
                    let (x, y) = f(p.x, p.y);
                    StrokePoint::new(x, y, p.pen)
                })
                .collect(),
        }
    }

    /// Resamples the polyline at arc-length multiples of `step`.
    ///
    /// Both original endpoints are kept. A final sample that lands on the end
    /// point within floating tolerance is not duplicated.
    pub fn resample_uniform(&self, step: f64) -> Result<Stroke> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidInput(format!(
                "resampling step must be positive, got {step}"
            )));
        }
        if self.points.len() == 1 {
            return Ok(self.clone());
        }
        let total = self.arc_length();
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        let mut out = vec![(first.x, first.y)];

        // Walk the segments once, emitting every target arc length k*step that
        // falls strictly inside (0, total).
        let tol = 1e-9 * total.max(step);
        let mut k = 1usize;
        let mut walked = 0.0;
        for w in self.points.windows(2) {
            let (ax, ay, bx, by) = (w[0].x, w[0].y, w[1].x, w[1].y);
            let seg = (bx - ax).hypot(by - ay);
            if seg > 0.0 {
                loop {
                    let target = k as f64 * step;
                    if target >= total - tol || target > walked + seg {
                        break;
                    }
                    let t = (target - walked) / seg;
                    out.push((ax + t * (bx - ax), ay + t * (by - ay)));
                    k += 1;
                }
            }
            walked += seg;
        }
        out.push((last.x, last.y));
        Stroke::from_coords(out)
    }
}

/// One handwritten instance: strokes in writing order, optional transcription.
#[derive(Clone, Debug, PartialEq)]
pub struct HandwritingSample {
    strokes: Vec<Stroke>,
    text: Option<String>,
}

impl HandwritingSample {
    pub fn new(strokes: Vec<Stroke>) -> Result<Self> {
        if strokes.is_empty() {
            return Err(Error::InvalidInput("sample has no strokes".into()));
        }
        Ok(Self {
            strokes,
            text: None,
        })
    }

    /// Convenience constructor from nested coordinate lists.
    pub fn from_coords(strokes: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let strokes = strokes
            .into_iter()
            .map(Stroke::from_coords)
            .collect::<Result<Vec<_>>>()?;
        Self::new(strokes)
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    pub fn text(&self) -> Option<&str> {
        self.text.as_deref()
    }

    pub fn set_text(&mut self, text: Option<String>) {
        self.text = text;
    }

    /// All points in temporal order.
    pub fn points(&self) -> impl Iterator<Item = &StrokePoint> + '_ {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    pub fn num_points(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in self.points() {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        b
    }

    /// Applies `f` to every coordinate, keeping stroke structure and pen flags.
    pub fn map_coords(&self, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        Self {
            strokes: self.strokes.iter().map(|s| s.map(&mut f)).collect(),
            text: self.text.clone(),
        }
    }

    pub fn translate(&self, tx: f64, ty: f64) -> Self {
        self.map_coords(|x, y| (x + tx, y + ty))
    }

    /// Relative encoding. Element 0 is `(0, 0, pen_0)`.
    pub fn to_offsets(&self) -> Vec<OffsetPoint> {
        let mut out = Vec::with_capacity(self.num_points());
        let mut prev: Option<&StrokePoint> = None;
        for p in self.points() {
            let (dx, dy) = match prev {
                Some(q) => (p.x - q.x, p.y - q.y),
                None => (0.0, 0.0),
            };
            out.push(OffsetPoint::new(dx, dy, p.pen));
            prev = Some(p);
        }
        out
    }

    /// Inverse of [`to_offsets`](Self::to_offsets): cumulative sums from
    /// `origin`, starting a new stroke after every `eos`. A trailing stroke
    /// without a closing `eos` is closed at its last point.
    pub fn from_offsets(offsets: &[OffsetPoint], origin: (f64, f64)) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidInput("offset sequence is empty".into()));
        }
        let (mut x, mut y) = origin;
        let mut strokes = Vec::new();
        let mut current = Vec::new();
        for o in offsets {
            x += o.dx;
            y += o.dy;
            current.push((x, y));
            if o.eos {
                strokes.push(Stroke::from_coords(std::mem::take(&mut current))?);
            }
        }
        if !current.is_empty() {
            strokes.push(Stroke::from_coords(current)?);
        }
        Self::new(strokes)
    }

    /// Uniformly scales so the bounding-box height equals `target_height`,
    /// then moves the minimum corner to the origin.
    pub fn scale_to_height(&self, target_height: f64) -> Result<Self> {
        let b = self.bbox();
        let h = b.height();
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::DegenerateGeometry(format!(
                "cannot scale a sample with bounding-box height {h}"
            )));
        }
        let s = target_height / h;
        Ok(self.map_coords(|x, y| ((x - b.min_x) * s, (y - b.min_y) * s)))
    }

    /// [`Stroke::resample_uniform`] on every stroke.
    pub fn resample_uniform(&self, step: f64) -> Result<Self> {
        Ok(Self {
            strokes: self
                .strokes
                .iter()
                .map(|s| s.resample_uniform(step))
                .collect::<Result<Vec<_>>>()?,
            text: self.text.clone(),
        })
    }
}

/// One line of the interchange format.
#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    strokes: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

impl From<&HandwritingSample> for SampleRecord {
    fn from(s: &HandwritingSample) -> Self {
        SampleRecord {
            strokes: s
                .strokes
                .iter()
                .map(|st| st.points.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
            text: s.text.clone(),
        }
    }
}

impl HandwritingSample {
    /// Serializes as one interchange-format JSON object (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&SampleRecord::from(self)).expect("sample serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: SampleRecord = serde_json::from_str(line)?;
        let coords = rec
            .strokes
            .into_iter()
            .map(|s| s.into_iter().map(|[x, y]| (x, y)).collect())
            .collect();
        let mut sample = Self::from_coords(coords)?;
        sample.text = rec.text;
        Ok(sample)
    }
}

/// Writes samples in the line-delimited interchange format.
pub fn write_jsonl<W: Write>(mut w: W, samples: &[HandwritingSample]) -> Result<()> {
    for s in samples {
        writeln!(w, "{}", s.to_json_line())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the line-delimited interchange format. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<HandwritingSample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = HandwritingSample::from_json_line(&line)
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(strokes: Vec<Vec<(f64, f64)>>) -> HandwritingSample {
        HandwritingSample::from_coords(strokes).unwrap()
    }

    #[test]
    fn offsets_by_hand() {
        let s = sample(vec![vec![(0.0, 0.0), (3.0, 4.0), (3.0, 9.0)]]);
        let o = s.to_offsets();
        assert_eq!(
            o,
            vec![
                OffsetPoint::new(0.0, 0.0, false),
                OffsetPoint::new(3.0, 4.0, false),
                OffsetPoint::new(0.0, 5.0, true),
            ]
        );
    }

    #[test]
    fn single_point_offset() {
        let s = sample(vec![vec![(5.0, 5.0)]]);
        assert_eq!(s.to_offsets(), vec![OffsetPoint::new(0.0, 0.0, true)]);
    }

    #[test]
    fn repeated_points_have_zero_offsets() {
        let s = sample(vec![vec![(2.0, 2.0); 4]]);
        assert!(s.to_offsets().iter().all(|o| o.dx == 0.0 && o.dy == 0.0));
    }

    #[test]
    fn from_offsets_by_hand() {
        let o = [
            OffsetPoint::new(0.0, 0.0, false),
            OffsetPoint::new(3.0, 4.0, true),
        ];
        let s = HandwritingSample::from_offsets(&o, (0.0, 0.0)).unwrap();
        assert_eq!(s.strokes().len(), 1);
        let pts: Vec<_> = s.points().copied().collect();
        assert_eq!(
            pts,
            vec![
                StrokePoint::new(0.0, 0.0, false),
                StrokePoint::new(3.0, 4.0, true)
            ]
        );
    }

    #[test]
    fn from_offsets_empty_is_error() {
        assert!(matches!(
            HandwritingSample::from_offsets(&[], (0.0, 0.0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn from_offsets_closes_trailing_stroke() {
        let o = [
            OffsetPoint::new(1.0, 0.0, true),
            OffsetPoint::new(1.0, 0.0, false),
            OffsetPoint::new(1.0, 0.0, false),
        ];
        let s = HandwritingSample::from_offsets(&o, (0.0, 0.0)).unwrap();
        assert_eq!(s.strokes().len(), 2);
        assert!(s.strokes()[1].points()[1].pen);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(HandwritingSample::new(vec![]).is_err());
        assert!(Stroke::from_coords(Vec::<(f64, f64)>::new()).is_err());
    }

    #[test]
    fn stroke_pen_invariant_checked() {
        let bad = vec![StrokePoint::new(0.0, 0.0, true), StrokePoint::new(1.0, 0.0, true)];
        assert!(Stroke::from_points(bad).is_err());
    }

    #[test]
    fn scale_halves_large_box() {
        let s = sample(vec![vec![(10.0, 20.0), (522.0, 276.0)]]);
        let t = s.scale_to_height(128.0).unwrap();
        let b = t.bbox();
        assert_eq!((b.min_x, b.min_y), (0.0, 0.0));
        assert_eq!(b.height(), 128.0);
        assert_eq!(b.width(), 256.0);
    }

    #[test]
    fn scale_identity_at_target_height() {
        let s = sample(vec![vec![(3.0, 1.0), (7.0, 129.0), (50.0, 60.0)]]);
        let t = s.scale_to_height(128.0).unwrap();
        assert_eq!(t, s.translate(-3.0, -1.0));
    }

    #[test]
    fn scale_zero_height_is_error() {
        let s = sample(vec![vec![(0.0, 5.0), (10.0, 5.0)]]);
        assert!(matches!(
            s.scale_to_height(128.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn resample_straight_segment() {
        let st = Stroke::from_coords(vec![(0.0, 0.0), (10.0, 0.0)]).unwrap();
        let r = st.resample_uniform(2.0).unwrap();
        let xs: Vec<f64> = r.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert!(r.points().last().unwrap().pen);
        assert!(r.points()[..5].iter().all(|p| !p.pen));
    }

    #[test]
    fn resample_short_stroke_keeps_endpoints() {
        let st = Stroke::from_coords(vec![(0.0, 0.0), (0.5, 0.5), (1.0, 0.0)]).unwrap();
        let r = st.resample_uniform(5.0).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.points()[1].x, 1.0);
    }

    #[test]
    fn resample_single_point_unchanged() {
        let st = Stroke::from_coords(vec![(4.0, 4.0)]).unwrap();
        assert_eq!(st.resample_uniform(2.0).unwrap(), st);
    }

    #[test]
    fn resample_rejects_nonpositive_step() {
        let st = Stroke::from_coords(vec![(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert!(st.resample_uniform(0.0).is_err());
        assert!(st.resample_uniform(-1.0).is_err());
        assert!(st.resample_uniform(f64::NAN).is_err());
    }

    #[test]
    fn resample_corner_crossing() {
        // L-shape of total length 6; samples at 2 and 4 straddle the corner.
        let st = Stroke::from_coords(vec![(0.0, 0.0), (3.0, 0.0), (3.0, 3.0)]).unwrap();
        let r = st.resample_uniform(2.0).unwrap();
        let pts: Vec<(f64, f64)> = r.points().iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (2.0, 0.0), (3.0, 1.0), (3.0, 3.0)]);
    }

    #[test]
    fn jsonl_round_trip() {
        let s = sample(vec![vec![(0.5, 1.25), (3.0, 4.0)], vec![(7.0, 8.0)]]).with_text("hi");
        let u = sample(vec![vec![(1.0, 2.0), (2.0, 1.0)]]);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[s.clone(), u.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"strokes":[[[0.5,1.25],[3.0,4.0]],[[7.0,8.0]]],"text":"hi"}"#));
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![s, u]);
    }

    fn arb_sample() -> impl Strategy<Value = HandwritingSample> {
        let stroke = prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..20);
        prop::collection::vec(stroke, 1..5)
            .prop_map(|s| HandwritingSample::from_coords(s).unwrap())
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #[test]
        fn offsets_round_trip(s in arb_sample()) {
            let first = *s.points().next().unwrap();
            let back = HandwritingSample::from_offsets(&s.to_offsets(), (first.x, first.y)).unwrap();
            prop_assert_eq!(back.strokes().len(), s.strokes().len());
            for (p, q) in back.points().zip(s.points()) {
                prop_assert_eq!(p.pen, q.pen);
                prop_assert!(close(p.x, q.x, 1e-12) && close(p.y, q.y, 1e-12));
            }
        }

        #[test]
        fn offsets_round_trip_exact_on_integers(
            s in prop::collection::vec(prop::collection::vec((-500i32..500, -500i32..500), 1..20), 1..5)
        ) {
            let s = HandwritingSample::from_coords(
                s.into_iter().map(|st| st.into_iter().map(|(x, y)| (x as f64, y as f64)).collect()).collect(),
            ).unwrap();
            let back = HandwritingSample::from_offsets(&s.to_offsets(), (0.0, 0.0)).unwrap();
            let first = *s.points().next().unwrap();
            prop_assert_eq!(back.translate(first.x, first.y), s);
        }

        #[test]
        fn scale_is_idempotent(s in arb_sample()) {
            prop_assume!(s.bbox().height() > 1e-6);
            let once = s.scale_to_height(128.0).unwrap();
            let twice = once.scale_to_height(128.0).unwrap();
            for (p, q) in once.points().zip(twice.points()) {
                prop_assert!(close(p.x, q.x, 1e-9) && close(p.y, q.y, 1e-9));
                prop_assert_eq!(p.pen, q.pen);
            }
            prop_assert!(close(once.bbox().height(), 128.0, 1e-9));
        }

        #[test]
        fn resample_covers_path(s in arb_sample(), step in 0.5f64..20.0) {
            for st in s.strokes() {
                let r = st.resample_uniform(step).unwrap();
                // Every output point sits on the input polyline at a
                // non-decreasing arc-length position from 0 to the full length.
                let total = st.arc_length();
                let first = r.points()[0];
                let last = r.points()[r.len() - 1];
                prop_assert_eq!((first.x, first.y), (st.points()[0].x, st.points()[0].y));
                let end = st.points()[st.len() - 1];
                prop_assert_eq!((last.x, last.y), (end.x, end.y));
                prop_assert!(r.arc_length() <= total * (1.0 + 1e-9) + 1e-9);
                for w in r.points().windows(2) {
                    let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
                    prop_assert!(d <= step * (1.0 + 1e-9));
                }
                prop_assert!(last.pen);
                prop_assert!(r.points()[..r.len() - 1].iter().all(|p| !p.pen));
            }
        }

        #[test]
        fn resample_preserves_length_of_straight_strokes(
            x0 in -100.0f64..100.0, y0 in -100.0f64..100.0,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0, n in 2usize..10, step in 0.3f64..7.0
        ) {
            prop_assume!(dx.hypot(dy) > 1e-3);
            let coords: Vec<(f64, f64)> = (0..n)
                .map(|i| (x0 + dx * (i * i) as f64, y0 + dy * (i * i) as f64))
                .collect();
            let st = Stroke::from_coords(coords).unwrap();
            let r = st.resample_uniform(step).unwrap();
            prop_assert!(close(r.arc_length(), st.arc_length(), 1e-9));
        }
    }

    #[test]
    fn jsonl_reports_bad_line() {
        let err = read_jsonl("{\"strokes\":[[[0,0]]]}\nnot json\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
