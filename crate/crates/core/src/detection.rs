//! Region-based detection with a trained classifier: random seeds split the
//! image into Voronoi regions, regions the classifier finds interesting are
//! re-examined with candidate boxes of several sizes, and candidates scored
//! above a second threshold become bounding boxes.

use std::collections::HashMap;

use crate::dataset::GroundTruthBox;
use crate::dbn::AdaptiveDbn;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Axis-aligned box in pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub class_id: usize,
    pub score: f64,
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        BoundingBox {
            x,
            y,
            w,
            h,
            class_id: 0,
            score: 0.0,
        }
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    /// Intersection with the `width × height` image, if non-empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.w).min(width as i64);
        let y1 = (self.y + self.h).min(height as i64);
        (x1 > x0 && y1 > y0).then_some(BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            ..*self
        })
    }
}

impl From<&GroundTruthBox> for BoundingBox {
    fn from(g: &GroundTruthBox) -> Self {
        BoundingBox {
            x: g.x,
            y: g.y,
            w: g.w,
            h: g.h,
            class_id: g.class_id,
            score: 1.0,
        }
    }
}

/// Intersection area over union area; 0 for disjoint or empty boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiPartition {
    width: usize,
    height: usize,
    seeds: Vec<(usize, usize)>,
    assignment: Vec<usize>,
}

/// Assigns every pixel to its nearest seed by Euclidean distance; ties go to
/// the lowest seed index.
pub fn voronoi_partition(
    width: usize,
    height: usize,
    seeds: &[(usize, usize)],
) -> Result<VoronoiPartition> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput("Voronoi seeds"));
    }
    if let Some(&(x, y)) = seeds.iter().find(|&&(x, y)| x >= width || y >= height) {
        return Err(Error::InvalidArgument(format!(
            "seed ({x}, {y}) lies outside the {width}x{height} image"
        )));
    }
    let mut assignment = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut best = (0, u64::MAX);
            for (k, &(sx, sy)) in seeds.iter().enumerate() {
                let dx = x.abs_diff(sx) as u64;
                let dy = y.abs_diff(sy) as u64;
                let d = dx * dx + dy * dy;
                if d < best.1 {
                    best = (k, d);
                }
            }
            assignment.push(best.0);
        }
    }
    Ok(VoronoiPartition {
        width,
        height,
        seeds: seeds.to_vec(),
        assignment,
    })
}

impl VoronoiPartition {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn seeds(&self) -> &[(usize, usize)] {
        &self.seeds
    }

    pub fn n_regions(&self) -> usize {
        self.seeds.len()
    }

    /// Region index per pixel, row-major.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn region_of(&self, x: usize, y: usize) -> usize {
        self.assignment[y * self.width + x]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_regions()];
        for &r in &self.assignment {
            sizes[r] += 1;
        }
        sizes
    }

    /// Bounding box and pixel centroid of every region; `None` for a region
    /// left empty because its seed duplicates an earlier one.
    pub fn region_geometry(&self) -> Vec<Option<(BoundingBox, (f64, f64))>> {
        let n = self.n_regions();
        let mut lo = vec![(usize::MAX, usize::MAX); n];
        let mut hi = vec![(0, 0); n];
        let mut sum = vec![(0.0, 0.0, 0usize); n];
        for y in 0..self.height {
            for x in 0..self.width {
                let r = self.region_of(x, y);
                lo[r] = (lo[r].0.min(x), lo[r].1.min(y));
                hi[r] = (hi[r].0.max(x), hi[r].1.max(y));
                sum[r] = (sum[r].0 + x as f64, sum[r].1 + y as f64, sum[r].2 + 1);
            }
        }
        (0..n)
            .map(|r| {
                if sum[r].2 == 0 {
                    return None;
                }
                let b = BoundingBox::new(
                    lo[r].0 as i64,
                    lo[r].1 as i64,
                    (hi[r].0 - lo[r].0 + 1) as i64,
                    (hi[r].1 - lo[r].1 + 1) as i64,
                );
                let c = sum[r].2 as f64;
                Some((b, (sum[r].0 / c, sum[r].1 / c)))
            })
            .collect()
    }
}

/// Crops `bx` from a row-major `width × height` image (zero outside the
/// image) and resizes it bilinearly to `out_w × out_h`. Output pixel centres
/// map to source coordinates `x0 + (ox + 0.5)·w/out_w − 0.5`, clamped to the
/// crop.
pub fn region_crop(
    image: &[f64],
    width: usize,
    height: usize,
    bx: &BoundingBox,
    out_shape: (usize, usize),
) -> Result<Vec<f64>> {
    Error::check_dim("image", width * height, image.len())?;
    if bx.w <= 0 || bx.h <= 0 {
        return Err(Error::InvalidArgument(format!(
            "crop box {}x{} has zero area",
            bx.w, bx.h
        )));
    }
    if bx.clip(width, height).is_none() {
        return Err(Error::InvalidArgument(
            "crop box does not overlap the image".into(),
        ));
    }
    let (out_w, out_h) = out_shape;
    let pixel = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            0.0
        } else {
            image[y as usize * width + x as usize]
        }
    };
    let axis = |o: usize, origin: i64, len: i64, out: usize| -> (i64, i64, f64) {
        let s = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as i64;
        let i1 = (i0 + 1).min(len - 1);
        (origin + i0, origin + i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|ox| axis(ox, bx.x, bx.w, out_w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1, fy) = axis(oy, bx.y, bx.h, out_h);
        for &(x0, x1, fx) in &cols {
            let top = pixel(x0, y0) * (1.0 - fx) + pixel(x1, y0) * fx;
            let bottom = pixel(x0, y1) * (1.0 - fx) + pixel(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}

/// Candidate box sizes examined around a promising region's centre.
#[derive(Debug, Clone, PartialEq)]
pub enum SizeGrid {
    /// Multiples of the region's bounding-box width and height.
    RegionRelative { widths: Vec<f64>, heights: Vec<f64> },
    /// Fractions of the image width and height.
    ImageRelative { widths: Vec<f64>, heights: Vec<f64> },
}

impl Default for SizeGrid {
    fn default() -> Self {
        // Voronoi cells are usually smaller than the objects they land on
        let f = vec![1.5, 2.0, 2.5, 3.0];
        SizeGrid::RegionRelative {
            widths: f.clone(),
            heights: f,
        }
    }
}

impl SizeGrid {
    fn factors(&self) -> (&[f64], &[f64]) {
        match self {
            SizeGrid::RegionRelative { widths, heights }
            | SizeGrid::ImageRelative { widths, heights } => (widths, heights),
        }
    }

    /// Candidate `(w, h)` in pixels for a region box of `region` size inside
    /// an `image`-sized frame; each side is at least one pixel.
    pub fn sizes(&self, region: (i64, i64), image: (usize, usize)) -> Vec<(i64, i64)> {
        let (base_w, base_h) = match self {
            SizeGrid::RegionRelative { .. } => (region.0 as f64, region.1 as f64),
            SizeGrid::ImageRelative { .. } => (image.0 as f64, image.1 as f64),
        };
        let (fw, fh) = self.factors();
        let mut out = Vec::with_capacity(fw.len() * fh.len());
        for &a in fw {
            for &b in fh {
                out.push((
                    ((a * base_w).round() as i64).max(1),
                    ((b * base_h).round() as i64).max(1),
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    /// Number of Voronoi regions.
    pub regions: usize,
    /// A region is examined further when some non-background class scores
    /// above this.
    pub t1: f64,
    /// A candidate becomes a box when some non-background class scores above
    /// this.
    pub t2: f64,
    pub sizes: SizeGrid,
    /// Class never reported as a detection.
    pub background: Option<usize>,
    /// Keep only the best of same-class boxes overlapping with IoU > 0.5.
    pub merge: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            regions: 16,
            t1: 0.5,
            t2: 0.9,
            sizes: SizeGrid::default(),
            background: Some(0),
            merge: false,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 {
            return Err(Error::InvalidArgument("regions must be >= 1".into()));
        }
        if !(self.t1 > 0.0 && self.t1 < self.t2 && self.t2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must satisfy 0 < T1 < T2 < 1, got T1={} T2={}",
                self.t1, self.t2
            )));
        }
        let (fw, fh) = self.sizes.factors();
        if fw.is_empty()
            || fh.is_empty()
            || fw.iter().chain(fh).any(|f| !(f.is_finite() && *f > 0.0))
        {
            return Err(Error::InvalidArgument(
                "size grid factors must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Best non-background class and its probability.
fn best_foreground(p: &[f64], background: Option<usize>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in p.iter().enumerate() {
        if Some(k) == background {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best
}

/// Sort by class, then score descending, then x, then y.
pub fn canonical_order(boxes: &mut [BoundingBox]) {
    boxes.sort_by(|a, b| {
        a.class_id
            .cmp(&b.class_id)
            .then(b.score.total_cmp(&a.score))
            .then(a.x.cmp(&b.x))
            .then(a.y.cmp(&b.y))
            .then(a.w.cmp(&b.w))
            .then(a.h.cmp(&b.h))
    });
}

/// Runs the detector on one image. Seeds are drawn from `rng` (uniform
/// integer pixel positions); everything after that is deterministic.
/// Candidate boxes are clipped to the image before scoring; a box found from
/// several regions is reported once with its score.
pub fn detect(
    model: &AdaptiveDbn,
    image: &[f64],
    width: usize,
    height: usize,
    cfg: &DetectConfig,
    rng: &mut Rng,
) -> Result<Vec<BoundingBox>> {
    cfg.validate()?;
    Error::check_dim("detection image", width * height, image.len())?;
    if width == 0 || height == 0 {
        return Err(Error::EmptyInput("detection image"));
    }
    let seeds: Vec<(usize, usize)> = (0..cfg.regions)
        .map(|_| (rng.below(width), rng.below(height)))
        .collect();
    let partition = voronoi_partition(width, height, &seeds)?;
    let geometry: Vec<_> = partition.region_geometry().into_iter().flatten().collect();
    let shape = model.input_shape();

    let region_crops = geometry
        .iter()
        .map(|(b, _)| region_crop(image, width, height, b, shape))
        .collect::<Result<Vec<_>>>()?;
    let region_probs = model.predict_proba_batch(&region_crops)?;

    let mut candidates: Vec<BoundingBox> = Vec::new();
    for ((region, (cx, cy)), p) in geometry.iter().zip(&region_probs) {
        if !best_foreground(p, cfg.background).is_some_and(|(_, s)| s > cfg.t1) {
            continue;
        }
        for (w, h) in cfg.sizes.sizes((region.w, region.h), (width, height)) {
            let x = (cx + 0.5 - w as f64 / 2.0).floor() as i64;
            let y = (cy + 0.5 - h as f64 / 2.0).floor() as i64;
            if let Some(c) = BoundingBox::new(x, y, w, h).clip(width, height) {
                if !candidates
                    .iter()
                    .any(|d| (d.x, d.y, d.w, d.h) == (c.x, c.y, c.w, c.h))
                {
                    candidates.push(c);
                }
            }
        }
    }
    let crops = candidates
        .iter()
        .map(|b| region_crop(image, width, height, b, shape))
        .collect::<Result<Vec<_>>>()?;
    let probs = model.predict_proba_batch(&crops)?;

    let mut boxes: Vec<BoundingBox> = candidates
        .iter()
        .zip(&probs)
        .filter_map(|(b, p)| {
            let (class_id, score) = best_foreground(p, cfg.background)?;
            (score > cfg.t2).then_some(BoundingBox {
                class_id,
                score,
                ..*b
            })
        })
        .collect();
    canonical_order(&mut boxes);
    if cfg.merge {
        boxes = merge_overlapping(boxes);
    }
    Ok(boxes)
}

/// Greedy same-class suppression over canonically ordered boxes.
pub fn merge_overlapping(boxes: Vec<BoundingBox>) -> Vec<BoundingBox> {
    let mut kept: Vec<BoundingBox> = Vec::new();
    for b in boxes {
        if !kept
            .iter()
            .any(|k| k.class_id == b.class_id && iou(k, &b) > 0.5)
        {
            kept.push(b);
        }
    }
    kept
}

/// Correct / total ground-truth boxes per class.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEval {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

impl DetectionEval {
    /// Per-class accuracy in `[0, 1]`; `None` for classes without ground truth.
    pub fn accuracy(&self, class_id: usize) -> Option<f64> {
        (self.total[class_id] > 0)
            .then(|| self.correct[class_id] as f64 / self.total[class_id] as f64)
    }

    pub fn overall(&self) -> Option<f64> {
        let total: usize = self.total.iter().sum();
        (total > 0).then(|| self.correct.iter().sum::<usize>() as f64 / total as f64)
    }
}

/// A ground-truth box counts as detected when some predicted box of its
/// class on the same image has IoU strictly above `threshold`.
pub fn evaluate_detection(
    predictions: &HashMap<String, Vec<BoundingBox>>,
    ground_truth: &[GroundTruthBox],
    threshold: f64,
    n_classes: usize,
) -> Result<DetectionEval> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold must be in (0, 1], got {threshold}"
        )));
    }
    let mut eval = DetectionEval {
        correct: vec![0; n_classes],
        total: vec![0; n_classes],
    };
    for g in ground_truth {
        if g.class_id >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: g.class_id,
                classes: n_classes,
            });
        }
        eval.total[g.class_id] += 1;
        let truth = BoundingBox::from(g);
        let hit = predictions.get(&g.image).is_some_and(|ps| {
            ps.iter()
                .any(|p| p.class_id == g.class_id && iou(p, &truth) > threshold)
        });
        if hit {
            eval.correct[g.class_id] += 1;
        }
    }
    Ok(eval)
}
