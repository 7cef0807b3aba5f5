//! CXR8-format label and bounding-box CSVs, 8-bit PGM images, train/test
//! splitting and a synthetic shape generator for desk-scale experiments.
//!
//! A dataset directory holds `labels.csv` (`Image Index,Finding Labels`),
//! optionally `bbox.csv` (`Image Index,Finding Label,x,y,w,h`) and the images
//! under `images/`. An image named `x.png` in the CSVs is looked up as
//! `images/x.png` and, failing that, `images/x.pgm`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Category names of the chest X-ray benchmark, "No Finding" first.
pub const CXR8_CLASSES: [&str; 9] = [
    "No Finding",
    "Mass",
    "Nodule",
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Pneumonia",
    "Pneumothorax",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
}

impl ClassTable {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidArgument(
                "a class table needs at least two names".into(),
            ));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate class name {n:?}"
                )));
            }
        }
        Ok(ClassTable { names })
    }

    pub fn cxr8() -> Self {
        ClassTable::new(CXR8_CLASSES).expect("static table is valid")
    }

    /// The first `k` CXR8 names.
    pub fn cxr8_prefix(k: usize) -> Result<Self> {
        if !(2..=CXR8_CLASSES.len()).contains(&k) {
            return Err(Error::InvalidArgument(format!(
                "class count must be in 2..=9, got {k}"
            )));
        }
        ClassTable::new(CXR8_CLASSES[..k].iter().copied())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    /// Pixels quantised to bytes, rounding half up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Error::check_dim("image bytes", width * height, bytes.len())?;
        Ok(GrayImage {
            width,
            height,
            pixels: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub name: String,
    pub image: GrayImage,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthBox {
    pub image: String,
    pub class_id: usize,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("missing column {name:?}"),
        })
}

/// Data row number as a 1-based line number including the header.
fn row_number(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map_or(fallback, |p| p.line() as usize)
}

fn field<'r>(
    path: &Path,
    record: &'r csv::StringRecord,
    row: usize,
    index: usize,
) -> Result<&'r str> {
    record.get(index).ok_or_else(|| Error::Row {
        path: path.to_path_buf(),
        row,
        message: format!("expected at least {} columns", index + 1),
    })
}

/// Reads `(image name, class id)` pairs. A multi-label cell
/// (`"Effusion|Infiltration"`) resolves to its first label.
pub fn load_labels_csv(
    path: impl AsRef<Path>,
    classes: &ClassTable,
) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let image_col = header_index(path, &headers, "Image Index")?;
    let label_col = header_index(path, &headers, "Finding Labels")?;
    let mut out = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row_number(&record, n + 2);
        let name = field(path, &record, row, image_col)?;
        let cell = field(path, &record, row, label_col)?;
        let first = cell.split('|').next().unwrap_or("").trim();
        let class_id = classes.id(first).ok_or_else(|| Error::UnknownLabel {
            path: path.to_path_buf(),
            row,
            label: first.to_string(),
        })?;
        if name.is_empty() {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row,
                message: "empty image name".into(),
            });
        }
        out.push((name.to_string(), class_id));
    }
    Ok(out)
}

/// Reads ground-truth boxes. Columns are taken by position: image name,
/// label, then `x, y, w, h` as reals floored to whole pixels; trailing empty
/// columns are ignored.
pub fn load_bbox_csv(path: impl AsRef<Path>, classes: &ClassTable) -> Result<Vec<GroundTruthBox>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row_number(&record, n + 2);
        let label = field(path, &record, row, 1)?;
        let class_id = classes.id(label).ok_or_else(|| Error::UnknownLabel {
            path: path.to_path_buf(),
            row,
            label: label.to_string(),
        })?;
        let mut coords = [0i64; 4];
        for (k, c) in coords.iter_mut().enumerate() {
            let raw = field(path, &record, row, 2 + k)?;
            let v: f64 = raw.parse().map_err(|_| Error::Row {
                path: path.to_path_buf(),
                row,
                message: format!("cannot parse coordinate {raw:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Row {
                    path: path.to_path_buf(),
                    row,
                    message: format!("non-finite coordinate {raw:?}"),
                });
            }
            *c = v.floor() as i64;
        }
        let [x, y, w, h] = coords;
        if w <= 0 || h <= 0 {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row,
                message: format!("box size {w}x{h} is not positive"),
            });
        }
        out.push(GroundTruthBox {
            image: field(path, &record, row, 0)?.to_string(),
            class_id,
            x,
            y,
            w,
            h,
        });
    }
    Ok(out)
}

/// Reads a binary 8-bit PGM (P5); pixels are divided by the file's maxval.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("bad magic: expected binary PGM \"P5\"".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "header number out of range".to_string())?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("truncated header".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("dimensions {width}x{height} must be positive"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(format!("maxval {maxval} is not an 8-bit value"));
    }
    let data = &bytes[pos..];
    let n = width * height;
    if data.len() < n {
        return Err(format!(
            "truncated pixel data: expected {n} bytes, found {}",
            data.len()
        ));
    }
    if data.len() > n {
        return Err(format!(
            "dimension mismatch: {} bytes of pixel data for {width}x{height}",
            data.len()
        ));
    }
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(n);
    for &b in data {
        if b as usize > maxval {
            return Err(format!("pixel value {b} exceeds maxval {maxval}"));
        }
        pixels.push(b as f64 / scale);
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

pub fn pgm_bytes(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    Error::check_dim("PGM pixel data", width * height, data.len())?;
    fs::write(path, pgm_bytes(width, height, data)).map_err(|e| Error::io(path, e))
}

pub fn save_image(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    write_pgm(path, image.width, image.height, &image.to_bytes())
}

/// Deterministic shuffle split: the first `round(fraction · n)` shuffled
/// items form the training part.
pub fn split<T: Clone>(items: &[T], fraction: f64, rng: &mut Rng) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n_train = (fraction * items.len() as f64).round() as usize;
    if n_train == 0 || n_train == items.len() {
        return Err(Error::InvalidArgument(format!(
            "split of {} items at {fraction} leaves an empty part",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    rng.shuffle(&mut order);
    let (a, b) = order.split_at(n_train);
    Ok((
        a.iter().map(|&i| items[i].clone()).collect(),
        b.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub n_classes: usize,
    /// Background noise is uniform in `[0, noise]`.
    pub noise: f64,
    /// Shape extent range as fractions of the image side.
    pub min_extent: f64,
    pub max_extent: f64,
    /// Box height over width, before clamping to the extent range.
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Shape intensity range.
    pub min_intensity: f64,
    pub max_intensity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 32,
            n_classes: 9,
            noise: 0.15,
            min_extent: 0.5,
            max_extent: 0.85,
            min_aspect: 0.7,
            max_aspect: 1.4,
            min_intensity: 0.6,
            max_intensity: 1.0,
        }
    }
}

/// Shape drawn for each non-background class, indexed by `class_id - 1`.
/// Every shape is defined in box-relative coordinates, so stretching its box
/// changes the aspect but not the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Ellipse,
    Ring,
    Plus,
    Cross,
    HorizontalBars,
    VerticalBars,
    Triangle,
    Checker,
}

pub const SHAPES: [Shape; 8] = [
    Shape::Ellipse,
    Shape::Ring,
    Shape::Plus,
    Shape::Cross,
    Shape::HorizontalBars,
    Shape::VerticalBars,
    Shape::Triangle,
    Shape::Checker,
];

impl Shape {
    /// Whether the cell centred at `(u, v)` in box-relative coordinates
    /// `[0, 1]²` belongs to the shape.
    pub fn covers(self, u: f64, v: f64) -> bool {
        let (dx, dy) = (2.0 * u - 1.0, 2.0 * v - 1.0);
        let r2 = dx * dx + dy * dy;
        match self {
            Shape::Ellipse => r2 <= 1.0,
            Shape::Ring => (0.36..=1.0).contains(&r2),
            Shape::Plus => dx.abs() <= 1.0 / 3.0 || dy.abs() <= 1.0 / 3.0,
            Shape::Cross => (dx.abs() - dy.abs()).abs() <= 0.35,
            // three bars separated by two gaps
            Shape::HorizontalBars => (v * 5.0) as usize & 1 == 0,
            Shape::VerticalBars => (u * 5.0) as usize & 1 == 0,
            Shape::Triangle => dx.abs() <= v,
            Shape::Checker => (u < 0.5) == (v < 0.5),
        }
    }
}

/// Generates `count` images; image `n` has class `n % n_classes`. Class 0 is
/// noise only; class `k ≥ 1` draws [`SHAPES`]`[k - 1]` at a random width, aspect,
/// position and intensity, with its exact bounding box as ground truth.
/// Pixels are quantised to bytes so a PGM round trip is lossless.
pub fn synth_generate(
    count: usize,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> Result<(Vec<LabeledImage>, Vec<GroundTruthBox>)> {
    if cfg.size < 16 {
        return Err(Error::InvalidArgument(format!(
            "image size must be >= 16, got {}",
            cfg.size
        )));
    }
    if !(2..=CXR8_CLASSES.len()).contains(&cfg.n_classes) {
        return Err(Error::InvalidArgument(format!(
            "class count must be in 2..=9, got {}",
            cfg.n_classes
        )));
    }
    let ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
    if !(ok(cfg.noise)
        && ok(cfg.min_extent)
        && ok(cfg.max_extent)
        && ok(cfg.min_intensity)
        && ok(cfg.max_intensity)
        && cfg.min_extent <= cfg.max_extent
        && cfg.min_intensity <= cfg.max_intensity
        && cfg.min_aspect > 0.0
        && cfg.min_aspect <= cfg.max_aspect
        && cfg.max_aspect.is_finite())
    {
        return Err(Error::InvalidArgument(
            "synthetic generator ranges must lie in [0, 1] and be ordered".into(),
        ));
    }
    let side = cfg.size;
    let lo = ((cfg.min_extent * side as f64).round() as usize).clamp(4, side - 2);
    let hi = ((cfg.max_extent * side as f64).round() as usize).clamp(lo, side - 2);
    let digits = count.max(1).to_string().len().max(5);

    let mut images = Vec::with_capacity(count);
    let mut boxes = Vec::new();
    for n in 0..count {
        let class_id = n % cfg.n_classes;
        let name = format!("synth_{n:0digits$}.pgm");
        let mut pixels: Vec<f64> = (0..side * side)
            .map(|_| rng.uniform(0.0, cfg.noise))
            .collect();
        if class_id > 0 {
            let shape = SHAPES[class_id - 1];
            let w = lo + rng.below(hi - lo + 1);
            let aspect = rng.uniform(cfg.min_aspect, cfg.max_aspect);
            let h = ((w as f64 * aspect).round() as usize).clamp(lo, hi);
            let x0 = rng.below(side - w + 1);
            let y0 = rng.below(side - h + 1);
            let intensity = rng.uniform(cfg.min_intensity, cfg.max_intensity);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + 0.5) / w as f64;
                    let v = (y as f64 + 0.5) / h as f64;
                    if shape.covers(u, v) {
                        let p = &mut pixels[(y0 + y) * side + x0 + x];
                        *p = (*p).max(intensity);
                    }
                }
            }
            boxes.push(GroundTruthBox {
                image: name.clone(),
                class_id,
                x: x0 as i64,
                y: y0 as i64,
                w: w as i64,
                h: h as i64,
            });
        }
        let image = GrayImage {
            width: side,
            height: side,
            pixels,
        };
        let image = GrayImage::from_bytes(side, side, &image.to_bytes())?;
        images.push(LabeledImage {
            name,
            image,
            class_id,
        });
    }
    Ok((images, boxes))
}

/// Writes `labels.csv`, `bbox.csv` and `images/*.pgm` under `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    images: &[LabeledImage],
    boxes: &[GroundTruthBox],
    classes: &ClassTable,
) -> Result<()> {
    let dir = dir.as_ref();
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for img in images {
        save_image(image_dir.join(&img.name), &img.image)?;
    }
    let labels = dir.join("labels.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(
        File::create(&labels).map_err(|e| Error::io(&labels, e))?,
    ));
    w.write_record(["Image Index", "Finding Labels"])?;
    for img in images {
        w.write_record([img.name.as_str(), classes.name(img.class_id)])?;
    }
    w.flush().map_err(|e| Error::io(&labels, e))?;
    let bbox = dir.join("bbox.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(
        File::create(&bbox).map_err(|e| Error::io(&bbox, e))?,
    ));
    w.write_record(["Image Index", "Finding Label", "x", "y", "w", "h"])?;
    for b in boxes {
        w.write_record([
            b.image.clone(),
            classes.name(b.class_id).to_string(),
            b.x.to_string(),
            b.y.to_string(),
            b.w.to_string(),
            b.h.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&bbox, e))
}

fn resolve_image(dir: &Path, name: &str) -> PathBuf {
    let direct = dir.join(name);
    if direct.exists() {
        return direct;
    }
    let pgm = Path::new(name).with_extension("pgm");
    dir.join(pgm)
}

/// Loads a dataset directory; `bbox.csv` is optional. Every image must have
/// the same dimensions.
pub fn load_dataset(
    dir: impl AsRef<Path>,
    classes: &ClassTable,
) -> Result<(Vec<LabeledImage>, Vec<GroundTruthBox>)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            message: "data directory does not exist".into(),
        });
    }
    let labels = load_labels_csv(dir.join("labels.csv"), classes)?;
    let image_dir = dir.join("images");
    let mut images = Vec::with_capacity(labels.len());
    for (name, class_id) in labels {
        let path = resolve_image(&image_dir, &name);
        let image = load_image(&path)?;
        if let Some(first) = images.first() {
            let first: &LabeledImage = first;
            if (first.image.width, first.image.height) != (image.width, image.height) {
                return Err(Error::Format {
                    path,
                    message: format!(
                        "image is {}x{} but the dataset uses {}x{}",
                        image.width, image.height, first.image.width, first.image.height
                    ),
                });
            }
        }
        images.push(LabeledImage {
            name,
            image,
            class_id,
        });
    }
    let bbox = dir.join("bbox.csv");
    let boxes = if bbox.exists() {
        load_bbox_csv(bbox, classes)?
    } else {
        Vec::new()
    };
    Ok((images, boxes))
}

/// Reads a manifest of `path,class` rows (header required) for corpora that
/// do not follow the CXR8 layout. Relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>, classes: &ClassTable) -> Result<Vec<LabeledImage>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let path_col = header_index(path, &headers, "path")?;
    let class_col = header_index(path, &headers, "class")?;
    let mut out = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row_number(&record, n + 2);
        let image_path = field(path, &record, row, path_col)?;
        let label = field(path, &record, row, class_col)?;
        let class_id = classes.id(label).ok_or_else(|| Error::UnknownLabel {
            path: path.to_path_buf(),
            row,
            label: label.to_string(),
        })?;
        let image = load_image(base.join(image_path))?;
        let name = Path::new(image_path).file_name().map_or_else(
            || image_path.to_string(),
            |f| f.to_string_lossy().into_owned(),
        );
        out.push(LabeledImage {
            name,
            image,
            class_id,
        });
    }
    Ok(out)
}

/// Writes a byte grid as PPM (P6) given interleaved RGB data.
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    Error::check_dim("PPM pixel data", 3 * width * height, rgb.len())?;
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write!(out, "P6\n{width} {height}\n255\n")
        .and_then(|_| out.write_all(rgb))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}
