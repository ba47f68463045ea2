//! Method-agnostic featurization and the per-frame feature table.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baseline::{BaselineId, Pca2};
use crate::error::{Error, Result};
use crate::flame_model::IdealFlameModel;
use crate::imaging::{extract_channel, format_channels, parse_channels, ChannelId, GridSpec, RgbImage};
use crate::similarity::{FeatureMethod, FeatureSpec, GmmWeights};
use crate::textfmt::{fmt_f64, parse_f64, TextFields, TextWriter};

/// Either a similarity method against the ideal model or a baseline descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Similarity(FeatureSpec),
    Baseline(BaselineId),
}

impl FeatureKind {
    pub fn feature_len(&self) -> usize {
        match self {
            FeatureKind::Similarity(s) => s.feature_len(),
            FeatureKind::Baseline(b) => b.feature_len(),
        }
    }

    pub fn needs_ideal_model(&self) -> bool {
        matches!(self, FeatureKind::Similarity(_))
    }

    pub fn needs_pca(&self) -> bool {
        matches!(self, FeatureKind::Baseline(b) if b.needs_pca())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureKind::Similarity(s) => s.validate(),
            FeatureKind::Baseline(_) => Ok(()),
        }
    }

    /// Method column of the feature table: `sumsim`, `gmm/G9`, `mvn/8x8`, `cooc64`.
    pub fn method_token(&self) -> String {
        match self {
            FeatureKind::Baseline(b) => b.name().to_string(),
            FeatureKind::Similarity(s) => {
                let mut t = s.method.name().to_string();
                if let Some(w) = &s.weights {
                    t.push_str(&format!("/{}{}", w.swept(), w.b()));
                }
                if s.grid != GridSpec::default() {
                    t.push_str(&format!("/{}x{}", s.grid.grid_rows, s.grid.grid_cols));
                }
                t
            }
        }
    }

    /// Channel column of the feature table; `-` for baselines.
    pub fn channels_token(&self) -> String {
        match self {
            FeatureKind::Similarity(s) => format_channels(&s.channels),
            FeatureKind::Baseline(_) => "-".into(),
        }
    }

    pub fn from_tokens(method: &str, channels: &str) -> Result<Self> {
        let mut parts = method.split('/');
        let head = parts.next().unwrap_or_default();
        if channels == "-" {
            if parts.next().is_some() {
                return Err(Error::Parse(format!("unexpected qualifier in {method:?}")));
            }
            return Ok(FeatureKind::Baseline(head.parse()?));
        }
        let m: FeatureMethod = head.parse()?;
        let channels = parse_channels(channels)?;
        let mut fs = FeatureSpec::new(m, channels, GridSpec::default());
        for part in parts {
            if let Some((r, c)) = part.split_once('x') {
                let rows = r.parse().map_err(|_| Error::Parse(format!("bad grid {part:?}")))?;
                let cols = c.parse().map_err(|_| Error::Parse(format!("bad grid {part:?}")))?;
                fs.grid = GridSpec::new(rows, cols)?;
            } else {
                let mut chars = part.chars();
                let swept: ChannelId = chars
                    .next()
                    .ok_or_else(|| Error::Parse(format!("bad qualifier in {method:?}")))?
                    .to_string()
                    .parse()?;
                let b: u8 = chars
                    .as_str()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad weight index in {method:?}")))?;
                fs.weights = Some(GmmWeights::from_grid(&fs.channels, swept, b)?);
            }
        }
        Ok(FeatureKind::Similarity(fs))
    }

    /// Human-facing identifier, e.g. `sumsim:R-G-B` or `blue-hist255`.
    pub fn label(&self) -> String {
        match self {
            FeatureKind::Baseline(b) => b.name().to_string(),
            FeatureKind::Similarity(_) => format!("{}:{}", self.method_token(), self.channels_token()),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.label())
    }
}

/// Feature kind plus the fitted artifacts it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub kind: FeatureKind,
    pub ideal: Option<IdealFlameModel>,
    pub pca: Option<Pca2>,
}

impl Featurizer {
    pub fn new(kind: FeatureKind, ideal: Option<IdealFlameModel>, pca: Option<Pca2>) -> Result<Self> {
        kind.validate()?;
        if kind.needs_ideal_model() && ideal.is_none() {
            return Err(Error::EmptyReference);
        }
        if kind.needs_pca() && pca.is_none() {
            return Err(Error::InsufficientData("PCA baseline requires a fitted basis".into()));
        }
        let ideal = if kind.needs_ideal_model() { ideal } else { None };
        let pca = if kind.needs_pca() { pca } else { None };
        Ok(Self { kind, ideal, pca })
    }

    pub fn extract(&self, img: &RgbImage) -> Result<Vec<f64>> {
        match &self.kind {
            FeatureKind::Similarity(fs) => {
                let model = self.ideal.as_ref().ok_or(Error::EmptyReference)?;
                Ok(fs.extract(img, model)?.values)
            }
            FeatureKind::Baseline(b) => b.extract(img, self.pca.as_ref()),
        }
    }

    /// Loads and featurizes frames in parallel; output order follows `paths`.
    pub fn extract_files(&self, paths: &[PathBuf]) -> Result<Vec<Vec<f64>>> {
        paths.par_iter().map(|p| self.extract(&RgbImage::load(p)?)).collect()
    }

    pub fn write_fields(&self, w: &mut TextWriter) {
        w.field("feature.method", self.kind.method_token())
            .field("feature.channels", self.kind.channels_token());
        if let Some(ideal) = &self.ideal {
            ideal.write_fields(w, "ideal.");
        }
        if let Some(pca) = &self.pca {
            write_pca(pca, w, "pca.");
        }
    }

    pub fn read_fields(f: &TextFields) -> Result<Self> {
        let kind = FeatureKind::from_tokens(f.str("feature.method")?, f.str("feature.channels")?)
            .map_err(|e| Error::CorruptModel(e.to_string()))?;
        let ideal = if kind.needs_ideal_model() {
            Some(IdealFlameModel::read_fields(f, "ideal.")?)
        } else {
            None
        };
        let pca = if kind.needs_pca() {
            Some(read_pca(f, "pca.")?)
        } else {
            None
        };
        Self::new(kind, ideal, pca)
    }
}

const PCA_FORMAT: &str = "flamesense-pca-basis";
const PCA_VERSION: u32 = 1;

fn write_pca(pca: &Pca2, w: &mut TextWriter, prefix: &str) {
    w.f64s(&format!("{prefix}mean"), pca.mean())
        .f64s(&format!("{prefix}basis1"), &pca.basis()[0])
        .f64s(&format!("{prefix}basis2"), &pca.basis()[1])
        .f64s(&format!("{prefix}variances"), &pca.variances());
}

fn read_pca(f: &TextFields, prefix: &str) -> Result<Pca2> {
    let variances = f.f64s(&format!("{prefix}variances"))?;
    if variances.len() != 2 {
        return Err(Error::CorruptModel("PCA variances must have 2 entries".into()));
    }
    Pca2::from_parts(
        f.f64s(&format!("{prefix}mean"))?,
        [f.f64s(&format!("{prefix}basis1"))?, f.f64s(&format!("{prefix}basis2"))?],
        [variances[0], variances[1]],
    )
    .map_err(|e| Error::CorruptModel(e.to_string()))
}

/// Fits the PCA baseline basis on the gray planes of the given frames.
pub fn fit_pca(frames: &[RgbImage]) -> Result<Pca2> {
    let planes: Vec<_> = frames.iter().map(|f| extract_channel(f, ChannelId::I)).collect();
    Pca2::fit(&planes)
}

pub fn save_pca(pca: &Pca2, path: &Path) -> Result<()> {
    let mut w = TextWriter::new(PCA_FORMAT, PCA_VERSION);
    write_pca(pca, &mut w, "");
    std::fs::write(path, w.finish()).map_err(|e| Error::io(path, e))
}

pub fn load_pca(path: &Path) -> Result<Pca2> {
    read_pca(&TextFields::read(path, PCA_FORMAT, PCA_VERSION)?, "")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub frame_id: usize,
    pub timestamp_s: f64,
    pub lambda: f64,
    pub values: Vec<f64>,
}

/// One feature vector per frame, all of the same kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub kind: FeatureKind,
    pub rows: Vec<FeatureRow>,
}

const TABLE_FIXED: [&str; 5] = ["frame_id", "timestamp_s", "lambda", "method", "channels"];

impl FeatureTable {
    pub fn new(kind: FeatureKind, rows: Vec<FeatureRow>) -> Result<Self> {
        let d = kind.feature_len();
        if let Some(r) = rows.iter().find(|r| r.values.len() != d) {
            return Err(Error::LengthMismatch(d, r.values.len()));
        }
        Ok(Self { kind, rows })
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda).collect()
    }

    /// Tab-separated text with a header row and full-precision numbers.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = TABLE_FIXED.iter().map(|s| s.to_string()).collect();
        header.extend((0..self.kind.feature_len()).map(|i| format!("f{i}")));
        out.push_str(&header.join("\t"));
        out.push('\n');
        let (method, channels) = (self.kind.method_token(), self.kind.channels_token());
        for r in &self.rows {
            let mut cells = vec![
                r.frame_id.to_string(),
                fmt_f64(r.timestamp_s),
                fmt_f64(r.lambda),
                method.clone(),
                channels.clone(),
            ];
            cells.extend(r.values.iter().map(|v| fmt_f64(*v)));
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or(Error::Empty)?.split('\t').collect();
        if header.len() < TABLE_FIXED.len() || header[..TABLE_FIXED.len()] != TABLE_FIXED {
            return Err(Error::Parse("feature table header".into()));
        }
        let d = header.len() - TABLE_FIXED.len();
        let mut kind: Option<FeatureKind> = None;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != header.len() {
                return Err(Error::Parse(format!(
                    "feature table row {}: {} cells, expected {}",
                    n + 1,
                    cells.len(),
                    header.len()
                )));
            }
            let this = FeatureKind::from_tokens(cells[3], cells[4])?;
            match &kind {
                None => kind = Some(this),
                Some(k) if *k != this => {
                    return Err(Error::Parse(format!("feature table row {} mixes methods", n + 1)));
                }
                _ => {}
            }
            let num = |s: &str| parse_f64(s).map_err(|_| Error::Parse(format!("row {}: not a number {s:?}", n + 1)));
            rows.push(FeatureRow {
                frame_id: cells[0]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad frame id", n + 1)))?,
                timestamp_s: num(cells[1])?,
                lambda: num(cells[2])?,
                values: cells[5..].iter().map(|c| num(c)).collect::<Result<_>>()?,
            });
        }
        let kind = kind.ok_or(Error::Empty)?;
        if kind.feature_len() != d {
            return Err(Error::LengthMismatch(kind.feature_len(), d));
        }
        Self::new(kind, rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}
