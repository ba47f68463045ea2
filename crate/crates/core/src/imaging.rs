//! Frames, colour planes and the local-window grid.
//!
//! A frame is split into four planes (R, G, B and the derived gray plane I) and
//! every plane is tiled by a `grid_rows x grid_cols` grid of equally sized
//! windows. Windows are numbered row-major starting at 1.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BT.601 luma weights, in thousandths, used for the gray plane.
pub const LUMA_WEIGHTS_MILLI: [u32; 3] = [299, 587, 114];

/// An 8-bit RGB frame stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels supplied for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    /// A frame filled with one colour.
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(height, width, vec![rgb; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        self.pixels[row * self.width + col] = rgb;
    }

    /// Encodes the frame as PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.iter().flatten().copied().collect(),
        )
        .ok_or_else(|| Error::DimensionMismatch("pixel buffer size".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_image(&bytes)
    }
}

/// Decodes an encoded still image (PNG, JPEG, BMP, TIFF) into an RGB frame.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let format = image::guess_format(bytes).map_err(|_| Error::UnsupportedFormat)?;
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(_) => Error::UnsupportedFormat,
        other => Error::Decode(other.to_string()),
    })?;
    let rgb = decoded.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RgbImage::new(height, width, pixels)
}

/// Colour channel identifier. `I` is the derived gray channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelId {
    R,
    G,
    B,
    I,
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [ChannelId::R, ChannelId::G, ChannelId::B, ChannelId::I];
    pub const RGB: [ChannelId; 3] = [ChannelId::R, ChannelId::G, ChannelId::B];

    /// Position of the component in an RGB triple; `None` for the gray channel.
    pub fn rgb_index(self) -> Option<usize> {
        match self {
            ChannelId::R => Some(0),
            ChannelId::G => Some(1),
            ChannelId::B => Some(2),
            ChannelId::I => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            ChannelId::R => 'R',
            ChannelId::G => 'G',
            ChannelId::B => 'B',
            ChannelId::I => 'I',
        }
    }

    /// Value of this channel for one pixel.
    #[inline]
    pub fn value(self, rgb: [u8; 3]) -> f64 {
        match self.rgb_index() {
            Some(i) => f64::from(rgb[i]),
            None => luma(rgb),
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.letter().encode_utf8(&mut [0; 4]))
    }
}

impl FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "R" | "r" => Ok(ChannelId::R),
            "G" | "g" => Ok(ChannelId::G),
            "B" | "b" => Ok(ChannelId::B),
            "I" | "i" => Ok(ChannelId::I),
            other => Err(Error::Parse(format!("unknown channel {other:?}"))),
        }
    }
}

/// Parses a channel list written as `RGB`, `R-G-B` or `R,G,B`.
pub fn parse_channels(s: &str) -> Result<Vec<ChannelId>> {
    let channels = s
        .chars()
        .filter(|c| !matches!(c, '-' | ',' | ' ' | '+'))
        .map(|c| c.to_string().parse())
        .collect::<Result<Vec<_>>>()?;
    if channels.is_empty() {
        return Err(Error::Parse("empty channel list".into()));
    }
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(Error::Parse(format!("channel {c} listed twice")));
        }
    }
    Ok(channels)
}

/// Renders a channel list as `R-G-B`.
pub fn format_channels(channels: &[ChannelId]) -> String {
    channels
        .iter()
        .map(|c| c.letter().to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// `(299 R + 587 G + 114 B) / 1000` with an exact integer numerator, so a
/// gray pixel maps to itself exactly.
#[inline]
pub(crate) fn luma(rgb: [u8; 3]) -> f64 {
    let [r, g, b] = rgb.map(u32::from);
    let numer = LUMA_WEIGHTS_MILLI[0] * r + LUMA_WEIGHTS_MILLI[1] * g + LUMA_WEIGHTS_MILLI[2] * b;
    f64::from(numer) / 1000.0
}

/// One channel of a frame as real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlane {
    channel: ChannelId,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ChannelPlane {
    pub fn new(channel: ChannelId, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} plane",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::DimensionMismatch(format!("intensity {v} outside [0, 255]")));
        }
        Ok(Self {
            channel,
            height,
            width,
            values,
        })
    }

    pub fn channel(&self) -> ChannelId {
        self.channel
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Copies one channel out of a frame. The gray channel is BT.601 luma, unrounded.
pub fn extract_channel(img: &RgbImage, ch: ChannelId) -> ChannelPlane {
    ChannelPlane {
        channel: ch,
        height: img.height,
        width: img.width,
        values: img.pixels.iter().map(|&p| ch.value(p)).collect(),
    }
}

/// Window grid over a plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            grid_rows: 16,
            grid_cols: 16,
        }
    }
}

/// Resolved window geometry for a concrete plane size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub grid: GridSpec,
    pub window_height: usize,
    pub window_width: usize,
}

impl WindowLayout {
    pub fn window_count(&self) -> usize {
        self.grid.grid_rows * self.grid.grid_cols
    }

    pub fn pixels_per_window(&self) -> usize {
        self.window_height * self.window_width
    }

    /// Top-left pixel of the window at zero-based position `w` (row-major).
    pub fn origin(&self, w: usize) -> (usize, usize) {
        let (gr, gc) = (w / self.grid.grid_cols, w % self.grid.grid_cols);
        (gr * self.window_height, gc * self.window_width)
    }
}

impl GridSpec {
    pub fn new(grid_rows: usize, grid_cols: usize) -> Result<Self> {
        if grid_rows == 0 || grid_cols == 0 {
            return Err(Error::ConfigInvalid("grid dimensions must be >= 1".into()));
        }
        Ok(Self { grid_rows, grid_cols })
    }

    pub fn window_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Checks divisibility against a `height x width` plane.
    pub fn layout(&self, height: usize, width: usize) -> Result<WindowLayout> {
        if self.grid_rows == 0
            || self.grid_cols == 0
            || !height.is_multiple_of(self.grid_rows)
            || !width.is_multiple_of(self.grid_cols)
        {
            return Err(Error::GridMismatch {
                grid_rows: self.grid_rows,
                grid_cols: self.grid_cols,
                height,
                width,
            });
        }
        Ok(WindowLayout {
            grid: *self,
            window_height: height / self.grid_rows,
            window_width: width / self.grid_cols,
        })
    }
}

/// A materialized local window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// One-based, row-major window index.
    pub index: usize,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major block of intensities.
    pub values: Vec<f64>,
}

/// Tiles a plane into windows, ordered row-major by window position.
pub fn grid_windows(plane: &ChannelPlane, grid: GridSpec) -> Result<Vec<Window>> {
    let layout = grid.layout(plane.height, plane.width)?;
    let windows = (0..layout.window_count())
        .map(|w| {
            let (top, left) = layout.origin(w);
            let mut values = Vec::with_capacity(layout.pixels_per_window());
            for r in top..top + layout.window_height {
                let start = r * plane.width + left;
                values.extend_from_slice(&plane.values[start..start + layout.window_width]);
            }
            Window {
                index: w + 1,
                top,
                left,
                height: layout.window_height,
                width: layout.window_width,
                values,
            }
        })
        .collect();
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ChannelPlane {
        let values = (0..h * w).map(|k| f(k / w, k % w)).collect();
        ChannelPlane::new(ChannelId::R, h, w, values).unwrap()
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let img = RgbImage::new(2, 2, vec![[0, 1, 2], [255, 128, 7], [9, 99, 199], [31, 63, 127]]).unwrap();
        let bytes = img.to_png().unwrap();
        assert_eq!(decode_image(&bytes).unwrap(), img);
    }

    #[test]
    fn truncated_png_is_a_decode_error() {
        let img = RgbImage::filled(4, 4, [10, 20, 30]).unwrap();
        let bytes = img.to_png().unwrap();
        let err = decode_image(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Decode(_)), "{err:?}");
    }

    #[test]
    fn unknown_container_is_unsupported() {
        let err = decode_image(b"definitely not an image").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat));
    }

    #[test]
    fn rig_sized_frame_decodes_with_full_dimensions() {
        let img = RgbImage::filled(1088, 1088, [200, 150, 40]).unwrap();
        let back = decode_image(&img.to_png().unwrap()).unwrap();
        assert_eq!((back.height(), back.width()), (1088, 1088));
    }

    #[test]
    fn channel_extraction() {
        let img = RgbImage::new(1, 2, vec![[10, 20, 30], [255, 0, 0]]).unwrap();
        assert_eq!(extract_channel(&img, ChannelId::R).values(), &[10.0, 255.0]);
        assert_eq!(extract_channel(&img, ChannelId::B).values(), &[30.0, 0.0]);
        let gray = extract_channel(&img, ChannelId::I);
        // 0.299 * 255
        assert_eq!(gray.values()[1], 76.245);
    }

    #[test]
    fn gray_of_gray_pixels_equals_red_plane() {
        let pixels = (0..64u8).map(|v| [v * 4, v * 4, v * 4]).collect();
        let img = RgbImage::new(8, 8, pixels).unwrap();
        assert_eq!(
            extract_channel(&img, ChannelId::I).values(),
            extract_channel(&img, ChannelId::R).values()
        );
    }

    #[test]
    fn rig_grid_gives_256_windows_of_68() {
        let plane = plane_from_fn(1088, 1088, |_, _| 1.0);
        let windows = grid_windows(&plane, GridSpec::default()).unwrap();
        assert_eq!(windows.len(), 256);
        assert!(windows.iter().all(|w| w.height == 68 && w.width == 68));
    }

    #[test]
    fn small_grid_and_mismatch() {
        let plane = plane_from_fn(32, 32, |r, c| ((r * 32 + c) % 256) as f64);
        let windows = grid_windows(&plane, GridSpec::default()).unwrap();
        assert_eq!(windows.len(), 256);
        assert_eq!(windows[0].values.len(), 4);

        let bad = plane_from_fn(100, 100, |_, _| 0.0);
        assert!(matches!(
            grid_windows(&bad, GridSpec::default()),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn windows_are_row_major() {
        let plane = plane_from_fn(32, 48, |r, c| ((r * 48 + c) % 256) as f64);
        let grid = GridSpec::new(4, 6).unwrap();
        let windows = grid_windows(&plane, grid).unwrap();
        assert_eq!((windows[0].top, windows[0].left), (0, 0));
        assert_eq!(windows[0].index, 1);
        let next_row = &windows[grid.grid_cols];
        assert_eq!(next_row.index, grid.grid_cols + 1);
        assert_eq!((next_row.top, next_row.left), (8, 0));
    }

    #[test]
    fn channel_list_parsing() {
        assert_eq!(parse_channels("R-G-B").unwrap(), ChannelId::RGB.to_vec());
        assert_eq!(parse_channels("gb").unwrap(), vec![ChannelId::G, ChannelId::B]);
        assert!(parse_channels("RR").is_err());
        assert!(parse_channels("X").is_err());
        assert_eq!(format_channels(&ChannelId::ALL), "R-G-B-I");
    }
}
