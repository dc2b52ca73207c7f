//! Raw frames, fallback foreground extraction, normalization to a fixed size,
//! head/torso/leg partitioning and sequence averaging.
//!
//! Normalized images are stored channel-planar (`c * H * W + y * W + x`), which
//! is the layout the convolution kernels consume directly.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_HEIGHT: usize = 162;
pub const DEFAULT_WIDTH: usize = 64;
pub const CHANNELS: usize = 3;

/// An 8-bit RGB frame (interleaved `HWC`) with an optional foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    mask: Option<Vec<bool>>,
}

impl RgbFrame {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if height < 3 || width < 1 {
            return Err(Error::BadFrame(format!(
                "frame must be at least 3x1, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bytes", height * width * CHANNELS),
                got: format!("{} bytes", pixels.len()),
            });
        }
        if let Some(m) = &mask {
            if m.len() != height * width {
                return Err(Error::DimensionMismatch {
                    expected: format!("{height}x{width} mask"),
                    got: format!("{} mask pixels", m.len()),
                });
            }
        }
        Ok(Self {
            height,
            width,
            pixels,
            mask,
        })
    }

    /// Loads an image file, picking up `<stem>_mask.png` next to it when present.
    pub fn open(path: &Path) -> Result<Self> {
        let rgb = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mask_path = mask_path_for(path);
        let mask = if mask_path.is_file() {
            let m = image::open(&mask_path)
                .map_err(|source| Error::Image {
                    path: mask_path.clone(),
                    source,
                })?
                .to_luma8();
            if (m.width() as usize, m.height() as usize) != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{h}x{w} mask"),
                    got: format!("{}x{} at {}", m.height(), m.width(), mask_path.display()),
                });
            }
            Some(m.into_raw().into_iter().map(|v| v > 127).collect())
        } else {
            None
        };
        Self::new(h, w, rgb.into_raw(), mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    fn rgb(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Path of the mask file accompanying a frame: `frame_0001.png` -> `frame_0001_mask.png`.
pub fn mask_path_for(frame: &Path) -> PathBuf {
    let stem = frame
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    frame.with_file_name(format!("{stem}_mask.png"))
}

/// Whether a path names a mask file rather than a frame.
pub fn is_mask_path(path: &Path) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with("_mask"))
}

fn luminance(rgb: [u8; 3]) -> f64 {
    (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64) / 255.0
}

/// Fallback foreground extraction against the modal background luminance.
///
/// Frames that already carry a mask are returned unchanged.
pub fn extract_silhouette(frame: RgbFrame, threshold: f64) -> Result<RgbFrame> {
    if frame.mask.is_some() {
        return Ok(frame);
    }
    let lum: Vec<f64> = (0..frame.height)
        .flat_map(|y| (0..frame.width).map(move |x| (y, x)))
        .map(|(y, x)| luminance(frame.rgb(y, x)))
        .collect();
    let mut levels = [0usize; 256];
    for &l in &lum {
        levels[(l * 255.0).round() as usize] += 1;
    }
    // First maximal level wins, so ties resolve to the darker background.
    let mode_level = levels
        .iter()
        .enumerate()
        .fold(
            (0, 0),
            |best, (i, &c)| if c > best.1 { (i, c) } else { best },
        )
        .0;
    let mode = mode_level as f64 / 255.0;
    let mask: Vec<bool> = lum.iter().map(|&l| (l - mode).abs() > threshold).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllBackground);
    }
    Ok(RgbFrame {
        mask: Some(mask),
        ..frame
    })
}

/// A channel-planar real-valued image with a binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage<T> {
    pub height: usize,
    pub width: usize,
    /// `CHANNELS * height * width` values, channel-planar.
    pub pixels: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> MaskedImage<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![T::zero(); CHANNELS * height * width],
            mask: vec![false; height * width],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Rows `[start, end)` as a new image.
    pub fn rows(&self, start: usize, end: usize) -> Self {
        let h = end - start;
        let w = self.width;
        let mut pixels = Vec::with_capacity(CHANNELS * h * w);
        for c in 0..CHANNELS {
            pixels.extend_from_slice(&self.plane(c)[start * w..end * w]);
        }
        Self {
            height: h,
            width: w,
            pixels,
            mask: self.mask[start * w..end * w].to_vec(),
        }
    }

    /// Stacks images of equal width top to bottom.
    pub fn vconcat(parts: &[&Self]) -> Result<Self> {
        let w = parts.first().ok_or(Error::EmptySequence)?.width;
        if let Some(p) = parts.iter().find(|p| p.width != w) {
            return Err(Error::DimensionMismatch {
                expected: format!("width {w}"),
                got: format!("width {}", p.width),
            });
        }
        let h: usize = parts.iter().map(|p| p.height).sum();
        let mut pixels = Vec::with_capacity(CHANNELS * h * w);
        for c in 0..CHANNELS {
            for p in parts {
                pixels.extend_from_slice(p.plane(c));
            }
        }
        let mask = parts.iter().flat_map(|p| p.mask.iter().copied()).collect();
        Ok(Self {
            height: h,
            width: w,
            pixels,
            mask,
        })
    }

    fn zero_background(&mut self) {
        let n = self.height * self.width;
        for c in 0..CHANNELS {
            for (v, &m) in self.pixels[c * n..(c + 1) * n].iter_mut().zip(&self.mask) {
                if !m {
                    *v = T::zero();
                }
            }
        }
    }
}

/// A fixed-size silhouette: intensities in `[0,1]`, background exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSilhouette<T> {
    pub image: MaskedImage<T>,
    pub source_id: String,
    pub frame_index: usize,
}

impl<T: Scalar> NormalizedSilhouette<T> {
    /// Builds a silhouette from planar pixels, enforcing the value and background invariants.
    pub fn new(
        image: MaskedImage<T>,
        source_id: impl Into<String>,
        frame_index: usize,
    ) -> Result<Self> {
        let (h, w) = (image.height, image.width);
        if image.pixels.len() != CHANNELS * h * w || image.mask.len() != h * w {
            return Err(Error::DimensionMismatch {
                expected: format!("{CHANNELS}x{h}x{w}"),
                got: format!("{} pixels, {} mask", image.pixels.len(), image.mask.len()),
            });
        }
        if image.foreground_count() == 0 {
            return Err(Error::AllBackground);
        }
        let mut image = image;
        for v in image.pixels.iter_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
        image.zero_background();
        Ok(Self {
            image,
            source_id: source_id.into(),
            frame_index,
        })
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.image.height, self.image.width)
    }

    pub fn cast<U: Scalar>(&self) -> NormalizedSilhouette<U> {
        NormalizedSilhouette {
            image: MaskedImage {
                height: self.image.height,
                width: self.image.width,
                pixels: self.image.pixels.iter().map(|v| U::of(v.f64())).collect(),
                mask: self.image.mask.clone(),
            },
            source_id: self.source_id.clone(),
            frame_index: self.frame_index,
        }
    }
}

/// Equal-height head, torso and leg thirds of a silhouette.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTriple<T> {
    pub head: MaskedImage<T>,
    pub torso: MaskedImage<T>,
    pub leg: MaskedImage<T>,
}

impl<T: Scalar> PartTriple<T> {
    pub fn parts(&self) -> [&MaskedImage<T>; 3] {
        [&self.head, &self.torso, &self.leg]
    }

    pub fn concat(&self) -> MaskedImage<T> {
        MaskedImage::vconcat(&self.parts()).expect("parts share a width")
    }
}

fn bounding_box(mask: &[bool], h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                bb = Some(match bb {
                    None => (y, y, x, x),
                    Some((y0, y1, x0, x1)) => (y0.min(y), y1.max(y), x0.min(x), x1.max(x)),
                });
            }
        }
    }
    bb
}

/// Half-pixel-centred source coordinate, clamped to the valid range.
#[inline]
fn source_coord(dst: usize, scale: f64, len: usize) -> f64 {
    ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64)
}

/// Crops to the mask's bounding box and rescales to `target_h x target_w`.
pub fn normalize<T: Scalar>(
    frame: &RgbFrame,
    target_h: usize,
    target_w: usize,
    source_id: impl Into<String>,
    frame_index: usize,
) -> Result<NormalizedSilhouette<T>> {
    if !target_h.is_multiple_of(3) || target_h < 9 || target_w < 9 {
        return Err(Error::BadTarget {
            h: target_h,
            w: target_w,
        });
    }
    let mask = frame
        .mask()
        .ok_or_else(|| Error::BadFrame("normalize requires a foreground mask".into()))?;
    let (y0, y1, x0, x1) =
        bounding_box(mask, frame.height, frame.width).ok_or(Error::AllBackground)?;
    let (ch, cw) = (y1 - y0 + 1, x1 - x0 + 1);
    let sy = ch as f64 / target_h as f64;
    let sx = cw as f64 / target_w as f64;

    let mut out = MaskedImage::<T>::zeros(target_h, target_w);
    for ty in 0..target_h {
        let fy = source_coord(ty, sy, ch);
        let (ya, wy) = (fy.floor() as usize, fy - fy.floor());
        let yb = (ya + 1).min(ch - 1);
        let ny = (((ty as f64 + 0.5) * sy) as usize).min(ch - 1);
        for tx in 0..target_w {
            let fx = source_coord(tx, sx, cw);
            let (xa, wx) = (fx.floor() as usize, fx - fx.floor());
            let xb = (xa + 1).min(cw - 1);
            let nx = (((tx as f64 + 0.5) * sx) as usize).min(cw - 1);
            out.mask[ty * target_w + tx] = mask[(y0 + ny) * frame.width + x0 + nx];

            let p00 = frame.rgb(y0 + ya, x0 + xa);
            let p01 = frame.rgb(y0 + ya, x0 + xb);
            let p10 = frame.rgb(y0 + yb, x0 + xa);
            let p11 = frame.rgb(y0 + yb, x0 + xb);
            for c in 0..CHANNELS {
                let top = p00[c] as f64 * (1.0 - wx) + p01[c] as f64 * wx;
                let bottom = p10[c] as f64 * (1.0 - wx) + p11[c] as f64 * wx;
                let v = (top * (1.0 - wy) + bottom * wy) / 255.0;
                out.set(c, ty, tx, T::of(v));
            }
        }
    }
    NormalizedSilhouette::new(out, source_id, frame_index)
}

/// Splits a silhouette into equal head, torso and leg thirds.
pub fn split_parts<T: Scalar>(sil: &NormalizedSilhouette<T>) -> Result<PartTriple<T>> {
    let h = sil.height();
    if !h.is_multiple_of(3) {
        return Err(Error::BadTarget { h, w: sil.width() });
    }
    let third = h / 3;
    Ok(PartTriple {
        head: sil.image.rows(0, third),
        torso: sil.image.rows(third, 2 * third),
        leg: sil.image.rows(2 * third, h),
    })
}

/// Total order over silhouettes by content, used to make sequence means order-independent.
pub(crate) fn content_cmp<T: Scalar>(a: &MaskedImage<T>, b: &MaskedImage<T>) -> Ordering {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| x.f64().total_cmp(&y.f64()))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.mask.cmp(&b.mask))
}

/// Pixel-wise mean silhouette of a sequence.
///
/// The mask keeps pixels that are foreground in at least half the frames. Frames
/// are summed in a canonical content order so the result is bit-identical under
/// any permutation of the input.
pub fn average_silhouette<T: Scalar>(
    seq: &[NormalizedSilhouette<T>],
) -> Result<NormalizedSilhouette<T>> {
    let first = seq.first().ok_or(Error::EmptySequence)?;
    let (h, w) = first.dims();
    if let Some(s) = seq.iter().find(|s| s.dims() != (h, w)) {
        return Err(Error::DimensionMismatch {
            expected: format!("{h}x{w}"),
            got: format!("{}x{}", s.height(), s.width()),
        });
    }
    let mut order: Vec<&NormalizedSilhouette<T>> = seq.iter().collect();
    order.sort_by(|a, b| content_cmp(&a.image, &b.image));

    let n = seq.len();
    let mut acc = MaskedImage::<T>::zeros(h, w);
    let mut votes = vec![0usize; h * w];
    for s in &order {
        for (a, &v) in acc.pixels.iter_mut().zip(&s.image.pixels) {
            *a += v;
        }
        for (c, &m) in votes.iter_mut().zip(&s.image.mask) {
            *c += m as usize;
        }
    }
    let inv = T::of(n as f64);
    for a in acc.pixels.iter_mut() {
        *a /= inv;
    }
    acc.mask = votes.iter().map(|&c| 2 * c >= n).collect();
    NormalizedSilhouette::new(acc, order[0].source_id.clone(), 0)
}
