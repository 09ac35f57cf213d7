//! Frame and sequence data model, binary PPM I/O, zero padding and bilinear upscaling.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Rounds a non-negative real to the nearest integer with ties going up, saturating to u8.
#[inline]
pub fn round_half_up_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// An 8-bit RGB frame, row-major and channel-interleaved.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("frame dimensions {width}x{height} must be positive")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    /// A frame with every pixel set to `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Frame { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copies the `width`×`height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} frame",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Frame { width, height, data })
    }
}

/// Frame rate as an exact rational so NTSC-style rates survive the container.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fps {
    pub num: u16,
    pub den: u16,
}

impl Fps {
    pub fn new(num: u16, den: u16) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidArgument(format!("fps {num}/{den} must be positive")));
        }
        Ok(Fps { num, den })
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl Default for Fps {
    fn default() -> Self {
        Fps { num: 30, den: 1 }
    }
}

/// An ordered list of equally sized frames.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    pub fps: Fps,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>, fps: Fps) -> Result<Self> {
        if let Some(first) = frames.first() {
            if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != first.dims()) {
                return Err(Error::Input(format!(
                    "frame {i} is {}x{} but frame 0 is {}x{}",
                    f.width(),
                    f.height(),
                    first.width(),
                    first.height()
                )));
            }
        }
        Ok(VideoSequence { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Dimensions shared by every frame, `None` for an empty sequence.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }
}

/// Planar real-valued image: `data[c * h * w + y * w + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatPlanes<R = f64> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<R>,
}

impl<R: Copy + Default> FloatPlanes<R> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FloatPlanes { width, height, channels, data: vec![R::default(); channels * height * width] }
    }

    pub fn plane(&self, c: usize) -> &[R] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [R] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape<S>(&self, other: &FloatPlanes<S>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

impl FloatPlanes<f64> {
    /// Raw sample values (0..=255), no rescaling.
    pub fn from_frame(frame: &Frame) -> Self {
        let (w, h) = frame.dims();
        let mut out = FloatPlanes::zeros(3, h, w);
        for (i, px) in frame.pixels().enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out.data[c * w * h + i] = f64::from(v);
            }
        }
        out
    }

    /// Converts 0..=255 planes back to u8 with round-half-up.
    pub fn to_frame(&self) -> Result<Frame> {
        if self.channels != 3 {
            return Err(Error::Shape(format!("need 3 channels, got {}", self.channels)));
        }
        let n = self.width * self.height;
        let mut data = vec![0u8; n * 3];
        for i in 0..n {
            for c in 0..3 {
                data[i * 3 + c] = round_half_up_u8(self.data[c * n + i]);
            }
        }
        Frame::new(self.width, self.height, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Surrounds `frame` with `pad` pixels of black on every side.
pub fn zero_pad(frame: &Frame, pad: usize) -> Frame {
    if pad == 0 {
        return frame.clone();
    }
    let (w, h) = frame.dims();
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut data = vec![0u8; pw * ph * 3];
    for y in 0..h {
        let src = &frame.data[y * w * 3..(y + 1) * w * 3];
        let dst = ((y + pad) * pw + pad) * 3;
        data[dst..dst + w * 3].copy_from_slice(src);
    }
    Frame { width: pw, height: ph, data }
}

/// Bilinear resampling by an integer factor with half-pixel centers and clamped edges.
pub fn bilinear_upscale(frame: &Frame, s: u32) -> Result<Frame> {
    if s == 0 {
        return Err(Error::InvalidScale(s));
    }
    if s == 1 {
        return Ok(frame.clone());
    }
    let s = s as usize;
    let (w, h) = frame.dims();
    let (ow, oh) = (w * s, h * s);
    let taps = |i: usize, src: usize| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) / s as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let xt: Vec<_> = (0..ow).map(|x| taps(x, w)).collect();
    let mut data = Vec::with_capacity(ow * oh * 3);
    for y in 0..oh {
        let (y0, y1, fy) = taps(y, h);
        for &(x0, x1, fx) in &xt {
            let (a, b, c, d) = (frame.pixel(x0, y0), frame.pixel(x1, y0), frame.pixel(x0, y1), frame.pixel(x1, y1));
            for ch in 0..3 {
                let top = f64::from(a[ch]) * (1.0 - fx) + f64::from(b[ch]) * fx;
                let bottom = f64::from(c[ch]) * (1.0 - fx) + f64::from(d[ch]) * fx;
                data.push(round_half_up_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Ok(Frame { width: ow, height: oh, data })
}

/// Serializes a frame as binary PPM with the canonical `P6\n<w> <h>\n255\n` header.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

/// Parses a binary PPM (P6, maxval 255).
pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Parse("missing P6 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("number out of range at byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Parse("header must end with a single whitespace byte".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, only 255 is supported")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Parse(format!("degenerate dimensions {w}x{h}")));
    }
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Parse(format!("dimensions {w}x{h} overflow")))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::Parse(format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    Frame::new(w, h, payload[..need].to_vec())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Frame> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    fs::write(path, encode_ppm(frame))?;
    Ok(())
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

/// Lists `frame_NNNNNN.ppm` files in `dir`, ordered by frame number.
pub fn list_frame_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut numbered = Vec::new();
    for entry in fs::read_dir(dir.as_ref())? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(num) = name.strip_prefix("frame_").and_then(|r| r.strip_suffix(".ppm")) else { continue };
        if let Ok(i) = num.parse::<usize>() {
            numbered.push((i, path));
        }
    }
    numbered.sort();
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

/// Loads every numbered frame in `dir` into a sequence.
pub fn read_sequence_dir(dir: impl AsRef<Path>, fps: Fps) -> Result<VideoSequence> {
    let dir = dir.as_ref();
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Input(format!("no frame_*.ppm files in {}", dir.display())));
    }
    let frames = files.iter().map(read_ppm).collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, fps)
}

pub fn write_sequence_dir(dir: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_ppm(dir.join(frame_file_name(i)), f)?;
    }
    Ok(())
}
