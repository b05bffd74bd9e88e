//! Camera front end: raw Bayer frames, bilinear demosaicing, resize and
//! normalization to the network input, and a double-buffered frame source
//! that models capture/compute overlap in virtual time.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::quant::QParams;
use crate::tensor::{QuantTensor, Shape};

pub const CH_R: usize = 0;
pub const CH_G: usize = 1;
pub const CH_B: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    /// Color channel the sensor samples at pixel (x, y).
    pub fn channel_at(&self, x: usize, y: usize) -> usize {
        let cell = (y & 1, x & 1);
        match (self, cell) {
            (BayerPattern::Rggb, (0, 0)) => CH_R,
            (BayerPattern::Rggb, (1, 1)) => CH_B,
            (BayerPattern::Rggb, _) => CH_G,
            (BayerPattern::Bggr, (0, 0)) => CH_B,
            (BayerPattern::Bggr, (1, 1)) => CH_R,
            (BayerPattern::Bggr, _) => CH_G,
            (BayerPattern::Grbg, (0, 1)) => CH_R,
            (BayerPattern::Grbg, (1, 0)) => CH_B,
            (BayerPattern::Grbg, _) => CH_G,
            (BayerPattern::Gbrg, (0, 1)) => CH_B,
            (BayerPattern::Gbrg, (1, 0)) => CH_R,
            (BayerPattern::Gbrg, _) => CH_G,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BayerPattern::Rggb => "rggb",
            BayerPattern::Bggr => "bggr",
            BayerPattern::Grbg => "grbg",
            BayerPattern::Gbrg => "gbrg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageError {
    OddDimensions { width: usize, height: usize },
    BadLength { expected: usize, got: usize },
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::OddDimensions { width, height } => {
                write!(f, "bayer frames need positive even dimensions, got {width}x{height}")
            }
            ImageError::BadLength { expected, got } => {
                write!(f, "pixel buffer length {got} does not match expected {expected}")
            }
        }
    }
}

/// One raw sensor frame: a single color sample per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BayerFrame {
    pub width: usize,
    pub height: usize,
    pub pattern: BayerPattern,
    pub data: Vec<u8>,
}

impl BayerFrame {
    pub fn new(
        width: usize,
        height: usize,
        pattern: BayerPattern,
        data: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(ImageError::OddDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::BadLength { expected: width * height, got: data.len() });
        }
        Ok(BayerFrame { width, height, pattern, data })
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Interleaved 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != 3 * width * height {
            return Err(ImageError::BadLength { expected: 3 * width * height, got: data.len() });
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage { width, height, data }
    }

    pub fn at(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Bilinear CFA interpolation: each missing channel at a pixel is the
/// rounded average of that channel's samples inside the 3x3 neighborhood,
/// with border neighborhoods clamped to the frame (replicated edges, so a
/// clamped duplicate contributes once per window slot).
pub fn demosaic_bilinear(f: &BayerFrame) -> RgbImage {
    let (w, h) = (f.width, f.height);
    let mut out = vec![0u8; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = [0u32; 3];
            let mut cnt = [0u32; 3];
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let c = f.pattern.channel_at(nx, ny);
                    sum[c] += f.at(nx, ny) as u32;
                    cnt[c] += 1;
                }
            }
            let own = f.pattern.channel_at(x, y);
            let base = 3 * (y * w + x);
            for c in 0..3 {
                out[base + c] = if c == own {
                    f.at(x, y)
                } else {
                    ((sum[c] + cnt[c] / 2) / cnt[c]) as u8
                };
            }
        }
    }
    RgbImage { width: w, height: h, data: out }
}

/// Sample an RGB image through a CFA, producing the raw frame a sensor with
/// that pattern would capture. Inverse-direction op for round-trip tests and
/// the synthetic frame generator.
pub fn mosaic(img: &RgbImage, pattern: BayerPattern) -> Result<BayerFrame, ImageError> {
    let mut data = Vec::with_capacity(img.width * img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            data.push(img.at(x, y)[pattern.channel_at(x, y)]);
        }
    }
    BayerFrame::new(img.width, img.height, pattern, data)
}

/// Nearest-neighbor resize to resolution x resolution, normalize to [0, 1],
/// and quantize with `q`. Layout is NCHW, channel order RGB.
pub fn to_net_input(img: &RgbImage, resolution: usize, q: QParams) -> QuantTensor {
    assert!(resolution > 0, "network input resolution must be positive");
    let shape = Shape::new(1, 3, resolution, resolution);
    let mut data = vec![0i8; shape.numel()];
    for c in 0..3 {
        for y in 0..resolution {
            let sy = y * img.height / resolution;
            for x in 0..resolution {
                let sx = x * img.width / resolution;
                let v = img.at(sx, sy)[c] as f32 / 255.0;
                data[shape.index(0, c, y, x)] = q.quantize_value(v);
            }
        }
    }
    QuantTensor::new(shape, data, q)
}

/// Anything that can produce the `index`-th frame of a stream. `None` means
/// the stream is exhausted.
pub trait FrameProducer {
    fn produce(&mut self, index: usize) -> Option<BayerFrame>;
}

impl<F: FnMut(usize) -> Option<BayerFrame>> FrameProducer for F {
    fn produce(&mut self, index: usize) -> Option<BayerFrame> {
        self(index)
    }
}

/// A frame handed out by the double-buffered source.
#[derive(Debug, Clone)]
pub struct Acquired {
    pub frame: BayerFrame,
    /// Which of the two buffers holds the frame; consecutive frames alternate.
    pub buffer: u8,
    /// Virtual time at which the frame became available.
    pub acquired_at_ms: f64,
}

/// Double-buffered capture model in virtual time: while frame n is being
/// processed, frame n+1 is acquired into the other buffer. The first frame
/// pays the full capture latency; after that a frame is ready every
/// max(capture, processing) milliseconds.
pub struct DoubleBuffered<P: FrameProducer> {
    producer: P,
    capture_ms: f64,
    clock_ms: f64,
    capture_done_ms: f64,
    in_flight: Option<BayerFrame>,
    next_index: usize,
    buffer: u8,
}

impl<P: FrameProducer> DoubleBuffered<P> {
    pub fn new(mut producer: P, capture_ms: f64) -> Self {
        let in_flight = producer.produce(0);
        DoubleBuffered {
            producer,
            capture_ms,
            clock_ms: 0.0,
            capture_done_ms: capture_ms,
            in_flight,
            next_index: 1,
            buffer: 0,
        }
    }

    /// Wait (in virtual time) for the in-flight capture, kick off the next
    /// one into the other buffer, and hand the finished frame out.
    pub fn next(&mut self) -> Option<Acquired> {
        let frame = self.in_flight.take()?;
        self.clock_ms = self.clock_ms.max(self.capture_done_ms);
        let acquired_at_ms = self.clock_ms;
        let buffer = self.buffer;
        self.buffer ^= 1;
        self.in_flight = self.producer.produce(self.next_index);
        self.next_index += 1;
        if self.in_flight.is_some() {
            self.capture_done_ms = self.clock_ms + self.capture_ms;
        }
        Some(Acquired { frame, buffer, acquired_at_ms })
    }

    /// Advance the virtual clock by the processing time of the frame that
    /// was just handed out.
    pub fn finish_processing(&mut self, ms: f64) {
        self.clock_ms += ms;
    }

    pub fn now_ms(&self) -> f64 {
        self.clock_ms
    }
}

/// Steady-state period of a double-buffered loop.
pub fn steady_period_ms(capture_ms: f64, processing_ms: f64) -> f64 {
    capture_ms.max(processing_ms)
}

/// Deterministic synthetic scenes: a smooth gradient background with a few
/// solid rectangles whose geometry and colors derive from (seed, frame).
/// Rectangles double as detection targets in end-to-end runs.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub pattern: BayerPattern,
    pub seed: u64,
}

/// A rectangle the scene placed, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub color: [u8; 3],
}

impl SyntheticScene {
    pub fn rgb_frame(&self, index: usize) -> (RgbImage, Vec<SceneRect>) {
        let (w, h) = (self.width, self.height);
        let mut img = RgbImage::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                let gx = (x * 96 / w) as u8 + 40;
                let gy = (y * 96 / h) as u8 + 40;
                img.set(x, y, [gx, gy, ((gx as u16 + gy as u16) / 2) as u8]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let n = rng.gen_range(1..=3);
        let mut rects = Vec::with_capacity(n);
        for _ in 0..n {
            let rw = rng.gen_range(w / 8..=w / 3);
            let rh = rng.gen_range(h / 8..=h / 3);
            let x0 = rng.gen_range(0..w - rw);
            let y0 = rng.gen_range(0..h - rh);
            let color = [rng.gen_range(160..=255u8), rng.gen_range(0..=80u8), rng.gen_range(160..=255u8)];
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    img.set(x, y, color);
                }
            }
            rects.push(SceneRect { x0, y0, x1: x0 + rw, y1: y0 + rh, color });
        }
        (img, rects)
    }

    pub fn bayer_frame(&self, index: usize) -> BayerFrame {
        let (img, _) = self.rgb_frame(index);
        mosaic(&img, self.pattern).expect("scene dimensions are even")
    }

    /// Producer of the first `count` frames of this scene.
    pub fn producer(self, count: usize) -> impl FnMut(usize) -> Option<BayerFrame> {
        move |i| if i < count { Some(self.bayer_frame(i)) } else { None }
    }
}
