//! HybridEVS color filter array, RAW simulation and the `.hevs` codec.
//!
//! The HybridEVS sensor is a Quad-Bayer layout in which a few pixels emit
//! event signals instead of intensity. Those pixels show up as holes in the
//! RAW frame and are stored as [`HOLE_SENTINEL`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{NdTensor, Tape, Var};

/// Stored in place of a sample at event pixels.
pub const HOLE_SENTINEL: u16 = 0xFFFF;
/// Largest storable non-hole sample.
pub const MAX_SAMPLE: u16 = 0xFFFE;
pub const DEFAULT_WHITE_LEVEL: u16 = 1023;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelClass {
    Red,
    Green,
    Blue,
    /// Emits events; no color sample.
    Event,
    /// Dead or masked photosite, read out as zero.
    Inactive,
}

impl PixelClass {
    /// RGB channel index sampled by this class.
    pub fn channel(self) -> Option<usize> {
        match self {
            PixelClass::Red => Some(0),
            PixelClass::Green => Some(1),
            PixelClass::Blue => Some(2),
            PixelClass::Event | PixelClass::Inactive => None,
        }
    }

    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'R' => PixelClass::Red,
            'G' => PixelClass::Green,
            'B' => PixelClass::Blue,
            'E' => PixelClass::Event,
            'X' => PixelClass::Inactive,
            _ => return None,
        })
    }
}

/// Repeating CFA tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfaPattern {
    id: String,
    tile_h: usize,
    tile_w: usize,
    cells: Vec<PixelClass>,
}

/// Per-tile class counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub red: usize,
    pub green: usize,
    pub blue: usize,
    pub event: usize,
    pub inactive: usize,
}

impl CfaPattern {
    pub const HYBRIDEVS_ID: &'static str = "hybridevs";
    pub const HYBRIDEVS_GREEN_RED_ID: &'static str = "hybridevs-gr";
    pub const QUAD_BAYER_ID: &'static str = "quad-bayer";

    /// Builds a pattern from rows of `R`, `G`, `B`, `E` (event) and `X`
    /// (inactive) characters.
    pub fn from_rows(id: &str, rows: &[&str]) -> Result<Self> {
        if id.is_empty() || id.len() > 255 || !id.is_ascii() {
            return Err(Error::Param(format!("pattern id must be 1..=255 ASCII bytes, got {id:?}")));
        }
        let tile_h = rows.len();
        let tile_w = rows.first().map_or(0, |r| r.chars().count());
        if tile_h == 0 || tile_w == 0 {
            return Err(Error::Param("pattern tile must be non-empty".into()));
        }
        let mut cells = Vec::with_capacity(tile_h * tile_w);
        for row in rows {
            if row.chars().count() != tile_w {
                return Err(Error::Param(format!("ragged pattern row {row:?}")));
            }
            for c in row.chars() {
                cells.push(PixelClass::from_char(c).ok_or_else(|| Error::Param(format!("unknown pattern cell {c:?}")))?);
            }
        }
        Ok(Self {
            id: id.to_string(),
            tile_h,
            tile_w,
            cells,
        })
    }

    /// The default 4×4 HybridEVS tile: Quad-Bayer quads R | G / G | B with
    /// event pixels at (1,1) in the red quad and (3,3) in the blue quad.
    pub fn hybridevs() -> Self {
        Self::from_rows(Self::HYBRIDEVS_ID, &["RRGG", "REGG", "GGBB", "GGBE"]).expect("static pattern")
    }

    /// Alternative tile with the event pixels in the red and a green quad.
    pub fn hybridevs_green_red() -> Self {
        Self::from_rows(Self::HYBRIDEVS_GREEN_RED_ID, &["RRGG", "REGE", "GGBB", "GGBB"]).expect("static pattern")
    }

    /// Plain Quad-Bayer without holes.
    pub fn quad_bayer() -> Self {
        Self::from_rows(Self::QUAD_BAYER_ID, &["RRGG", "RRGG", "GGBB", "GGBB"]).expect("static pattern")
    }

    /// Looks up a built-in pattern.
    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            Self::HYBRIDEVS_ID => Ok(Self::hybridevs()),
            Self::HYBRIDEVS_GREEN_RED_ID => Ok(Self::hybridevs_green_red()),
            Self::QUAD_BAYER_ID => Ok(Self::quad_bayer()),
            _ => Err(Error::Param(format!("unknown pattern id {id:?}"))),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tile_h(&self) -> usize {
        self.tile_h
    }

    pub fn tile_w(&self) -> usize {
        self.tile_w
    }

    /// Class at tile coordinate (row, col).
    pub fn cell(&self, row: usize, col: usize) -> PixelClass {
        self.cells[row * self.tile_w + col]
    }

    /// Class of image pixel (y, x).
    pub fn class_at(&self, y: usize, x: usize) -> PixelClass {
        self.cell(y % self.tile_h, x % self.tile_w)
    }

    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for cell in &self.cells {
            match cell {
                PixelClass::Red => c.red += 1,
                PixelClass::Green => c.green += 1,
                PixelClass::Blue => c.blue += 1,
                PixelClass::Event => c.event += 1,
                PixelClass::Inactive => c.inactive += 1,
            }
        }
        c
    }
}

/// Single-channel RAW frame; event pixels hold [`HOLE_SENTINEL`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// Row-major samples.
    pub samples: Vec<u16>,
    pub pattern_id: String,
    pub white_level: u16,
}

impl RawImage {
    pub fn new(width: usize, height: usize, samples: Vec<u16>, pattern_id: &str, white_level: u16) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::Dimension(format!("{width}x{height} RAW needs {} samples, got {}", width * height, samples.len())));
        }
        if white_level == 0 || white_level > MAX_SAMPLE {
            return Err(Error::Param(format!("white level must be in 1..={MAX_SAMPLE}, got {white_level}")));
        }
        if pattern_id.len() > 255 || !pattern_id.is_ascii() {
            return Err(Error::Param(format!("pattern id must be at most 255 ASCII bytes, got {pattern_id:?}")));
        }
        Ok(Self {
            width,
            height,
            samples,
            pattern_id: pattern_id.to_string(),
            white_level,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.samples[y * self.width + x]
    }

    pub fn is_hole(&self, y: usize, x: usize) -> bool {
        self.get(y, x) == HOLE_SENTINEL
    }

    /// Checks that holes sit exactly on the pattern's event pixels.
    pub fn check_against(&self, pattern: &CfaPattern) -> Result<()> {
        for y in 0..self.height {
            for x in 0..self.width {
                let event = pattern.class_at(y, x) == PixelClass::Event;
                if event != self.is_hole(y, x) {
                    return Err(Error::Data(format!(
                        "pixel ({y},{x}): sentinel {} but pattern class {:?}",
                        self.is_hole(y, x),
                        pattern.class_at(y, x)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Dimension(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            samples.extend_from_slice(&self.samples[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            samples,
            pattern_id: self.pattern_id.clone(),
            white_level: self.white_level,
        })
    }
}

/// Interleaved three-channel image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, channel-interleaved (`(y * width + x) * 3 + c`).
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!("{width}x{height} RGB needs {} values, got {}", width * height * 3, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn clamped(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// H×W×3 tensor view of the pixels.
    pub fn to_tensor(&self) -> NdTensor {
        NdTensor::new([self.height, self.width, 3], self.data.clone()).expect("consistent dims")
    }

    /// Converts an H×W×3 tensor, without clamping.
    pub fn from_tensor(t: &NdTensor) -> Result<Self> {
        match t.shape() {
            &[h, w, 3] => Self::new(w, h, t.data().to_vec()),
            s => Err(Error::Dimension(format!("expected H×W×3 tensor, got {s:?}"))),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Dimension(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Ok(Self { width: w, height: h, data })
    }
}

fn quantize(v: f64, white_level: u16) -> u16 {
    libm::round(v.clamp(0.0, 1.0) * white_level as f64) as u16
}

/// Simulates the sensor: each color pixel keeps the quantized value of its
/// channel, event pixels become holes and inactive pixels read zero.
pub fn mosaic(rgb: &RgbImage, pattern: &CfaPattern, white_level: u16) -> Result<RawImage> {
    if rgb.width % pattern.tile_w != 0 || rgb.height % pattern.tile_h != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} image is not a multiple of the {}x{} tile",
            rgb.width, rgb.height, pattern.tile_w, pattern.tile_h
        )));
    }
    let mut samples = Vec::with_capacity(rgb.width * rgb.height);
    for y in 0..rgb.height {
        for x in 0..rgb.width {
            let class = pattern.class_at(y, x);
            samples.push(match class {
                PixelClass::Event => HOLE_SENTINEL,
                PixelClass::Inactive => 0,
                _ => quantize(rgb.get(y, x, class.channel().unwrap()), white_level),
            });
        }
    }
    RawImage::new(rgb.width, rgb.height, samples, pattern.id(), white_level)
}

/// Normalized network input and the hole mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    /// H×W×1, samples divided by the white level, holes at 0.0.
    pub tensor: NdTensor,
    /// Row-major, `true` at holes.
    pub hole_mask: Vec<bool>,
}

impl RawTensor {
    pub fn hole_density(&self) -> f64 {
        self.hole_mask.iter().filter(|&&h| h).count() as f64 / self.hole_mask.len().max(1) as f64
    }
}

pub fn raw_to_tensor(raw: &RawImage) -> RawTensor {
    let scale = 1.0 / raw.white_level as f64;
    let hole_mask: Vec<bool> = raw.samples.iter().map(|&s| s == HOLE_SENTINEL).collect();
    let data = raw
        .samples
        .iter()
        .map(|&s| if s == HOLE_SENTINEL { 0.0 } else { s as f64 * scale })
        .collect();
    RawTensor {
        tensor: NdTensor::new([raw.height, raw.width, 1], data).expect("consistent dims"),
        hole_mask,
    }
}

// ---- space-to-depth ---------------------------------------------------------

const S2D_PERM: [usize; 5] = [0, 2, 4, 1, 3];
const D2S_PERM: [usize; 5] = [0, 3, 1, 4, 2];

fn s2d_dims(shape: &[usize], s: usize) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] if s >= 1 && h % s == 0 && w % s == 0 => Ok((h, w, c)),
        [h, w, _] => Err(Error::Dimension(format!("space_to_depth: {h}x{w} not divisible by factor {s}"))),
        _ => Err(Error::Dimension(format!("space_to_depth expects H×W×C, got {shape:?}"))),
    }
}

fn d2s_dims(shape: &[usize], s: usize) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] if s >= 1 && c % (s * s) == 0 => Ok((h, w, c)),
        [_, _, c] => Err(Error::Dimension(format!("depth_to_space: {c} channels not divisible by {}", s * s))),
        _ => Err(Error::Dimension(format!("depth_to_space expects H×W×C, got {shape:?}"))),
    }
}

/// H×W×C → (H/s)×(W/s)×(C·s²); output channel `c·s² + dy·s + dx` holds
/// offset (dy, dx) of input channel `c` within each s×s block.
pub fn space_to_depth(x: &NdTensor, s: usize) -> Result<NdTensor> {
    let (h, w, c) = s2d_dims(x.shape(), s)?;
    x.reshape(&[h / s, s, w / s, s, c])?
        .permute(&S2D_PERM)?
        .reshape(&[h / s, w / s, c * s * s])
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &NdTensor, s: usize) -> Result<NdTensor> {
    let (h, w, c) = d2s_dims(x.shape(), s)?;
    x.reshape(&[h, w, c / (s * s), s, s])?
        .permute(&D2S_PERM)?
        .reshape(&[h * s, w * s, c / (s * s)])
}

/// Differentiable [`space_to_depth`] on a tape.
pub fn space_to_depth_var(tape: &mut Tape, x: Var, s: usize) -> Result<Var> {
    let (h, w, c) = s2d_dims(tape.shape(x), s)?;
    tape.rearrange(x, &[h / s, s, w / s, s, c], &S2D_PERM, &[h / s, w / s, c * s * s])
}

/// Differentiable [`depth_to_space`] on a tape.
pub fn depth_to_space_var(tape: &mut Tape, x: Var, s: usize) -> Result<Var> {
    let (h, w, c) = d2s_dims(tape.shape(x), s)?;
    tape.rearrange(x, &[h, w, c / (s * s), s, s], &D2S_PERM, &[h * s, w * s, c / (s * s)])
}

// ---- classical baseline -----------------------------------------------------

const BASELINE_RADIUS: isize = 2;

/// Fills every missing channel (and every hole) with an inverse-distance
/// weighted mean of same-channel samples in the 5×5 neighborhood, clipped at
/// the image border. Pixels with no such neighbor take the global channel
/// mean.
pub fn bilinear_demosaic(raw: &RawImage, pattern: &CfaPattern) -> RgbImage {
    let (w, h) = (raw.width, raw.height);
    let scale = 1.0 / raw.white_level as f64;
    // channel sampled at each pixel, None for holes/inactive
    let chan: Vec<Option<usize>> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if raw.samples[i] == HOLE_SENTINEL {
                None
            } else {
                pattern.class_at(y, x).channel()
            }
        })
        .collect();
    let mut global = [0.0f64; 3];
    let mut global_n = [0usize; 3];
    for (i, c) in chan.iter().enumerate() {
        if let Some(c) = *c {
            global[c] += raw.samples[i] as f64 * scale;
            global_n[c] += 1;
        }
    }
    for c in 0..3 {
        global[c] = if global_n[c] > 0 { global[c] / global_n[c] as f64 } else { 0.0 };
    }

    RgbImage::from_fn(w, h, |y, x| {
        let mut px = [0.0; 3];
        for (c, out) in px.iter_mut().enumerate() {
            if chan[y * w + x] == Some(c) {
                *out = raw.get(y, x) as f64 * scale;
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -BASELINE_RADIUS..=BASELINE_RADIUS {
                for dx in -BASELINE_RADIUS..=BASELINE_RADIUS {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if (dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if chan[j] == Some(c) {
                        let wt = 1.0 / libm::sqrt((dy * dy + dx * dx) as f64);
                        num += wt * raw.samples[j] as f64 * scale;
                        den += wt;
                    }
                }
            }
            *out = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { global[c] };
        }
        px
    })
}

// ---- .hevs codec ------------------------------------------------------------

pub const HEVS_MAGIC: &[u8; 4] = b"HEVS";
pub const HEVS_VERSION: u8 = 0x01;

/// Header size for a given pattern-id length.
pub fn hevs_header_len(pattern_id_len: usize) -> usize {
    4 + 1 + 1 + pattern_id_len + 2 + 4 + 4 + 2
}

/// Serializes to the `.hevs` layout: magic `HEVS`, version, id length and
/// ASCII id, two reserved zero bytes, width/height (u32 LE), white level
/// (u16 LE), then row-major u16 LE samples.
pub fn encode_hevs(raw: &RawImage) -> Result<Vec<u8>> {
    let id = raw.pattern_id.as_bytes();
    if id.len() > 255 || !raw.pattern_id.is_ascii() {
        return Err(Error::Param(format!("pattern id {:?} is not short ASCII", raw.pattern_id)));
    }
    let width = u32::try_from(raw.width).map_err(|_| Error::Param("width exceeds u32".into()))?;
    let height = u32::try_from(raw.height).map_err(|_| Error::Param("height exceeds u32".into()))?;
    let mut out = Vec::with_capacity(hevs_header_len(id.len()) + raw.samples.len() * 2);
    out.extend_from_slice(HEVS_MAGIC);
    out.push(HEVS_VERSION);
    out.push(id.len() as u8);
    out.extend_from_slice(id);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&raw.white_level.to_le_bytes());
    for s in &raw.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Codec {
                offset: self.pos,
                detail: format!(
                    "truncated {what}: expected length {} bytes, actual length {}",
                    self.pos + n,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn decode_hevs(bytes: &[u8]) -> Result<RawImage> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != HEVS_MAGIC {
        return Err(Error::Codec {
            offset: 0,
            detail: format!("bad magic {magic:02x?}"),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != HEVS_VERSION {
        return Err(Error::Codec {
            offset: 4,
            detail: format!("unsupported version {version:#04x}"),
        });
    }
    let id_len = r.take(1, "pattern id length")?[0] as usize;
    let id_at = r.pos;
    let id = r.take(id_len, "pattern id")?;
    if !id.is_ascii() {
        return Err(Error::Codec {
            offset: id_at,
            detail: "pattern id is not ASCII".into(),
        });
    }
    let id = core::str::from_utf8(id).expect("ascii is utf-8");
    let reserved_at = r.pos;
    if r.take(2, "reserved bytes")? != [0, 0] {
        return Err(Error::Codec {
            offset: reserved_at,
            detail: "reserved bytes must be zero".into(),
        });
    }
    let width = u32::from_le_bytes(r.take(4, "width")?.try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(r.take(4, "height")?.try_into().unwrap()) as usize;
    let wl_at = r.pos;
    let white_level = u16::from_le_bytes(r.take(2, "white level")?.try_into().unwrap());
    let n = width.checked_mul(height).and_then(|n| n.checked_mul(2)).ok_or(Error::Codec {
        offset: r.pos,
        detail: "image dimensions overflow".into(),
    })?;
    let payload = r.take(n, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::Codec {
            offset: r.pos,
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let samples = payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    RawImage::new(width, height, samples, id, white_level).map_err(|e| Error::Codec {
        offset: wl_at,
        detail: e.to_string(),
    })
}
