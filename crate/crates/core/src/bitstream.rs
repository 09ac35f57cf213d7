//! The `.cadm` container: a fixed little-endian header, the codebook, and one
//! MSB-first packed index plane per frame.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CADM"
//!      4     1  version (1)
//!      5     2  original width
//!      7     2  original height
//!      9     1  scale factor s
//!     10     1  bit-depth n
//!     11     2  fps numerator
//!     13     2  fps denominator
//!     15     4  frame count
//!     19  3·2ⁿ  codebook RGB triples
//!      …         frame_count × ⌈w·h·n/8⌉ payload bytes
//! ```

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::Fps;
use crate::quant::{Codebook, QuantizedFrame, Rgb};

pub const MAGIC: [u8; 4] = *b"CADM";
pub const VERSION: u8 = 1;
/// Fixed header bytes preceding the codebook.
pub const HEADER_BYTES: usize = 19;

/// Vanilla-codec bitrates (Kbps) for common resolutions, used as reduction baselines.
pub mod reference_kbps {
    pub const P1080: f64 = 7552.0;
    pub const P720: f64 = 3072.0;
    pub const P480: f64 = 1536.0;
    pub const P360: f64 = 896.0;
    pub const P240: f64 = 576.0;

    pub const ALL: [(&str, f64); 5] = [("1080p", P1080), ("720p", P720), ("480p", P480), ("360p", P360), ("240p", P240)];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub orig_width: u16,
    pub orig_height: u16,
    pub s: u8,
    pub n: u8,
    pub fps: Fps,
    pub frame_count: u32,
    pub codebook: Codebook,
}

impl ContainerHeader {
    /// Dimensions of the stored (downscaled) index planes.
    pub fn decoded_dims(&self) -> (usize, usize) {
        let s = usize::from(self.s);
        (usize::from(self.orig_width).div_ceil(s), usize::from(self.orig_height).div_ceil(s))
    }

    pub fn plane_bytes(&self) -> usize {
        let (w, h) = self.decoded_dims();
        packed_len(w * h, self.n)
    }

    /// Header plus codebook size in bytes.
    pub fn overhead_bytes(&self) -> usize {
        container_overhead_bytes(self.n)
    }

    fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::CorruptData("scale factor 0".into()));
        }
        if !(1..=8).contains(&self.n) || self.codebook.n() != self.n {
            return Err(Error::CorruptData(format!("bit-depth {} (codebook {})", self.n, self.codebook.n())));
        }
        if self.frame_count == 0 {
            return Err(Error::CorruptData("frame count 0".into()));
        }
        if self.orig_width == 0 || self.orig_height == 0 {
            return Err(Error::CorruptData("zero original dimension".into()));
        }
        if self.fps.num == 0 || self.fps.den == 0 {
            return Err(Error::CorruptData("zero fps term".into()));
        }
        Ok(())
    }
}

pub fn container_overhead_bytes(n: u8) -> usize {
    HEADER_BYTES + 3 * (1usize << n)
}

pub fn container_overhead_bits(n: u8) -> u64 {
    8 * container_overhead_bytes(n) as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedVideo {
    pub header: ContainerHeader,
    pub frames: Vec<Vec<u8>>,
}

impl CompressedVideo {
    /// Packs quantized frames into a container. All frames must match the header's
    /// decoded dimensions and bit-depth.
    pub fn from_frames(header: ContainerHeader, frames: &[QuantizedFrame], exec: Exec) -> Result<Self> {
        let (w, h) = header.decoded_dims();
        if frames.len() != header.frame_count as usize {
            return Err(Error::Shape(format!("header says {} frames, got {}", header.frame_count, frames.len())));
        }
        if let Some(q) = frames.iter().find(|q| (q.width, q.height) != (w, h) || q.n != header.n) {
            return Err(Error::Shape(format!("plane {}x{} n={} does not match header {w}x{h} n={}", q.width, q.height, q.n, header.n)));
        }
        let planes = exec.map(frames, |q| pack_indices(&q.indices, header.n));
        Ok(CompressedVideo { header, frames: planes.into_iter().collect::<Result<_>>()? })
    }

    pub fn quantized_frames(&self) -> Result<Vec<QuantizedFrame>> {
        let (w, h) = self.header.decoded_dims();
        self.frames
            .iter()
            .map(|p| Ok(QuantizedFrame { width: w, height: h, n: self.header.n, indices: unpack_indices(p, w * h, self.header.n)? }))
            .collect()
    }

    pub fn payload_bytes(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.header.overhead_bytes() + self.payload_bytes()
    }
}

/// Bytes needed for `count` indices of `n` bits.
pub fn packed_len(count: usize, n: u8) -> usize {
    (count * usize::from(n)).div_ceil(8)
}

/// Concatenates `n`-bit indices MSB-first; the final byte is zero-padded.
pub fn pack_indices(indices: &[u8], n: u8) -> Result<Vec<u8>> {
    assert!((1..=8).contains(&n), "bit-depth {n} outside [1, 8]");
    let limit = 1u32 << n;
    let mut out = Vec::with_capacity(packed_len(indices.len(), n));
    let (mut acc, mut bits) = (0u32, 0u32);
    for &idx in indices {
        if u32::from(idx) >= limit {
            return Err(Error::InvalidIndex { index: u32::from(idx), bits: n });
        }
        acc = (acc << n) | u32::from(idx);
        bits += u32::from(n);
        while bits >= 8 {
            bits -= 8;
            out.push((acc >> bits) as u8);
            acc &= (1 << bits) - 1;
        }
    }
    if bits > 0 {
        out.push((acc << (8 - bits)) as u8);
    }
    Ok(out)
}

/// Inverse of [`pack_indices`] for the first `count` indices.
pub fn unpack_indices(bytes: &[u8], count: usize, n: u8) -> Result<Vec<u8>> {
    assert!((1..=8).contains(&n), "bit-depth {n} outside [1, 8]");
    if bytes.len() < packed_len(count, n) {
        return Err(Error::CorruptData(format!("{} bytes cannot hold {count} {n}-bit indices", bytes.len())));
    }
    let mask = (1u32 << n) - 1;
    let mut out = Vec::with_capacity(count);
    let (mut acc, mut bits) = (0u32, 0u32);
    let mut it = bytes.iter();
    while out.len() < count {
        if bits < u32::from(n) {
            acc = (acc << 8) | u32::from(*it.next().expect("length checked"));
            bits += 8;
        }
        bits -= u32::from(n);
        out.push(((acc >> bits) & mask) as u8);
        acc &= (1 << bits) - 1;
    }
    Ok(out)
}

pub fn serialize(video: &CompressedVideo) -> Vec<u8> {
    let h = &video.header;
    let mut out = Vec::with_capacity(video.total_bytes());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&h.orig_width.to_le_bytes());
    out.extend_from_slice(&h.orig_height.to_le_bytes());
    out.push(h.s);
    out.push(h.n);
    out.extend_from_slice(&h.fps.num.to_le_bytes());
    out.extend_from_slice(&h.fps.den.to_le_bytes());
    out.extend_from_slice(&h.frame_count.to_le_bytes());
    h.codebook.centroids().iter().for_each(|c| out.extend_from_slice(c));
    video.frames.iter().for_each(|p| out.extend_from_slice(p));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + len;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::CorruptData(format!("truncated {what}: need {len} bytes at offset {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Reads only the header and codebook.
pub fn deserialize_header(bytes: &[u8]) -> Result<ContainerHeader> {
    read_header(&mut Reader { bytes, pos: 0 })
}

fn read_header(r: &mut Reader<'_>) -> Result<ContainerHeader> {
    if r.bytes.len() < 4 || r.bytes[..4] != MAGIC {
        return Err(Error::NotACadmFile);
    }
    r.pos = 4;
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let orig_width = r.u16("width")?;
    let orig_height = r.u16("height")?;
    let s = r.u8("scale")?;
    let n = r.u8("bit-depth")?;
    let fps = Fps { num: r.u16("fps numerator")?, den: r.u16("fps denominator")? };
    let frame_count = r.u32("frame count")?;
    if !(1..=8).contains(&n) {
        return Err(Error::CorruptData(format!("bit-depth {n} outside [1, 8]")));
    }
    let centroids: Vec<Rgb> = r.take(3 << n, "codebook")?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let header = ContainerHeader { orig_width, orig_height, s, n, fps, frame_count, codebook: Codebook::new(n, centroids)? };
    header.validate()?;
    Ok(header)
}

pub fn deserialize(bytes: &[u8]) -> Result<CompressedVideo> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    let plane = header.plane_bytes();
    let frames = (0..header.frame_count)
        .map(|i| r.take(plane, &format!("frame {i}")).map(<[u8]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptData(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(CompressedVideo { header, frames })
}

/// Payload bitrate `w·h·n·fps / 1000` for the decoded plane size.
pub fn bitrate_kbps(header: &ContainerHeader) -> f64 {
    let (w, h) = header.decoded_dims();
    payload_kbps(w, h, header.n, header.fps)
}

pub fn payload_kbps(width: usize, height: usize, n: u8, fps: Fps) -> f64 {
    (width * height) as f64 * f64::from(n) * fps.as_f64() / 1000.0
}

/// How many times smaller `achieved_kbps` is than `reference_kbps`.
pub fn reduction_vs_reference(achieved_kbps: f64, reference_kbps: f64) -> Result<f64> {
    if !(achieved_kbps > 0.0 && reference_kbps > 0.0) {
        return Err(Error::InvalidArgument(format!("bitrates must be positive: achieved {achieved_kbps}, reference {reference_kbps}")));
    }
    Ok(reference_kbps / achieved_kbps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(w: u16, h: u16, s: u8, n: u8, frames: u32) -> ContainerHeader {
        let cents = (0..1usize << n).map(|i| [i as u8, (i * 3) as u8, 7]).collect();
        ContainerHeader { orig_width: w, orig_height: h, s, n, fps: Fps::default(), frame_count: frames, codebook: Codebook::new(n, cents).unwrap() }
    }

    /// Bit-string reference: render each index as n binary digits, concatenate, pad.
    fn pack_via_bitstring(indices: &[u8], n: u8) -> Vec<u8> {
        let mut bits: String = indices.iter().map(|&i| format!("{:0width$b}", i, width = usize::from(n))).collect();
        while bits.len() % 8 != 0 {
            bits.push('0');
        }
        bits.as_bytes().chunks(8).map(|c| u8::from_str_radix(std::str::from_utf8(c).unwrap(), 2).unwrap()).collect()
    }

    #[test]
    fn pack_examples() {
        assert_eq!(pack_indices(&[1, 2], 4).unwrap(), [0x12]);
        assert_eq!(pack_indices(&[1, 2, 3], 5).unwrap(), [0x08, 0x86]);
        assert_eq!(pack_via_bitstring(&[1, 2, 3], 5), [0x08, 0x86]);
        assert!(matches!(pack_indices(&[16], 4), Err(Error::InvalidIndex { index: 16, bits: 4 })));
        assert!(pack_indices(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn tiny_container_size() {
        let h = header(1, 1, 1, 4, 1);
        let q = QuantizedFrame { width: 1, height: 1, n: 4, indices: vec![9] };
        let v = CompressedVideo::from_frames(h, &[q], Exec::Sequential).unwrap();
        let bytes = serialize(&v);
        // magic, version, w, h, s, n, fps num, fps den, frame count; codebook; one packed byte.
        let fields = 4 + 1 + 2 + 2 + 1 + 1 + 2 + 2 + 4;
        assert_eq!(bytes.len(), fields + 3 * 16 + 1);
        assert_eq!(HEADER_BYTES, fields);
        assert_eq!(&bytes[..5], b"CADM\x01");
        assert_eq!(*bytes.last().unwrap(), 0x90);
    }

    #[test]
    fn header_layout_is_little_endian() {
        let mut h = header(0x0102, 0x0304, 255, 1, 0x0000_0201);
        h.fps = Fps { num: 30000, den: 1001 };
        let v = CompressedVideo { frames: vec![vec![0; h.plane_bytes()]; h.frame_count as usize], header: h };
        let b = serialize(&v);
        assert_eq!(&b[5..19], &[0x02, 0x01, 0x04, 0x03, 255, 1, 0x30, 0x75, 0xE9, 0x03, 0x01, 0x02, 0x00, 0x00]);
    }

    #[test]
    fn corrupt_inputs() {
        let h = header(3, 2, 1, 2, 2);
        let planes = vec![QuantizedFrame { width: 3, height: 2, n: 2, indices: vec![3, 2, 1, 0, 1, 2] }; 2];
        let bytes = serialize(&CompressedVideo::from_frames(h, &planes, Exec::Sequential).unwrap());

        let mut bad = bytes.clone();
        bad[0] ^= 0xFF;
        assert!(matches!(deserialize(&bad), Err(Error::NotACadmFile)));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(deserialize(&bad), Err(Error::UnsupportedVersion(2))));
        for cut in [5, 18, 20, bytes.len() - 1] {
            assert!(matches!(deserialize(&bytes[..cut]), Err(Error::CorruptData(_))), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(deserialize(&long), Err(Error::CorruptData(_))));
        assert!(matches!(deserialize(b"CA"), Err(Error::NotACadmFile)));
    }

    #[test]
    fn bitrate_examples() {
        // 1920x1080 downscaled by 4 -> 480x270.
        let h = header(1920, 1080, 4, 4, 30);
        assert_eq!(h.decoded_dims(), (480, 270));
        assert_eq!(bitrate_kbps(&h), 15552.0);
        let h8 = header(1920, 1080, 4, 8, 30);
        assert_eq!(bitrate_kbps(&h8), 2.0 * bitrate_kbps(&h));
        let raw = payload_kbps(1920, 1080, 24, Fps::default());
        assert_eq!(raw, 1_492_992.0);
        assert_eq!(raw / bitrate_kbps(&h), 96.0);
        assert_eq!(container_overhead_bits(4), 8 * (19 + 48));
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(reduction_vs_reference(7552.0, reference_kbps::P1080).unwrap(), 1.0);
        assert_eq!(reduction_vs_reference(1536.0, reference_kbps::P720).unwrap(), 2.0);
        assert_eq!(reduction_vs_reference(448.0, reference_kbps::P360).unwrap(), 2.0);
        assert!(matches!(reduction_vs_reference(0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(reduction_vs_reference(1.0, -1.0), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn pack_roundtrip_and_reference(n in 1u8..=8, raw in proptest::collection::vec(any::<u8>(), 0..200)) {
            let xs: Vec<u8> = raw.iter().map(|&x| if n == 8 { x } else { x % (1 << n) }).collect();
            let packed = pack_indices(&xs, n).unwrap();
            prop_assert_eq!(packed.len(), packed_len(xs.len(), n));
            prop_assert_eq!(&packed, &pack_via_bitstring(&xs, n));
            prop_assert_eq!(unpack_indices(&packed, xs.len(), n).unwrap(), xs);
        }

        #[test]
        fn container_roundtrip(w in 1u16..40, h in 1u16..40, s in 1u8..5, n in 1u8..=8, frames in 1u32..4, seed in any::<u64>()) {
            let hd = header(w, h, s, n, frames);
            let (dw, dh) = hd.decoded_dims();
            let planes: Vec<_> = (0..frames).map(|f| QuantizedFrame {
                width: dw, height: dh, n,
                indices: (0..dw * dh).map(|i| ((seed >> (i % 50)) as usize + i * 7 + f as usize) as u8 & (((1u16 << n) - 1) as u8)).collect(),
            }).collect();
            let v = CompressedVideo::from_frames(hd, &planes, Exec::Parallel).unwrap();
            let bytes = serialize(&v);
            prop_assert_eq!(bytes.len(), container_overhead_bytes(n) + frames as usize * packed_len(dw * dh, n));
            let back = deserialize(&bytes).unwrap();
            prop_assert_eq!(serialize(&back), bytes);
            prop_assert_eq!(back.quantized_frames().unwrap(), planes);
            prop_assert_eq!(back, v);
        }
    }
}
