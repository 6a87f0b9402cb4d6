//! Fixed-rate codecs for contiguous runs of `f64` elements.
//!
//! Every codec has an output size that depends only on the element count, so
//! device buffers can be sized before any data is compressed. Segments are
//! encoded independently; nothing carries over from one segment to the next.

use serde::{Deserialize, Serialize};

use crate::domain::{ChunkPlan, DatasetDecl, PlaneRange, SegmentRole};
use crate::error::{Error, Result};

/// Edge length of a BlockQuant block; a block holds `BLOCK_EDGE³` values.
pub const BLOCK_EDGE: usize = 4;
pub const BLOCK_VALUES: usize = BLOCK_EDGE * BLOCK_EDGE * BLOCK_EDGE;
/// Per-block header: the block minimum and maximum as two `f64`.
pub const BLOCK_HEADER_BYTES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CodecSpec {
    /// Raw little-endian `f64`.
    Identity,
    /// Round-to-nearest narrowing to `f32`.
    Truncate,
    /// Uniform quantization of each 64-value block to `q` bits over its
    /// `[min, max]` range.
    BlockQuant { q: u32 },
}

impl CodecSpec {
    pub const fn identity() -> Self {
        Self::Identity
    }

    pub const fn truncate() -> Self {
        Self::Truncate
    }

    pub fn block_quant(q: u32) -> Result<Self> {
        if !(1..=52).contains(&q) {
            return Err(Error::Config(format!(
                "block quantizer bits must lie in 1..=52, got {q}"
            )));
        }
        Ok(Self::BlockQuant { q })
    }

    /// Bits stored per 64-bit element, headers included.
    pub fn rate_bits(&self) -> u32 {
        match self {
            Self::Identity => 64,
            Self::Truncate => 32,
            // 16 header bytes per 64 values is 2 bits per value
            Self::BlockQuant { q } => q + 2,
        }
    }

    pub fn rate(&self) -> f64 {
        f64::from(self.rate_bits()) / 64.0
    }

    /// Bits of quantized data per element, block headers excluded.
    pub fn payload_bits(&self) -> u32 {
        match self {
            Self::BlockQuant { q } => *q,
            other => other.rate_bits(),
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self, Self::Identity)
    }

    pub fn id(&self) -> u8 {
        match self {
            Self::Identity => 0,
            Self::Truncate => 1,
            Self::BlockQuant { .. } => 2,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Truncate => "truncate".into(),
            Self::BlockQuant { q } => format!("block-quant(q={q})"),
        }
    }

    fn from_id(id: u8, rate_bits: u16) -> Result<Self> {
        match id {
            0 => Ok(Self::Identity),
            1 => Ok(Self::Truncate),
            2 => Self::block_quant(u32::from(rate_bits).saturating_sub(2)),
            other => Err(Error::Framing(format!("unknown codec id {other}"))),
        }
    }
}

impl std::str::FromStr for CodecSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "identity" => Ok(Self::Identity),
            "truncate" => Ok(Self::Truncate),
            _ => {
                let q = lower
                    .strip_prefix("block-quant")
                    .map(|rest| rest.trim_start_matches([':', '=', '-']))
                    .ok_or_else(|| Error::Config(format!("unknown codec `{s}`")))?;
                let q = if q.is_empty() {
                    30
                } else {
                    q.parse()
                        .map_err(|_| Error::Config(format!("bad block-quant bits in `{s}`")))?
                };
                Self::block_quant(q)
            }
        }
    }
}

/// Payload bytes for `count` elements.
pub fn encoded_size(codec: &CodecSpec, count: u64) -> u64 {
    match codec {
        CodecSpec::Identity => 8 * count,
        CodecSpec::Truncate => 4 * count,
        CodecSpec::BlockQuant { q } => {
            count.div_ceil(BLOCK_VALUES as u64) * (BLOCK_HEADER_BYTES + u64::from(*q) * 8)
        }
    }
}

pub fn encode(codec: &CodecSpec, src: &[f64]) -> Result<Vec<u8>> {
    let mut out = vec![0u8; encoded_size(codec, src.len() as u64) as usize];
    encode_into(codec, src, &mut out)?;
    Ok(out)
}

/// Encodes `src` into `dst`, which must be exactly `encoded_size` bytes.
pub fn encode_into(codec: &CodecSpec, src: &[f64], dst: &mut [u8]) -> Result<()> {
    let expected = encoded_size(codec, src.len() as u64);
    if dst.len() as u64 != expected {
        return Err(Error::Framing(format!(
            "{} output buffer is {} bytes, expected {expected}",
            codec.name(),
            dst.len()
        )));
    }
    match codec {
        CodecSpec::Identity => {
            for (v, out) in src.iter().zip(dst.chunks_exact_mut(8)) {
                out.copy_from_slice(&v.to_le_bytes());
            }
        }
        CodecSpec::Truncate => {
            for (i, (v, out)) in src.iter().zip(dst.chunks_exact_mut(4)).enumerate() {
                if !v.is_finite() {
                    return Err(Error::DataQuality(format!(
                        "non-finite value {v} at element {i}"
                    )));
                }
                let narrow = *v as f32;
                if !narrow.is_finite() {
                    return Err(Error::DataQuality(format!(
                        "value {v} at element {i} overflows 32-bit precision"
                    )));
                }
                out.copy_from_slice(&narrow.to_le_bytes());
            }
        }
        CodecSpec::BlockQuant { q } => {
            let block_bytes = (BLOCK_HEADER_BYTES + u64::from(*q) * 8) as usize;
            for (b, (block, out)) in src
                .chunks(BLOCK_VALUES)
                .zip(dst.chunks_exact_mut(block_bytes))
                .enumerate()
            {
                encode_block(*q, block, out).map_err(|e| match e {
                    Error::DataQuality(msg) => {
                        Error::DataQuality(format!("block {b}: {msg}"))
                    }
                    other => other,
                })?;
            }
        }
    }
    Ok(())
}

pub fn decode(codec: &CodecSpec, payload: &[u8], count: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; count];
    decode_into(codec, payload, &mut out)?;
    Ok(out)
}

/// Decodes `payload` into `dst`; the payload length must match `dst.len()` elements.
pub fn decode_into(codec: &CodecSpec, payload: &[u8], dst: &mut [f64]) -> Result<()> {
    let expected = encoded_size(codec, dst.len() as u64);
    if payload.len() as u64 != expected {
        return Err(Error::Framing(format!(
            "{} payload is {} bytes, {} elements need {expected}",
            codec.name(),
            payload.len(),
            dst.len()
        )));
    }
    match codec {
        CodecSpec::Identity => {
            for (v, b) in dst.iter_mut().zip(payload.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().unwrap());
            }
        }
        CodecSpec::Truncate => {
            for (v, b) in dst.iter_mut().zip(payload.chunks_exact(4)) {
                *v = f64::from(f32::from_le_bytes(b.try_into().unwrap()));
            }
        }
        CodecSpec::BlockQuant { q } => {
            let block_bytes = (BLOCK_HEADER_BYTES + u64::from(*q) * 8) as usize;
            for (block, bytes) in dst
                .chunks_mut(BLOCK_VALUES)
                .zip(payload.chunks_exact(block_bytes))
            {
                decode_block(*q, bytes, block);
            }
        }
    }
    Ok(())
}

fn encode_block(q: u32, block: &[f64], out: &mut [u8]) -> Result<()> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (i, v) in block.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::DataQuality(format!("non-finite value {v} at offset {i}")));
        }
        min = min.min(*v);
        max = max.max(*v);
    }
    let range = max - min;
    if !range.is_finite() {
        return Err(Error::DataQuality(format!(
            "block range [{min}, {max}] is not representable"
        )));
    }
    out[..8].copy_from_slice(&min.to_le_bytes());
    out[8..16].copy_from_slice(&max.to_le_bytes());

    let levels = (1u64 << q) as f64;
    let top = (1u64 << q) - 1;
    let last = *block.last().expect("blocks are nonempty");
    let mut writer = BitWriter::new(&mut out[16..]);
    for i in 0..BLOCK_VALUES {
        // partial blocks are padded with the last valid value
        let v = block.get(i).copied().unwrap_or(last);
        let code = if range > 0.0 {
            let scaled = ((v - min) / range * levels).floor();
            (scaled.max(0.0) as u64).min(top)
        } else {
            0
        };
        writer.put(code, q);
    }
    Ok(())
}

fn decode_block(q: u32, bytes: &[u8], block: &mut [f64]) {
    let min = f64::from_le_bytes(bytes[..8].try_into().unwrap());
    let max = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if max == min {
        block.fill(min);
        return;
    }
    let step = (max - min) / (1u64 << q) as f64;
    let mut reader = BitReader::new(&bytes[16..]);
    for v in block.iter_mut() {
        let code = reader.get(q);
        *v = (min + (code as f64 + 0.5) * step).clamp(min, max);
    }
}

struct BitWriter<'a> {
    out: &'a mut [u8],
    acc: u128,
    bits: u32,
    pos: usize,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut [u8]) -> Self {
        Self {
            out,
            acc: 0,
            bits: 0,
            pos: 0,
        }
    }

    fn put(&mut self, value: u64, width: u32) {
        self.acc |= u128::from(value) << self.bits;
        self.bits += width;
        while self.bits >= 8 {
            self.out[self.pos] = self.acc as u8;
            self.pos += 1;
            self.acc >>= 8;
            self.bits -= 8;
        }
    }
}

struct BitReader<'a> {
    src: &'a [u8],
    acc: u128,
    bits: u32,
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(src: &'a [u8]) -> Self {
        Self {
            src,
            acc: 0,
            bits: 0,
            pos: 0,
        }
    }

    fn get(&mut self, width: u32) -> u64 {
        while self.bits < width {
            self.acc |= u128::from(self.src[self.pos]) << self.bits;
            self.pos += 1;
            self.bits += 8;
        }
        let v = (self.acc & ((1u128 << width) - 1)) as u64;
        self.acc >>= width;
        self.bits -= width;
        v
    }
}

/// One independently decodable, fixed-rate payload for a plane range of one
/// dataset of one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedSegment {
    pub dataset: String,
    pub chunk: usize,
    pub planes: PlaneRange,
    pub role: SegmentRole,
    pub codec: CodecSpec,
    pub element_count: u64,
    #[serde(skip)]
    pub payload: Vec<u8>,
}

impl CompressedSegment {
    pub fn encode(
        dataset: &str,
        chunk: usize,
        planes: PlaneRange,
        role: SegmentRole,
        codec: CodecSpec,
        src: &[f64],
    ) -> Result<Self> {
        Ok(Self {
            dataset: dataset.to_owned(),
            chunk,
            planes,
            role,
            codec,
            element_count: src.len() as u64,
            payload: encode(&codec, src)?,
        })
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        decode(&self.codec, &self.payload, self.element_count as usize)
    }

    pub fn decode_into(&self, dst: &mut [f64]) -> Result<()> {
        if dst.len() as u64 != self.element_count {
            return Err(Error::Framing(format!(
                "segment holds {} elements, destination has {}",
                self.element_count,
                dst.len()
            )));
        }
        decode_into(&self.codec, &self.payload, dst)
    }

    pub fn payload_len(&self) -> u64 {
        self.payload.len() as u64
    }

    /// Serializes the segment as a 32-byte header followed by its payload.
    pub fn to_framed(&self, dataset_index: u16) -> Vec<u8> {
        let header = SegmentHeader {
            codec: self.codec,
            role: self.role,
            element_count: self.element_count,
            planes: self.planes,
            chunk: self.chunk as u32,
            dataset_index,
        };
        let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + self.payload.len());
        out.extend_from_slice(&header.to_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub const FRAME_MAGIC: [u8; 4] = *b"OCSG";
pub const FRAME_HEADER_BYTES: usize = 32;

/// Decoded form of the 32-byte little-endian segment header.
///
/// | offset | size | field                                   |
/// |--------|------|-----------------------------------------|
/// | 0      | 4    | magic `OCSG`                            |
/// | 4      | 1    | codec id (0 identity, 1 truncate, 2 bq) |
/// | 5      | 1    | role (0 overlap-head, 1 body)           |
/// | 6      | 2    | rate bits per element                   |
/// | 8      | 8    | element count                           |
/// | 16     | 4    | first plane                             |
/// | 20     | 4    | end plane (exclusive)                   |
/// | 24     | 4    | chunk index                             |
/// | 28     | 2    | dataset index                           |
/// | 30     | 2    | reserved, zero                          |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentHeader {
    pub codec: CodecSpec,
    pub role: SegmentRole,
    pub element_count: u64,
    pub planes: PlaneRange,
    pub chunk: u32,
    pub dataset_index: u16,
}

impl SegmentHeader {
    pub fn to_bytes(&self) -> [u8; FRAME_HEADER_BYTES] {
        let mut b = [0u8; FRAME_HEADER_BYTES];
        b[0..4].copy_from_slice(&FRAME_MAGIC);
        b[4] = self.codec.id();
        b[5] = match self.role {
            SegmentRole::OverlapHead => 0,
            SegmentRole::Body => 1,
        };
        b[6..8].copy_from_slice(&(self.codec.rate_bits() as u16).to_le_bytes());
        b[8..16].copy_from_slice(&self.element_count.to_le_bytes());
        b[16..20].copy_from_slice(&(self.planes.start as u32).to_le_bytes());
        b[20..24].copy_from_slice(&(self.planes.end as u32).to_le_bytes());
        b[24..28].copy_from_slice(&self.chunk.to_le_bytes());
        b[28..30].copy_from_slice(&self.dataset_index.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < FRAME_HEADER_BYTES {
            return Err(Error::Framing(format!(
                "header needs {FRAME_HEADER_BYTES} bytes, got {}",
                b.len()
            )));
        }
        if b[0..4] != FRAME_MAGIC {
            return Err(Error::Framing("bad segment magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([b[o], b[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let role = match b[5] {
            0 => SegmentRole::OverlapHead,
            1 => SegmentRole::Body,
            other => return Err(Error::Framing(format!("unknown segment role {other}"))),
        };
        let codec = CodecSpec::from_id(b[4], u16_at(6))?;
        if codec.rate_bits() != u32::from(u16_at(6)) {
            return Err(Error::Framing(format!(
                "rate {} does not match codec {}",
                u16_at(6),
                codec.name()
            )));
        }
        Ok(Self {
            codec,
            role,
            element_count: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            planes: PlaneRange::new(u32_at(16) as usize, u32_at(20) as usize),
            chunk: u32_at(24),
            dataset_index: u16_at(28),
        })
    }
}

/// Splits a framed buffer into its header and payload, checking the fixed-rate length.
pub fn parse_framed(bytes: &[u8]) -> Result<(SegmentHeader, &[u8])> {
    let header = SegmentHeader::from_bytes(bytes)?;
    let payload = &bytes[FRAME_HEADER_BYTES..];
    let expected = encoded_size(&header.codec, header.element_count);
    if payload.len() as u64 != expected {
        return Err(Error::Framing(format!(
            "framed payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    Ok((header, payload))
}

/// Compresses each transfer segment of chunk `i` of one dataset.
///
/// `host` is the full allocated array of the dataset.
pub fn segment_compress(
    plan: &ChunkPlan,
    dataset: &DatasetDecl,
    i: usize,
    host: &[f64],
    codec: &CodecSpec,
) -> Result<Vec<CompressedSegment>> {
    if !dataset.is_transferred() {
        return Err(Error::Config(format!(
            "dataset `{}` is device scratch and is never transferred",
            dataset.name
        )));
    }
    let chunk = plan.chunks.get(i).ok_or_else(|| {
        Error::Config(format!("chunk {i} out of range for {} chunks", plan.n_chunks))
    })?;
    let plane = plan.grid.plane_elems();
    if host.len() != plane * plan.grid.alloc_z() {
        return Err(Error::Config(format!(
            "host array of `{}` has {} elements, grid needs {}",
            dataset.name,
            host.len(),
            plane * plan.grid.alloc_z()
        )));
    }
    chunk
        .segments
        .iter()
        .map(|s| {
            let src = &host[s.planes.start * plane..s.planes.end * plane];
            CompressedSegment::encode(&dataset.name, i, s.planes, s.role, *codec, src)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(encoded_size(&CodecSpec::Identity, 10), 80);
        assert_eq!(encoded_size(&CodecSpec::Truncate, 10), 40);
        let bq = CodecSpec::block_quant(30).unwrap();
        assert_eq!(encoded_size(&bq, 64), 256);
        assert_eq!(encode(&bq, &[0.25; 64]).unwrap().len(), 256);
        assert_eq!(encoded_size(&bq, 65), 512);
        assert_eq!(encoded_size(&bq, 0), 0);
        assert_eq!(bq.rate_bits(), 32);
    }

    #[test]
    fn identity_is_raw_bytes() {
        let src = [1.5, -0.0, f64::NAN, 1e300];
        let enc = encode(&CodecSpec::Identity, &src).unwrap();
        let raw: Vec<u8> = src.iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(enc, raw);
        let dec = decode(&CodecSpec::Identity, &enc, 4).unwrap();
        for (a, b) in src.iter().zip(&dec) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncate_exact_and_rejects_non_finite() {
        let dec = decode(&CodecSpec::Truncate, &encode(&CodecSpec::Truncate, &[1.0]).unwrap(), 1)
            .unwrap();
        assert_eq!(dec, vec![1.0]);
        assert!(matches!(
            encode(&CodecSpec::Truncate, &[f64::INFINITY]),
            Err(Error::DataQuality(_))
        ));
        assert!(matches!(
            encode(&CodecSpec::Truncate, &[1e300]),
            Err(Error::DataQuality(_))
        ));
    }

    #[test]
    fn block_quant_constant_block_is_exact() {
        let bq = CodecSpec::block_quant(30).unwrap();
        let src = [3.7; 64];
        assert_eq!(decode(&bq, &encode(&bq, &src).unwrap(), 64).unwrap(), src.to_vec());
        assert!(matches!(encode(&bq, &[f64::NAN]), Err(Error::DataQuality(_))));
    }

    #[test]
    fn block_quant_partial_block() {
        let bq = CodecSpec::block_quant(12).unwrap();
        let src: Vec<f64> = (0..70).map(|i| f64::from(i) * 0.1).collect();
        let dec = decode(&bq, &encode(&bq, &src).unwrap(), src.len()).unwrap();
        for (block, (a, b)) in src.chunks(64).zip(dec.chunks(64)).enumerate() {
            let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bound = (hi - lo) / f64::from(1u32 << 13);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= bound * (1.0 + 1e-12), "block {block}");
            }
        }
    }

    #[test]
    fn length_mismatch_is_framing_error() {
        assert!(matches!(
            decode(&CodecSpec::Truncate, &[0u8; 7], 2),
            Err(Error::Framing(_))
        ));
    }

    #[test]
    fn frame_header_roundtrip() {
        let seg = CompressedSegment::encode(
            "pressure_curr",
            3,
            PlaneRange::new(10, 12),
            SegmentRole::OverlapHead,
            CodecSpec::block_quant(20).unwrap(),
            &[1.0, 2.0, 3.0],
        )
        .unwrap();
        let framed = seg.to_framed(2);
        assert_eq!(framed.len(), FRAME_HEADER_BYTES + seg.payload.len());
        let (h, payload) = parse_framed(&framed).unwrap();
        assert_eq!(h.codec, seg.codec);
        assert_eq!(h.role, SegmentRole::OverlapHead);
        assert_eq!(h.planes, PlaneRange::new(10, 12));
        assert_eq!(h.chunk, 3);
        assert_eq!(h.dataset_index, 2);
        assert_eq!(payload, &seg.payload[..]);
        assert!(parse_framed(&framed[..framed.len() - 1]).is_err());
    }

    #[test]
    fn codec_names_parse() {
        assert_eq!("identity".parse::<CodecSpec>().unwrap(), CodecSpec::Identity);
        assert_eq!("Truncate".parse::<CodecSpec>().unwrap(), CodecSpec::Truncate);
        assert_eq!(
            "block-quant:16".parse::<CodecSpec>().unwrap(),
            CodecSpec::BlockQuant { q: 16 }
        );
        assert_eq!(
            "block-quant".parse::<CodecSpec>().unwrap(),
            CodecSpec::BlockQuant { q: 30 }
        );
        assert!("zfp".parse::<CodecSpec>().is_err());
    }
}
