//! Round-trips a smooth field through each fixed-rate codec and reports the error.

use ooc_stencil::codec::{decode, encode, encoded_size, parse_framed, CompressedSegment};
use ooc_stencil::domain::{PlaneRange, SegmentRole};
use ooc_stencil::CodecSpec;

fn main() -> ooc_stencil::Result<()> {
    let values: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.01).sin() * 1e3).collect();
    let codecs = [
        CodecSpec::Identity,
        CodecSpec::Truncate,
        CodecSpec::block_quant(30)?,
        CodecSpec::block_quant(12)?,
    ];
    println!("{:<16} {:>8} {:>10} {:>14}", "codec", "rate", "bytes", "max error");
    for c in codecs {
        let payload = encode(&c, &values)?;
        assert_eq!(payload.len() as u64, encoded_size(&c, values.len() as u64));
        let back = decode(&c, &payload, values.len())?;
        let err = values.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{:<16} {:>8.4} {:>10} {:>14.3e}", c.name(), c.rate(), payload.len(), err);
    }

    let seg = CompressedSegment::encode("pressure_curr", 2, PlaneRange::new(40, 48), SegmentRole::Body, CodecSpec::Truncate, &values)?;
    let framed = seg.to_framed(2);
    let (header, payload) = parse_framed(&framed)?;
    println!("framed segment: {header:?}, {} payload bytes", payload.len());
    Ok(())
}
