//! Event data model and the HEV1 binary stream codec.
//!
//! HEV1 layout (all little-endian):
//!
//! ```text
//! header (16 bytes): "HEV1" | version u16 = 1 | width u16 | height u16 | record_count u32 | 2 reserved bytes = 0
//! record (16 bytes): t u64 (µs) | x u16 | y u16 | p u8 | 3 reserved bytes = 0
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const HEV1_MAGIC: &[u8; 4] = b"HEV1";
pub const HEV1_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 16;

/// A single sensor event: pixel column/row, polarity (1 = brighter, 0 = darker)
/// and timestamp in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub p: u8,
    pub t: u64,
}

impl Event {
    pub fn new(x: u16, y: u16, p: u8, t: u64) -> Self {
        Self { x, y, p, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub const fn new(width: u16, height: u16) -> Self {
        Self { width, height }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_valid(&self) -> bool {
        self.width >= 1 && self.height >= 1
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self::new(320, 320)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventStream {
    pub geometry: SensorGeometry,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Self {
        Self { geometry, events }
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        Self::new(geometry, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.events.last().map(|e| e.t)
    }

    /// Returns a copy with every timestamp moved forward by `offset` µs.
    pub fn shifted(&self, offset: u64) -> Self {
        let events = self
            .events
            .iter()
            .map(|e| Event { t: e.t + offset, ..*e })
            .collect();
        Self::new(self.geometry, events)
    }

    /// Index range of events with `lo <= t <= hi`. Requires sorted timestamps.
    pub fn range_inclusive(&self, lo: u64, hi: u64) -> std::ops::Range<usize> {
        let start = self.events.partition_point(|e| e.t < lo);
        let end = self.events.partition_point(|e| e.t <= hi);
        start..end.max(start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Geometry,
    ColumnOutOfBounds,
    RowOutOfBounds,
    Polarity,
    TimestampOrder,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Geometry => "geometry must be at least 1x1",
            Rule::ColumnOutOfBounds => "x >= width",
            Rule::RowOutOfBounds => "y >= height",
            Rule::Polarity => "polarity not in {0, 1}",
            Rule::TimestampOrder => "timestamp decreases",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    /// Index of the offending event; `None` for stream-level violations.
    pub index: Option<usize>,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        write!(f, "{} violation(s):", self.violations.len())?;
        for v in self.violations.iter().take(8) {
            match v.index {
                Some(i) => write!(f, " [{i}: {}]", v.rule)?,
                None => write!(f, " [stream: {}]", v.rule)?,
            }
        }
        if self.violations.len() > 8 {
            f.write_str(" ...")?;
        }
        Ok(())
    }
}

pub fn validate_stream(stream: &EventStream) -> ValidationReport {
    let mut violations = Vec::new();
    let g = stream.geometry;
    if !g.is_valid() {
        violations.push(Violation { index: None, rule: Rule::Geometry });
    }
    let mut prev_t = 0u64;
    for (i, e) in stream.events.iter().enumerate() {
        if e.x >= g.width {
            violations.push(Violation { index: Some(i), rule: Rule::ColumnOutOfBounds });
        }
        if e.y >= g.height {
            violations.push(Violation { index: Some(i), rule: Rule::RowOutOfBounds });
        }
        if e.p > 1 {
            violations.push(Violation { index: Some(i), rule: Rule::Polarity });
        }
        if i > 0 && e.t < prev_t {
            violations.push(Violation { index: Some(i), rule: Rule::TimestampOrder });
        }
        prev_t = e.t;
    }
    ValidationReport { violations }
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("refusing to encode invalid stream: {0}")]
    Invalid(ValidationReport),
    #[error("{0} events exceed the u32 record count")]
    TooManyEvents(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated header: {0} bytes, need {HEADER_LEN}")]
    TruncatedHeader(usize),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("invalid geometry {width}x{height}")]
    InvalidGeometry { width: u16, height: u16 },
    #[error("nonzero header padding")]
    NonzeroHeaderPadding,
    #[error("truncated record {index}: header declares {declared} records")]
    TruncatedRecord { index: usize, declared: u32 },
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("record {index} at ({x}, {y}) is outside the sensor")]
    OutOfBounds { index: usize, x: u16, y: u16 },
    #[error("record {index} has polarity {p}")]
    BadPolarity { index: usize, p: u8 },
    #[error("record {index} has nonzero reserved bytes")]
    NonzeroReserved { index: usize },
    #[error("record {index} timestamp goes backwards")]
    TimestampOrder { index: usize },
}

pub fn encode_events(stream: &EventStream) -> Result<Vec<u8>, EncodeError> {
    let report = validate_stream(stream);
    if !report.is_ok() {
        return Err(EncodeError::Invalid(report));
    }
    let count = u32::try_from(stream.events.len())
        .map_err(|_| EncodeError::TooManyEvents(stream.events.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.events.len());
    out.extend_from_slice(HEV1_MAGIC);
    out.extend_from_slice(&HEV1_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.geometry.width.to_le_bytes());
    out.extend_from_slice(&stream.geometry.height.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p);
        out.extend_from_slice(&[0, 0, 0]);
    }
    Ok(out)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::TruncatedHeader(bytes.len()));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if &magic != HEV1_MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let version = u16_at(bytes, 4);
    if version != HEV1_VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let geometry = SensorGeometry::new(u16_at(bytes, 6), u16_at(bytes, 8));
    if !geometry.is_valid() {
        return Err(DecodeError::InvalidGeometry { width: geometry.width, height: geometry.height });
    }
    let declared = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]);
    if bytes[14] != 0 || bytes[15] != 0 {
        return Err(DecodeError::NonzeroHeaderPadding);
    }
    let body = &bytes[HEADER_LEN..];
    let available = body.len() / RECORD_LEN;
    if (declared as usize) > available {
        return Err(DecodeError::TruncatedRecord { index: available, declared });
    }
    let used = declared as usize * RECORD_LEN;
    if body.len() > used {
        return Err(DecodeError::TrailingBytes(body.len() - used));
    }

    let mut events = Vec::with_capacity(declared as usize);
    let mut prev_t = 0u64;
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let mut t = [0u8; 8];
        t.copy_from_slice(&rec[0..8]);
        let t = u64::from_le_bytes(t);
        let x = u16_at(rec, 8);
        let y = u16_at(rec, 10);
        let p = rec[12];
        if !geometry.contains(x, y) {
            return Err(DecodeError::OutOfBounds { index, x, y });
        }
        if p > 1 {
            return Err(DecodeError::BadPolarity { index, p });
        }
        if rec[13..16] != [0, 0, 0] {
            return Err(DecodeError::NonzeroReserved { index });
        }
        if index > 0 && t < prev_t {
            return Err(DecodeError::TimestampOrder { index });
        }
        prev_t = t;
        events.push(Event { x, y, p, t });
    }
    Ok(EventStream { geometry, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_stream_is_valid() {
        assert!(validate_stream(&EventStream::empty(SensorGeometry::default())).is_ok());
    }

    #[test]
    fn decreasing_timestamp_is_reported_at_its_index() {
        let s = EventStream::new(
            SensorGeometry::default(),
            vec![Event::new(0, 0, 1, 5), Event::new(0, 0, 1, 3)],
        );
        let report = validate_stream(&s);
        assert_eq!(
            report.violations,
            vec![Violation { index: Some(1), rule: Rule::TimestampOrder }]
        );
    }

    #[test]
    fn out_of_bounds_and_polarity_are_enumerated() {
        let s = EventStream::new(
            SensorGeometry::new(4, 4),
            vec![Event::new(4, 0, 1, 0), Event::new(0, 9, 2, 1)],
        );
        let rules: Vec<_> = validate_stream(&s).violations.iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::ColumnOutOfBounds, Rule::RowOutOfBounds, Rule::Polarity]);
    }

    #[test]
    fn empty_stream_encodes_to_bare_header() {
        let bytes = encode_events(&EventStream::empty(SensorGeometry::default())).unwrap();
        assert_eq!(bytes, b"HEV1\x01\x00\x40\x01\x40\x01\x00\x00\x00\x00\x00\x00");
    }

    #[test]
    fn single_event_record_layout() {
        let s = EventStream::new(SensorGeometry::default(), vec![Event::new(3, 4, 1, 100)]);
        let bytes = encode_events(&s).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(
            &bytes[16..],
            &[100, 0, 0, 0, 0, 0, 0, 0, 3, 0, 4, 0, 1, 0, 0, 0]
        );
        assert_eq!(decode_events(&bytes).unwrap(), s);
    }

    #[test]
    fn invalid_stream_is_not_encoded() {
        let s = EventStream::new(SensorGeometry::new(2, 2), vec![Event::new(5, 0, 0, 0)]);
        assert!(encode_events(&s).is_err());
    }

    #[test]
    fn named_decode_errors() {
        let good = encode_events(&EventStream::new(
            SensorGeometry::new(8, 8),
            vec![Event::new(1, 1, 0, 10), Event::new(2, 2, 1, 20)],
        ))
        .unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_events(&bad), Err(DecodeError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode_events(&bad), Err(DecodeError::UnsupportedVersion(2)));

        assert!(matches!(
            decode_events(&good[..good.len() - 3]),
            Err(DecodeError::TruncatedRecord { index: 1, declared: 2 })
        ));
        assert_eq!(decode_events(&good[..10]), Err(DecodeError::TruncatedHeader(10)));

        let mut bad = good.clone();
        bad[16 + 8] = 8;
        assert!(matches!(decode_events(&bad), Err(DecodeError::OutOfBounds { index: 0, .. })));

        let mut bad = good.clone();
        bad[16 + 12] = 7;
        assert!(matches!(decode_events(&bad), Err(DecodeError::BadPolarity { index: 0, p: 7 })));

        let mut bad = good.clone();
        bad[32] = 0;
        bad[33] = 0;
        assert!(matches!(decode_events(&bad), Err(DecodeError::TimestampOrder { index: 1 })));
    }

    pub(crate) fn arb_stream() -> impl Strategy<Value = EventStream> {
        (1u16..400, 1u16..400).prop_flat_map(|(w, h)| {
            prop::collection::vec((0..w, 0..h, 0u8..2, 0u64..5_000), 0..200).prop_map(
                move |raw| {
                    let mut t = 0u64;
                    let events = raw
                        .into_iter()
                        .map(|(x, y, p, dt)| {
                            t += dt;
                            Event::new(x, y, p, t)
                        })
                        .collect();
                    EventStream::new(SensorGeometry::new(w, h), events)
                },
            )
        })
    }

    proptest! {
        #[test]
        fn round_trip(s in arb_stream()) {
            prop_assert!(validate_stream(&s).is_ok());
            let bytes = encode_events(&s).unwrap();
            prop_assert_eq!(encode_events(&s).unwrap(), bytes.clone());
            prop_assert_eq!(decode_events(&bytes).unwrap(), s);
        }

        #[test]
        fn decoder_is_total(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            if let Ok(s) = decode_events(&bytes) {
                prop_assert!(validate_stream(&s).is_ok());
            }
        }

        #[test]
        fn decoder_is_total_on_valid_headers(tail in prop::collection::vec(any::<u8>(), 0..96), count in 0u32..8) {
            let mut bytes = b"HEV1\x01\x00\x10\x00\x10\x00".to_vec();
            bytes.extend_from_slice(&count.to_le_bytes());
            bytes.extend_from_slice(&[0, 0]);
            bytes.extend_from_slice(&tail);
            if let Ok(s) = decode_events(&bytes) {
                prop_assert!(validate_stream(&s).is_ok());
            }
        }
    }
}
