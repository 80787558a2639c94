//! API-mode frame codec.
//!
//! Wire layout: `0x7E | length hi | length lo | frame_data | checksum`, where the
//! length counts `frame_data` only and the checksum is `0xFF` minus the low byte
//! of the frame-data sum. In escaped mode every byte after the start delimiter
//! that collides with a control character is sent as `0x7D, byte ^ 0x20`.

use thiserror::Error;

pub const START_DELIMITER: u8 = 0x7E;
pub const ESCAPE: u8 = 0x7D;
pub const XON: u8 = 0x11;
pub const XOFF: u8 = 0x13;
const ESCAPE_XOR: u8 = 0x20;

pub const IO_SAMPLE_FRAME_TYPE: u8 = 0x92;
pub const POLL_FRAME_TYPE: u8 = 0x17;

/// 16-bit network address placeholder used when the destination's short address is unknown.
pub const UNKNOWN_ADDR16: u16 = 0xFFFE;
/// Remote command carried by a poll: force an I/O sample.
pub const POLL_COMMAND: [u8; 2] = *b"IS";

const MAX_FRAME_DATA: usize = u16::MAX as usize;
const IO_SAMPLE_HEADER_LEN: usize = 1 + 8 + 2 + 1 + 1 + 2 + 1;
const POLL_LEN: usize = 1 + 1 + 8 + 2 + 1 + 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("invalid-frame: frame data is empty")]
    EmptyFrame,
    #[error("invalid-frame: frame data is {0} bytes, maximum is 65535")]
    FrameTooLong(usize),
    #[error("no-start-delimiter")]
    NoStartDelimiter,
    #[error("truncated-frame declared={declared} available={available}")]
    Truncated { declared: usize, available: usize },
    #[error("checksum-mismatch expected={expected:02X} found={found:02X}")]
    ChecksumMismatch { expected: u8, found: u8 },
    #[error("wrong-frame-type expected={expected:02X} found={found:02X}")]
    WrongFrameType { expected: u8, found: u8 },
    #[error("malformed-payload: {0}")]
    MalformedPayload(String),
}

/// Numeric frame-type bytes. Overridable for radios with a different API table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameTypes {
    pub io_sample: u8,
    pub poll: u8,
}

impl Default for FrameTypes {
    fn default() -> Self {
        Self {
            io_sample: IO_SAMPLE_FRAME_TYPE,
            poll: POLL_FRAME_TYPE,
        }
    }
}

/// Whether control bytes after the start delimiter are escaped on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EscapeMode {
    Unescaped,
    #[default]
    Escaped,
}

impl EscapeMode {
    pub fn from_flag(escaped: bool) -> Self {
        if escaped {
            EscapeMode::Escaped
        } else {
            EscapeMode::Unescaped
        }
    }

    pub fn is_escaped(self) -> bool {
        self == EscapeMode::Escaped
    }
}

/// One API frame. The length and checksum are derived from `frame_data`, so a
/// constructed frame always satisfies both wire invariants.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ApiFrame {
    frame_data: Vec<u8>,
}

impl ApiFrame {
    pub fn new(frame_data: Vec<u8>) -> Result<Self, FrameError> {
        if frame_data.is_empty() {
            return Err(FrameError::EmptyFrame);
        }
        if frame_data.len() > MAX_FRAME_DATA {
            return Err(FrameError::FrameTooLong(frame_data.len()));
        }
        Ok(Self { frame_data })
    }

    pub fn frame_data(&self) -> &[u8] {
        &self.frame_data
    }

    pub fn into_frame_data(self) -> Vec<u8> {
        self.frame_data
    }

    pub fn frame_type(&self) -> u8 {
        self.frame_data[0]
    }

    pub fn length(&self) -> u16 {
        self.frame_data.len() as u16
    }

    pub fn checksum(&self) -> u8 {
        checksum_of(&self.frame_data)
    }
}

fn checksum_of(data: &[u8]) -> u8 {
    let sum = data.iter().fold(0u8, |acc, b| acc.wrapping_add(*b));
    0xFF - sum
}

pub fn compute_checksum(frame_data: &[u8]) -> Result<u8, FrameError> {
    if frame_data.is_empty() {
        return Err(FrameError::EmptyFrame);
    }
    Ok(checksum_of(frame_data))
}

pub fn verify_checksum(frame_data: &[u8], checksum: u8) -> bool {
    frame_data.iter().fold(checksum, |acc, b| acc.wrapping_add(*b)) == 0xFF
}

fn needs_escape(b: u8) -> bool {
    matches!(b, START_DELIMITER | ESCAPE | XON | XOFF)
}

fn push_byte(out: &mut Vec<u8>, b: u8, mode: EscapeMode) {
    if mode.is_escaped() && needs_escape(b) {
        out.push(ESCAPE);
        out.push(b ^ ESCAPE_XOR);
    } else {
        out.push(b);
    }
}

pub fn encode_frame(frame: &ApiFrame, mode: EscapeMode) -> Vec<u8> {
    encode_with_checksum(frame.frame_data(), frame.checksum(), mode)
}

/// Lays out `frame_data` with an arbitrary checksum byte. Used to inject
/// corrupted frames; [`encode_frame`] is the normal path.
pub fn encode_with_checksum(frame_data: &[u8], checksum: u8, mode: EscapeMode) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame_data.len() + 8);
    out.push(START_DELIMITER);
    let [hi, lo] = (frame_data.len() as u16).to_be_bytes();
    push_byte(&mut out, hi, mode);
    push_byte(&mut out, lo, mode);
    for &b in frame_data {
        push_byte(&mut out, b, mode);
    }
    push_byte(&mut out, checksum, mode);
    out
}

/// Reads logical (unescaped) bytes after the start delimiter.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    mode: EscapeMode,
}

impl Reader<'_> {
    fn next(&mut self) -> Option<u8> {
        let b = *self.bytes.get(self.pos)?;
        self.pos += 1;
        if self.mode.is_escaped() && b == ESCAPE {
            let escaped = *self.bytes.get(self.pos)?;
            self.pos += 1;
            Some(escaped ^ ESCAPE_XOR)
        } else {
            Some(b)
        }
    }
}

/// Decodes the first frame in `bytes`, skipping any noise before the start
/// delimiter. Returns the frame and the number of raw bytes consumed.
pub fn decode_frame_prefix(bytes: &[u8], mode: EscapeMode) -> Result<(ApiFrame, usize), FrameError> {
    let start = bytes
        .iter()
        .position(|&b| b == START_DELIMITER)
        .ok_or(FrameError::NoStartDelimiter)?;
    let mut reader = Reader {
        bytes,
        pos: start + 1,
        mode,
    };
    let (hi, lo) = match (reader.next(), reader.next()) {
        (Some(hi), Some(lo)) => (hi, lo),
        _ => {
            return Err(FrameError::Truncated {
                declared: 0,
                available: 0,
            })
        }
    };
    let declared = u16::from_be_bytes([hi, lo]) as usize;
    if declared == 0 {
        return Err(FrameError::EmptyFrame);
    }
    let mut data = Vec::with_capacity(declared);
    while data.len() < declared {
        match reader.next() {
            Some(b) => data.push(b),
            None => {
                return Err(FrameError::Truncated {
                    declared,
                    available: data.len(),
                })
            }
        }
    }
    let found = reader.next().ok_or(FrameError::Truncated {
        declared,
        available: declared,
    })?;
    let expected = checksum_of(&data);
    if expected != found {
        return Err(FrameError::ChecksumMismatch { expected, found });
    }
    Ok((ApiFrame { frame_data: data }, reader.pos))
}

pub fn decode_frame(bytes: &[u8], mode: EscapeMode) -> Result<ApiFrame, FrameError> {
    decode_frame_prefix(bytes, mode).map(|(frame, _)| frame)
}

/// Decoded I/O sample report from an End Device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoSample {
    pub source_addr64: u64,
    pub source_addr16: u16,
    pub receive_options: u8,
    pub sample_count: u8,
    pub digital_mask: u16,
    /// Present iff `digital_mask != 0`.
    pub digital_samples: Option<u16>,
    /// Bit k set means channel ADk is present in `analog_values`.
    pub analog_mask: u8,
    /// One 10-bit reading per set bit of `analog_mask`, lowest channel first.
    pub analog_values: Vec<u16>,
}

impl IoSample {
    /// Sample carrying analog channels only, in ascending channel order.
    pub fn analog(source_addr64: u64, source_addr16: u16, channels: &[(u8, u16)]) -> Self {
        let mut sorted = channels.to_vec();
        sorted.sort_by_key(|(ch, _)| *ch);
        let analog_mask = sorted.iter().fold(0u8, |m, (ch, _)| m | (1 << ch));
        Self {
            source_addr64,
            source_addr16,
            receive_options: 0x01,
            sample_count: 1,
            digital_mask: 0,
            digital_samples: None,
            analog_mask,
            analog_values: sorted.into_iter().map(|(_, v)| v).collect(),
        }
    }

    /// Reading of channel ADk, if present.
    pub fn channel(&self, k: u8) -> Option<u16> {
        if k >= 8 || self.analog_mask & (1 << k) == 0 {
            return None;
        }
        let index = (self.analog_mask & ((1u8 << k) - 1)).count_ones() as usize;
        self.analog_values.get(index).copied()
    }

    fn validate(&self) -> Result<(), FrameError> {
        if self.analog_values.len() != self.analog_mask.count_ones() as usize {
            return Err(FrameError::MalformedPayload(format!(
                "analog mask {:#04x} announces {} channels, {} values given",
                self.analog_mask,
                self.analog_mask.count_ones(),
                self.analog_values.len()
            )));
        }
        if let Some(v) = self.analog_values.iter().find(|v| **v > 1023) {
            return Err(FrameError::MalformedPayload(format!(
                "analog value {v} exceeds 10 bits"
            )));
        }
        if (self.digital_mask != 0) != self.digital_samples.is_some() {
            return Err(FrameError::MalformedPayload(
                "digital samples must be present iff digital mask is nonzero".into(),
            ));
        }
        Ok(())
    }
}

pub fn serialize_io_sample(sample: &IoSample) -> Result<Vec<u8>, FrameError> {
    serialize_io_sample_with(sample, FrameTypes::default())
}

pub fn serialize_io_sample_with(sample: &IoSample, types: FrameTypes) -> Result<Vec<u8>, FrameError> {
    sample.validate()?;
    let mut out = Vec::with_capacity(IO_SAMPLE_HEADER_LEN + 2 + 2 * sample.analog_values.len());
    out.push(types.io_sample);
    out.extend_from_slice(&sample.source_addr64.to_be_bytes());
    out.extend_from_slice(&sample.source_addr16.to_be_bytes());
    out.push(sample.receive_options);
    out.push(sample.sample_count);
    out.extend_from_slice(&sample.digital_mask.to_be_bytes());
    out.push(sample.analog_mask);
    if let Some(d) = sample.digital_samples {
        out.extend_from_slice(&d.to_be_bytes());
    }
    for v in &sample.analog_values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

pub fn parse_io_sample(frame_data: &[u8]) -> Result<IoSample, FrameError> {
    parse_io_sample_with(frame_data, FrameTypes::default())
}

pub fn parse_io_sample_with(frame_data: &[u8], types: FrameTypes) -> Result<IoSample, FrameError> {
    let found = *frame_data.first().ok_or(FrameError::EmptyFrame)?;
    if found != types.io_sample {
        return Err(FrameError::WrongFrameType {
            expected: types.io_sample,
            found,
        });
    }
    if frame_data.len() < IO_SAMPLE_HEADER_LEN {
        return Err(FrameError::MalformedPayload(format!(
            "header needs {IO_SAMPLE_HEADER_LEN} bytes, got {}",
            frame_data.len()
        )));
    }
    let be16 = |at: usize| u16::from_be_bytes([frame_data[at], frame_data[at + 1]]);
    let source_addr64 = u64::from_be_bytes(frame_data[1..9].try_into().expect("8-byte slice"));
    let source_addr16 = be16(9);
    let receive_options = frame_data[11];
    let sample_count = frame_data[12];
    let digital_mask = be16(13);
    let analog_mask = frame_data[15];

    let digital_len = if digital_mask != 0 { 2 } else { 0 };
    let analog_count = analog_mask.count_ones() as usize;
    let expected_len = IO_SAMPLE_HEADER_LEN + digital_len + 2 * analog_count;
    if frame_data.len() != expected_len {
        return Err(FrameError::MalformedPayload(format!(
            "masks announce {expected_len} bytes, frame has {}",
            frame_data.len()
        )));
    }
    let digital_samples = (digital_mask != 0).then(|| be16(IO_SAMPLE_HEADER_LEN));
    let analog_start = IO_SAMPLE_HEADER_LEN + digital_len;
    let analog_values: Vec<u16> = (0..analog_count).map(|i| be16(analog_start + 2 * i)).collect();
    let sample = IoSample {
        source_addr64,
        source_addr16,
        receive_options,
        sample_count,
        digital_mask,
        digital_samples,
        analog_mask,
        analog_values,
    };
    sample.validate()?;
    Ok(sample)
}

/// Coordinator request asking one End Device for a fresh sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollRequest {
    pub dest_addr64: u64,
    /// `None` is sent as [`UNKNOWN_ADDR16`].
    pub dest_addr16: Option<u16>,
    /// 0 requests no acknowledgement.
    pub frame_id: u8,
}

impl PollRequest {
    pub fn new(dest_addr64: u64, frame_id: u8) -> Self {
        Self {
            dest_addr64,
            dest_addr16: None,
            frame_id,
        }
    }
}

pub fn build_poll_request(req: &PollRequest) -> ApiFrame {
    build_poll_request_with(req, FrameTypes::default())
}

pub fn build_poll_request_with(req: &PollRequest, types: FrameTypes) -> ApiFrame {
    let mut data = Vec::with_capacity(POLL_LEN);
    data.push(types.poll);
    data.push(req.frame_id);
    data.extend_from_slice(&req.dest_addr64.to_be_bytes());
    data.extend_from_slice(&req.dest_addr16.unwrap_or(UNKNOWN_ADDR16).to_be_bytes());
    data.push(0x00);
    data.extend_from_slice(&POLL_COMMAND);
    ApiFrame { frame_data: data }
}

pub fn parse_poll_request(frame_data: &[u8]) -> Result<PollRequest, FrameError> {
    parse_poll_request_with(frame_data, FrameTypes::default())
}

pub fn parse_poll_request_with(frame_data: &[u8], types: FrameTypes) -> Result<PollRequest, FrameError> {
    let found = *frame_data.first().ok_or(FrameError::EmptyFrame)?;
    if found != types.poll {
        return Err(FrameError::WrongFrameType {
            expected: types.poll,
            found,
        });
    }
    if frame_data.len() != POLL_LEN {
        return Err(FrameError::MalformedPayload(format!(
            "poll frame must be {POLL_LEN} bytes, got {}",
            frame_data.len()
        )));
    }
    if frame_data[13..15] != POLL_COMMAND {
        return Err(FrameError::MalformedPayload("poll command is not IS".into()));
    }
    let addr16 = u16::from_be_bytes([frame_data[10], frame_data[11]]);
    Ok(PollRequest {
        dest_addr64: u64::from_be_bytes(frame_data[2..10].try_into().expect("8-byte slice")),
        dest_addr16: (addr16 != UNKNOWN_ADDR16).then_some(addr16),
        frame_id: frame_data[1],
    })
}

/// Hands out frame ids cycling through 1..=255; 0 is reserved for "no ack".
#[derive(Debug, Clone, Default)]
pub struct FrameIdCounter {
    last: u8,
}

impl FrameIdCounter {
    pub fn next_id(&mut self) -> u8 {
        self.last = if self.last == u8::MAX { 1 } else { self.last + 1 };
        self.last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG7_ADDR: u64 = 0x0013_A200_409C_2679;

    #[test]
    fn checksum_examples() {
        assert_eq!(compute_checksum(&[0x00]), Ok(0xFF));
        assert_eq!(compute_checksum(&[0x92, 0x00]), Ok(0x6D));
        assert_eq!(compute_checksum(&[0xFF, 0x01]), Ok(0xFF));
        assert_eq!(compute_checksum(&[]), Err(FrameError::EmptyFrame));
    }

    #[test]
    fn verify_examples() {
        assert!(verify_checksum(&[0x00], 0xFF));
        assert!(verify_checksum(&[0x92, 0x00], 0x6D));
        assert!(!verify_checksum(&[0x92, 0x00], 0x6E));
    }

    #[test]
    fn encode_examples() {
        let f = ApiFrame::new(vec![0x00]).unwrap();
        assert_eq!(encode_frame(&f, EscapeMode::Unescaped), [0x7E, 0x00, 0x01, 0x00, 0xFF]);
        let f = ApiFrame::new(vec![0x7E]).unwrap();
        assert_eq!(
            encode_frame(&f, EscapeMode::Escaped),
            [0x7E, 0x00, 0x01, 0x7D, 0x5E, 0x81]
        );
    }

    #[test]
    fn escaped_length_and_checksum_bytes() {
        // length 0x11 and a checksum of 0x7D both need escaping
        let mut data = vec![0u8; 0x11];
        data[0] = 0x82;
        let f = ApiFrame::new(data).unwrap();
        assert_eq!(f.checksum(), 0x7D);
        let wire = encode_frame(&f, EscapeMode::Escaped);
        assert_eq!(&wire[..4], &[0x7E, 0x00, 0x7D, 0x31]);
        assert_eq!(&wire[wire.len() - 2..], &[0x7D, 0x5D]);
        assert_eq!(decode_frame(&wire, EscapeMode::Escaped).unwrap(), f);
    }

    #[test]
    fn decode_examples() {
        let f = decode_frame(&[0x7E, 0x00, 0x01, 0x00, 0xFF], EscapeMode::Unescaped).unwrap();
        assert_eq!(f.frame_data(), &[0x00]);
        assert_eq!(
            decode_frame(&[0x7E, 0x00, 0x02, 0x00], EscapeMode::Unescaped),
            Err(FrameError::Truncated {
                declared: 2,
                available: 1
            })
        );
        let err = decode_frame(&[0x7E, 0x00, 0x01, 0x00, 0x00], EscapeMode::Unescaped).unwrap_err();
        assert_eq!(
            err,
            FrameError::ChecksumMismatch {
                expected: 0xFF,
                found: 0x00
            }
        );
        assert_eq!(err.to_string(), "checksum-mismatch expected=FF found=00");
    }

    #[test]
    fn decode_skips_leading_noise() {
        let (f, used) =
            decode_frame_prefix(&[0x01, 0x02, 0x7E, 0x00, 0x01, 0x00, 0xFF, 0xAA], EscapeMode::Unescaped).unwrap();
        assert_eq!(f.frame_data(), &[0x00]);
        assert_eq!(used, 7);
        assert_eq!(
            decode_frame(&[0x01, 0x02], EscapeMode::Escaped),
            Err(FrameError::NoStartDelimiter)
        );
    }

    #[test]
    fn dangling_escape_is_truncation() {
        assert!(matches!(
            decode_frame(&[0x7E, 0x00, 0x01, 0x7D], EscapeMode::Escaped),
            Err(FrameError::Truncated { .. })
        ));
    }

    #[test]
    fn io_sample_example() {
        let sample = IoSample::analog(FIG7_ADDR, 0x1234, &[(0, 512), (1, 937)]);
        assert_eq!(sample.analog_mask, 0b11);
        let data = serialize_io_sample(&sample).unwrap();
        assert_eq!(data[0], 0x92);
        assert_eq!(&data[1..9], &[0x00, 0x13, 0xA2, 0x00, 0x40, 0x9C, 0x26, 0x79]);
        let parsed = parse_io_sample(&data).unwrap();
        assert_eq!(parsed.channel(0), Some(512));
        assert_eq!(parsed.channel(1), Some(937));
        assert_eq!(parsed.channel(2), None);
        assert_eq!(parsed, sample);
    }

    #[test]
    fn io_sample_masks() {
        let empty = IoSample::analog(FIG7_ADDR, 0, &[]);
        let data = serialize_io_sample(&empty).unwrap();
        assert_eq!(data.len(), IO_SAMPLE_HEADER_LEN);
        assert_eq!(parse_io_sample(&data).unwrap().analog_values, Vec::<u16>::new());

        let mut bad = data.clone();
        bad[15] = 0b1;
        assert!(matches!(parse_io_sample(&bad), Err(FrameError::MalformedPayload(_))));

        let mut wrong = data;
        wrong[0] = 0x90;
        assert_eq!(
            parse_io_sample(&wrong),
            Err(FrameError::WrongFrameType {
                expected: 0x92,
                found: 0x90
            })
        );
    }

    #[test]
    fn io_sample_with_digital_block() {
        let mut s = IoSample::analog(FIG7_ADDR, 0xFFFE, &[(3, 1023)]);
        s.digital_mask = 0x0010;
        s.digital_samples = Some(0x0010);
        let data = serialize_io_sample(&s).unwrap();
        assert_eq!(data.len(), IO_SAMPLE_HEADER_LEN + 4);
        assert_eq!(parse_io_sample(&data).unwrap(), s);
    }

    #[test]
    fn rejects_eleven_bit_values() {
        let s = IoSample::analog(FIG7_ADDR, 0, &[(0, 1024)]);
        assert!(serialize_io_sample(&s).is_err());
    }

    #[test]
    fn poll_request_layout() {
        let frame = build_poll_request(&PollRequest::new(FIG7_ADDR, 1));
        let d = frame.frame_data();
        assert_eq!(d.len(), POLL_LEN);
        assert_eq!(d[0], 0x17);
        assert_eq!(d[1], 1);
        assert_eq!(&d[10..12], &[0xFF, 0xFE]);
        assert_eq!(&d[13..], b"IS");
        // independent checksum
        let sum: u32 = d.iter().map(|b| *b as u32).sum();
        let expected = (0xFF - (sum % 256)) as u8;
        assert_eq!(frame.checksum(), expected);
        assert!(verify_checksum(d, frame.checksum()));
        assert_eq!(parse_poll_request(d).unwrap(), PollRequest::new(FIG7_ADDR, 1));
    }

    #[test]
    fn poll_requests_differ_only_in_frame_id() {
        let a = build_poll_request(&PollRequest::new(FIG7_ADDR, 1));
        let b = build_poll_request(&PollRequest::new(FIG7_ADDR, 2));
        let wa = encode_frame(&a, EscapeMode::Unescaped);
        let wb = encode_frame(&b, EscapeMode::Unescaped);
        let diffs: Vec<usize> = (0..wa.len()).filter(|&i| wa[i] != wb[i]).collect();
        assert_eq!(diffs, vec![4, wa.len() - 1]);
    }

    #[test]
    fn broadcast_poll_uses_unknown_short_address() {
        let frame = build_poll_request(&PollRequest::new(0x0000_0000_0000_FFFF, 0));
        assert_eq!(&frame.frame_data()[2..12], &[0, 0, 0, 0, 0, 0, 0xFF, 0xFF, 0xFF, 0xFE]);
    }

    #[test]
    fn frame_ids_cycle_without_zero() {
        let mut ids = FrameIdCounter::default();
        let seq: Vec<u8> = (0..256).map(|_| ids.next_id()).collect();
        assert_eq!(seq[0], 1);
        assert_eq!(seq[254], 255);
        assert_eq!(seq[255], 1);
        assert!(!seq.contains(&0));
    }

    #[test]
    fn overridden_frame_types() {
        let types = FrameTypes {
            io_sample: 0x83,
            poll: 0x08,
        };
        let s = IoSample::analog(1, 2, &[(0, 5)]);
        let data = serialize_io_sample_with(&s, types).unwrap();
        assert_eq!(data[0], 0x83);
        assert_eq!(parse_io_sample_with(&data, types).unwrap(), s);
        assert!(parse_io_sample(&data).is_err());
    }
}
