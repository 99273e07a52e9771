//! Binary event file.
//!
//! ```text
//! header (16 bytes): magic "QCBTEVT1" | version u16 | camera id u16 | reserved u32
//! record (16 bytes): t u64 | px u16 | py u16 | plane u8 | arm u8 | reserved u16
//! ```
//!
//! All integers little-endian. Plane: 0 position, 1 momentum. Arm: 0 signal,
//! 1 idler, 2 unknown.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PhotonEvent;
use crate::{Arm, Error, Plane, Result};

pub const MAGIC: &[u8; 8] = b"QCBTEVT1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFile {
    pub camera_id: u16,
    pub events: Vec<PhotonEvent>,
}

fn plane_code(p: Plane) -> u8 {
    match p {
        Plane::Position => 0,
        Plane::Momentum => 1,
    }
}

fn arm_code(a: Arm) -> u8 {
    match a {
        Arm::Signal => 0,
        Arm::Idler => 1,
        Arm::Unknown => 2,
    }
}

pub fn write_events<W: Write>(mut w: W, camera_id: u16, events: &[PhotonEvent]) -> std::io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[..8].copy_from_slice(MAGIC);
    header[8..10].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[10..12].copy_from_slice(&camera_id.to_le_bytes());
    w.write_all(&header)?;
    for ev in events {
        let mut rec = [0u8; RECORD_LEN];
        rec[..8].copy_from_slice(&ev.t.to_le_bytes());
        rec[8..10].copy_from_slice(&ev.px.to_le_bytes());
        rec[10..12].copy_from_slice(&ev.py.to_le_bytes());
        rec[12] = plane_code(ev.plane);
        rec[13] = arm_code(ev.arm);
        w.write_all(&rec)?;
    }
    w.flush()
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, reason: reason.into() }
}

/// Parses a complete event file held in memory.
pub fn parse_events(bytes: &[u8]) -> Result<EventFile> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), format!("header truncated: {} of {HEADER_LEN} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(format_err(8, format!("unsupported version {version}")));
    }
    let camera_id = u16::from_le_bytes([bytes[10], bytes[11]]);
    let body = &bytes[HEADER_LEN..];
    let whole = body.len() / RECORD_LEN * RECORD_LEN;
    if whole != body.len() {
        let offset = HEADER_LEN + whole;
        return Err(format_err(
            offset,
            format!("record truncated: {} of {RECORD_LEN} bytes", body.len() - whole),
        ));
    }
    let mut events = Vec::with_capacity(body.len() / RECORD_LEN);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = HEADER_LEN + i * RECORD_LEN;
        let plane = match rec[12] {
            0 => Plane::Position,
            1 => Plane::Momentum,
            b => return Err(format_err(offset + 12, format!("invalid plane code {b}"))),
        };
        let arm = match rec[13] {
            0 => Arm::Signal,
            1 => Arm::Idler,
            2 => Arm::Unknown,
            b => return Err(format_err(offset + 13, format!("invalid arm code {b}"))),
        };
        events.push(PhotonEvent {
            t: u64::from_le_bytes(rec[..8].try_into().expect("8-byte slice")),
            px: u16::from_le_bytes([rec[8], rec[9]]),
            py: u16::from_le_bytes([rec[10], rec[11]]),
            plane,
            arm,
            truth: None,
        });
    }
    Ok(EventFile { camera_id, events })
}

pub fn read_events<R: Read>(mut r: R) -> Result<EventFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<reader>", e))?;
    parse_events(&bytes)
}

pub fn write_events_file(path: &Path, camera_id: u16, events: &[PhotonEvent]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_events(BufWriter::new(file), camera_id, events).map_err(|e| Error::io(path, e))
}

pub fn read_events_file(path: &Path) -> Result<EventFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    parse_events(&bytes)
}

/// CSV mirror of the binary record.
pub fn write_events_csv<W: Write>(mut w: W, events: &[PhotonEvent]) -> std::io::Result<()> {
    writeln!(w, "t,px,py,plane,arm")?;
    for ev in events {
        writeln!(w, "{},{},{},{},{}", ev.t, ev.px, ev.py, ev.plane.as_str(), ev.arm.as_str())?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_event() -> impl Strategy<Value = PhotonEvent> {
        (any::<u64>(), any::<u16>(), any::<u16>(), 0u8..2, 0u8..3).prop_map(|(t, px, py, p, a)| PhotonEvent {
            t,
            px,
            py,
            plane: if p == 0 { Plane::Position } else { Plane::Momentum },
            arm: [Arm::Signal, Arm::Idler, Arm::Unknown][a as usize],
            truth: None,
        })
    }

    #[test]
    fn empty_stream_is_header_only() {
        let mut buf = Vec::new();
        write_events(&mut buf, 3, &[]).unwrap();
        assert_eq!(buf.len(), HEADER_LEN);
        assert_eq!(&buf[..8], MAGIC);
        let file = parse_events(&buf).unwrap();
        assert_eq!((file.camera_id, file.events.len()), (3, 0));
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let ev = PhotonEvent { t: 9, px: 1, py: 2, plane: Plane::Momentum, arm: Arm::Idler, truth: None };
        let mut buf = Vec::new();
        write_events(&mut buf, 0, &[ev, ev, ev]).unwrap();

        let truncated = &buf[..buf.len() - 5];
        match parse_events(truncated) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16 + 2 * 16),
            other => panic!("{other:?}"),
        }
        let mut bad_magic = buf.clone();
        bad_magic[3] = b'x';
        assert!(matches!(parse_events(&bad_magic), Err(Error::Format { offset: 0, .. })));
        let mut bad_version = buf.clone();
        bad_version[8] = 7;
        assert!(matches!(parse_events(&bad_version), Err(Error::Format { offset: 8, .. })));
        let mut bad_arm = buf.clone();
        bad_arm[16 + 16 + 13] = 9;
        assert!(matches!(parse_events(&bad_arm), Err(Error::Format { offset: 45, .. })));
        assert!(matches!(parse_events(&buf[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let ev = PhotonEvent { t: 12, px: 3, py: 4, plane: Plane::Position, arm: Arm::Signal, truth: None };
        let mut out = Vec::new();
        write_events_csv(&mut out, &[ev]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "t,px,py,plane,arm\n12,3,4,position,signal\n");
    }

    proptest! {
        #[test]
        fn round_trip(events in proptest::collection::vec(arb_event(), 0..1000), id in any::<u16>()) {
            let mut buf = Vec::new();
            write_events(&mut buf, id, &events).unwrap();
            prop_assert_eq!(buf.len(), HEADER_LEN + RECORD_LEN * events.len());
            let back = read_events(buf.as_slice()).unwrap();
            prop_assert_eq!(back.camera_id, id);
            prop_assert_eq!(back.events, events);
        }
    }
}
