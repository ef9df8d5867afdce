use std::io::{ErrorKind, Read, Write};

use super::{peek_frame_len, WireError, HEADER_BYTES};

/// Upper bound on a single frame accepted from a peer.
pub const MAX_FRAME_BYTES: usize = 64 << 20;

/// Reads one whole frame. `Ok(None)` means the peer closed cleanly between
/// frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut buf = vec![0u8; HEADER_BYTES];
    let mut filled = 0;
    while filled < HEADER_BYTES {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(WireError::Truncated {
                    needed: HEADER_BYTES,
                    available: filled,
                })
            }
            Ok(n) => {
                filled += n;
                if filled >= 4 {
                    // Fail fast on garbage before waiting for a full header.
                    peek_frame_len(&buf[..filled])?;
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    loop {
        if let Some(total) = peek_frame_len(&buf)? {
            if total > MAX_FRAME_BYTES {
                return Err(WireError::FrameTooLarge(total));
            }
            let have = buf.len();
            buf.resize(total, 0);
            read_exact(r, &mut buf[have..], total)?;
            return Ok(Some(buf));
        }
        // Prompt ids and payload length still pending.
        let prompt_len = u16::from_le_bytes([buf[46], buf[47]]) as usize;
        let need = HEADER_BYTES + 4 * prompt_len + 4;
        let have = buf.len();
        buf.resize(need, 0);
        read_exact(r, &mut buf[have..], need)?;
    }
}

fn read_exact<R: Read>(r: &mut R, dst: &mut [u8], total: usize) -> Result<(), WireError> {
    r.read_exact(dst).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => WireError::Truncated {
            needed: total,
            available: total - dst.len(),
        },
        _ => WireError::Io(e),
    })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> Result<(), WireError> {
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}
