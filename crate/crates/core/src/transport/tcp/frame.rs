//! Multipart framing: `[u32 BE part count]` then, per part,
//! `[u32 BE length][bytes]`.

use std::io::{self, Read, Write};

use bytes::Bytes;

pub const MAX_PARTS: u32 = 1024;
pub const MAX_PART_LEN: u32 = 512 * 1024 * 1024;

pub fn encode_frame<P: AsRef<[u8]>>(parts: &[P]) -> Vec<u8> {
    let total: usize = parts.iter().map(|p| 4 + p.as_ref().len()).sum();
    let mut buf = Vec::with_capacity(4 + total);
    buf.extend_from_slice(&(parts.len() as u32).to_be_bytes());
    for p in parts {
        let p = p.as_ref();
        buf.extend_from_slice(&(p.len() as u32).to_be_bytes());
        buf.extend_from_slice(p);
    }
    buf
}

pub fn write_frame<W: Write, P: AsRef<[u8]>>(w: &mut W, parts: &[P]) -> io::Result<()> {
    w.write_all(&encode_frame(parts))?;
    w.flush()
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<Bytes>>> {
    let mut word = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut word[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let count = u32::from_be_bytes(word);
    if count > MAX_PARTS {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame has {count} parts, limit is {MAX_PARTS}"),
        ));
    }
    let mut parts = Vec::with_capacity(count as usize);
    for _ in 0..count {
        r.read_exact(&mut word)?;
        let len = u32::from_be_bytes(word);
        if len > MAX_PART_LEN {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("frame part of {len} bytes exceeds limit"),
            ));
        }
        let mut part = vec![0u8; len as usize];
        r.read_exact(&mut part)?;
        parts.push(Bytes::from(part));
    }
    Ok(Some(parts))
}
