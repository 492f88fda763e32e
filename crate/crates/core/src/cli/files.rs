//! Raw container files for images and audio chunks.
//!
//! Both start with an 8-byte magic followed by three little-endian `u32`
//! header fields:
//!
//! * image: `WFIMG\0\0\0`, width, height, channels, then raw pixel bytes;
//! * audio: `WFAUD\0\0\0`, rate, chunk, channels, then `f32le` samples.

use std::io::{self, Write};

use thiserror::Error;

use crate::codec::{AudioChunk, CodecError, ImageEncoding, ImageFrame};

pub const IMAGE_MAGIC: &[u8; 8] = b"WFIMG\0\0\0";
pub const AUDIO_MAGIC: &[u8; 8] = b"WFAUD\0\0\0";
const HEADER_LEN: usize = 8 + 12;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("file is truncated: {0} bytes")]
    Truncated(usize),
    #[error("header field {0} does not fit")]
    FieldRange(&'static str),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn header(bytes: &[u8], magic: &[u8; 8], expected: &'static str) -> Result<[u32; 3], FileError> {
    if bytes.len() < HEADER_LEN {
        return Err(FileError::Truncated(bytes.len()));
    }
    if &bytes[..8] != magic {
        return Err(FileError::BadMagic { expected });
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
    Ok([field(0), field(1), field(2)])
}

fn write_header(out: &mut impl Write, magic: &[u8; 8], fields: [u32; 3]) -> io::Result<()> {
    out.write_all(magic)?;
    for f in fields {
        out.write_all(&f.to_le_bytes())?;
    }
    Ok(())
}

/// Writes a raw image. JPEG frames must be decoded to raw first.
pub fn write_image(out: &mut impl Write, img: &ImageFrame) -> Result<(), FileError> {
    let raw = match img.encoding {
        ImageEncoding::Raw8 => None,
        ImageEncoding::Jpeg => Some(decompress(img)?),
    };
    let img = raw.as_ref().unwrap_or(img);
    write_header(out, IMAGE_MAGIC, [img.width, img.height, u32::from(img.channels)])?;
    out.write_all(&img.pixel_data)?;
    Ok(())
}

#[cfg(feature = "jpeg")]
fn decompress(img: &ImageFrame) -> Result<ImageFrame, CodecError> {
    img.to_raw()
}

#[cfg(not(feature = "jpeg"))]
fn decompress(_: &ImageFrame) -> Result<ImageFrame, CodecError> {
    Err(CodecError::InvalidImage("built without jpeg support".into()))
}

pub fn read_image(bytes: &[u8]) -> Result<ImageFrame, FileError> {
    let [width, height, channels] = header(bytes, IMAGE_MAGIC, "image")?;
    let channels = u8::try_from(channels).map_err(|_| FileError::FieldRange("channels"))?;
    Ok(ImageFrame::raw(width, height, channels, bytes[HEADER_LEN..].to_vec())?)
}

pub fn write_audio(out: &mut impl Write, aud: &AudioChunk) -> Result<(), FileError> {
    write_header(out, AUDIO_MAGIC, [aud.rate, aud.chunk, u32::from(aud.channels)])?;
    let mut body = Vec::with_capacity(aud.samples.len() * 4);
    for s in &aud.samples {
        body.extend_from_slice(&s.to_le_bytes());
    }
    out.write_all(&body)?;
    Ok(())
}

pub fn read_audio(bytes: &[u8]) -> Result<AudioChunk, FileError> {
    let [rate, chunk, channels] = header(bytes, AUDIO_MAGIC, "audio")?;
    let channels = u16::try_from(channels).map_err(|_| FileError::FieldRange("channels"))?;
    let body = &bytes[HEADER_LEN..];
    if !body.len().is_multiple_of(4) {
        return Err(FileError::Truncated(bytes.len()));
    }
    let samples = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(AudioChunk::new(rate, chunk, channels, samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_file_layout() {
        let img = ImageFrame::raw(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let mut buf = Vec::new();
        write_image(&mut buf, &img).unwrap();
        assert_eq!(&buf[..8], b"WFIMG\0\0\0");
        assert_eq!(&buf[8..20], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&buf[20..], &[1, 2, 3, 4, 5, 6]);
        assert_eq!(read_image(&buf).unwrap(), img);
    }

    #[test]
    fn audio_file_layout() {
        let aud = AudioChunk::new(8000, 2, 1, vec![0.5, -1.0]).unwrap();
        let mut buf = Vec::new();
        write_audio(&mut buf, &aud).unwrap();
        assert_eq!(&buf[..8], b"WFAUD\0\0\0");
        assert_eq!(buf.len(), 20 + 8);
        assert_eq!(&buf[20..24], &0.5f32.to_le_bytes());
        assert_eq!(read_audio(&buf).unwrap(), aud);
    }

    #[test]
    fn rejects_wrong_magic_and_short_input() {
        let aud = AudioChunk::new(8000, 1, 1, vec![0.0]).unwrap();
        let mut buf = Vec::new();
        write_audio(&mut buf, &aud).unwrap();
        assert!(matches!(read_image(&buf), Err(FileError::BadMagic { .. })));
        assert!(matches!(read_audio(&buf[..10]), Err(FileError::Truncated(10))));
    }

    #[test]
    fn geometry_is_checked() {
        let mut buf = Vec::new();
        write_header(&mut buf, IMAGE_MAGIC, [2, 2, 3]).unwrap();
        buf.extend_from_slice(&[0; 11]);
        assert!(matches!(read_image(&buf), Err(FileError::Codec(_))));
    }
}
