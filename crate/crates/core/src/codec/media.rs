//! Sensor payloads: image frames and audio chunks.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde_json::{json, Value};

use super::error::CodecError;
use super::native::{Extension, ExtensionPayload, NativeValue};
use super::plugin::{DecodeOptions, Meta, Plugin, PluginError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageEncoding {
    /// Row-major, interleaved channels, one byte per channel.
    Raw8,
    /// A bare JFIF stream.
    Jpeg,
}

impl ImageEncoding {
    pub fn name(self) -> &'static str {
        match self {
            ImageEncoding::Raw8 => "raw8",
            ImageEncoding::Jpeg => "jpeg",
        }
    }
}

impl fmt::Display for ImageEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImageEncoding {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw8" => Ok(ImageEncoding::Raw8),
            "jpeg" => Ok(ImageEncoding::Jpeg),
            other => Err(CodecError::InvalidImage(format!("unknown encoding {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFrame {
    pub width: u32,
    pub height: u32,
    /// 1 (monochrome) or 3 (RGB).
    pub channels: u8,
    pub encoding: ImageEncoding,
    pub pixel_data: Vec<u8>,
}

impl ImageFrame {
    pub fn raw(width: u32, height: u32, channels: u8, pixel_data: Vec<u8>) -> Result<Self, CodecError> {
        let img = ImageFrame {
            width,
            height,
            channels,
            encoding: ImageEncoding::Raw8,
            pixel_data,
        };
        img.validate()?;
        Ok(img)
    }

    /// Byte length a Raw8 frame of this geometry must have.
    pub fn raw_len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !matches!(self.channels, 1 | 3) {
            return Err(CodecError::InvalidImage(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.encoding == ImageEncoding::Raw8 && self.pixel_data.len() != self.raw_len() {
            return Err(CodecError::GeometryMismatch {
                expected: self.raw_len(),
                actual: self.pixel_data.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn meta(&self) -> Meta {
        let mut meta = Meta::new();
        meta.insert("width".into(), json!(self.width));
        meta.insert("height".into(), json!(self.height));
        meta.insert("channels".into(), json!(self.channels));
        meta.insert("encoding".into(), json!(self.encoding.name()));
        meta
    }

    pub(crate) fn from_meta(meta: &Meta, pixel_data: Vec<u8>) -> Result<Self, CodecError> {
        let field = |key: &str| {
            meta.get(key)
                .and_then(Value::as_u64)
                .ok_or_else(|| CodecError::InvalidImage(format!("missing or invalid {key}")))
        };
        let narrow = |key: &str, v: u64| {
            u32::try_from(v).map_err(|_| CodecError::InvalidImage(format!("{key} out of range")))
        };
        let width = narrow("width", field("width")?)?;
        let height = narrow("height", field("height")?)?;
        let channels = u8::try_from(field("channels")?)
            .map_err(|_| CodecError::InvalidImage("channels out of range".into()))?;
        let encoding = meta
            .get("encoding")
            .and_then(Value::as_str)
            .ok_or_else(|| CodecError::InvalidImage("missing encoding".into()))?
            .parse()?;
        let img = ImageFrame {
            width,
            height,
            channels,
            encoding,
            pixel_data,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn into_native(self) -> NativeValue {
        NativeValue::Extension(Extension::new(IMAGE_PLUGIN_ID, Arc::new(self)))
    }
}

#[cfg(feature = "jpeg")]
impl ImageFrame {
    /// Compresses a Raw8 frame into a JPEG frame of the same geometry.
    pub fn to_jpeg(&self, quality: u8) -> Result<ImageFrame, CodecError> {
        use image::codecs::jpeg::JpegEncoder;
        use image::ExtendedColorType;

        if self.encoding == ImageEncoding::Jpeg {
            return Ok(self.clone());
        }
        self.validate()?;
        let color = if self.channels == 3 {
            ExtendedColorType::Rgb8
        } else {
            ExtendedColorType::L8
        };
        let mut out = Vec::new();
        JpegEncoder::new_with_quality(&mut out, quality)
            .encode(&self.pixel_data, self.width, self.height, color)
            .map_err(|e| CodecError::InvalidImage(e.to_string()))?;
        Ok(ImageFrame {
            encoding: ImageEncoding::Jpeg,
            pixel_data: out,
            ..self.clone()
        })
    }

    /// Decompresses a JPEG frame back to Raw8 (lossy relative to the source).
    pub fn to_raw(&self) -> Result<ImageFrame, CodecError> {
        if self.encoding == ImageEncoding::Raw8 {
            return Ok(self.clone());
        }
        let decoded = image::load_from_memory_with_format(&self.pixel_data, image::ImageFormat::Jpeg)
            .map_err(|e| CodecError::InvalidImage(e.to_string()))?;
        let pixel_data = if self.channels == 3 {
            decoded.to_rgb8().into_raw()
        } else {
            decoded.to_luma8().into_raw()
        };
        ImageFrame::raw(decoded.width(), decoded.height(), self.channels, pixel_data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioChunk {
    /// Sample rate in Hz.
    pub rate: u32,
    /// Samples per channel.
    pub chunk: u32,
    pub channels: u16,
    /// Frame-interleaved: sample `s` of channel `c` sits at `s * channels + c`.
    pub samples: Vec<f32>,
}

impl AudioChunk {
    pub fn new(rate: u32, chunk: u32, channels: u16, samples: Vec<f32>) -> Result<Self, CodecError> {
        let aud = AudioChunk {
            rate,
            chunk,
            channels,
            samples,
        };
        aud.validate()?;
        Ok(aud)
    }

    pub fn expected_len(&self) -> usize {
        self.chunk as usize * self.channels as usize
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.rate == 0 || self.chunk == 0 || self.channels == 0 {
            return Err(CodecError::InvalidAudio(
                "rate, chunk and channels must be positive".into(),
            ));
        }
        if self.samples.len() != self.expected_len() {
            return Err(CodecError::SampleCountMismatch {
                expected: self.expected_len(),
                actual: self.samples.len(),
            });
        }
        if let Some((index, &value)) = self
            .samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && (-1.0..=1.0).contains(*s)))
        {
            return Err(CodecError::SampleOutOfRange { index, value });
        }
        Ok(())
    }

    pub fn sample(&self, frame: usize, channel: usize) -> f32 {
        self.samples[frame * self.channels as usize + channel]
    }

    pub(crate) fn to_le_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    }

    pub(crate) fn meta(&self) -> Meta {
        let mut meta = Meta::new();
        meta.insert("rate".into(), json!(self.rate));
        meta.insert("chunk".into(), json!(self.chunk));
        meta.insert("channels".into(), json!(self.channels));
        meta.insert("format".into(), json!("f32le"));
        meta
    }

    pub(crate) fn from_meta(meta: &Meta, bytes: &[u8]) -> Result<Self, CodecError> {
        let field = |key: &str| {
            meta.get(key)
                .and_then(Value::as_u64)
                .ok_or_else(|| CodecError::InvalidAudio(format!("missing or invalid {key}")))
        };
        let out_of_range = |key: &str| CodecError::InvalidAudio(format!("{key} out of range"));
        let rate = u32::try_from(field("rate")?).map_err(|_| out_of_range("rate"))?;
        let chunk = u32::try_from(field("chunk")?).map_err(|_| out_of_range("chunk"))?;
        let channels = u16::try_from(field("channels")?).map_err(|_| out_of_range("channels"))?;
        match meta.get("format").and_then(Value::as_str) {
            Some("f32le") | None => {}
            Some(other) => {
                return Err(CodecError::InvalidAudio(format!("unsupported format {other:?}")))
            }
        }
        let expected = chunk as usize * channels as usize;
        if bytes.len() != expected * 4 {
            return Err(CodecError::SampleCountMismatch {
                expected,
                actual: bytes.len() / 4,
            });
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        AudioChunk::new(rate, chunk, channels, samples)
    }

    pub fn into_native(self) -> NativeValue {
        NativeValue::Extension(Extension::new(AUDIO_PLUGIN_ID, Arc::new(self)))
    }
}

pub const IMAGE_PLUGIN_ID: &str = "image_frame";
pub const AUDIO_PLUGIN_ID: &str = "audio_chunk";

/// Carries [`ImageFrame`]s inside native objects.
#[derive(Debug, Default)]
pub struct ImagePlugin;

impl Plugin for ImagePlugin {
    fn id(&self) -> &str {
        IMAGE_PLUGIN_ID
    }

    fn detect(&self, value: &dyn ExtensionPayload) -> bool {
        value.as_any().is::<ImageFrame>()
    }

    fn encode(&self, value: &dyn ExtensionPayload) -> Result<(Vec<u8>, Meta), PluginError> {
        let img = value
            .as_any()
            .downcast_ref::<ImageFrame>()
            .ok_or("payload is not an ImageFrame")?;
        img.validate()?;
        Ok((img.pixel_data.clone(), img.meta()))
    }

    fn decode(
        &self,
        data: &[u8],
        meta: &Meta,
        _opts: &DecodeOptions,
    ) -> Result<Arc<dyn ExtensionPayload>, PluginError> {
        Ok(Arc::new(ImageFrame::from_meta(meta, data.to_vec())?))
    }
}

/// Carries [`AudioChunk`]s inside native objects.
#[derive(Debug, Default)]
pub struct AudioPlugin;

impl Plugin for AudioPlugin {
    fn id(&self) -> &str {
        AUDIO_PLUGIN_ID
    }

    fn detect(&self, value: &dyn ExtensionPayload) -> bool {
        value.as_any().is::<AudioChunk>()
    }

    fn encode(&self, value: &dyn ExtensionPayload) -> Result<(Vec<u8>, Meta), PluginError> {
        let aud = value
            .as_any()
            .downcast_ref::<AudioChunk>()
            .ok_or("payload is not an AudioChunk")?;
        aud.validate()?;
        Ok((aud.to_le_bytes(), aud.meta()))
    }

    fn decode(
        &self,
        data: &[u8],
        meta: &Meta,
        _opts: &DecodeOptions,
    ) -> Result<Arc<dyn ExtensionPayload>, PluginError> {
        Ok(Arc::new(AudioChunk::from_meta(meta, data)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_channels_are_mono_or_rgb() {
        assert!(ImageFrame::raw(1, 1, 2, vec![0, 0]).is_err());
        assert!(ImageFrame::raw(1, 1, 1, vec![0]).is_ok());
        assert!(matches!(
            ImageFrame::raw(2, 2, 3, vec![0; 11]),
            Err(CodecError::GeometryMismatch { expected: 12, actual: 11 })
        ));
    }

    #[test]
    fn jpeg_frames_skip_the_length_check() {
        let img = ImageFrame {
            width: 10,
            height: 10,
            channels: 3,
            encoding: ImageEncoding::Jpeg,
            pixel_data: vec![0xff, 0xd8, 0xff],
        };
        assert!(img.validate().is_ok());
    }

    #[test]
    fn audio_validation() {
        assert!(AudioChunk::new(44100, 2, 1, vec![0.5, -1.0]).is_ok());
        assert!(matches!(
            AudioChunk::new(44100, 2, 2, vec![0.0; 3]),
            Err(CodecError::SampleCountMismatch { expected: 4, actual: 3 })
        ));
        assert!(matches!(
            AudioChunk::new(44100, 1, 1, vec![1.5]),
            Err(CodecError::SampleOutOfRange { index: 0, .. })
        ));
        assert!(matches!(
            AudioChunk::new(44100, 1, 1, vec![f32::NAN]),
            Err(CodecError::SampleOutOfRange { .. })
        ));
        assert!(AudioChunk::new(0, 1, 1, vec![0.0]).is_err());
    }

    #[test]
    fn interleaving_layout() {
        let aud = AudioChunk::new(8000, 2, 3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(aud.sample(1, 0), 0.3);
        assert_eq!(aud.sample(0, 2), 0.2);
    }

    #[cfg(feature = "jpeg")]
    #[test]
    fn jpeg_round_trip_keeps_geometry() {
        let img = ImageFrame::raw(16, 8, 3, vec![128; 16 * 8 * 3]).unwrap();
        let jpg = img.to_jpeg(90).unwrap();
        assert_eq!(jpg.encoding, ImageEncoding::Jpeg);
        assert_eq!(&jpg.pixel_data[..2], &[0xff, 0xd8]);
        let back = jpg.to_raw().unwrap();
        assert_eq!((back.width, back.height, back.channels), (16, 8, 3));
        assert!(back.pixel_data.iter().all(|&p| p.abs_diff(128) <= 2));
    }
}
