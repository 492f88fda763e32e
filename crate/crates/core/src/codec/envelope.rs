//! Multipart envelopes: `[topic, header JSON, payload...]`.

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::error::CodecError;
use super::media::{AudioChunk, ImageFrame};
use super::plugin::Meta;
use crate::topic::Topic;

pub const ENVELOPE_VERSION: u32 = 1;

/// Meta key set on error replies produced by a failing request handler.
pub const ERROR_META_KEY: &str = "error";
/// Meta key counting bridge traversals.
pub const FWD_HOPS_META_KEY: &str = "fwd_hops";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Native,
    Image,
    Audio,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Native => "native",
            PayloadKind::Image => "image",
            PayloadKind::Audio => "audio",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Envelope header. Unknown keys are ignored when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub ver: u32,
    /// Seconds since the Unix epoch, taken from the sender's clock.
    pub ts: f64,
    pub kind: PayloadKind,
    #[serde(default)]
    pub meta: Meta,
}

impl Header {
    pub fn now(kind: PayloadKind, meta: Meta) -> Self {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Header {
            ver: ENVELOPE_VERSION,
            ts,
            kind,
            meta,
        }
    }

    pub fn error_message(&self) -> Option<&str> {
        self.meta.get(ERROR_META_KEY).and_then(Value::as_str)
    }

    pub fn fwd_hops(&self) -> u64 {
        self.meta
            .get(FWD_HOPS_META_KEY)
            .and_then(Value::as_u64)
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("header serialization is infallible")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CodecError> {
        let header: Header = serde_json::from_slice(bytes)
            .map_err(|e| CodecError::MalformedEnvelope(format!("bad header: {e}")))?;
        if header.ver != ENVELOPE_VERSION {
            return Err(CodecError::MalformedEnvelope(format!(
                "unsupported header version {}",
                header.ver
            )));
        }
        Ok(header)
    }
}

/// The unit every transport moves. Immutable once built; the modifiers
/// consume `self` and return a new envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    topic: Topic,
    header: Header,
    payload: Vec<Bytes>,
}

impl MessageEnvelope {
    pub fn new(topic: Topic, header: Header, payload: Vec<Bytes>) -> Self {
        MessageEnvelope {
            topic,
            header,
            payload,
        }
    }

    pub fn topic(&self) -> &Topic {
        &self.topic
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn kind(&self) -> PayloadKind {
        self.header.kind
    }

    pub fn payload(&self) -> &[Bytes] {
        &self.payload
    }

    pub fn with_topic(mut self, topic: Topic) -> Self {
        self.topic = topic;
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: Value) -> Self {
        self.header.meta.insert(key.into(), value);
        self
    }

    /// Wire parts: topic, header JSON, then the payload parts.
    pub fn to_parts(&self) -> Vec<Bytes> {
        let mut parts = Vec::with_capacity(2 + self.payload.len());
        parts.push(Bytes::copy_from_slice(self.topic.as_str().as_bytes()));
        parts.push(Bytes::from(self.header.to_json()));
        parts.extend(self.payload.iter().cloned());
        parts
    }

    pub fn from_parts(parts: Vec<Bytes>) -> Result<Self, CodecError> {
        if parts.len() < 2 {
            return Err(CodecError::MalformedEnvelope(format!(
                "expected at least 2 parts, got {}",
                parts.len()
            )));
        }
        let mut parts = parts.into_iter();
        let topic = parts.next().expect("length checked");
        let topic = std::str::from_utf8(&topic)
            .map_err(|_| CodecError::MalformedEnvelope("topic is not UTF-8".into()))?;
        let topic = Topic::new(topic)?;
        let header = Header::from_json(&parts.next().expect("length checked"))?;
        Ok(MessageEnvelope {
            topic,
            header,
            payload: parts.collect(),
        })
    }

    pub(crate) fn expect_kind(&self, expected: PayloadKind) -> Result<(), CodecError> {
        if self.header.kind != expected {
            return Err(CodecError::KindMismatch {
                expected: expected.name(),
                actual: self.header.kind.name().to_string(),
            });
        }
        Ok(())
    }

    pub(crate) fn single_part(&self) -> Result<&Bytes, CodecError> {
        match self.payload.as_slice() {
            [part] => Ok(part),
            other => Err(CodecError::MalformedEnvelope(format!(
                "expected 1 payload part, got {}",
                other.len()
            ))),
        }
    }
}

pub fn encode_image(img: &ImageFrame, topic: &Topic) -> Result<MessageEnvelope, CodecError> {
    img.validate()?;
    Ok(MessageEnvelope::new(
        topic.clone(),
        Header::now(PayloadKind::Image, img.meta()),
        vec![Bytes::copy_from_slice(&img.pixel_data)],
    ))
}

pub fn decode_image(env: &MessageEnvelope) -> Result<ImageFrame, CodecError> {
    env.expect_kind(PayloadKind::Image)?;
    let data = env.single_part()?;
    ImageFrame::from_meta(&env.header.meta, data.to_vec())
}

pub fn encode_audio(aud: &AudioChunk, topic: &Topic) -> Result<MessageEnvelope, CodecError> {
    aud.validate()?;
    Ok(MessageEnvelope::new(
        topic.clone(),
        Header::now(PayloadKind::Audio, aud.meta()),
        vec![Bytes::from(aud.to_le_bytes())],
    ))
}

pub fn decode_audio(env: &MessageEnvelope) -> Result<AudioChunk, CodecError> {
    env.expect_kind(PayloadKind::Audio)?;
    AudioChunk::from_meta(&env.header.meta, env.single_part()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn topic() -> Topic {
        Topic::new("/example/image_ros_msg").unwrap()
    }

    #[test]
    fn rgb_2x2_envelope_layout() {
        let img = ImageFrame::raw(2, 2, 3, (0..12).collect()).unwrap();
        let env = encode_image(&img, &topic()).unwrap();
        assert_eq!(env.kind(), PayloadKind::Image);
        assert_eq!(
            Value::Object(env.header().meta.clone()),
            json!({"width": 2, "height": 2, "channels": 3, "encoding": "raw8"})
        );
        let parts = env.to_parts();
        assert_eq!(parts.len(), 3);
        assert_eq!(&parts[0][..], b"/example/image_ros_msg");
        assert_eq!(parts[2].len(), 12);
        assert_eq!(decode_image(&env).unwrap(), img);
    }

    #[test]
    fn channeling_image_size() {
        let img = ImageFrame::raw(200, 200, 3, vec![7; 200 * 200 * 3]).unwrap();
        let env = encode_image(&img, &topic()).unwrap();
        assert_eq!(env.payload()[0].len(), 120_000);
    }

    #[test]
    fn geometry_mismatch_on_encode() {
        let img = ImageFrame {
            width: 2,
            height: 2,
            channels: 3,
            encoding: super::super::ImageEncoding::Raw8,
            pixel_data: vec![0; 11],
        };
        assert!(matches!(
            encode_image(&img, &topic()),
            Err(CodecError::GeometryMismatch { expected: 12, actual: 11 })
        ));
    }

    #[test]
    fn channeling_audio_size() {
        let aud = AudioChunk::new(44100, 8820, 1, vec![0.25; 8820]).unwrap();
        let env = encode_audio(&aud, &topic()).unwrap();
        assert_eq!(env.payload()[0].len(), 35_280);
        assert_eq!(
            Value::Object(env.header().meta.clone()),
            json!({"rate": 44100, "chunk": 8820, "channels": 1, "format": "f32le"})
        );
        assert_eq!(decode_audio(&env).unwrap(), aud);
    }

    #[test]
    fn zero_sample_is_four_zero_bytes() {
        let aud = AudioChunk::new(16000, 1, 1, vec![0.0]).unwrap();
        let env = encode_audio(&aud, &topic()).unwrap();
        assert_eq!(&env.payload()[0][..], &[0, 0, 0, 0]);
    }

    #[test]
    fn out_of_range_sample_on_encode() {
        let aud = AudioChunk {
            rate: 44100,
            chunk: 1,
            channels: 1,
            samples: vec![1.5],
        };
        assert!(matches!(
            encode_audio(&aud, &topic()),
            Err(CodecError::SampleOutOfRange { .. })
        ));
    }

    #[test]
    fn kind_mismatch() {
        let aud = AudioChunk::new(8000, 1, 1, vec![0.0]).unwrap();
        let env = encode_audio(&aud, &topic()).unwrap();
        assert!(matches!(decode_image(&env), Err(CodecError::KindMismatch { .. })));
        let img = ImageFrame::raw(1, 1, 1, vec![0]).unwrap();
        let env = encode_image(&img, &topic()).unwrap();
        assert!(matches!(decode_audio(&env), Err(CodecError::KindMismatch { .. })));
    }

    #[test]
    fn short_audio_payload() {
        let meta: Meta = serde_json::from_value(
            json!({"rate": 8000, "chunk": 2, "channels": 2, "format": "f32le"}),
        )
        .unwrap();
        let env = MessageEnvelope::new(
            topic(),
            Header::now(PayloadKind::Audio, meta),
            vec![Bytes::from(vec![0u8; 12])],
        );
        assert!(matches!(
            decode_audio(&env),
            Err(CodecError::SampleCountMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn header_ignores_unknown_keys_and_checks_version() {
        let h = Header::from_json(
            br#"{"ver":1,"ts":1.5,"kind":"native","meta":{},"future":[1,2]}"#,
        )
        .unwrap();
        assert_eq!(h.ts, 1.5);
        assert!(Header::from_json(br#"{"ver":2,"ts":1.5,"kind":"native","meta":{}}"#).is_err());
        assert!(Header::from_json(br#"{"ver":1,"ts":1.5,"kind":"video","meta":{}}"#).is_err());
    }

    #[test]
    fn parts_round_trip() {
        let env = MessageEnvelope::new(
            topic(),
            Header::now(PayloadKind::Native, Meta::new()),
            vec![Bytes::from_static(b"null")],
        );
        let parts = env.to_parts();
        let header: Value = serde_json::from_slice(&parts[1]).unwrap();
        assert_eq!(header["ver"], json!(1));
        let keys: Vec<_> = header.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["ver", "ts", "kind", "meta"]);
        assert_eq!(MessageEnvelope::from_parts(parts).unwrap(), env);
        assert!(MessageEnvelope::from_parts(vec![Bytes::from_static(b"/a")]).is_err());
        assert!(MessageEnvelope::from_parts(vec![
            Bytes::from_static(b"bad topic"),
            Bytes::from_static(b"{}")
        ])
        .is_err());
    }
}
