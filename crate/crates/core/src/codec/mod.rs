//! Payload encoding, independent of any transport.
//!
//! Three payload families are supported:
//!
//! - native structured values ([`NativeValue`]) as plugin-extensible JSON text,
//! - image frames as a metadata header plus raw pixel bytes,
//! - audio chunks as a metadata header plus little-endian `f32` samples.
//!
//! Images and audio chunks can also ride inside native values through the
//! built-in `image_frame` and `audio_chunk` plugins.

mod array;
mod envelope;
mod error;
mod media;
mod native;
mod plugin;

use std::sync::Arc;

use bytes::Bytes;
use parking_lot::RwLock;

pub use array::{DType, DenseArray, DenseArrayPlugin, Element, DENSE_ARRAY_PLUGIN_ID};
pub use envelope::{
    decode_audio, decode_image, encode_audio, encode_image, Header, MessageEnvelope, PayloadKind,
    ENVELOPE_VERSION, ERROR_META_KEY, FWD_HOPS_META_KEY,
};
pub use error::CodecError;
pub use media::{
    AudioChunk, AudioPlugin, ImageEncoding, ImageFrame, ImagePlugin, AUDIO_PLUGIN_ID,
    IMAGE_PLUGIN_ID,
};
pub use native::{Extension, ExtensionPayload, NativeValue, ESCAPE_KEY, LITERAL_KEY, MAX_DEPTH};
pub use plugin::{DecodeOptions, Meta, Plugin, PluginError};

use crate::topic::Topic;
use plugin::PluginSet;

/// Plugin registry plus the native encode/decode entry points.
///
/// Reads (encode/decode) take a shared lock; [`Codec::register_plugin`]
/// takes it exclusively.
pub struct Codec {
    plugins: RwLock<PluginSet>,
}

impl Default for Codec {
    fn default() -> Self {
        Self::new()
    }
}

impl Codec {
    /// A codec with the built-in plugins (dense arrays, images, audio).
    pub fn new() -> Self {
        let codec = Codec::empty();
        let builtins: [Arc<dyn Plugin>; 3] = [
            Arc::new(DenseArrayPlugin),
            Arc::new(ImagePlugin),
            Arc::new(AudioPlugin),
        ];
        for p in builtins {
            codec.register_plugin(p).expect("built-in ids are unique");
        }
        codec
    }

    pub fn empty() -> Self {
        Codec {
            plugins: RwLock::new(PluginSet::default()),
        }
    }

    pub fn register_plugin(&self, plugin: Arc<dyn Plugin>) -> Result<(), CodecError> {
        self.plugins.write().insert(plugin)
    }

    pub fn plugin_ids(&self) -> Vec<String> {
        self.plugins.read().ids().map(str::to_string).collect()
    }

    /// Wraps an opaque value as an extension node, picking the first plugin
    /// (in registration order) whose `detect` accepts it.
    pub fn wrap(&self, payload: Arc<dyn ExtensionPayload>) -> Result<NativeValue, CodecError> {
        let plugins = self.plugins.read();
        let plugin = plugins
            .detect(&*payload)
            .ok_or(CodecError::NoMatchingPlugin)?;
        Ok(NativeValue::Extension(Extension::new(plugin.id(), payload)))
    }

    pub fn encode_native(&self, value: &NativeValue) -> Result<Vec<u8>, CodecError> {
        native::encode(&self.plugins.read(), value)
    }

    pub fn decode_native(&self, text: &[u8], opts: &DecodeOptions) -> Result<NativeValue, CodecError> {
        native::decode(&self.plugins.read(), text, opts)
    }

    pub fn encode_native_envelope(
        &self,
        value: &NativeValue,
        topic: &Topic,
    ) -> Result<MessageEnvelope, CodecError> {
        let text = self.encode_native(value)?;
        Ok(MessageEnvelope::new(
            topic.clone(),
            Header::now(PayloadKind::Native, Meta::new()),
            vec![Bytes::from(text)],
        ))
    }

    pub fn decode_native_envelope(
        &self,
        env: &MessageEnvelope,
        opts: &DecodeOptions,
    ) -> Result<NativeValue, CodecError> {
        if env.kind() != PayloadKind::Native {
            return Err(CodecError::KindMismatch {
                expected: "native",
                actual: env.kind().name().to_string(),
            });
        }
        self.decode_native(env.single_part()?, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, PartialEq)]
    struct Celsius(f64);

    struct CelsiusPlugin(&'static str);

    impl Plugin for CelsiusPlugin {
        fn id(&self) -> &str {
            self.0
        }
        fn detect(&self, value: &dyn ExtensionPayload) -> bool {
            value.as_any().is::<Celsius>()
        }
        fn encode(&self, value: &dyn ExtensionPayload) -> Result<(Vec<u8>, Meta), PluginError> {
            let c = value.as_any().downcast_ref::<Celsius>().ok_or("not celsius")?;
            let mut meta = Meta::new();
            meta.insert("unit".into(), json!("C"));
            Ok((c.0.to_le_bytes().to_vec(), meta))
        }
        fn decode(
            &self,
            data: &[u8],
            _meta: &Meta,
            _opts: &DecodeOptions,
        ) -> Result<Arc<dyn ExtensionPayload>, PluginError> {
            let bytes: [u8; 8] = data.try_into()?;
            Ok(Arc::new(Celsius(f64::from_le_bytes(bytes))))
        }
    }

    #[test]
    fn builtins_are_registered_in_order() {
        assert_eq!(
            Codec::new().plugin_ids(),
            [DENSE_ARRAY_PLUGIN_ID, IMAGE_PLUGIN_ID, AUDIO_PLUGIN_ID]
        );
    }

    #[test]
    fn arrays_wrap_through_the_builtin_plugin() {
        let arr = DenseArray::from_elements(vec![2], &[1u8, 2]).unwrap();
        let v = Codec::new().wrap(Arc::new(arr)).unwrap();
        assert_eq!(v.as_extension().unwrap().plugin_id(), DENSE_ARRAY_PLUGIN_ID);
    }

    #[test]
    fn custom_plugin_round_trip() {
        let codec = Codec::new();
        assert!(matches!(
            codec.wrap(Arc::new(Celsius(21.5))),
            Err(CodecError::NoMatchingPlugin)
        ));
        codec.register_plugin(Arc::new(CelsiusPlugin("celsius"))).unwrap();
        let v = NativeValue::map([("t", codec.wrap(Arc::new(Celsius(21.5))).unwrap())]);
        let text = codec.encode_native(&v).unwrap();
        assert_eq!(codec.decode_native(&text, &DecodeOptions::default()).unwrap(), v);

        // a receiver without the plugin cannot decode it
        assert!(matches!(
            Codec::new().decode_native(&text, &DecodeOptions::default()),
            Err(CodecError::UnknownPlugin(_))
        ));
    }

    #[test]
    fn duplicate_and_invalid_plugin_ids() {
        let codec = Codec::new();
        codec.register_plugin(Arc::new(CelsiusPlugin("celsius"))).unwrap();
        assert!(matches!(
            codec.register_plugin(Arc::new(CelsiusPlugin("celsius"))),
            Err(CodecError::DuplicatePlugin(_))
        ));
        for bad in ["a.b", "$x", ""] {
            assert!(matches!(
                codec.register_plugin(Arc::new(CelsiusPlugin(bad))),
                Err(CodecError::InvalidPluginId(_))
            ));
        }
    }

    #[test]
    fn extension_with_unregistered_id_fails_to_encode() {
        let v = NativeValue::Extension(Extension::new("celsius", Arc::new(Celsius(1.0))));
        assert!(matches!(
            Codec::new().encode_native(&v),
            Err(CodecError::UnknownPlugin(_))
        ));
        let mislabeled = NativeValue::Extension(Extension::new(IMAGE_PLUGIN_ID, Arc::new(Celsius(1.0))));
        assert!(matches!(
            Codec::new().encode_native(&mislabeled),
            Err(CodecError::PluginEncodeFailure { .. })
        ));
    }

    #[test]
    fn media_rides_inside_native_values() {
        let codec = Codec::new();
        let img = ImageFrame::raw(2, 1, 1, vec![9, 8]).unwrap();
        let aud = AudioChunk::new(8000, 1, 2, vec![0.5, -0.5]).unwrap();
        let v = NativeValue::List(vec![img.into_native(), aud.into_native()]);
        let text = codec.encode_native(&v).unwrap();
        assert_eq!(codec.decode_native(&text, &DecodeOptions::default()).unwrap(), v);
    }

    #[test]
    fn native_envelope_round_trip() {
        let codec = Codec::new();
        let topic = Topic::new("/example/read_msg").unwrap();
        let v = NativeValue::map([("msg", "hi".into())]);
        let env = codec.encode_native_envelope(&v, &topic).unwrap();
        assert_eq!(env.kind(), PayloadKind::Native);
        assert_eq!(
            codec.decode_native_envelope(&env, &DecodeOptions::default()).unwrap(),
            v
        );
    }
}
