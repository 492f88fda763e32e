//! Plugin interface for custom value kinds inside native objects.

use std::collections::HashMap;
use std::error::Error as StdError;
use std::sync::Arc;

use serde_json::{Map, Value};

use super::error::CodecError;
use super::native::ExtensionPayload;

pub type PluginError = Box<dyn StdError + Send + Sync>;

/// Kind-specific metadata attached to a plugin payload.
pub type Meta = Map<String, Value>;

/// Encodes one family of opaque values to bytes plus metadata and back.
///
/// The codec base64-encodes the bytes and places them in the escape object
/// next to the plugin id and the metadata map.
pub trait Plugin: Send + Sync {
    fn id(&self) -> &str;

    /// Whether this plugin knows how to encode `value`.
    fn detect(&self, value: &dyn ExtensionPayload) -> bool;

    fn encode(&self, value: &dyn ExtensionPayload) -> Result<(Vec<u8>, Meta), PluginError>;

    fn decode(
        &self,
        data: &[u8],
        meta: &Meta,
        opts: &DecodeOptions,
    ) -> Result<Arc<dyn ExtensionPayload>, PluginError>;
}

/// Receiver-side options applied while decoding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeOptions {
    /// Rewrites dense-array device tags, e.g. `gpu:0 -> cpu`.
    pub device_remap: HashMap<String, String>,
}

impl DecodeOptions {
    pub fn with_device_remap<K: Into<String>, V: Into<String>>(
        mut self,
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        self.device_remap
            .extend(pairs.into_iter().map(|(k, v)| (k.into(), v.into())));
        self
    }

    /// Reads options from a JSON map; unknown keys are ignored.
    pub fn from_map(map: &Map<String, Value>) -> Result<Self, CodecError> {
        let mut opts = DecodeOptions::default();
        if let Some(remap) = map.get("device_remap") {
            let Value::Object(remap) = remap else {
                return Err(CodecError::MalformedJson(
                    "device_remap must be a map of strings".into(),
                ));
            };
            for (from, to) in remap {
                let Value::String(to) = to else {
                    return Err(CodecError::MalformedJson(
                        "device_remap must be a map of strings".into(),
                    ));
                };
                opts.device_remap.insert(from.clone(), to.clone());
            }
        }
        Ok(opts)
    }

    pub fn remap_device<'a>(&'a self, tag: &'a str) -> &'a str {
        self.device_remap.get(tag).map(String::as_str).unwrap_or(tag)
    }
}

/// Ordered set of plugins; lookup by id, detection in registration order.
#[derive(Clone, Default)]
pub(crate) struct PluginSet {
    order: Vec<Arc<dyn Plugin>>,
    by_id: HashMap<String, Arc<dyn Plugin>>,
}

impl PluginSet {
    pub(crate) fn insert(&mut self, plugin: Arc<dyn Plugin>) -> Result<(), CodecError> {
        let id = plugin.id().to_string();
        if id.is_empty() || id.contains('.') || id.contains('$') {
            return Err(CodecError::InvalidPluginId(id));
        }
        if self.by_id.contains_key(&id) {
            return Err(CodecError::DuplicatePlugin(id));
        }
        self.by_id.insert(id, plugin.clone());
        self.order.push(plugin);
        Ok(())
    }

    pub(crate) fn get(&self, id: &str) -> Option<&Arc<dyn Plugin>> {
        self.by_id.get(id)
    }

    pub(crate) fn detect(&self, value: &dyn ExtensionPayload) -> Option<&Arc<dyn Plugin>> {
        self.order.iter().find(|p| p.detect(value))
    }

    pub(crate) fn ids(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|p| p.id())
    }
}
