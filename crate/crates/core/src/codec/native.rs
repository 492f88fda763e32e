//! Structured native values and their JSON text form.
//!
//! Plain nodes map onto their JSON analogs. Plugin-backed nodes travel as an
//! escape object `{"__wrapyfi__": [plugin_id, base64, meta]}`; a user map
//! that happens to contain one of the reserved keys is wrapped as
//! `{"__wrapyfi_lit__": {...}}` so decoding stays unambiguous.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::Deserialize as _;
use serde_json::{Map, Value};

use super::error::CodecError;
use super::plugin::{DecodeOptions, PluginSet};

/// Reserved key of the plugin escape object.
pub const ESCAPE_KEY: &str = "__wrapyfi__";
/// Reserved key wrapping user maps that collide with [`ESCAPE_KEY`].
pub const LITERAL_KEY: &str = "__wrapyfi_lit__";
/// Maximum nesting depth of a [`NativeValue`] tree (the root is depth 1).
pub const MAX_DEPTH: usize = 64;

// Every value level adds at most two JSON levels (literal wrapper + map), and
// the deepest plugin meta we emit adds a handful more.
const MAX_JSON_NESTING: usize = 2 * MAX_DEPTH + 8;

/// Opaque value carried by an [`Extension`] node.
///
/// Implemented for every `Debug + PartialEq + Send + Sync + 'static` type, so
/// plugin authors only need those derives on their payload type.
pub trait ExtensionPayload: Any + fmt::Debug + Send + Sync {
    fn as_any(&self) -> &dyn Any;
    fn dyn_eq(&self, other: &dyn ExtensionPayload) -> bool;
}

impl<T> ExtensionPayload for T
where
    T: Any + fmt::Debug + PartialEq + Send + Sync,
{
    fn as_any(&self) -> &dyn Any {
        self
    }

    fn dyn_eq(&self, other: &dyn ExtensionPayload) -> bool {
        other
            .as_any()
            .downcast_ref::<T>()
            .is_some_and(|o| self == o)
    }
}

/// A plugin-encoded node inside a native value.
#[derive(Clone)]
pub struct Extension {
    plugin_id: String,
    payload: Arc<dyn ExtensionPayload>,
}

impl Extension {
    pub fn new(plugin_id: impl Into<String>, payload: Arc<dyn ExtensionPayload>) -> Self {
        Extension {
            plugin_id: plugin_id.into(),
            payload,
        }
    }

    pub fn plugin_id(&self) -> &str {
        &self.plugin_id
    }

    pub fn payload(&self) -> &dyn ExtensionPayload {
        &*self.payload
    }

    pub fn downcast_ref<T: Any>(&self) -> Option<&T> {
        (*self.payload).as_any().downcast_ref::<T>()
    }
}

impl fmt::Debug for Extension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Extension")
            .field("plugin_id", &self.plugin_id)
            .field("payload", &self.payload)
            .finish()
    }
}

impl PartialEq for Extension {
    fn eq(&self, other: &Self) -> bool {
        self.plugin_id == other.plugin_id && (*self.payload).dyn_eq(&*other.payload)
    }
}

/// Recursive structured value exchanged as a `NativeObject`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum NativeValue {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<NativeValue>),
    Map(BTreeMap<String, NativeValue>),
    Extension(Extension),
}

impl NativeValue {
    pub fn map<K: Into<String>, I: IntoIterator<Item = (K, NativeValue)>>(entries: I) -> Self {
        NativeValue::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            NativeValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            NativeValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            NativeValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[NativeValue]> {
        match self {
            NativeValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, NativeValue>> {
        match self {
            NativeValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&NativeValue> {
        self.as_map().and_then(|m| m.get(key))
    }

    pub fn as_extension(&self) -> Option<&Extension> {
        match self {
            NativeValue::Extension(e) => Some(e),
            _ => None,
        }
    }

    /// Nesting depth, counting the root as 1.
    pub fn depth(&self) -> usize {
        match self {
            NativeValue::List(items) => 1 + items.iter().map(NativeValue::depth).max().unwrap_or(0),
            NativeValue::Map(m) => 1 + m.values().map(NativeValue::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    /// True when no node in the tree is an [`Extension`].
    pub fn is_plugin_free(&self) -> bool {
        match self {
            NativeValue::Extension(_) => false,
            NativeValue::List(items) => items.iter().all(NativeValue::is_plugin_free),
            NativeValue::Map(m) => m.values().all(NativeValue::is_plugin_free),
            _ => true,
        }
    }
}

impl From<bool> for NativeValue {
    fn from(v: bool) -> Self {
        NativeValue::Bool(v)
    }
}

impl From<i64> for NativeValue {
    fn from(v: i64) -> Self {
        NativeValue::Int(v)
    }
}

impl From<i32> for NativeValue {
    fn from(v: i32) -> Self {
        NativeValue::Int(v.into())
    }
}

impl From<f64> for NativeValue {
    fn from(v: f64) -> Self {
        NativeValue::Float(v)
    }
}

impl From<&str> for NativeValue {
    fn from(v: &str) -> Self {
        NativeValue::Str(v.to_string())
    }
}

impl From<String> for NativeValue {
    fn from(v: String) -> Self {
        NativeValue::Str(v)
    }
}

impl From<Vec<NativeValue>> for NativeValue {
    fn from(v: Vec<NativeValue>) -> Self {
        NativeValue::List(v)
    }
}

impl From<BTreeMap<String, NativeValue>> for NativeValue {
    fn from(v: BTreeMap<String, NativeValue>) -> Self {
        NativeValue::Map(v)
    }
}

impl From<Extension> for NativeValue {
    fn from(v: Extension) -> Self {
        NativeValue::Extension(v)
    }
}

pub(crate) fn encode(plugins: &PluginSet, value: &NativeValue) -> Result<Vec<u8>, CodecError> {
    let json = to_json(plugins, value, 1)?;
    serde_json::to_vec(&json).map_err(|e| CodecError::MalformedJson(e.to_string()))
}

fn to_json(plugins: &PluginSet, value: &NativeValue, depth: usize) -> Result<Value, CodecError> {
    if depth > MAX_DEPTH {
        return Err(CodecError::DepthExceeded { max: MAX_DEPTH });
    }
    Ok(match value {
        NativeValue::Null => Value::Null,
        NativeValue::Bool(b) => Value::Bool(*b),
        NativeValue::Int(i) => Value::from(*i),
        NativeValue::Float(f) => {
            if !f.is_finite() {
                return Err(CodecError::NonFiniteFloat(*f));
            }
            Value::from(*f)
        }
        NativeValue::Str(s) => Value::String(s.clone()),
        NativeValue::List(items) => Value::Array(
            items
                .iter()
                .map(|v| to_json(plugins, v, depth + 1))
                .collect::<Result<_, _>>()?,
        ),
        NativeValue::Map(m) => {
            let mut obj = Map::with_capacity(m.len());
            for (k, v) in m {
                obj.insert(k.clone(), to_json(plugins, v, depth + 1)?);
            }
            if m.contains_key(ESCAPE_KEY) || m.contains_key(LITERAL_KEY) {
                let mut wrapper = Map::with_capacity(1);
                wrapper.insert(LITERAL_KEY.to_string(), Value::Object(obj));
                Value::Object(wrapper)
            } else {
                Value::Object(obj)
            }
        }
        NativeValue::Extension(ext) => {
            let plugin = plugins
                .get(ext.plugin_id())
                .ok_or_else(|| CodecError::UnknownPlugin(ext.plugin_id().to_string()))?;
            if !plugin.detect(ext.payload()) {
                return Err(CodecError::PluginEncodeFailure {
                    plugin: ext.plugin_id().to_string(),
                    reason: "plugin does not accept this payload type".into(),
                });
            }
            let (bytes, meta) =
                plugin
                    .encode(ext.payload())
                    .map_err(|e| CodecError::PluginEncodeFailure {
                        plugin: ext.plugin_id().to_string(),
                        reason: e.to_string(),
                    })?;
            let triple = Value::Array(vec![
                Value::String(ext.plugin_id().to_string()),
                Value::String(BASE64.encode(bytes)),
                Value::Object(meta),
            ]);
            let mut obj = Map::with_capacity(1);
            obj.insert(ESCAPE_KEY.to_string(), triple);
            Value::Object(obj)
        }
    })
}

pub(crate) fn decode(
    plugins: &PluginSet,
    text: &[u8],
    opts: &DecodeOptions,
) -> Result<NativeValue, CodecError> {
    let text = std::str::from_utf8(text)
        .map_err(|e| CodecError::MalformedJson(format!("invalid UTF-8: {e}")))?;
    if json_nesting(text) > MAX_JSON_NESTING {
        return Err(CodecError::DepthExceeded { max: MAX_DEPTH });
    }
    let mut de = serde_json::Deserializer::from_str(text);
    de.disable_recursion_limit();
    let json = Value::deserialize(&mut de).map_err(|e| CodecError::MalformedJson(e.to_string()))?;
    de.end()
        .map_err(|e| CodecError::MalformedJson(e.to_string()))?;
    from_json(plugins, json, opts, 1)
}

/// Maximum bracket nesting outside string literals.
fn json_nesting(text: &str) -> usize {
    let (mut depth, mut max) = (0usize, 0usize);
    let (mut in_str, mut escaped) = (false, false);
    for b in text.bytes() {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'[' | b'{' => {
                depth += 1;
                max = max.max(depth);
            }
            b']' | b'}' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    max
}

fn from_json(
    plugins: &PluginSet,
    json: Value,
    opts: &DecodeOptions,
    depth: usize,
) -> Result<NativeValue, CodecError> {
    if depth > MAX_DEPTH {
        return Err(CodecError::DepthExceeded { max: MAX_DEPTH });
    }
    Ok(match json {
        Value::Null => NativeValue::Null,
        Value::Bool(b) => NativeValue::Bool(b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => NativeValue::Int(i),
            None => NativeValue::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => NativeValue::Str(s),
        Value::Array(items) => NativeValue::List(
            items
                .into_iter()
                .map(|v| from_json(plugins, v, opts, depth + 1))
                .collect::<Result<_, _>>()?,
        ),
        Value::Object(mut obj) => {
            if obj.len() == 1 && obj.contains_key(ESCAPE_KEY) {
                let triple = obj.remove(ESCAPE_KEY).unwrap_or(Value::Null);
                return decode_extension(plugins, triple, opts);
            }
            if obj.len() == 1 && matches!(obj.get(LITERAL_KEY), Some(Value::Object(_))) {
                let Some(Value::Object(inner)) = obj.remove(LITERAL_KEY) else {
                    unreachable!("checked above");
                };
                obj = inner;
            }
            let mut map = BTreeMap::new();
            for (k, v) in obj {
                map.insert(k, from_json(plugins, v, opts, depth + 1)?);
            }
            NativeValue::Map(map)
        }
    })
}

fn decode_extension(
    plugins: &PluginSet,
    triple: Value,
    opts: &DecodeOptions,
) -> Result<NativeValue, CodecError> {
    let malformed =
        || CodecError::MalformedJson(format!("{ESCAPE_KEY} must hold [plugin_id, base64, meta]"));
    let Value::Array(items) = triple else {
        return Err(malformed());
    };
    let [Value::String(id), Value::String(data), Value::Object(meta)] = <[Value; 3]>::try_from(items)
        .map_err(|_| malformed())?
    else {
        return Err(malformed());
    };
    let plugin = plugins
        .get(&id)
        .ok_or_else(|| CodecError::UnknownPlugin(id.clone()))?;
    let failure = |reason: String| CodecError::PluginDecodeFailure {
        plugin: id.clone(),
        reason,
    };
    let bytes = BASE64
        .decode(data.as_bytes())
        .map_err(|e| failure(format!("bad base64: {e}")))?;
    let payload = plugin
        .decode(&bytes, &meta, opts)
        .map_err(|e| failure(e.to_string()))?;
    Ok(NativeValue::Extension(Extension::new(id, payload)))
}
