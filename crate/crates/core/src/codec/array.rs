//! Dense n-dimensional arrays: the built-in stand-in for arrays and tensors.
//!
//! Data is stored row-major with little-endian elements. The optional device
//! tag is metadata only; receivers may rewrite it through
//! [`DecodeOptions::device_remap`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde_json::{json, Value};

use super::error::CodecError;
use super::native::{Extension, ExtensionPayload, NativeValue};
use super::plugin::{DecodeOptions, Meta, Plugin, PluginError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    I8,
    I16,
    I32,
    I64,
    U8,
    U16,
    U32,
    U64,
    F32,
    F64,
    Bool,
}

impl DType {
    pub const ALL: [DType; 11] = [
        DType::I8,
        DType::I16,
        DType::I32,
        DType::I64,
        DType::U8,
        DType::U16,
        DType::U32,
        DType::U64,
        DType::F32,
        DType::F64,
        DType::Bool,
    ];

    pub fn size(self) -> usize {
        match self {
            DType::I8 | DType::U8 | DType::Bool => 1,
            DType::I16 | DType::U16 => 2,
            DType::I32 | DType::U32 | DType::F32 => 4,
            DType::I64 | DType::U64 | DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::I8 => "i8",
            DType::I16 => "i16",
            DType::I32 => "i32",
            DType::I64 => "i64",
            DType::U8 => "u8",
            DType::U16 => "u16",
            DType::U32 => "u32",
            DType::U64 => "u64",
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::Bool => "bool",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DType::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| CodecError::InvalidArray(format!("unknown dtype {s:?}")))
    }
}

/// Primitive element types that map onto a [`DType`].
pub trait Element: Copy {
    const DTYPE: DType;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! numeric_element {
    ($($t:ty => $d:ident),* $(,)?) => {$(
        impl Element for $t {
            const DTYPE: DType = DType::$d;
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    )*};
}

numeric_element!(
    i8 => I8, i16 => I16, i32 => I32, i64 => I64,
    u8 => U8, u16 => U16, u32 => U32, u64 => U64,
    f32 => F32, f64 => F64,
);

impl Element for bool {
    const DTYPE: DType = DType::Bool;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self as u8);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0] != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseArray {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<u8>,
    device_tag: Option<String>,
}

impl DenseArray {
    /// Builds an array from raw little-endian bytes.
    pub fn from_bytes(shape: Vec<usize>, dtype: DType, data: Vec<u8>) -> Result<Self, CodecError> {
        let expected = element_count(&shape)?
            .checked_mul(dtype.size())
            .ok_or_else(|| CodecError::InvalidArray("shape overflows".into()))?;
        if data.len() != expected {
            return Err(CodecError::InvalidArray(format!(
                "shape {shape:?} of {dtype} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        if dtype == DType::Bool && data.iter().any(|&b| b > 1) {
            return Err(CodecError::InvalidArray("bool elements must be 0 or 1".into()));
        }
        Ok(DenseArray {
            shape,
            dtype,
            data,
            device_tag: None,
        })
    }

    pub fn from_elements<T: Element>(shape: Vec<usize>, elements: &[T]) -> Result<Self, CodecError> {
        let mut data = Vec::with_capacity(elements.len() * T::DTYPE.size());
        for &e in elements {
            e.write_le(&mut data);
        }
        Self::from_bytes(shape, T::DTYPE, data)
    }

    pub fn with_device(mut self, tag: impl Into<String>) -> Self {
        self.device_tag = Some(tag.into());
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn device_tag(&self) -> Option<&str> {
        self.device_tag.as_deref()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dtype.size()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Decodes the elements, or `None` when `T` does not match the dtype.
    pub fn to_vec<T: Element>(&self) -> Option<Vec<T>> {
        (T::DTYPE == self.dtype).then(|| {
            self.data
                .chunks_exact(self.dtype.size())
                .map(T::read_le)
                .collect()
        })
    }

    /// Wraps the array as a native extension node.
    pub fn into_native(self) -> NativeValue {
        NativeValue::Extension(Extension::new(DENSE_ARRAY_PLUGIN_ID, Arc::new(self)))
    }
}

fn element_count(shape: &[usize]) -> Result<usize, CodecError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CodecError::InvalidArray("shape overflows".into()))
}

pub const DENSE_ARRAY_PLUGIN_ID: &str = "dense_array";

/// Built-in plugin for [`DenseArray`].
///
/// Metadata is `{"shape": [...], "dtype": "..."}` plus `"device"` when the
/// array carries a device tag.
#[derive(Debug, Default)]
pub struct DenseArrayPlugin;

impl Plugin for DenseArrayPlugin {
    fn id(&self) -> &str {
        DENSE_ARRAY_PLUGIN_ID
    }

    fn detect(&self, value: &dyn ExtensionPayload) -> bool {
        value.as_any().is::<DenseArray>()
    }

    fn encode(&self, value: &dyn ExtensionPayload) -> Result<(Vec<u8>, Meta), PluginError> {
        let arr = value
            .as_any()
            .downcast_ref::<DenseArray>()
            .ok_or("payload is not a DenseArray")?;
        let mut meta = Meta::new();
        meta.insert("shape".into(), json!(arr.shape));
        meta.insert("dtype".into(), json!(arr.dtype.name()));
        if let Some(tag) = &arr.device_tag {
            meta.insert("device".into(), json!(tag));
        }
        Ok((arr.data.clone(), meta))
    }

    fn decode(
        &self,
        data: &[u8],
        meta: &Meta,
        opts: &DecodeOptions,
    ) -> Result<Arc<dyn ExtensionPayload>, PluginError> {
        let shape = match meta.get("shape") {
            Some(Value::Array(dims)) => dims
                .iter()
                .map(|d| {
                    d.as_u64()
                        .and_then(|d| usize::try_from(d).ok())
                        .ok_or("shape extents must be non-negative integers")
                })
                .collect::<Result<Vec<_>, _>>()?,
            _ => return Err("missing shape".into()),
        };
        let dtype: DType = meta
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or("missing dtype")?
            .parse()?;
        let mut arr = DenseArray::from_bytes(shape, dtype, data.to_vec())?;
        arr.device_tag = match meta.get("device") {
            Some(Value::String(tag)) => Some(opts.remap_device(tag).to_string()),
            Some(Value::Null) | None => None,
            Some(_) => return Err("device must be a string".into()),
        };
        Ok(Arc::new(arr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Codec;

    #[test]
    fn two_by_two_i32_matches_frozen_encoding() {
        // base64 of 01000000 02000000 03000000 04000000, computed with an
        // independent encoder (Python's base64 module).
        let arr = DenseArray::from_elements(vec![2, 2], &[1i32, 2, 3, 4]).unwrap();
        let text = Codec::new().encode_native(&arr.into_native()).unwrap();
        assert_eq!(
            std::str::from_utf8(&text).unwrap(),
            r#"{"__wrapyfi__":["dense_array","AQAAAAIAAAADAAAABAAAAA==",{"shape":[2,2],"dtype":"i32"}]}"#
        );
    }

    #[test]
    fn scalar_shape_has_one_element() {
        let arr = DenseArray::from_elements(vec![], &[7.5f64]).unwrap();
        assert_eq!(arr.len(), 1);
        assert!(DenseArray::from_elements::<f64>(vec![], &[]).is_err());
        let empty = DenseArray::from_elements::<u8>(vec![0, 3], &[]).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn rejects_length_mismatch_and_bad_bools() {
        assert!(DenseArray::from_bytes(vec![3], DType::U16, vec![0; 5]).is_err());
        assert!(DenseArray::from_bytes(vec![2], DType::Bool, vec![0, 2]).is_err());
        assert!(DenseArray::from_bytes(vec![usize::MAX, 2], DType::U8, vec![]).is_err());
    }

    #[test]
    fn device_remap_applies_at_decode() {
        let codec = Codec::new();
        let arr = DenseArray::from_elements(vec![3], &[1.0f32, -2.0, 3.5])
            .unwrap()
            .with_device("gpu:0");
        let text = codec.encode_native(&arr.clone().into_native()).unwrap();

        let kept = codec.decode_native(&text, &DecodeOptions::default()).unwrap();
        let kept = kept.as_extension().unwrap().downcast_ref::<DenseArray>().unwrap();
        assert_eq!(kept, &arr);

        let opts = DecodeOptions::default().with_device_remap([("gpu:0", "cpu")]);
        let moved = codec.decode_native(&text, &opts).unwrap();
        let moved = moved.as_extension().unwrap().downcast_ref::<DenseArray>().unwrap();
        assert_eq!(moved.device_tag(), Some("cpu"));
        assert_eq!(moved.data(), arr.data());
        assert_eq!(moved.shape(), arr.shape());
    }

    #[test]
    fn typed_views() {
        let arr = DenseArray::from_elements(vec![2], &[true, false]).unwrap();
        assert_eq!(arr.to_vec::<bool>(), Some(vec![true, false]));
        assert_eq!(arr.to_vec::<u8>(), None);
    }

    #[test]
    fn bad_meta_is_a_decode_failure() {
        let codec = Codec::new();
        for text in [
            r#"{"__wrapyfi__":["dense_array","AAAA",{"dtype":"u8"}]}"#,
            r#"{"__wrapyfi__":["dense_array","AAAA",{"shape":[3],"dtype":"c64"}]}"#,
            r#"{"__wrapyfi__":["dense_array","AAAA",{"shape":[4],"dtype":"u8"}]}"#,
            r#"{"__wrapyfi__":["dense_array","%%%",{"shape":[3],"dtype":"u8"}]}"#,
        ] {
            assert!(
                matches!(
                    codec.decode_native(text.as_bytes(), &DecodeOptions::default()),
                    Err(CodecError::PluginDecodeFailure { .. })
                ),
                "{text}"
            );
        }
    }
}
