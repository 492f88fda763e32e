//! Codec properties and fixed wire-format examples.

mod common;

use bytes::Bytes;
use proptest::prelude::*;
use wrapify::codec::{
    decode_audio, decode_image, encode_audio, encode_image, AudioChunk, Codec, DType, DecodeOptions, DenseArray,
    ImageFrame, MessageEnvelope, NativeValue,
};
use wrapify::Topic;

use common::{audio_chunk, dense_array, native_value, raw_image, topic};

fn round_trip(codec: &Codec, v: &NativeValue) -> NativeValue {
    let text = codec.encode_native(v).unwrap();
    codec.decode_native(&text, &DecodeOptions::default()).unwrap()
}

/// Sends the envelope through its wire parts, as a transport would.
fn over_the_wire(env: &MessageEnvelope) -> MessageEnvelope {
    MessageEnvelope::from_parts(env.to_parts()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn native_values_round_trip(v in native_value()) {
        prop_assert_eq!(round_trip(&Codec::new(), &v), v);
    }

    #[test]
    fn native_text_is_valid_json(v in native_value()) {
        let text = Codec::new().encode_native(&v).unwrap();
        prop_assert!(serde_json::from_slice::<serde_json::Value>(&text).is_ok());
    }

    #[test]
    fn magic_keys_survive(inner in native_value(), lit in any::<bool>()) {
        let key = if lit { "__wrapyfi_lit__" } else { "__wrapyfi__" };
        let v = NativeValue::map([(key, inner)]);
        prop_assert_eq!(round_trip(&Codec::new(), &v), v);
    }

    #[test]
    fn dense_arrays_are_bit_exact(arr in dense_array()) {
        let codec = Codec::new();
        let back = round_trip(&codec, &arr.clone().into_native());
        let ext = back.as_extension().unwrap();
        let got = ext.downcast_ref::<DenseArray>().unwrap();
        prop_assert_eq!(got.data(), arr.data());
        prop_assert_eq!(got.shape(), arr.shape());
        prop_assert_eq!(got.dtype(), arr.dtype());
        prop_assert_eq!(got.device_tag(), arr.device_tag());
    }

    #[test]
    fn images_are_byte_exact(img in raw_image(), t in topic()) {
        let env = over_the_wire(&encode_image(&img, &t).unwrap());
        prop_assert_eq!(decode_image(&env).unwrap(), img);
    }

    #[test]
    fn audio_is_byte_exact(aud in audio_chunk(), t in topic()) {
        let env = over_the_wire(&encode_audio(&aud, &t).unwrap());
        let back = decode_audio(&env).unwrap();
        let bits = |a: &AudioChunk| a.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&aud));
        prop_assert_eq!((back.rate, back.chunk, back.channels), (aud.rate, aud.chunk, aud.channels));
    }

    #[test]
    fn envelope_leading_parts(v in native_value(), t in topic()) {
        let parts = Codec::new().encode_native_envelope(&v, &t).unwrap().to_parts();
        prop_assert_eq!(std::str::from_utf8(&parts[0]).unwrap(), t.as_str());
        let header: serde_json::Value = serde_json::from_slice(&parts[1]).unwrap();
        prop_assert_eq!(&header["ver"], &serde_json::json!(1));
    }

    #[test]
    fn media_nested_in_native_values(img in raw_image(), aud in audio_chunk()) {
        let v = NativeValue::List(vec![img.into_native(), aud.into_native(), NativeValue::from("tail")]);
        prop_assert_eq!(round_trip(&Codec::new(), &v), v);
    }
}

// Fixed examples. Expected bytes were worked out by hand from the wire
// layout (little-endian payloads, base64 with padding).

#[test]
fn small_rgb_image_envelope() {
    let t = Topic::new("/cam").unwrap();
    let env = encode_image(&ImageFrame::raw(2, 2, 3, (0..12).collect()).unwrap(), &t).unwrap();
    let parts = env.to_parts();
    assert_eq!(parts.len(), 3);
    assert_eq!(parts[2].len(), 12);
    let header: serde_json::Value = serde_json::from_slice(&parts[1]).unwrap();
    assert_eq!(header["kind"], "image");
    assert_eq!(
        header["meta"],
        serde_json::json!({"width": 2, "height": 2, "channels": 3, "encoding": "raw8"})
    );
}

#[test]
fn channel_sized_payloads() {
    let t = Topic::new("/m").unwrap();
    let img = ImageFrame::raw(200, 200, 3, vec![0; 120_000]).unwrap();
    assert_eq!(encode_image(&img, &t).unwrap().payload()[0].len(), 120_000);
    let aud = AudioChunk::new(44100, 8820, 1, vec![0.0; 8820]).unwrap();
    assert_eq!(encode_audio(&aud, &t).unwrap().payload()[0].len(), 35_280);
}

#[test]
fn single_zero_sample() {
    let env = encode_audio(&AudioChunk::new(8000, 1, 1, vec![0.0]).unwrap(), &Topic::new("/a").unwrap()).unwrap();
    assert_eq!(env.payload()[0], Bytes::from_static(&[0, 0, 0, 0]));
    let header: serde_json::Value = serde_json::from_slice(&env.to_parts()[1]).unwrap();
    assert_eq!(header["meta"]["format"], "f32le");
}

#[test]
fn dense_array_escape_object() {
    let arr = DenseArray::from_elements(vec![2], &[1i32, 2]).unwrap();
    let text = Codec::new().encode_native(&arr.into_native()).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&text).unwrap();
    let triple = v["__wrapyfi__"].as_array().unwrap();
    assert_eq!(triple.len(), 3);
    assert_eq!(triple[0], "dense_array");
    // bytes 01 00 00 00 02 00 00 00
    assert_eq!(triple[1], "AQAAAAIAAAA=");
}

#[test]
fn literal_magic_key_is_escaped_on_the_wire() {
    let v = NativeValue::map([("__wrapyfi__", NativeValue::from(1i64))]);
    let text = Codec::new().encode_native(&v).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&text).unwrap();
    assert!(json.get("__wrapyfi__").is_none(), "{json}");
    assert_eq!(round_trip(&Codec::new(), &v), v);
}

#[test]
fn bool_arrays_keep_their_dtype() {
    let arr = DenseArray::from_bytes(vec![3], DType::Bool, vec![1, 0, 1]).unwrap();
    let back = round_trip(&Codec::new(), &arr.clone().into_native());
    assert_eq!(back.as_extension().unwrap().downcast_ref::<DenseArray>(), Some(&arr));
}
