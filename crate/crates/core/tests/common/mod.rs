//! Strategies shared by the property suites and the acceptance gate.

#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use wrapify::codec::{AudioChunk, DType, DenseArray, ImageFrame, NativeValue};
use wrapify::Topic;

/// A deterministic runner: the same `seed` always generates the same cases.
pub fn seeded_runner(cases: u32, seed: u8) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]))
}

pub fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |f| f.is_finite()),
        Just(0.0),
        Just(-0.0),
        (-1000i32..1000).prop_map(f64::from),
    ]
}

pub fn map_key() -> impl Strategy<Value = String> {
    prop_oneof![
        6 => "[a-z_]{0,8}",
        2 => ".{0,6}",
        1 => Just("__wrapyfi__".to_string()),
        1 => Just("__wrapyfi_lit__".to_string()),
    ]
}

/// Plugin-free native values up to a few levels deep.
pub fn native_value() -> impl Strategy<Value = NativeValue> {
    let leaf = prop_oneof![
        Just(NativeValue::Null),
        any::<bool>().prop_map(NativeValue::Bool),
        any::<i64>().prop_map(NativeValue::Int),
        finite_f64().prop_map(NativeValue::Float),
        ".{0,12}".prop_map(NativeValue::Str),
    ];
    leaf.prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(NativeValue::List),
            prop::collection::btree_map(map_key(), inner, 0..6)
                .prop_map(|m: BTreeMap<String, NativeValue>| NativeValue::Map(m)),
        ]
    })
}

pub fn dense_array() -> impl Strategy<Value = DenseArray> {
    let shape = prop::collection::vec(0usize..5, 0..4);
    (prop::sample::select(DType::ALL.to_vec()), shape, any::<u64>(), prop::option::of("[a-z]{1,4}:[0-9]"))
        .prop_map(|(dtype, shape, seed, device)| {
            let n: usize = shape.iter().product::<usize>() * dtype.size();
            let mut state = seed;
            let data = (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let b = (state >> 56) as u8;
                    if dtype == DType::Bool {
                        b & 1
                    } else {
                        b
                    }
                })
                .collect();
            let arr = DenseArray::from_bytes(shape, dtype, data).expect("sized to shape");
            match device {
                Some(tag) => arr.with_device(tag),
                None => arr,
            }
        })
}

pub fn raw_image() -> impl Strategy<Value = ImageFrame> {
    (1u32..48, 1u32..48, prop::sample::select(vec![1u8, 3])).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(any::<u8>(), (w * h * u32::from(c)) as usize)
            .prop_map(move |px| ImageFrame::raw(w, h, c, px).expect("sized to geometry"))
    })
}

pub fn audio_chunk() -> impl Strategy<Value = AudioChunk> {
    (1u32..96_000, 1u32..512, 1u16..4).prop_flat_map(|(rate, chunk, channels)| {
        prop::collection::vec(-1.0f32..=1.0, (chunk * u32::from(channels)) as usize)
            .prop_map(move |s| AudioChunk::new(rate, chunk, channels, s).expect("sized to chunk"))
    })
}

pub fn topic() -> impl Strategy<Value = Topic> {
    "(/[a-z0-9_-]{1,8}){1,4}".prop_map(|t| Topic::new(t).expect("pattern yields valid topics"))
}
