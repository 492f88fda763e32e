//! The registered methods the scenarios invoke.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{AudioChunk, ImageFrame, NativeValue};
use crate::registry::{DataKind, MethodDef, Payload, RegistrationSpec, Signature};

pub const MIRROR_GROUP: &str = "MirrorCls";
pub const MIRROR_METHOD: &str = "read_msg";
pub const MIRROR_TOPIC: &str = "/example/read_msg";

/// `MirrorCls.read_msg(mware, msg='', blocking=True)`, returning
/// `{"msg": msg, "msg_ip": input}` where `input` stands in for what a user
/// typed on the publishing side.
pub fn mirror_method(input: NativeValue) -> MethodDef {
    MethodDef::new(MIRROR_GROUP, MIRROR_METHOD)
        .signature(
            Signature::new()
                .required("mware")
                .optional("msg", "")
                .optional("blocking", true),
        )
        .spec(
            RegistrationSpec::new(DataKind::NativeObject, "$0", MIRROR_GROUP, MIRROR_TOPIC)
                .carrier("tcp")
                .should_wait("$blocking"),
        )
        .body(move |call| {
            let msg = call.arg("msg").cloned().unwrap_or_default();
            Ok(vec![NativeValue::map([("msg", msg), ("msg_ip", input.clone())]).into()])
        })
}

pub const FORWARD_GROUP: &str = "ForwardCls";
pub const FORWARD_METHOD: &str = "send";

/// `ForwardCls.send(msg, topic, mware)`: returns `msg`, with topic and
/// middleware taken from the call so one definition serves every hop.
pub fn forward_method() -> MethodDef {
    MethodDef::new(FORWARD_GROUP, FORWARD_METHOD)
        .signature(Signature::new().required("msg").required("topic").required("mware"))
        .spec(
            RegistrationSpec::new(DataKind::NativeObject, "$mware", FORWARD_GROUP, "$topic")
                .carrier("tcp")
                .should_wait(true),
        )
        .body(|call| Ok(vec![call.arg("msg").cloned().unwrap_or_default().into()]))
}

pub const CHANNEL_GROUP: &str = "ChannelCls";
pub const CHANNEL_METHOD: &str = "read_mulret_mulmware";
/// Middleware slot of each return position.
pub const CHANNEL_SLOTS: [&str; 3] = ["yarp", "ros", "zeromq"];
pub const CHANNEL_TOPICS: [&str; 3] = [
    "/example/native_yarp_msg",
    "/example/image_ros_msg",
    "/example/audio_zmq_msg",
];

/// Three returns over three middleware slots: a native list holding the
/// image and the audio chunk, the image alone, and the audio chunk alone.
/// Pixels and samples come from a generator seeded with `seed`.
pub fn channel_method(seed: u64) -> MethodDef {
    let g = CHANNEL_GROUP;
    MethodDef::new(g, CHANNEL_METHOD)
        .signature(
            Signature::new()
                .optional("img_width", 200i64)
                .optional("img_height", 200i64)
                .optional("aud_rate", 44100i64)
                .optional("aud_chunk", 8820i64)
                .optional("aud_chann", 1i64),
        )
        .spec(
            RegistrationSpec::new(DataKind::NativeObject, CHANNEL_SLOTS[0], g, CHANNEL_TOPICS[0])
                .carrier("tcp")
                .should_wait(true),
        )
        .spec(
            RegistrationSpec::new(DataKind::Image, CHANNEL_SLOTS[1], g, CHANNEL_TOPICS[1])
                .carrier("tcp")
                .extra("width", "$img_width")
                .extra("height", "$img_height")
                .extra("rgb", true)
                .extra("queue_size", 10i64),
        )
        .spec(
            RegistrationSpec::new(DataKind::AudioChunk, CHANNEL_SLOTS[2], g, CHANNEL_TOPICS[2])
                .carrier("tcp")
                .extra("rate", "$aud_rate")
                .extra("chunk", "$aud_chunk")
                .extra("channels", "$aud_chann"),
        )
        .body(move |call| {
            let int = |name: &str| call.arg(name).and_then(NativeValue::as_i64).unwrap_or(0);
            let (w, h) = (int("img_width") as u32, int("img_height") as u32);
            let (rate, chunk, chann) = (int("aud_rate") as u32, int("aud_chunk") as u32, int("aud_chann") as u16);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels = (0..w as usize * h as usize * 3).map(|_| rng.gen()).collect();
            let img = ImageFrame::raw(w, h, 3, pixels)?;
            let samples = (0..chunk as usize * chann as usize)
                .map(|_| rng.gen_range(-1.0f32..=1.0))
                .collect();
            let aud = AudioChunk::new(rate, chunk, chann, samples)?;
            let native = NativeValue::List(vec![img.clone().into_native(), aud.clone().into_native()]);
            Ok(vec![native.into(), Payload::Image(img), Payload::Audio(aud)])
        })
}
