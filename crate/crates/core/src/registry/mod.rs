//! Declarative method registration.
//!
//! A method is registered with one [`RegistrationSpec`] per return value and
//! a body. Its [`Mode`] decides what [`Registry::invoke`] does:
//!
//! | mode      | body runs | transport                                  |
//! |-----------|-----------|--------------------------------------------|
//! | `Disable` | yes       | none                                       |
//! | `Publish` | yes       | return `i` published on spec `i`           |
//! | `Listen`  | no        | position `i` received from spec `i`        |
//! | `Request` | no        | arguments sent on spec 0, returns received |
//! | `Reply`   | yes       | serves one request with the body           |
//!
//! Positions whose middleware is unavailable come back as `None`.

mod config;
mod error;
mod spec;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use config::ENV_MODES;
pub use error::RegistryError;
pub use spec::{
    BoundCall, Call, ConcreteSpec, DataKind, Param, Parameter, RegistrationSpec, Signature,
    SpliceMarker,
};

use crate::codec::{
    decode_audio, decode_image, encode_audio, encode_image, AudioChunk, Codec, DecodeOptions,
    ImageFrame, MessageEnvelope, NativeValue,
};
use crate::topic::Carrier;
use crate::transport::{
    EndpointHandle, EndpointOptions, HandlerError, Role, Runtime, StopSignal, TransportError, Wait,
};

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;

const RETRY_PAUSE: Duration = Duration::from_millis(20);
const SERVE_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Publish,
    Listen,
    Request,
    Reply,
    #[default]
    Disable,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Publish => "publish",
            Mode::Listen => "listen",
            Mode::Request => "request",
            Mode::Reply => "reply",
            Mode::Disable => "disable",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "publish" => Ok(Mode::Publish),
            "listen" => Ok(Mode::Listen),
            "request" => Ok(Mode::Request),
            "reply" => Ok(Mode::Reply),
            "disable" => Ok(Mode::Disable),
            other => Err(RegistryError::UnknownMode(other.to_string())),
        }
    }
}

/// One return value of a registered method.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Native(NativeValue),
    Image(ImageFrame),
    Audio(AudioChunk),
}

impl Payload {
    pub fn kind(&self) -> DataKind {
        match self {
            Payload::Native(_) => DataKind::NativeObject,
            Payload::Image(_) => DataKind::Image,
            Payload::Audio(_) => DataKind::AudioChunk,
        }
    }

    pub fn as_native(&self) -> Option<&NativeValue> {
        match self {
            Payload::Native(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_image(&self) -> Option<&ImageFrame> {
        match self {
            Payload::Image(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_audio(&self) -> Option<&AudioChunk> {
        match self {
            Payload::Audio(a) => Some(a),
            _ => None,
        }
    }

    /// The payload as a native value; media become plugin extensions.
    pub fn to_native(&self) -> NativeValue {
        match self {
            Payload::Native(v) => v.clone(),
            Payload::Image(i) => i.clone().into_native(),
            Payload::Audio(a) => a.clone().into_native(),
        }
    }
}

impl From<NativeValue> for Payload {
    fn from(v: NativeValue) -> Self {
        Payload::Native(v)
    }
}

impl From<ImageFrame> for Payload {
    fn from(i: ImageFrame) -> Self {
        Payload::Image(i)
    }
}

impl From<AudioChunk> for Payload {
    fn from(a: AudioChunk) -> Self {
        Payload::Audio(a)
    }
}

pub type Body = Arc<dyn Fn(BoundCall<'_>) -> Result<Vec<Payload>, HandlerError> + Send + Sync>;

/// A method ready for registration.
#[derive(Clone)]
pub struct MethodDef {
    pub group: String,
    pub name: String,
    pub signature: Signature,
    /// First spec governs the first return value, and so on.
    pub specs: Vec<RegistrationSpec>,
    body: Option<Body>,
}

impl fmt::Debug for MethodDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MethodDef")
            .field("group", &self.group)
            .field("name", &self.name)
            .field("signature", &self.signature)
            .field("specs", &self.specs)
            .finish_non_exhaustive()
    }
}

impl MethodDef {
    pub fn new(group: &str, name: &str) -> Self {
        MethodDef {
            group: group.to_string(),
            name: name.to_string(),
            signature: Signature::new(),
            specs: Vec::new(),
            body: None,
        }
    }

    pub fn signature(mut self, signature: Signature) -> Self {
        self.signature = signature;
        self
    }

    pub fn spec(mut self, spec: RegistrationSpec) -> Self {
        self.specs.push(spec);
        self
    }

    pub fn body<F>(mut self, f: F) -> Self
    where
        F: Fn(BoundCall<'_>) -> Result<Vec<Payload>, HandlerError> + Send + Sync + 'static,
    {
        self.body = Some(Arc::new(f));
        self
    }

    pub fn key(&self) -> String {
        method_key(&self.group, &self.name)
    }
}

fn method_key(group: &str, name: &str) -> String {
    format!("{group}.{name}")
}

struct OpenEndpoint {
    spec: ConcreteSpec,
    role: Role,
    handle: EndpointHandle,
}

#[derive(Default)]
struct MethodState {
    mode: Mode,
    endpoints: Vec<Option<OpenEndpoint>>,
    last_envelopes: Vec<Option<MessageEnvelope>>,
}

impl MethodState {
    fn close_endpoints(&mut self) {
        for ep in self.endpoints.iter_mut().filter_map(Option::take) {
            let mut h = ep.handle;
            h.close();
        }
    }
}

struct MethodSlot {
    def: MethodDef,
    body: Body,
    state: Mutex<MethodState>,
}

#[derive(Clone)]
struct Settings {
    timeout: Option<Duration>,
    endpoint_options: EndpointOptions,
    decode: DecodeOptions,
}

/// Registered methods plus the runtime they communicate through.
///
/// Invokes of different methods may run concurrently; invokes of the same
/// method are serialized, and mode changes wait for a running invoke.
pub struct Registry {
    runtime: Runtime,
    codec: Arc<Codec>,
    methods: RwLock<HashMap<String, Arc<MethodSlot>>>,
    settings: RwLock<Settings>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("runtime", &self.runtime)
            .field("methods", &self.method_names())
            .finish()
    }
}

impl Registry {
    pub fn new(runtime: Runtime) -> Self {
        Self::with_codec(runtime, Arc::new(Codec::new()))
    }

    pub fn with_codec(runtime: Runtime, codec: Arc<Codec>) -> Self {
        Registry {
            runtime,
            codec,
            methods: RwLock::new(HashMap::new()),
            settings: RwLock::new(Settings {
                timeout: None,
                endpoint_options: EndpointOptions::default(),
                decode: DecodeOptions::default(),
            }),
        }
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn codec(&self) -> &Arc<Codec> {
        &self.codec
    }

    /// Bounds every waiting receive, request and reply. `None` (the default)
    /// waits indefinitely.
    pub fn set_timeout(&self, timeout: Option<Duration>) {
        self.settings.write().timeout = timeout;
    }

    /// Base options for endpoints the registry opens; `queue_size` extras
    /// override the queue bound per registration.
    pub fn set_endpoint_options(&self, opts: EndpointOptions) {
        self.settings.write().endpoint_options = opts;
    }

    pub fn set_decode_options(&self, opts: DecodeOptions) {
        self.settings.write().decode = opts;
    }

    pub fn register(&self, def: MethodDef) -> Result<()> {
        let key = def.key();
        let body = def
            .body
            .clone()
            .ok_or_else(|| RegistryError::InvalidSpec(format!("{key} has no body")))?;
        if def.specs.is_empty() {
            return Err(RegistryError::InvalidSpec(format!("{key} has no registrations")));
        }
        for spec in &def.specs {
            spec.validate()?;
            if spec.group != def.group {
                return Err(RegistryError::InvalidSpec(format!(
                    "{key} registration names group {:?}",
                    spec.group
                )));
            }
        }
        let mut methods = self.methods.write();
        if methods.contains_key(&key) {
            return Err(RegistryError::DuplicateMethod(key));
        }
        let n = def.specs.len();
        methods.insert(
            key,
            Arc::new(MethodSlot {
                def,
                body,
                state: Mutex::new(MethodState {
                    mode: Mode::Disable,
                    endpoints: (0..n).map(|_| None).collect(),
                    last_envelopes: vec![None; n],
                }),
            }),
        );
        Ok(())
    }

    pub fn method_names(&self) -> Vec<String> {
        let mut names: Vec<_> = self.methods.read().keys().cloned().collect();
        names.sort();
        names
    }

    fn slot(&self, group: &str, name: &str) -> Result<Arc<MethodSlot>> {
        self.methods
            .read()
            .get(&method_key(group, name))
            .cloned()
            .ok_or_else(|| RegistryError::UnknownMethod(method_key(group, name)))
    }

    pub fn mode(&self, group: &str, name: &str) -> Result<Mode> {
        Ok(self.slot(group, name)?.state.lock().mode)
    }

    /// Sets the mode used from the next invoke on. Endpoints opened under the
    /// previous mode are closed.
    pub fn activate_communication(&self, group: &str, name: &str, mode: Mode) -> Result<()> {
        let slot = self.slot(group, name)?;
        let mut state = slot.state.lock();
        if state.mode != mode {
            state.close_endpoints();
            state.mode = mode;
        }
        Ok(())
    }

    /// Envelopes received by the last `Listen` invoke, per position.
    pub fn last_envelopes(&self, group: &str, name: &str) -> Result<Vec<Option<MessageEnvelope>>> {
        Ok(self.slot(group, name)?.state.lock().last_envelopes.clone())
    }

    /// Opens the endpoints the current mode needs, so that a listener is
    /// subscribed (or a replier bound) before anything is sent to it.
    pub fn prepare(&self, group: &str, name: &str, call: &Call) -> Result<()> {
        let slot = self.slot(group, name)?;
        let mut state = slot.state.lock();
        let specs = self.resolve_all(&slot.def, call)?;
        let settings = self.settings.read().clone();
        let role = match state.mode {
            Mode::Disable => return Ok(()),
            Mode::Publish => Role::Publisher,
            Mode::Listen => Role::Subscriber,
            Mode::Request => Role::Requester,
            Mode::Reply => Role::Replier,
        };
        let positions = match role {
            Role::Publisher | Role::Subscriber => specs.len(),
            _ => 1,
        };
        for (i, spec) in specs.iter().enumerate().take(positions) {
            if self.usable(spec) {
                self.endpoint(&mut state, i, spec, role, &settings)?;
            }
        }
        Ok(())
    }

    /// Calls the method under its current mode.
    pub fn invoke(&self, group: &str, name: &str, call: &Call) -> Result<Vec<Option<Payload>>> {
        let slot = self.slot(group, name)?;
        let mut state = slot.state.lock();
        let settings = self.settings.read().clone();
        match state.mode {
            Mode::Disable => Ok(self.run_body(&slot, call)?.into_iter().map(Some).collect()),
            Mode::Publish => self.publish(&slot, &mut state, call, &settings),
            Mode::Listen => self.listen(&slot, &mut state, call, &settings),
            Mode::Request => self.request(&slot, &mut state, call, &settings),
            Mode::Reply => {
                let wait = match (self.resolve_all(&slot.def, call)?[0].should_wait, settings.timeout) {
                    (false, _) => Wait::Immediate,
                    (true, None) => Wait::Forever,
                    (true, Some(t)) => Wait::Until(Instant::now() + t),
                };
                match self.reply_once(&slot, &mut state, call, &settings, wait)? {
                    Some(out) => Ok(out.into_iter().map(Some).collect()),
                    None if wait == Wait::Immediate => Ok(vec![None; slot.def.specs.len()]),
                    None => Err(TransportError::TimedOut.into()),
                }
            }
        }
    }

    /// Answers requests with the method body until `stop` is raised. Body
    /// failures are sent back as error replies and serving continues.
    /// Returns the number of requests answered successfully.
    pub fn serve_forever(&self, group: &str, name: &str, call: &Call, stop: &StopSignal) -> Result<u64> {
        let slot = self.slot(group, name)?;
        let mut served = 0;
        while !stop.is_raised() {
            let mut state = slot.state.lock();
            if state.mode != Mode::Reply {
                return Err(RegistryError::WrongMode {
                    method: slot.def.key(),
                    expected: Mode::Reply,
                    actual: state.mode,
                });
            }
            let settings = self.settings.read().clone();
            let wait = Wait::Until(Instant::now() + SERVE_POLL);
            match self.reply_once(&slot, &mut state, call, &settings, wait) {
                Ok(Some(_)) => served += 1,
                Ok(None) => {}
                Err(RegistryError::BodyFailed(_) | RegistryError::ReturnArityMismatch { .. }) => {}
                Err(RegistryError::PayloadMismatch { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(served)
    }

    fn resolve_all(&self, def: &MethodDef, call: &Call) -> Result<Vec<ConcreteSpec>> {
        def.specs.iter().map(|s| s.resolve(&def.signature, call)).collect()
    }

    fn usable(&self, spec: &ConcreteSpec) -> bool {
        self.runtime.is_usable(&spec.adapter())
    }

    fn run_body(&self, slot: &MethodSlot, call: &Call) -> Result<Vec<Payload>> {
        (slot.body)(BoundCall {
            call,
            signature: &slot.def.signature,
        })
        .map_err(|e| RegistryError::BodyFailed(e.to_string()))
    }

    fn endpoint<'s>(
        &self,
        state: &'s mut MethodState,
        pos: usize,
        spec: &ConcreteSpec,
        role: Role,
        settings: &Settings,
    ) -> Result<&'s mut EndpointHandle> {
        let current = state.endpoints[pos]
            .as_ref()
            .is_some_and(|ep| ep.role == role && ep.spec == *spec);
        if !current {
            if let Some(mut old) = state.endpoints[pos].take() {
                old.handle.close();
            }
            if spec.carrier == Carrier::Mcast {
                return Err(TransportError::UnsupportedCarrier("mcast".into()).into());
            }
            let mut opts = settings.endpoint_options.clone();
            if let Some(q) = spec.queue_size() {
                opts.queue_size = q;
            }
            let adapter = spec.adapter();
            let handle = match role {
                Role::Publisher => self.runtime.open_publisher(&spec.topic, &adapter, &opts)?,
                Role::Subscriber => self.runtime.open_subscriber(&spec.topic, &adapter, &opts)?,
                Role::Requester => self.runtime.open_requester(&spec.topic, &adapter, &opts)?,
                Role::Replier => self.runtime.open_replier(&spec.topic, &adapter, &opts)?,
            };
            state.endpoints[pos] = Some(OpenEndpoint {
                spec: spec.clone(),
                role,
                handle,
            });
        }
        Ok(&mut state.endpoints[pos].as_mut().expect("opened above").handle)
    }

    fn publish(
        &self,
        slot: &MethodSlot,
        state: &mut MethodState,
        call: &Call,
        settings: &Settings,
    ) -> Result<Vec<Option<Payload>>> {
        let specs = self.resolve_all(&slot.def, call)?;
        let returns = self.run_body(slot, call)?;
        check_arity(&specs, &returns)?;
        for (i, (spec, value)) in specs.iter().zip(&returns).enumerate() {
            if !self.usable(spec) {
                continue;
            }
            let env = self.encode(i, spec, value)?;
            self.endpoint(state, i, spec, Role::Publisher, settings)?.publish(&env)?;
        }
        Ok(returns.into_iter().map(Some).collect())
    }

    fn listen(
        &self,
        slot: &MethodSlot,
        state: &mut MethodState,
        call: &Call,
        settings: &Settings,
    ) -> Result<Vec<Option<Payload>>> {
        let specs = self.resolve_all(&slot.def, call)?;
        let mut out = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            state.last_envelopes[i] = None;
            if !self.usable(spec) {
                out.push(None);
                continue;
            }
            let handle = self.endpoint(state, i, spec, Role::Subscriber, settings)?;
            match handle.try_receive(spec.should_wait, settings.timeout)? {
                Some(env) => {
                    let value = self.decode(i, spec, &env, settings)?;
                    state.last_envelopes[i] = Some(env);
                    out.push(Some(value));
                }
                None => out.push(None),
            }
        }
        Ok(out)
    }

    fn request(
        &self,
        slot: &MethodSlot,
        state: &mut MethodState,
        call: &Call,
        settings: &Settings,
    ) -> Result<Vec<Option<Payload>>> {
        let specs = self.resolve_all(&slot.def, call)?;
        let head = &specs[0];
        if !self.usable(head) {
            return Ok(vec![None; specs.len()]);
        }
        let env = self.codec.encode_native_envelope(&call.to_native(), &head.topic)?;
        let deadline = settings.timeout.map(|t| Instant::now() + t);
        let reply = loop {
            let remaining = deadline.map(|d| d.saturating_duration_since(Instant::now()));
            let handle = self.endpoint(state, 0, head, Role::Requester, settings)?;
            match handle.request(&env, remaining) {
                Ok(reply) => break reply,
                // with should_wait, a replier that is not up yet is waited for
                Err(TransportError::PeerUnreachable(_))
                    if head.should_wait && deadline.is_none_or(|d| Instant::now() + RETRY_PAUSE < d) =>
                {
                    thread::sleep(RETRY_PAUSE);
                }
                Err(TransportError::PeerUnreachable(_)) if head.should_wait => {
                    return Err(TransportError::TimedOut.into())
                }
                Err(e) => return Err(e.into()),
            }
        };
        let value = self.codec.decode_native_envelope(&reply, &settings.decode)?;
        let items = value.as_list().ok_or_else(|| RegistryError::PayloadMismatch {
            position: 0,
            reason: "reply is not a list of returns".into(),
        })?;
        if items.len() != specs.len() {
            return Err(RegistryError::ReturnArityMismatch {
                expected: specs.len(),
                actual: items.len(),
            });
        }
        specs
            .iter()
            .zip(items)
            .enumerate()
            .map(|(i, (spec, item))| from_native(i, spec, item).map(Some))
            .collect()
    }

    /// Serves at most one request. `Ok(None)` when none arrived in time.
    fn reply_once(
        &self,
        slot: &MethodSlot,
        state: &mut MethodState,
        call: &Call,
        settings: &Settings,
        wait: Wait,
    ) -> Result<Option<Vec<Payload>>> {
        let specs = self.resolve_all(&slot.def, call)?;
        let head = &specs[0];
        if !self.usable(head) {
            return Err(TransportError::UnsupportedCarrier(head.middleware.clone()).into());
        }
        let handle = self.endpoint(state, 0, head, Role::Replier, settings)?;
        let Some(req) = handle.next_request(wait)? else {
            return Ok(None);
        };
        let incoming = self
            .codec
            .decode_native_envelope(req.envelope(), &settings.decode)
            .ok()
            .and_then(|v| Call::from_native(&v));
        let Some(incoming) = incoming else {
            req.fail("request is not an {\"args\", \"kwargs\"} object");
            return Err(RegistryError::PayloadMismatch {
                position: 0,
                reason: "malformed request".into(),
            });
        };
        let outcome = self
            .run_body(slot, &incoming)
            .and_then(|returns| {
                check_arity(&specs, &returns)?;
                // check each return against its registration before replying
                for (i, (spec, value)) in specs.iter().zip(&returns).enumerate() {
                    check_payload(i, spec, value)?;
                }
                let list = NativeValue::List(returns.iter().map(Payload::to_native).collect());
                let env = self.codec.encode_native_envelope(&list, &head.topic)?;
                Ok((returns, env))
            });
        match outcome {
            Ok((returns, env)) => {
                req.respond(env);
                Ok(Some(returns))
            }
            Err(e) => {
                req.fail(&e.to_string());
                Err(e)
            }
        }
    }

    fn encode(&self, pos: usize, spec: &ConcreteSpec, value: &Payload) -> Result<MessageEnvelope> {
        check_payload(pos, spec, value)?;
        Ok(match value {
            Payload::Native(v) => self.codec.encode_native_envelope(v, &spec.topic)?,
            Payload::Image(img) => {
                #[cfg(feature = "jpeg")]
                if spec.flag_extra("jpg") == Some(true) {
                    return Ok(encode_image(&img.to_jpeg(90)?, &spec.topic)?);
                }
                encode_image(img, &spec.topic)?
            }
            Payload::Audio(aud) => encode_audio(aud, &spec.topic)?,
        })
    }

    fn decode(&self, pos: usize, spec: &ConcreteSpec, env: &MessageEnvelope, settings: &Settings) -> Result<Payload> {
        let value = match spec.kind {
            DataKind::NativeObject => Payload::Native(self.codec.decode_native_envelope(env, &settings.decode)?),
            DataKind::Image => Payload::Image(decode_image(env)?),
            DataKind::AudioChunk => Payload::Audio(decode_audio(env)?),
        };
        check_payload(pos, spec, &value)?;
        Ok(value)
    }
}

fn check_arity(specs: &[ConcreteSpec], returns: &[Payload]) -> Result<()> {
    if specs.len() != returns.len() {
        return Err(RegistryError::ReturnArityMismatch {
            expected: specs.len(),
            actual: returns.len(),
        });
    }
    Ok(())
}

/// Checks a value against the kind and geometry its registration declares.
fn check_payload(pos: usize, spec: &ConcreteSpec, value: &Payload) -> Result<()> {
    let mismatch = |reason: String| RegistryError::PayloadMismatch { position: pos, reason };
    if value.kind() != spec.kind {
        return Err(mismatch(format!("expected {}, got {}", spec.kind, value.kind())));
    }
    let expect = |key: &str, actual: u32| match spec.int_extra(key) {
        Some(want) if want != actual => Err(mismatch(format!("{key} is {actual}, registration says {want}"))),
        _ => Ok(()),
    };
    match value {
        Payload::Native(_) => {}
        Payload::Image(img) => {
            expect("width", img.width)?;
            expect("height", img.height)?;
            if let Some(rgb) = spec.flag_extra("rgb") {
                let want = if rgb { 3 } else { 1 };
                if img.channels != want {
                    return Err(mismatch(format!("{} channels, rgb={rgb}", img.channels)));
                }
            }
        }
        Payload::Audio(aud) => {
            expect("rate", aud.rate)?;
            expect("chunk", aud.chunk)?;
            expect("channels", aud.channels.into())?;
        }
    }
    Ok(())
}

/// Recovers a return value carried inside a native reply list.
fn from_native(pos: usize, spec: &ConcreteSpec, item: &NativeValue) -> Result<Payload> {
    let value = match spec.kind {
        DataKind::NativeObject => Payload::Native(item.clone()),
        DataKind::Image => item
            .as_extension()
            .and_then(|e| e.downcast_ref::<ImageFrame>())
            .cloned()
            .map(Payload::Image)
            .ok_or_else(|| RegistryError::PayloadMismatch {
                position: pos,
                reason: "reply item is not an image".into(),
            })?,
        DataKind::AudioChunk => item
            .as_extension()
            .and_then(|e| e.downcast_ref::<AudioChunk>())
            .cloned()
            .map(Payload::Audio)
            .ok_or_else(|| RegistryError::PayloadMismatch {
                position: pos,
                reason: "reply item is not an audio chunk".into(),
            })?,
    };
    check_payload(pos, spec, &value)?;
    Ok(value)
}
