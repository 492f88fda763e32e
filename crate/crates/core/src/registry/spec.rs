//! Registration specs, method signatures and splice resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::codec::NativeValue;
use crate::topic::{Carrier, Topic};

use super::RegistryError;

/// What a registration transmits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataKind {
    NativeObject,
    Image,
    AudioChunk,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::NativeObject => "NativeObject",
            DataKind::Image => "Image",
            DataKind::AudioChunk => "AudioChunk",
        }
    }

    /// Extras a registration of this kind may carry.
    pub fn allowed_extras(self) -> &'static [&'static str] {
        match self {
            DataKind::NativeObject => &["queue_size"],
            DataKind::Image => &["width", "height", "rgb", "jpg", "queue_size"],
            DataKind::AudioChunk => &["rate", "chunk", "channels", "queue_size"],
        }
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataKind {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NativeObject" => Ok(DataKind::NativeObject),
            "Image" => Ok(DataKind::Image),
            "AudioChunk" => Ok(DataKind::AudioChunk),
            other => Err(RegistryError::InvalidSpec(format!("unknown data kind {other:?}"))),
        }
    }
}

/// A `$`-prefixed placeholder filled from the call's arguments.
///
/// `$0`, `$1`, ... name positional parameters; `$name` names a parameter by
/// keyword.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SpliceMarker {
    Positional(usize),
    Keyword(String),
}

impl SpliceMarker {
    /// Parses `$0` or `$name`. Anything else is not a marker.
    pub fn parse(s: &str) -> Option<Self> {
        let rest = s.strip_prefix('$')?;
        if rest.is_empty() {
            return None;
        }
        if rest.bytes().all(|b| b.is_ascii_digit()) {
            return rest.parse().ok().map(SpliceMarker::Positional);
        }
        let mut chars = rest.chars();
        let first = chars.next()?;
        let ident = (first.is_ascii_alphabetic() || first == '_')
            && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
        ident.then(|| SpliceMarker::Keyword(rest.to_string()))
    }

    pub fn raw(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SpliceMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpliceMarker::Positional(i) => write!(f, "${i}"),
            SpliceMarker::Keyword(k) => write!(f, "${k}"),
        }
    }
}

/// A spec field: either a literal value or a splice marker.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Literal(NativeValue),
    Splice(SpliceMarker),
}

impl From<&str> for Param {
    /// Strings that parse as markers become splices.
    fn from(s: &str) -> Self {
        match SpliceMarker::parse(s) {
            Some(m) => Param::Splice(m),
            None => Param::Literal(NativeValue::Str(s.to_string())),
        }
    }
}

impl From<String> for Param {
    fn from(s: String) -> Self {
        Param::from(s.as_str())
    }
}

impl From<bool> for Param {
    fn from(b: bool) -> Self {
        Param::Literal(b.into())
    }
}

impl From<i64> for Param {
    fn from(n: i64) -> Self {
        Param::Literal(n.into())
    }
}

impl From<u32> for Param {
    fn from(n: u32) -> Self {
        Param::Literal(NativeValue::Int(n.into()))
    }
}

impl From<NativeValue> for Param {
    fn from(v: NativeValue) -> Self {
        Param::Literal(v)
    }
}

impl From<SpliceMarker> for Param {
    fn from(m: SpliceMarker) -> Self {
        Param::Splice(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub default: Option<NativeValue>,
}

/// Declared parameters of a registered method, in positional order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Signature {
    params: Vec<Parameter>,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn required(mut self, name: &str) -> Self {
        self.params.push(Parameter {
            name: name.to_string(),
            default: None,
        });
        self
    }

    pub fn optional(mut self, name: &str, default: impl Into<NativeValue>) -> Self {
        self.params.push(Parameter {
            name: name.to_string(),
            default: Some(default.into()),
        });
        self
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Looks a marker up in the call, falling back to the declared default.
    ///
    /// A positional marker tries the positional argument, then the keyword
    /// argument of the parameter at that position. A keyword marker tries the
    /// keyword argument, then the positional slot of that parameter.
    pub fn resolve<'a>(&'a self, marker: &SpliceMarker, call: &'a Call) -> Result<&'a NativeValue, RegistryError> {
        let (index, name) = match marker {
            SpliceMarker::Positional(i) => (Some(*i), self.params.get(*i).map(|p| p.name.as_str())),
            SpliceMarker::Keyword(k) => (self.position(k), Some(k.as_str())),
        };
        let found = match marker {
            SpliceMarker::Positional(_) => index
                .and_then(|i| call.args.get(i))
                .or_else(|| name.and_then(|n| call.kwargs.get(n))),
            SpliceMarker::Keyword(_) => name
                .and_then(|n| call.kwargs.get(n))
                .or_else(|| index.and_then(|i| call.args.get(i))),
        };
        found
            .or_else(|| index.and_then(|i| self.params.get(i)?.default.as_ref()))
            .ok_or_else(|| RegistryError::UnresolvedSplice {
                marker: marker.raw(),
            })
    }
}

/// Arguments of one invocation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Call {
    pub args: Vec<NativeValue>,
    pub kwargs: BTreeMap<String, NativeValue>,
}

impl Call {
    pub fn new(args: Vec<NativeValue>) -> Self {
        Call {
            args,
            kwargs: BTreeMap::new(),
        }
    }

    pub fn kwarg(mut self, name: &str, value: impl Into<NativeValue>) -> Self {
        self.kwargs.insert(name.to_string(), value.into());
        self
    }

    /// `{"args": [...], "kwargs": {...}}`, the request payload.
    pub fn to_native(&self) -> NativeValue {
        NativeValue::map([
            ("args", NativeValue::List(self.args.clone())),
            ("kwargs", NativeValue::Map(self.kwargs.clone())),
        ])
    }

    pub fn from_native(v: &NativeValue) -> Option<Call> {
        let args = v.get("args")?.as_list()?.to_vec();
        let kwargs = v.get("kwargs")?.as_map()?.clone();
        Some(Call { args, kwargs })
    }
}

/// A call bound to its method signature, handed to method bodies.
#[derive(Debug, Clone, Copy)]
pub struct BoundCall<'a> {
    pub call: &'a Call,
    pub signature: &'a Signature,
}

impl<'a> BoundCall<'a> {
    /// The value of a declared parameter: keyword, then positional, then
    /// default.
    pub fn arg(&self, name: &str) -> Option<&'a NativeValue> {
        self.signature
            .resolve(&SpliceMarker::Keyword(name.to_string()), self.call)
            .ok()
    }
}

/// One `register(...)` entry; governs one return position of its method.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationSpec {
    pub kind: DataKind,
    pub middleware: Param,
    pub group: String,
    pub topic: Param,
    pub carrier: Carrier,
    pub should_wait: Param,
    pub extras: BTreeMap<String, Param>,
}

impl RegistrationSpec {
    /// Defaults: carrier `tcp`, `should_wait` true, no extras.
    pub fn new(kind: DataKind, middleware: impl Into<Param>, group: &str, topic: impl Into<Param>) -> Self {
        RegistrationSpec {
            kind,
            middleware: middleware.into(),
            group: group.to_string(),
            topic: topic.into(),
            carrier: Carrier::Tcp,
            should_wait: Param::from(true),
            extras: BTreeMap::new(),
        }
    }

    pub fn carrier(mut self, carrier: impl Into<Carrier>) -> Self {
        self.carrier = carrier.into();
        self
    }

    pub fn should_wait(mut self, v: impl Into<Param>) -> Self {
        self.should_wait = v.into();
        self
    }

    pub fn extra(mut self, key: &str, v: impl Into<Param>) -> Self {
        self.extras.insert(key.to_string(), v.into());
        self
    }

    /// Checks everything that can be checked before a call: extras legal for
    /// the kind and literal values well-typed.
    pub fn validate(&self) -> Result<(), RegistryError> {
        for key in self.extras.keys() {
            if !self.kind.allowed_extras().contains(&key.as_str()) {
                return Err(RegistryError::InvalidSpec(format!(
                    "{} registration does not accept {key:?}",
                    self.kind
                )));
            }
        }
        if let Param::Literal(v) = &self.middleware {
            middleware_name(v)?;
        }
        if let Param::Literal(v) = &self.topic {
            topic_of(v)?;
        }
        if let Param::Literal(v) = &self.should_wait {
            flag("should_wait", v)?;
        }
        for (key, p) in &self.extras {
            if let Param::Literal(v) = p {
                check_extra(key, v)?;
            }
        }
        if self.group.is_empty() {
            return Err(RegistryError::InvalidSpec("empty group name".into()));
        }
        #[cfg(not(feature = "jpeg"))]
        if self.extras.get("jpg") == Some(&Param::from(true)) {
            return Err(RegistryError::InvalidSpec("jpg=true needs the `jpeg` feature".into()));
        }
        Ok(())
    }

    /// Fills every marker from `call`, yielding a literal spec.
    pub fn resolve(&self, signature: &Signature, call: &Call) -> Result<ConcreteSpec, RegistryError> {
        let get = |p: &Param| -> Result<NativeValue, RegistryError> {
            match p {
                Param::Literal(v) => Ok(v.clone()),
                Param::Splice(m) => signature.resolve(m, call).cloned(),
            }
        };
        let mut extras = BTreeMap::new();
        for (key, p) in &self.extras {
            let v = get(p)?;
            check_extra(key, &v)?;
            extras.insert(key.clone(), v);
        }
        Ok(ConcreteSpec {
            kind: self.kind,
            middleware: middleware_name(&get(&self.middleware)?)?,
            group: self.group.clone(),
            topic: topic_of(&get(&self.topic)?)?,
            carrier: self.carrier.clone(),
            should_wait: flag("should_wait", &get(&self.should_wait)?)?,
            extras,
        })
    }
}

fn middleware_name(v: &NativeValue) -> Result<String, RegistryError> {
    match v.as_str() {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => Err(RegistryError::InvalidSpec(format!("middleware must be a name, got {v:?}"))),
    }
}

fn topic_of(v: &NativeValue) -> Result<Topic, RegistryError> {
    let s = v
        .as_str()
        .ok_or_else(|| RegistryError::InvalidSpec(format!("topic must be a string, got {v:?}")))?;
    Topic::new(s).map_err(|e| RegistryError::InvalidSpec(e.to_string()))
}

fn flag(key: &str, v: &NativeValue) -> Result<bool, RegistryError> {
    v.as_bool()
        .ok_or_else(|| RegistryError::InvalidSpec(format!("{key} must be a bool, got {v:?}")))
}

fn check_extra(key: &str, v: &NativeValue) -> Result<(), RegistryError> {
    match key {
        "rgb" | "jpg" => flag(key, v).map(|_| ()),
        _ => match v.as_i64() {
            Some(n) if n > 0 && n <= u32::MAX as i64 => Ok(()),
            _ => Err(RegistryError::InvalidSpec(format!(
                "{key} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// A registration with every marker resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteSpec {
    pub kind: DataKind,
    pub middleware: String,
    pub group: String,
    pub topic: Topic,
    pub carrier: Carrier,
    pub should_wait: bool,
    pub extras: BTreeMap<String, NativeValue>,
}

impl ConcreteSpec {
    pub fn int_extra(&self, key: &str) -> Option<u32> {
        self.extras.get(key).and_then(NativeValue::as_i64).map(|n| n as u32)
    }

    pub fn flag_extra(&self, key: &str) -> Option<bool> {
        self.extras.get(key).and_then(NativeValue::as_bool)
    }

    pub fn queue_size(&self) -> Option<usize> {
        self.int_extra("queue_size").map(|n| n as usize)
    }

    /// The adapter the middleware name routes to.
    pub fn adapter(&self) -> Carrier {
        Carrier::from(self.middleware.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_msg_sig() -> Signature {
        Signature::new()
            .required("mware")
            .optional("msg", "")
            .optional("blocking", true)
    }

    fn mirror_spec() -> RegistrationSpec {
        RegistrationSpec::new(DataKind::NativeObject, "$0", "MirrorCls", "/example/read_msg")
            .carrier("tcp")
            .should_wait("$blocking")
    }

    #[test]
    fn markers_parse() {
        assert_eq!(SpliceMarker::parse("$0"), Some(SpliceMarker::Positional(0)));
        assert_eq!(SpliceMarker::parse("$12"), Some(SpliceMarker::Positional(12)));
        assert_eq!(
            SpliceMarker::parse("$img_width"),
            Some(SpliceMarker::Keyword("img_width".into()))
        );
        for s in ["tcp", "$", "$1a", "$a-b", "/x"] {
            assert_eq!(SpliceMarker::parse(s), None, "{s}");
        }
    }

    #[test]
    fn mirror_registration_resolves_from_call() {
        let spec = mirror_spec();
        spec.validate().unwrap();
        let call = Call::new(vec!["tcp".into()]).kwarg("blocking", true);
        let c = spec.resolve(&read_msg_sig(), &call).unwrap();
        assert_eq!(c.middleware, "tcp");
        assert!(c.should_wait);
        assert_eq!(c.topic.as_str(), "/example/read_msg");

        // keyword falls back to the declared default
        let c = spec.resolve(&read_msg_sig(), &Call::new(vec!["inproc".into()])).unwrap();
        assert_eq!(c.middleware, "inproc");
        assert!(c.should_wait);

        // or to its positional slot
        let call = Call::new(vec!["tcp".into(), "m".into(), false.into()]);
        assert!(!spec.resolve(&read_msg_sig(), &call).unwrap().should_wait);

        // and the positional marker may be supplied by keyword
        let call = Call::default().kwarg("mware", "tcp");
        assert_eq!(spec.resolve(&read_msg_sig(), &call).unwrap().middleware, "tcp");
    }

    #[test]
    fn unresolvable_markers() {
        let spec = RegistrationSpec::new(DataKind::NativeObject, "$3", "G", "/t");
        let call = Call::new(vec!["a".into(), "b".into()]);
        assert!(matches!(
            spec.resolve(&Signature::new(), &call),
            Err(RegistryError::UnresolvedSplice { marker }) if marker == "$3"
        ));
        let spec = RegistrationSpec::new(DataKind::NativeObject, "tcp", "G", "/t").should_wait("$nope");
        assert!(matches!(
            spec.resolve(&read_msg_sig(), &Call::default()),
            Err(RegistryError::UnresolvedSplice { .. })
        ));
        // required parameter without a value
        assert!(mirror_spec().resolve(&read_msg_sig(), &Call::default()).is_err());
    }

    #[test]
    fn literal_spec_resolves_unchanged() {
        let spec = RegistrationSpec::new(DataKind::Image, "ros", "ChannelCls", "/example/image_ros_msg")
            .extra("rgb", true)
            .extra("queue_size", 10i64);
        let c = spec.resolve(&Signature::new(), &Call::default()).unwrap();
        assert_eq!(c.middleware, "ros");
        assert_eq!(c.queue_size(), Some(10));
        assert_eq!(c.flag_extra("rgb"), Some(true));
        assert_eq!(c.extras.len(), 2);
    }

    #[test]
    fn extras_are_checked_per_kind() {
        let bad = RegistrationSpec::new(DataKind::Image, "ros", "G", "/t").extra("rate", 44100u32);
        assert!(matches!(bad.validate(), Err(RegistryError::InvalidSpec(_))));
        let bad = RegistrationSpec::new(DataKind::NativeObject, "x", "G", "/t").extra("width", 1u32);
        assert!(bad.validate().is_err());
        let bad = RegistrationSpec::new(DataKind::AudioChunk, "x", "G", "/t").extra("rate", 0i64);
        assert!(bad.validate().is_err());
        let bad = RegistrationSpec::new(DataKind::NativeObject, "x", "G", "not a topic");
        assert!(bad.validate().is_err());
        let ok = RegistrationSpec::new(DataKind::AudioChunk, "zeromq", "G", "/t")
            .extra("rate", "$aud_rate")
            .extra("chunk", "$aud_chunk")
            .extra("channels", "$aud_chann");
        ok.validate().unwrap();
    }

    #[test]
    fn spliced_extras_are_type_checked() {
        let sig = Signature::new().optional("img_width", "wide");
        let spec = RegistrationSpec::new(DataKind::Image, "ros", "G", "/t").extra("width", "$img_width");
        assert!(matches!(
            spec.resolve(&sig, &Call::default()),
            Err(RegistryError::InvalidSpec(_))
        ));
    }

    #[test]
    fn call_round_trips_through_native() {
        let call = Call::new(vec![1.into(), "x".into()]).kwarg("k", true);
        assert_eq!(Call::from_native(&call.to_native()), Some(call));
        assert_eq!(Call::from_native(&NativeValue::Int(1)), None);
    }

    #[test]
    fn bound_call_reads_parameters() {
        let sig = read_msg_sig();
        let call = Call::new(vec!["tcp".into(), "hello".into()]);
        let b = BoundCall {
            call: &call,
            signature: &sig,
        };
        assert_eq!(b.arg("msg").and_then(NativeValue::as_str), Some("hello"));
        assert_eq!(b.arg("blocking").and_then(NativeValue::as_bool), Some(true));
        assert_eq!(b.arg("missing"), None);
    }
}
