//! Tool annotations, the function-call wire format, validation and dispatch.
//!
//! A call travels as one JSON object per line:
//!
//! ```text
//! {"function":"Get_departure_time","arguments":{"date":"1 week later, Fri","time":"18:00:00"}}
//! ```
//!
//! A model response may carry several such lines, or a single JSON array of
//! call objects. Lines that do not start with `{` are treated as prose and
//! skipped.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Annotations for the built-in tools, one [`ToolSpec`] per line.
pub const DEFAULT_ANNOTATIONS: &str = include_str!("../tools/annotations.jsonl");

pub type Args = BTreeMap<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Text,
    Number,
    Object,
    Array,
}

impl ParamKind {
    pub fn admits(self, value: &Value) -> bool {
        match self {
            ParamKind::Text => value.is_string(),
            ParamKind::Number => value.is_number(),
            ParamKind::Object => value.is_object(),
            ParamKind::Array => value.is_array(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, kind: ParamKind) -> Self {
        Self { name: name.into(), kind, default: None }
    }

    pub fn with_default(mut self, default: Value) -> Self {
        self.default = Some(default);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub required_params: Vec<ParamSpec>,
    #[serde(default)]
    pub optional_params: Vec<ParamSpec>,
    #[serde(default)]
    pub output_desc: String,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            required_params: Vec::new(),
            optional_params: Vec::new(),
            output_desc: String::new(),
        }
    }

    pub fn required(mut self, name: &str, kind: ParamKind) -> Self {
        self.required_params.push(ParamSpec::new(name, kind));
        self
    }

    pub fn optional(mut self, param: ParamSpec) -> Self {
        self.optional_params.push(param);
        self
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.required_params.iter().chain(&self.optional_params)
    }

    pub fn check(&self) -> Result<(), RegistryError> {
        if self.name.is_empty() {
            return Err(RegistryError::InvalidSpec("empty tool name".into()));
        }
        let mut seen: Vec<&str> = self.params().map(|p| p.name.as_str()).collect();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(RegistryError::InvalidSpec(alloc::format!("{}: duplicate parameter `{}`", self.name, w[0])));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid tool spec: {0}")]
    InvalidSpec(String),
    #[error("malformed tool annotation on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

/// Parses a tool annotation file (one [`ToolSpec`] per line).
pub fn load_specs(source: &str) -> Result<Vec<ToolSpec>, RegistryError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let spec: ToolSpec = serde_json::from_str(line)
            .map_err(|e| RegistryError::MalformedRecord { line: i + 1, message: e.to_string() })?;
        spec.check()?;
        out.push(spec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub function: String,
    #[serde(default)]
    pub arguments: Args,
    #[serde(default)]
    pub raw_text: String,
}

impl FunctionCall {
    /// Builds a call and renders its wire form into `raw_text`.
    pub fn new(function: impl Into<String>, arguments: Args) -> Self {
        let mut call = Self { function: function.into(), arguments, raw_text: String::new() };
        call.raw_text = call.to_wire();
        call
    }

    pub fn to_wire(&self) -> String {
        let mut obj = Map::new();
        obj.insert("function".into(), Value::String(self.function.clone()));
        obj.insert(
            "arguments".into(),
            Value::Object(self.arguments.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        );
        Value::Object(obj).to_string()
    }

    pub fn text_arg(&self, name: &str) -> Option<&str> {
        self.arguments.get(name).and_then(Value::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed call: {0}")]
    MalformedCall(String),
}

fn call_from_value(value: Value, raw_text: &str) -> Result<FunctionCall, ParseError> {
    let Value::Object(mut obj) = value else {
        return Err(ParseError::MalformedCall("not an object".into()));
    };
    let function = match obj.remove("function") {
        Some(Value::String(f)) if !f.trim().is_empty() => f,
        _ => return Err(ParseError::MalformedCall("missing `function` name".into())),
    };
    let arguments = match obj.remove("arguments") {
        None | Some(Value::Null) => Args::new(),
        Some(Value::Object(map)) => map.into_iter().collect(),
        Some(_) => return Err(ParseError::MalformedCall("`arguments` is not an object".into())),
    };
    Ok(FunctionCall { function, arguments, raw_text: raw_text.to_string() })
}

/// Parses exactly one call object.
pub fn parse_function_call(text: &str) -> Result<FunctionCall, ParseError> {
    let value: Value = serde_json::from_str(text.trim()).map_err(|e| ParseError::MalformedCall(e.to_string()))?;
    call_from_value(value, text)
}

/// Parses every call in a model response, in emission order.
pub fn parse_function_calls(text: &str) -> Result<Vec<FunctionCall>, ParseError> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(trimmed).map_err(|e| ParseError::MalformedCall(e.to_string()))?;
        return values
            .into_iter()
            .map(|v| {
                let raw = v.to_string();
                call_from_value(v, &raw)
            })
            .collect();
    }
    trimmed.lines().map(str::trim).filter(|l| l.starts_with('{')).map(parse_function_call).collect()
}

/// Why a call produced no payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum ToolError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("missing required parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{0}` has the wrong kind")]
    ParamKindMismatch(String),
    #[error("{0}")]
    ToolFailure(ToolFailure),
}

/// An error raised by a tool implementation itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ToolFailure {
    pub code: String,
    pub message: String,
}

impl ToolFailure {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error(ToolError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub function: String,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

impl ToolResult {
    pub fn ok(function: impl Into<String>, payload: Value) -> Self {
        Self { function: function.into(), status: ToolStatus::Ok, payload: Some(payload) }
    }

    pub fn error(function: impl Into<String>, error: ToolError) -> Self {
        Self { function: function.into(), status: ToolStatus::Error(error), payload: None }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }

    pub fn error_ref(&self) -> Option<&ToolError> {
        match &self.status {
            ToolStatus::Error(e) => Some(e),
            ToolStatus::Ok => None,
        }
    }
}

pub type ToolFn<C> = Box<dyn Fn(&Args, &C) -> Result<Value, ToolFailure> + Send + Sync>;

/// Tool specs plus their bound implementations. `C` is the per-turn
/// context handed to every tool; session identity comes from there.
pub struct Registry<C> {
    specs: BTreeMap<String, ToolSpec>,
    bindings: BTreeMap<String, ToolFn<C>>,
}

impl<C> Default for Registry<C> {
    fn default() -> Self {
        Self { specs: BTreeMap::new(), bindings: BTreeMap::new() }
    }
}

impl<C> core::fmt::Debug for Registry<C> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Registry")
            .field("specs", &self.specs.keys().collect::<Vec<_>>())
            .field("bound", &self.bindings.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl<C> Registry<C> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a spec. Any existing binding is kept.
    pub fn register_tool(&mut self, spec: ToolSpec) -> Result<(), RegistryError> {
        spec.check()?;
        self.specs.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn bind<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&Args, &C) -> Result<Value, ToolFailure> + Send + Sync + 'static,
    {
        self.bindings.insert(name.to_string(), Box::new(f));
    }

    pub fn lookup(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.get(name)
    }

    /// Specs in name order.
    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.specs.values()
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.keys().map(String::as_str).collect()
    }

    /// Checks a call against its spec and returns the argument map with
    /// optional defaults filled in.
    pub fn validate(&self, call: &FunctionCall) -> Result<Args, ToolError> {
        let spec = self.specs.get(&call.function).ok_or_else(|| ToolError::UnknownFunction(call.function.clone()))?;
        let mut args = Args::new();
        for p in &spec.required_params {
            match call.arguments.get(&p.name) {
                None | Some(Value::Null) => return Err(ToolError::MissingParam(p.name.clone())),
                Some(v) if !p.kind.admits(v) => return Err(ToolError::ParamKindMismatch(p.name.clone())),
                Some(v) => {
                    args.insert(p.name.clone(), v.clone());
                }
            }
        }
        for p in &spec.optional_params {
            match call.arguments.get(&p.name) {
                None | Some(Value::Null) => {
                    if let Some(d) = &p.default {
                        args.insert(p.name.clone(), d.clone());
                    }
                }
                Some(v) if !p.kind.admits(v) => return Err(ToolError::ParamKindMismatch(p.name.clone())),
                Some(v) => {
                    args.insert(p.name.clone(), v.clone());
                }
            }
        }
        Ok(args)
    }

    /// Validates then runs a call. A call that fails validation never
    /// reaches its implementation.
    pub fn dispatch(&self, call: &FunctionCall, ctx: &C) -> ToolResult {
        let args = match self.validate(call) {
            Ok(args) => args,
            Err(e) => return ToolResult::error(&call.function, e),
        };
        let Some(tool) = self.bindings.get(&call.function) else {
            return ToolResult::error(
                &call.function,
                ToolError::ToolFailure(ToolFailure::new("Unbound", "no implementation registered")),
            );
        };
        match tool(&args, ctx) {
            Ok(payload) => ToolResult::ok(&call.function, payload),
            Err(f) => ToolResult::error(&call.function, ToolError::ToolFailure(f)),
        }
    }
}

/// Reads a text argument, treating absence as `None`.
pub fn arg_text<'a>(args: &'a Args, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

pub fn arg_number(args: &Args, name: &str) -> Option<f64> {
    args.get(name).and_then(Value::as_f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::sync::atomic::{AtomicUsize, Ordering};
    use serde_json::json;
    use std::sync::Arc;

    fn poi_search_spec() -> ToolSpec {
        ToolSpec::new("POI_search", "search POIs")
            .required("POI_name", ParamKind::Text)
            .optional(ParamSpec::new("slot", ParamKind::Text).with_default(json!("end")))
    }

    #[test]
    fn register_lookup_replace_enumerate() {
        let mut r: Registry<()> = Registry::new();
        r.register_tool(poi_search_spec()).unwrap();
        assert_eq!(r.lookup("POI_search").unwrap().description, "search POIs");
        let mut changed = poi_search_spec();
        changed.description = "v2".into();
        r.register_tool(changed).unwrap();
        assert_eq!(r.lookup("POI_search").unwrap().description, "v2");
        r.register_tool(ToolSpec::new("Get_current_location", "where am I")).unwrap();
        assert_eq!(r.names(), ["Get_current_location", "POI_search"]);
    }

    #[test]
    fn duplicate_params_rejected() {
        let spec = poi_search_spec().required("slot", ParamKind::Text);
        assert!(matches!(spec.check(), Err(RegistryError::InvalidSpec(_))));
    }

    #[test]
    fn parses_departure_time_call() {
        let raw = r#"{"function":"Get_departure_time","arguments":{"date":"1 week later, Fri","time":"18:00:00"}}"#;
        let call = parse_function_call(raw).unwrap();
        assert_eq!(call.function, "Get_departure_time");
        assert_eq!(call.arguments.len(), 2);
        assert_eq!(call.text_arg("date"), Some("1 week later, Fri"));
        assert_eq!(call.raw_text, raw);
    }

    #[test]
    fn empty_args_and_truncation() {
        assert!(parse_function_call(r#"{"function":"Get_current_location","arguments":{}}"#)
            .unwrap()
            .arguments
            .is_empty());
        assert!(matches!(parse_function_call(r#"{"function":"POI_search","argu"#), Err(ParseError::MalformedCall(_))));
        assert!(parse_function_call(r#"{"arguments":{}}"#).is_err());
    }

    #[test]
    fn multiple_calls_in_one_response() {
        let text = "Sure.\n{\"function\":\"A\",\"arguments\":{}}\n{\"function\":\"B\"}\n";
        let calls = parse_function_calls(text).unwrap();
        assert_eq!(calls.iter().map(|c| c.function.as_str()).collect::<Vec<_>>(), ["A", "B"]);
        let arr = parse_function_calls(r#"[{"function":"A"},{"function":"B","arguments":{"x":1}}]"#).unwrap();
        assert_eq!(arr[1].arguments["x"], json!(1));
        assert!(parse_function_calls("no calls here").unwrap().is_empty());
    }

    #[test]
    fn wire_round_trip() {
        let mut args = Args::new();
        args.insert("POI_name".into(), json!("Huateng Garden"));
        let call = FunctionCall::new("POI_search", args);
        assert_eq!(parse_function_call(&call.raw_text).unwrap(), call);
    }

    fn counting_registry(counter: Arc<AtomicUsize>) -> Registry<()> {
        let mut r = Registry::new();
        r.register_tool(poi_search_spec()).unwrap();
        r.bind("POI_search", move |args, _| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok(json!({ "echo": args["POI_name"], "slot": args["slot"] }))
        });
        r
    }

    fn call(function: &str, args: Value) -> FunctionCall {
        parse_function_call(&json!({ "function": function, "arguments": args }).to_string()).unwrap()
    }

    #[test]
    fn validation_failures_never_execute() {
        let counter = Arc::new(AtomicUsize::new(0));
        let r = counting_registry(counter.clone());
        let bad = [
            (call("Book_flight", json!({})), ToolError::UnknownFunction("Book_flight".into())),
            (call("POI_search", json!({})), ToolError::MissingParam("POI_name".into())),
            (call("POI_search", json!({"POI_name": 3})), ToolError::ParamKindMismatch("POI_name".into())),
            (call("POI_search", json!({"POI_name": "x", "slot": []})), ToolError::ParamKindMismatch("slot".into())),
        ];
        for (c, want) in bad {
            let res = r.dispatch(&c, &());
            assert_eq!(res.error_ref(), Some(&want));
            assert!(res.payload.is_none());
        }
        assert_eq!(counter.load(Ordering::SeqCst), 0);
        let ok = r.dispatch(&call("POI_search", json!({"POI_name": "x"})), &());
        assert_eq!(ok.payload, Some(json!({"echo": "x", "slot": "end"})));
        assert_eq!(counter.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn default_annotations_load() {
        let specs = load_specs(DEFAULT_ANNOTATIONS).unwrap();
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        for want in [
            "Get_current_location",
            "POI_search",
            "POI_select",
            "Route_planning_API",
            "Get_departure_time",
            "Order_create",
            "Order_cancel",
        ] {
            assert!(names.contains(&want), "{want}");
        }
        assert!(matches!(
            load_specs("{\"name\":\"x\",\"description\":\"d\"}\n{oops"),
            Err(RegistryError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn tool_result_serde() {
        let r = ToolResult::error("X", ToolError::MissingParam("p".into()));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"function":"X","status":{"error":{"MissingParam":"p"}}}"#);
        assert_eq!(serde_json::from_str::<ToolResult>(&json).unwrap(), r);
        let ok = ToolResult::ok("Y", json!([1]));
        assert_eq!(serde_json::to_string(&ok).unwrap(), r#"{"function":"Y","status":"ok","payload":[1]}"#);
    }

    proptest::proptest! {
        #[test]
        fn enumeration_sorted(names in proptest::collection::vec("[A-Za-z_]{1,12}", 0..12)) {
            let mut r: Registry<()> = Registry::new();
            for n in &names {
                r.register_tool(ToolSpec::new(n.clone(), "")).unwrap();
            }
            let listed = r.names();
            let mut sorted = listed.clone();
            sorted.sort_unstable();
            sorted.dedup();
            proptest::prop_assert_eq!(listed, sorted);
        }
    }
}
