//! Declarative network description: parsing, lowering and validation.
//!
//! Documents are JSON with three top-level keys:
//!
//! ```json
//! {
//!   "input": {"height": 24, "width": 24, "channels": 1, "rate": "1/1"},
//!   "quant": {"weight_bits": 8, "activation_bits": 8},
//!   "layers": [{"kind": "conv", "name": "C1", "f": 24, "k": 5, "s": 1, "p": 2, "d_out": 8}]
//! }
//! ```
//!
//! Parsing lowers `avg_pool` to a depthwise convolution with a constant
//! integer weight and a final shift, and splits `depthwise_separable_conv`
//! into a depthwise stage followed by a pointwise stage. The lowered form is
//! what [`serialize_network`] writes, so parsing its output is lossless.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate::{output_side, Rate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseSeparableConv,
    DepthwiseConv,
    PointwiseConv,
    MaxPool,
    AvgPool,
    FullyConnected,
    ResidualAdd,
}

impl LayerKind {
    /// Short tag used in generated layer names and reports.
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv => "C",
            LayerKind::DepthwiseSeparableConv => "DS",
            LayerKind::DepthwiseConv => "DW",
            LayerKind::PointwiseConv => "PW",
            LayerKind::MaxPool => "P",
            LayerKind::AvgPool => "AP",
            LayerKind::FullyConnected => "F",
            LayerKind::ResidualAdd => "R",
        }
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::AvgPool)
    }
}

/// Constant weight realizing `1/(k·k)` as `multiplier >> shift`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvgConstant {
    pub multiplier: i64,
    pub shift: u32,
}

impl AvgConstant {
    pub fn for_kernel(k: u64) -> Self {
        let area = k * k;
        let shift = ceil_log2(area) + 8;
        let multiplier = ((1u64 << shift) + area / 2) / area;
        AvgConstant {
            multiplier: multiplier as i64,
            shift,
        }
    }
}

pub(crate) fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Input feature-map side.
    pub f: u64,
    pub k: u64,
    pub s: u64,
    pub p: u64,
    pub d_in: u64,
    pub d_out: u64,
    /// Index of the other operand of a residual join (lowered indexing).
    pub residual_source: Option<usize>,
    /// Optional arithmetic shift and clamp to the activation width.
    pub requant_shift: Option<u32>,
    /// Set on depthwise layers lowered from average pooling.
    pub avg: Option<AvgConstant>,
    pub lowered_from: Option<LayerKind>,
    /// False for layers whose bias was folded away (e.g. batch-norm networks).
    pub bias: bool,
}

impl LayerSpec {
    pub fn f_out(&self) -> u64 {
        output_side(self.f, self.k, self.s, self.p)
    }

    /// Trainable weights; lowered average pooling has none.
    pub fn weight_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv => self.k * self.k * self.d_in * self.d_out,
            LayerKind::DepthwiseConv if self.avg.is_some() => 0,
            LayerKind::DepthwiseConv => self.k * self.k * self.d_in,
            LayerKind::PointwiseConv => self.d_in * self.d_out,
            LayerKind::FullyConnected => self.f * self.f * self.d_in * self.d_out,
            LayerKind::DepthwiseSeparableConv => {
                self.k * self.k * self.d_in + self.d_in * self.d_out
            }
            _ => 0,
        }
    }

    /// Whether the layer carries a per-output-channel bias.
    pub fn has_bias(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv
                | LayerKind::DepthwiseConv
                | LayerKind::PointwiseConv
                | LayerKind::FullyConnected
        ) && self.bias
            && self.avg.is_none()
    }

    /// Flattened input length seen by an FCU.
    pub fn fc_inputs(&self) -> u64 {
        match self.kind {
            LayerKind::FullyConnected => self.f * self.f * self.d_in,
            _ => self.d_in,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantFormat {
    pub weight_bits: u32,
    pub activation_bits: u32,
    #[serde(default = "default_signed")]
    pub signed: bool,
}

fn default_signed() -> bool {
    true
}

impl Default for QuantFormat {
    fn default() -> Self {
        QuantFormat {
            weight_bits: 8,
            activation_bits: 8,
            signed: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub height: u64,
    pub width: u64,
    pub channels: u64,
    pub input_rate: Rate,
    pub quant: QuantFormat,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn output_shape(&self) -> (u64, u64) {
        match self.layers.last() {
            Some(l) => (l.f_out(), l.d_out),
            None => (self.height, self.channels),
        }
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    height: u64,
    width: u64,
    channels: u64,
    rate: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    f: u64,
    k: u64,
    s: u64,
    #[serde(default)]
    p: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_in: Option<u64>,
    d_out: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    residual_source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    requant_shift: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    avg: Option<AvgConstant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lowered_from: Option<LayerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    input: InputDoc,
    quant: QuantFormat,
    layers: Vec<LayerDoc>,
}

/// Parse, lower and validate a network document. Warnings are dropped; use
/// [`validate_network`] on the result to see them.
pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: NetworkDoc = serde_path_to_error(de)?;
    let spec = lower(doc)?;
    let errors: Vec<_> = validate_network(&spec)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .collect();
    if !errors.is_empty() {
        let msg = errors
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Validation(msg));
    }
    Ok(spec)
}

pub fn parse_network_file(path: &std::path::Path) -> Result<NetworkSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_network(&text)
}

// serde_json reports line/column; we add the JSON path from the message by
// re-walking the value when the typed parse fails.
fn serde_path_to_error(de: &mut serde_json::Deserializer<serde_json::de::StrRead<'_>>) -> Result<NetworkDoc> {
    let value = serde_json::Value::deserialize(&mut *de).map_err(|e| Error::Parse {
        path: "$".into(),
        message: e.to_string(),
    })?;
    locate_schema_error(&value)?;
    serde_json::from_value(value).map_err(|e| Error::Parse {
        path: "$".into(),
        message: e.to_string(),
    })
}

fn locate_schema_error(value: &serde_json::Value) -> Result<()> {
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        path: "$".into(),
        message: "document must be an object".into(),
    })?;
    for key in ["input", "quant", "layers"] {
        if !obj.contains_key(key) {
            return Err(Error::Parse {
                path: format!("$.{key}"),
                message: "missing key".into(),
            });
        }
    }
    if let Err(e) = serde_json::from_value::<InputDoc>(obj["input"].clone()) {
        return Err(Error::Parse {
            path: "$.input".into(),
            message: e.to_string(),
        });
    }
    if let Err(e) = serde_json::from_value::<QuantFormat>(obj["quant"].clone()) {
        return Err(Error::Parse {
            path: "$.quant".into(),
            message: e.to_string(),
        });
    }
    let layers = obj["layers"].as_array().ok_or_else(|| Error::Parse {
        path: "$.layers".into(),
        message: "expected an array".into(),
    })?;
    for (i, l) in layers.iter().enumerate() {
        if let Err(e) = serde_json::from_value::<LayerDoc>(l.clone()) {
            return Err(Error::Parse {
                path: format!("$.layers[{i}]"),
                message: e.to_string(),
            });
        }
    }
    Ok(())
}

fn lower(doc: NetworkDoc) -> Result<NetworkSpec> {
    let input_rate: Rate = doc.input.rate.parse().map_err(|_| Error::Parse {
        path: "$.input.rate".into(),
        message: format!("expected an exact fraction, got {:?}", doc.input.rate),
    })?;
    let mut layers: Vec<LayerSpec> = Vec::new();
    // document index -> lowered index of the layer producing its output
    let mut produced_by: Vec<usize> = Vec::new();
    let mut counters = std::collections::HashMap::new();
    let mut d_prev = doc.input.channels;

    for (i, l) in doc.layers.into_iter().enumerate() {
        let d_in = l.d_in.unwrap_or(match l.kind {
            LayerKind::ResidualAdd => l.d_out,
            _ => d_prev,
        });
        let name = l.name.clone().unwrap_or_else(|| {
            let c = counters.entry(l.kind.tag()).or_insert(0);
            *c += 1;
            format!("{}{}", l.kind.tag(), c)
        });
        let residual_source = match l.residual_source {
            Some(src) if src < produced_by.len() => Some(produced_by[src]),
            Some(src) => {
                return Err(Error::Validation(format!(
                    "layer {i} ({name}): residual source {src} is not an earlier layer"
                )))
            }
            None => None,
        };
        let base = LayerSpec {
            name: name.clone(),
            kind: l.kind,
            f: l.f,
            k: l.k,
            s: l.s,
            p: l.p,
            d_in,
            d_out: l.d_out,
            residual_source,
            requant_shift: l.requant_shift,
            avg: l.avg,
            lowered_from: l.lowered_from,
            bias: l.bias.unwrap_or(true),
        };
        match l.kind {
            LayerKind::AvgPool => {
                layers.push(LayerSpec {
                    kind: LayerKind::DepthwiseConv,
                    avg: Some(AvgConstant::for_kernel(l.k)),
                    lowered_from: Some(LayerKind::AvgPool),
                    ..base
                });
            }
            LayerKind::DepthwiseSeparableConv => {
                let dw = LayerSpec {
                    name: format!("{name}.dw"),
                    kind: LayerKind::DepthwiseConv,
                    d_out: d_in,
                    requant_shift: l.requant_shift,
                    lowered_from: Some(LayerKind::DepthwiseSeparableConv),
                    ..base.clone()
                };
                let f_mid = dw.f_out();
                layers.push(dw);
                layers.push(LayerSpec {
                    name: format!("{name}.pw"),
                    kind: LayerKind::PointwiseConv,
                    f: f_mid,
                    k: 1,
                    s: 1,
                    p: 0,
                    residual_source: None,
                    lowered_from: Some(LayerKind::DepthwiseSeparableConv),
                    ..base
                });
            }
            _ => layers.push(base),
        }
        d_prev = l.d_out;
        produced_by.push(layers.len() - 1);
    }

    Ok(NetworkSpec {
        height: doc.input.height,
        width: doc.input.width,
        channels: doc.input.channels,
        input_rate,
        quant: doc.quant,
        layers,
    })
}

/// Write the (lowered) network back out in the document dialect.
pub fn serialize_network(spec: &NetworkSpec) -> String {
    let doc = NetworkDoc {
        input: InputDoc {
            height: spec.height,
            width: spec.width,
            channels: spec.channels,
            rate: format!("{}/{}", spec.input_rate.numer(), spec.input_rate.denom()),
        },
        quant: spec.quant,
        layers: spec
            .layers
            .iter()
            .map(|l| LayerDoc {
                kind: l.kind,
                name: Some(l.name.clone()),
                f: l.f,
                k: l.k,
                s: l.s,
                p: l.p,
                d_in: Some(l.d_in),
                d_out: l.d_out,
                residual_source: l.residual_source,
                requant_shift: l.requant_shift,
                avg: l.avg,
                lowered_from: l.lowered_from,
                bias: (!l.bias).then_some(false),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("network document serializes")
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// `None` for network-level findings.
    pub layer: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match self.layer {
            Some(i) => write!(f, "{sev}: layer {i}: {}", self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

pub fn validate_network(spec: &NetworkSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |layer: Option<usize>, message: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            layer,
            message,
        })
    };

    if spec.layers.is_empty() {
        err(None, "network has no layers".into());
    }
    if spec.height != spec.width {
        err(
            None,
            format!("input must be square, got {}x{}", spec.height, spec.width),
        );
    }
    if spec.channels == 0 || spec.height == 0 {
        err(None, "input shape must be positive".into());
    }
    if spec.input_rate.is_zero() {
        err(None, "input rate must be positive".into());
    } else if spec.input_rate > Rate::integer(spec.channels.max(1)) {
        err(
            None,
            format!(
                "input rate {} exceeds one pixel ({} features) per cycle",
                spec.input_rate, spec.channels
            ),
        );
    }
    if spec.quant.weight_bits == 0 || spec.quant.activation_bits == 0 {
        err(None, "quantization widths must be positive".into());
    }
    let mut diags = Vec::new();
    let mut f_prev = spec.height;
    let mut d_prev = spec.channels;
    let mut prev_name = String::from("input");
    for (i, l) in spec.layers.iter().enumerate() {
        check_layer(i, l, &mut diags);
        let degenerate = l.f == 0 || l.k == 0 || l.s == 0 || l.d_in == 0 || l.d_out == 0;
        if !degenerate {
            let (f_expect, d_expect) = (f_prev, d_prev);
            if l.f != f_expect || l.d_in != d_expect {
                diags.push(Diagnostic {
                    severity: Severity::Error,
                    layer: Some(i),
                    message: format!(
                        "shape chain mismatch: {prev_name} produces {f_expect}x{f_expect}x{d_expect} \
                         but {} expects {}x{}x{}",
                        l.name, l.f, l.f, l.d_in
                    ),
                });
            }
            if let Some(src) = l.residual_source {
                if src >= i {
                    diags.push(Diagnostic {
                        severity: Severity::Error,
                        layer: Some(i),
                        message: format!("residual source {src} is not an earlier layer"),
                    });
                } else {
                    let s = &spec.layers[src];
                    if s.f_out() != l.f || s.d_out != l.d_in {
                        diags.push(Diagnostic {
                            severity: Severity::Error,
                            layer: Some(i),
                            message: format!(
                                "residual operands differ: {} gives {}x{}x{}, {} gives {}x{}x{}",
                                s.name,
                                s.f_out(),
                                s.f_out(),
                                s.d_out,
                                prev_name,
                                l.f,
                                l.f,
                                l.d_in
                            ),
                        });
                    }
                }
            } else if l.kind == LayerKind::ResidualAdd {
                diags.push(Diagnostic {
                    severity: Severity::Error,
                    layer: Some(i),
                    message: "residual_add needs a residual_source".into(),
                });
            }
            f_prev = l.f_out();
        }
        d_prev = l.d_out;
        prev_name = l.name.clone();
    }
    out.extend(diags);
    out
}

fn check_layer(i: usize, l: &LayerSpec, out: &mut Vec<Diagnostic>) {
    let mut push = |severity, message: String| {
        out.push(Diagnostic {
            severity,
            layer: Some(i),
            message,
        })
    };
    if l.f == 0 || l.k == 0 || l.s == 0 || l.d_in == 0 || l.d_out == 0 {
        push(
            Severity::Error,
            format!("{}: f, k, s and channel counts must be positive", l.name),
        );
        return;
    }
    if l.k > l.f + 2 * l.p {
        push(
            Severity::Error,
            format!("{}: kernel {} larger than padded map {}", l.name, l.k, l.f + 2 * l.p),
        );
    }
    match l.kind {
        LayerKind::MaxPool | LayerKind::AvgPool => {
            if l.d_in != l.d_out {
                push(
                    Severity::Error,
                    format!(
                        "{}: pooling preserves channels (d_in={}, d_out={})",
                        l.name, l.d_in, l.d_out
                    ),
                );
            }
            if l.s > l.k {
                push(Severity::Error, format!("{}: pooling stride {} exceeds kernel {}", l.name, l.s, l.k));
            }
            if l.kind == LayerKind::MaxPool && l.p != 0 {
                push(Severity::Error, format!("{}: padded max pooling is not supported", l.name));
            }
        }
        LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::DepthwiseSeparableConv => {
            if l.kind == LayerKind::DepthwiseConv && l.d_in != l.d_out {
                push(
                    Severity::Error,
                    format!(
                        "{}: depthwise convolution needs groups = d_in (d_in={}, d_out={})",
                        l.name, l.d_in, l.d_out
                    ),
                );
            }
            if l.avg.is_none() && l.k > 1 && 2 * l.p != l.k - 1 {
                push(
                    Severity::Warning,
                    format!(
                        "{}: output not continuous without padding p=(k-1)/2 (k={}, p={})",
                        l.name, l.k, l.p
                    ),
                );
            }
        }
        LayerKind::PointwiseConv => {
            if l.k != 1 || l.s != 1 || l.p != 0 {
                push(Severity::Error, format!("{}: pointwise layers need k=1, s=1, p=0", l.name));
            }
        }
        LayerKind::FullyConnected => {
            if l.k != l.f || l.s != l.f || l.p != 0 {
                push(
                    Severity::Error,
                    format!("{}: fully connected layers are modeled with k = f = s and p = 0", l.name),
                );
            }
        }
        LayerKind::ResidualAdd => {
            if l.k != 1 || l.s != 1 || l.p != 0 || l.d_in != l.d_out {
                push(
                    Severity::Error,
                    format!("{}: residual_add needs k=1, s=1, p=0 and d_in = d_out", l.name),
                );
            }
        }
    }
}
