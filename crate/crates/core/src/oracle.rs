//! Reference integer inference and seeded test data.
//!
//! Everything here is a direct loop over the mathematical definitions and
//! serves as ground truth for the simulator. Tensors are stored row-major by
//! pixel with channels innermost, so pixel `n = r·f + c` of channel `ch`
//! lives at `n·d + ch`. Fully connected layers flatten in the same order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::netspec::{LayerKind, LayerSpec, NetworkSpec, QuantFormat};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<i64>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            data: vec![0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<i64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Tensor3 {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn index(&self, r: usize, c: usize, ch: usize) -> usize {
        (r * self.width + c) * self.channels + ch
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> i64 {
        self.data[self.index(r, c, ch)]
    }

    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: i64) {
        let i = self.index(r, c, ch);
        self.data[i] = v;
    }

    /// Zero outside the map, as implicit padding sees it.
    fn padded(&self, r: isize, c: isize, ch: usize) -> i64 {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            0
        } else {
            self.get(r as usize, c as usize, ch)
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

fn out_side(f: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if k > f + 2 * p || s == 0 {
        return Err(Error::Shape(format!("kernel {k} stride {s} does not fit a {f} map with padding {p}")));
    }
    Ok((f + 2 * p - k) / s + 1)
}

/// Standard convolution. `w` is laid out `[d_out][d_in][k][k]`; `bias` is
/// either empty or one value per output channel.
pub fn ref_conv2d(x: &Tensor3, w: &[i64], bias: &[i64], d_out: usize, k: usize, s: usize, p: usize) -> Result<Tensor3> {
    let d_in = x.channels;
    if w.len() != d_out * d_in * k * k {
        return Err(Error::Shape(format!(
            "conv expects {} weights, got {}",
            d_out * d_in * k * k,
            w.len()
        )));
    }
    check_bias(bias, d_out)?;
    let fo = out_side(x.height, k, s, p)?;
    let mut y = Tensor3::zeros(fo, fo, d_out);
    for r in 0..fo {
        for c in 0..fo {
            for o in 0..d_out {
                let mut acc = bias.get(o).copied().unwrap_or(0);
                for i in 0..d_in {
                    for kr in 0..k {
                        for kc in 0..k {
                            let xr = (r * s + kr) as isize - p as isize;
                            let xc = (c * s + kc) as isize - p as isize;
                            acc += w[((o * d_in + i) * k + kr) * k + kc] * x.padded(xr, xc, i);
                        }
                    }
                }
                y.set(r, c, o, acc);
            }
        }
    }
    Ok(y)
}

/// Per-channel convolution, `w` laid out `[d][k][k]`.
pub fn ref_depthwise(x: &Tensor3, w: &[i64], bias: &[i64], k: usize, s: usize, p: usize) -> Result<Tensor3> {
    let d = x.channels;
    if w.len() != d * k * k {
        return Err(Error::Shape(format!("depthwise expects {} weights, got {}", d * k * k, w.len())));
    }
    check_bias(bias, d)?;
    let fo = out_side(x.height, k, s, p)?;
    let mut y = Tensor3::zeros(fo, fo, d);
    for r in 0..fo {
        for c in 0..fo {
            for ch in 0..d {
                let mut acc = bias.get(ch).copied().unwrap_or(0);
                for kr in 0..k {
                    for kc in 0..k {
                        let xr = (r * s + kr) as isize - p as isize;
                        let xc = (c * s + kc) as isize - p as isize;
                        acc += w[(ch * k + kr) * k + kc] * x.padded(xr, xc, ch);
                    }
                }
                y.set(r, c, ch, acc);
            }
        }
    }
    Ok(y)
}

pub fn ref_maxpool(x: &Tensor3, k: usize, s: usize) -> Result<Tensor3> {
    let fo = out_side(x.height, k, s, 0)?;
    let mut y = Tensor3::zeros(fo, fo, x.channels);
    for r in 0..fo {
        for c in 0..fo {
            for ch in 0..x.channels {
                let mut m = i64::MIN;
                for kr in 0..k {
                    for kc in 0..k {
                        m = m.max(x.get(r * s + kr, c * s + kc, ch));
                    }
                }
                y.set(r, c, ch, m);
            }
        }
    }
    Ok(y)
}

/// Average pooling as `(Σ x·m) >> shift` with the constant of
/// [`crate::netspec::AvgConstant::for_kernel`], exactly what the lowered
/// depthwise layer computes.
pub fn ref_avgpool(x: &Tensor3, k: usize, s: usize) -> Result<Tensor3> {
    let c = crate::netspec::AvgConstant::for_kernel(k as u64);
    let w = vec![c.multiplier; x.channels * k * k];
    let mut y = ref_depthwise(x, &w, &[], k, s, 0)?;
    for v in &mut y.data {
        *v >>= c.shift;
    }
    Ok(y)
}

/// `W` laid out `[d_out][n]` over the flattened input.
pub fn ref_fc(x: &[i64], w: &[i64], bias: &[i64], d_out: usize) -> Result<Vec<i64>> {
    let n = x.len();
    if w.len() != n * d_out {
        return Err(Error::Shape(format!("fc expects {} weights, got {}", n * d_out, w.len())));
    }
    check_bias(bias, d_out)?;
    Ok((0..d_out)
        .map(|o| {
            let dot: i64 = w[o * n..(o + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum();
            dot + bias.get(o).copied().unwrap_or(0)
        })
        .collect())
}

pub fn ref_residual(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("residual operands {:?} and {:?}", a.shape(), b.shape())));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor3::from_vec(a.height, a.width, a.channels, data)
}

fn check_bias(bias: &[i64], d: usize) -> Result<()> {
    if bias.is_empty() || bias.len() == d {
        Ok(())
    } else {
        Err(Error::Shape(format!("bias has {} entries for {d} channels", bias.len())))
    }
}

/// Two's-complement (or unsigned) range of a `bits`-wide value.
pub fn value_range(bits: u32, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

/// Arithmetic shift right, then saturate to the activation range.
pub fn requantize(v: i64, shift: u32, quant: &QuantFormat) -> i64 {
    let (lo, hi) = value_range(quant.activation_bits, quant.signed);
    (v >> shift).clamp(lo, hi)
}

/// Post-processing every layer applies to its raw sums. Shared with the
/// simulator so both sides round identically.
pub fn finish_value(layer: &LayerSpec, quant: &QuantFormat, v: i64) -> i64 {
    let v = match layer.avg {
        Some(c) => v >> c.shift,
        None => v,
    };
    match layer.requant_shift {
        Some(sh) => requantize(v, sh, quant),
        None => v,
    }
}

/// Kernel and bias of one layer in the flat layouts documented on the
/// `ref_*` functions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerWeights {
    pub kernel: Vec<i64>,
    pub bias: Vec<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetworkWeights {
    pub layers: Vec<LayerWeights>,
}

/// Nested kernel shape of a layer, empty for weight-free layers.
pub fn kernel_shape(l: &LayerSpec) -> Vec<usize> {
    let (k, di, d) = (l.k as usize, l.d_in as usize, l.d_out as usize);
    match l.kind {
        LayerKind::Conv => vec![d, di, k, k],
        LayerKind::DepthwiseConv if l.avg.is_none() => vec![di, k, k],
        LayerKind::PointwiseConv => vec![d, di],
        LayerKind::FullyConnected => vec![d, l.fc_inputs() as usize],
        _ => vec![],
    }
}

fn kernel_len(l: &LayerSpec) -> usize {
    let shape = kernel_shape(l);
    if shape.is_empty() {
        0
    } else {
        shape.iter().product()
    }
}

fn bias_len(l: &LayerSpec) -> usize {
    if l.has_bias() {
        l.d_out as usize
    } else {
        0
    }
}

impl NetworkWeights {
    /// All-zero weights of the right shapes.
    pub fn zeros(spec: &NetworkSpec) -> Self {
        NetworkWeights {
            layers: spec
                .layers
                .iter()
                .map(|l| LayerWeights {
                    kernel: vec![0; kernel_len(l)],
                    bias: vec![0; bias_len(l)],
                })
                .collect(),
        }
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{} weight sets for {} layers",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (l, w) in spec.layers.iter().zip(&self.layers) {
            let n = kernel_len(l);
            if w.kernel.len() != n || w.bias.len() != bias_len(l) {
                return Err(Error::Shape(format!(
                    "layer {}: expected {n} weights and {} biases, got {} and {}",
                    l.name,
                    bias_len(l),
                    w.kernel.len(),
                    w.bias.len()
                )));
            }
        }
        Ok(())
    }

    /// Document keyed by layer name with nested kernel arrays.
    pub fn to_json(&self, spec: &NetworkSpec) -> String {
        let mut map = serde_json::Map::new();
        for (l, w) in spec.layers.iter().zip(&self.layers) {
            let shape = kernel_shape(l);
            if shape.is_empty() {
                continue;
            }
            let mut entry = serde_json::Map::new();
            entry.insert("kernel".into(), nest(&w.kernel, &shape));
            if !w.bias.is_empty() {
                entry.insert("bias".into(), Value::from(w.bias.clone()));
            }
            map.insert(l.name.clone(), Value::Object(entry));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("weights serialize")
    }

    pub fn from_json(spec: &NetworkSpec, text: &str) -> Result<Self> {
        let doc: BTreeMap<String, Value> = serde_json::from_str(text)?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let shape = kernel_shape(l);
            if shape.is_empty() {
                layers.push(LayerWeights::default());
                continue;
            }
            let entry = doc
                .get(&l.name)
                .ok_or_else(|| Error::Shape(format!("no weights for layer {}", l.name)))?;
            let kernel_v = entry
                .get("kernel")
                .ok_or_else(|| Error::Shape(format!("layer {}: missing kernel", l.name)))?;
            let mut kernel = Vec::new();
            flatten(kernel_v, &shape, &mut kernel).map_err(|m| Error::Shape(format!("layer {}: kernel {m}", l.name)))?;
            let mut bias = Vec::new();
            if let Some(b) = entry.get("bias") {
                flatten(b, &[l.d_out as usize], &mut bias).map_err(|m| Error::Shape(format!("layer {}: bias {m}", l.name)))?;
            }
            if bias.len() != bias_len(l) {
                return Err(Error::Shape(format!(
                    "layer {}: expected {} biases, got {}",
                    l.name,
                    bias_len(l),
                    bias.len()
                )));
            }
            layers.push(LayerWeights { kernel, bias });
        }
        Ok(NetworkWeights { layers })
    }
}

fn nest(flat: &[i64], shape: &[usize]) -> Value {
    match shape {
        [] | [_] => Value::from(flat.to_vec()),
        [n, rest @ ..] => {
            let stride = flat.len() / n;
            Value::Array(flat.chunks(stride.max(1)).map(|c| nest(c, rest)).collect())
        }
    }
}

fn flatten(v: &Value, shape: &[usize], out: &mut Vec<i64>) -> std::result::Result<(), String> {
    match shape {
        [] => v
            .as_i64()
            .map(|x| out.push(x))
            .ok_or_else(|| format!("expected an integer, found {v}")),
        [n, rest @ ..] => {
            let arr = v.as_array().ok_or("expected an array")?;
            if arr.len() != *n {
                return Err(format!("expected {n} entries, found {}", arr.len()));
            }
            arr.iter().try_for_each(|e| flatten(e, rest, out))
        }
    }
}

/// Run one layer on its input(s).
pub fn ref_layer(l: &LayerSpec, w: &LayerWeights, x: &Tensor3, other: Option<&Tensor3>, quant: &QuantFormat) -> Result<Tensor3> {
    let (k, s, p) = (l.k as usize, l.s as usize, l.p as usize);
    if x.height != l.f as usize || x.channels != l.d_in as usize {
        return Err(Error::Shape(format!(
            "layer {} expects {}x{}x{}, got {:?}",
            l.name, l.f, l.f, l.d_in, x.shape()
        )));
    }
    let mut y = match l.kind {
        LayerKind::Conv => ref_conv2d(x, &w.kernel, &w.bias, l.d_out as usize, k, s, p)?,
        LayerKind::PointwiseConv => ref_conv2d(x, &w.kernel, &w.bias, l.d_out as usize, 1, 1, 0)?,
        LayerKind::DepthwiseConv => match l.avg {
            Some(c) => ref_depthwise(x, &vec![c.multiplier; x.channels * k * k], &[], k, s, p)?,
            None => ref_depthwise(x, &w.kernel, &w.bias, k, s, p)?,
        },
        LayerKind::MaxPool => ref_maxpool(x, k, s)?,
        LayerKind::AvgPool => {
            let c = crate::netspec::AvgConstant::for_kernel(l.k);
            ref_depthwise(x, &vec![c.multiplier; x.channels * k * k], &[], k, s, 0)?
        }
        LayerKind::FullyConnected => {
            let v = ref_fc(&x.data, &w.kernel, &w.bias, l.d_out as usize)?;
            Tensor3::from_vec(1, 1, v.len(), v)?
        }
        LayerKind::ResidualAdd => {
            let b = other.ok_or_else(|| Error::Shape(format!("layer {} has no residual operand", l.name)))?;
            ref_residual(x, b)?
        }
        LayerKind::DepthwiseSeparableConv => {
            return Err(Error::Config(format!(
                "layer {} must be lowered before inference",
                l.name
            )))
        }
    };
    let avg_shift = match l.kind {
        LayerKind::AvgPool => crate::netspec::AvgConstant::for_kernel(l.k).shift,
        _ => 0,
    };
    for v in &mut y.data {
        *v = finish_value(l, quant, *v >> avg_shift);
    }
    Ok(y)
}

/// Outputs of every layer, in order.
pub fn ref_network_layers(spec: &NetworkSpec, weights: &NetworkWeights, x: &Tensor3) -> Result<Vec<Tensor3>> {
    weights.check(spec)?;
    let mut outs: Vec<Tensor3> = Vec::with_capacity(spec.layers.len());
    for (i, (l, w)) in spec.layers.iter().zip(&weights.layers).enumerate() {
        let input = if i == 0 { x } else { &outs[i - 1] };
        let other = l.residual_source.map(|s| &outs[s]);
        let y = ref_layer(l, w, input, other, &spec.quant)?;
        outs.push(y);
    }
    Ok(outs)
}

pub fn ref_network(spec: &NetworkSpec, weights: &NetworkWeights, x: &Tensor3) -> Result<Tensor3> {
    let mut outs = ref_network_layers(spec, weights, x)?;
    outs.pop().ok_or_else(|| Error::Config("network has no layers".into()))
}

pub fn gen_values(n: usize, seed: u64, bits: u32, signed: bool) -> Vec<i64> {
    let (lo, hi) = value_range(bits, signed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Uniform tensor over the representable range of `bits`.
pub fn gen_tensor(height: usize, width: usize, channels: usize, seed: u64, bits: u32, signed: bool) -> Tensor3 {
    Tensor3 {
        height,
        width,
        channels,
        data: gen_values(height * width * channels, seed, bits, signed),
    }
}

/// Input tensor matching the network's input shape and activation width.
pub fn gen_input(spec: &NetworkSpec, seed: u64) -> Tensor3 {
    gen_tensor(
        spec.height as usize,
        spec.width as usize,
        spec.channels as usize,
        seed,
        spec.quant.activation_bits,
        spec.quant.signed,
    )
}

/// Weights and biases within the weight width. Each layer draws from its
/// own stream derived from `seed`.
pub fn gen_weights(spec: &NetworkSpec, seed: u64) -> NetworkWeights {
    let q = &spec.quant;
    let zeros = NetworkWeights::zeros(spec);
    let layers = zeros
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let base = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(2 * i as u64 + 1);
            LayerWeights {
                kernel: gen_values(w.kernel.len(), base, q.weight_bits, q.signed),
                bias: gen_values(w.bias.len(), base ^ 0x5555, q.weight_bits, q.signed),
            }
        })
        .collect();
    NetworkWeights { layers }
}

/// Bounds for [`gen_network`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenLimits {
    /// Layers before lowering, including the closing fully connected one.
    pub max_layers: usize,
    pub max_f: u64,
    pub max_d: u64,
    /// Allow input rates at which some layer stalls.
    pub allow_stall: bool,
}

impl Default for GenLimits {
    fn default() -> Self {
        GenLimits {
            max_layers: 6,
            max_f: 16,
            max_d: 16,
            allow_stall: false,
        }
    }
}

/// Small random network that the simulator supports: stride-compatible
/// convolutions with at most `(k-1)/2` padding, pooling, depthwise-separable
/// blocks, residual joins and a closing fully connected layer. Draws are
/// repeated until the network can be planned.
pub fn gen_network(seed: u64, limits: &GenLimits) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(spec) = draw_network(&mut rng, limits) {
            return spec;
        }
    }
}

fn draw_network(rng: &mut ChaCha8Rng, lim: &GenLimits) -> Option<NetworkSpec> {
    use serde_json::json;
    let sides: Vec<u64> = [4, 5, 6, 8, 12, 16].into_iter().filter(|&f| f <= lim.max_f.max(4)).collect();
    let depths: Vec<u64> = [1, 2, 3, 4, 6, 8, 16].into_iter().filter(|&d| d <= lim.max_d.max(1)).collect();
    let depth = |rng: &mut ChaCha8Rng| depths[rng.gen_range(0..depths.len())];
    let f0 = sides[rng.gen_range(0..sides.len())];
    let d0 = depth(rng).min(4);
    let (mut f, mut d) = (f0, d0);
    let mut layers: Vec<Value> = Vec::new();
    let body = rng.gen_range(1..lim.max_layers.max(2));
    while layers.len() < body {
        let layer = match rng.gen_range(0..6) {
            2 if f % 2 == 0 && f > 2 => json!({"kind": "max_pool", "f": f, "k": 2, "s": 2, "d_out": d}),
            3 if f % 2 == 0 && f > 2 => json!({"kind": "avg_pool", "f": f, "k": 2, "s": 2, "d_out": d}),
            4 if f >= 3 => json!({"kind": "depthwise_separable_conv", "f": f, "k": 3, "s": 1, "p": 1,
                "d_out": depth(rng), "requant_shift": 4}),
            5 if !layers.is_empty() && f >= 3 && layers.len() + 2 <= body => {
                layers.push(json!({"kind": "conv", "f": f, "k": 3, "s": 1, "p": 1, "d_out": d, "requant_shift": 4}));
                json!({"kind": "residual_add", "f": f, "k": 1, "s": 1, "d_out": d,
                    "residual_source": layers.len() - 2})
            }
            _ => {
                let ks: Vec<u64> = [1, 3, 5].into_iter().filter(|&k| k <= f).collect();
                let k = ks[rng.gen_range(0..ks.len())];
                let p = if rng.gen_bool(0.5) { (k - 1) / 2 } else { 0 };
                let s = if (f + 2 * p - k).is_multiple_of(2) && f + 2 * p - k > 0 && rng.gen_bool(0.3) { 2 } else { 1 };
                json!({"kind": "conv", "f": f, "k": k, "s": s, "p": p, "d_out": depth(rng), "requant_shift": 4})
            }
        };
        let field = |name: &str| layer[name].as_u64().unwrap_or(0);
        f = (f + 2 * field("p") - field("k")) / field("s") + 1;
        d = field("d_out");
        layers.push(layer);
    }
    layers.push(json!({"kind": "fully_connected", "f": f, "k": f, "s": f, "d_out": depth(rng).min(10)}));

    let mut rates: Vec<(u64, u64)> = [(1, 8), (1, 4), (1, 3), (1, 2), (2, 3), (1, 1), (3, 2), (2, 1), (3, 1), (4, 1)]
        .into_iter()
        .filter(|&(n, m)| n <= d0 * m)
        .collect();
    // try rates in random order
    for i in (1..rates.len()).rev() {
        rates.swap(i, rng.gen_range(0..=i));
    }
    for (rn, rd) in rates {
        let doc = json!({
            "input": {"height": f0, "width": f0, "channels": d0, "rate": format!("{rn}/{rd}")},
            "quant": {"weight_bits": 4, "activation_bits": 4},
            "layers": layers,
        });
        let Ok(spec) = crate::netspec::parse_network(&doc.to_string()) else {
            continue;
        };
        let stalls = crate::rate::propagate_rates(&spec)
            .iter()
            .any(|r| r.flow == crate::rate::Flow::Stalled);
        if (lim.allow_stall || !stalls) && crate::alloc::plan(&spec, &Default::default()).is_ok() {
            return Some(spec);
        }
    }
    None
}

pub const FIXTURE_MAGIC: [u8; 4] = *b"CFT3";
pub const FIXTURE_VERSION: u16 = 1;

/// Binary tensor: a 16-byte header (magic, version u16, element bytes u16,
/// height u16, width u16, channels u32) followed by little-endian `i64`s.
pub fn write_fixture(t: &Tensor3) -> Result<Vec<u8>> {
    let too_big = |v: usize, max: usize| v > max;
    if too_big(t.height, u16::MAX as usize) || too_big(t.width, u16::MAX as usize) || too_big(t.channels, u32::MAX as usize) {
        return Err(Error::Fixture(format!("shape {:?} does not fit the header", t.shape())));
    }
    let mut out = Vec::with_capacity(16 + 8 * t.data.len());
    out.extend_from_slice(&FIXTURE_MAGIC);
    out.extend_from_slice(&FIXTURE_VERSION.to_le_bytes());
    out.extend_from_slice(&8u16.to_le_bytes());
    out.extend_from_slice(&(t.height as u16).to_le_bytes());
    out.extend_from_slice(&(t.width as u16).to_le_bytes());
    out.extend_from_slice(&(t.channels as u32).to_le_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_fixture(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < 16 || bytes[0..4] != FIXTURE_MAGIC {
        return Err(Error::Fixture("missing fixture header".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let version = u16_at(4);
    if version != FIXTURE_VERSION {
        return Err(Error::Fixture(format!("unsupported fixture version {version}")));
    }
    let elem = u16_at(6) as usize;
    if !matches!(elem, 1 | 2 | 4 | 8) {
        return Err(Error::Fixture(format!("unsupported element size {elem}")));
    }
    let (h, w) = (u16_at(8) as usize, u16_at(10) as usize);
    let c = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != h * w * c * elem {
        return Err(Error::Fixture(format!(
            "{} payload bytes for {h}x{w}x{c} elements of {elem} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(elem)
        .map(|b| {
            let mut buf = [0u8; 8];
            buf[..elem].copy_from_slice(b);
            // sign-extend from the stored width
            let shift = 64 - 8 * elem as u32;
            (i64::from_le_bytes(buf) << shift) >> shift
        })
        .collect();
    Tensor3::from_vec(h, w, c, data)
}
