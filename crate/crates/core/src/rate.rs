//! Exact data-rate propagation, output validity and padding selects.

use std::fmt;
use std::ops::{Div, Mul};
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::netspec::{LayerKind, LayerSpec, NetworkSpec};

/// Valid features per clock cycle, kept as an exact fraction.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rate(Ratio<u64>);

impl Rate {
    pub fn new(numer: u64, denom: u64) -> Self {
        assert!(denom > 0, "rate denominator must be positive");
        Rate(Ratio::new(numer, denom))
    }

    pub fn integer(n: u64) -> Self {
        Rate(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn ceil(&self) -> u64 {
        self.numer().div_ceil(self.denom())
    }

    pub fn is_integer(&self) -> bool {
        self.denom() == 1
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    /// Only for display; analysis never goes through floating point.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// `⌈n / self⌉` for an integer `n`.
    pub fn ceil_div_into(&self, n: u64) -> u64 {
        (n * self.denom()).div_ceil(self.numer())
    }

    /// Two-decimal rendering used in the printed tables (`5/288` → `0.02`).
    pub fn display_rounded(&self) -> String {
        if self.is_integer() {
            self.numer().to_string()
        } else if self.denom() <= 16 && self.numer() < self.denom() * 16 {
            format!("{}/{}", self.numer(), self.denom())
        } else {
            format!("{:.2}", self.to_f64())
        }
    }

    pub fn min(self, other: Rate) -> Rate {
        if self <= other {
            self
        } else {
            other
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rate({self})")
    }
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse {
            path: "rate".into(),
            message: format!("{m}: {s:?}"),
        };
        let s = s.trim();
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s, "1"),
        };
        let n: u64 = n.parse().map_err(|_| bad("bad numerator"))?;
        let d: u64 = d.parse().map_err(|_| bad("bad denominator"))?;
        if d == 0 {
            return Err(bad("zero denominator"));
        }
        Ok(Rate::new(n, d))
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", self.numer(), self.denom()))
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Mul for Rate {
    type Output = Rate;
    fn mul(self, rhs: Rate) -> Rate {
        Rate(self.0 * rhs.0)
    }
}

impl Mul<u64> for Rate {
    type Output = Rate;
    fn mul(self, rhs: u64) -> Rate {
        Rate(self.0 * rhs)
    }
}

impl Div<u64> for Rate {
    type Output = Rate;
    fn div(self, rhs: u64) -> Rate {
        Rate(self.0 / rhs)
    }
}

/// `r_out = d_out · r_in / (d_in · s²)`.
pub fn output_rate(d_in: u64, d_out: u64, r_in: Rate, s: u64) -> Rate {
    r_in * d_out / (d_in * s * s)
}

/// Whether the window whose top-left input pixel has index `n` (row-major,
/// `n = r·f + c`) produces a valid output.
pub fn output_valid(n: u64, f: u64, k: u64, s: u64, p: u64) -> Result<bool> {
    if n >= f * f {
        return Err(Error::Domain(format!("pixel index {n} outside a {f}x{f} map")));
    }
    let (r, c) = n.div_rem(&f);
    Ok(index_valid(r, f, k, s, p) && index_valid(c, f, k, s, p))
}

fn index_valid(i: u64, f: u64, k: u64, s: u64, p: u64) -> bool {
    let span = f + 2 * p;
    span >= k && i <= span - k && i.is_multiple_of(s)
}

/// Output side length `⌊(f − k + 2p)/s⌋ + 1`.
pub fn output_side(f: u64, k: u64, s: u64, p: u64) -> u64 {
    (f + 2 * p).saturating_sub(k) / s + 1
}

/// Padding select for kernel column `i` when the current input pixel sits in
/// column `c`. Zero masks that multiplier column.
pub fn pad_select(c: u64, i: u64, f: u64, k: u64, p: u64) -> bool {
    let c = c as i64;
    let (i, f, k, p) = (i as i64, f as i64, k as i64, p as i64);
    !(c >= f - p + i || c < p - k + i + 1)
}

/// All `k` selects for column `c`, as in the `(pad_0, …, pad_{k-1})` tuples.
pub fn pad_tuple(c: u64, f: u64, k: u64, p: u64) -> Vec<bool> {
    (0..k).map(|i| pad_select(c, i, f, k, p)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    Continuous,
    RestoredByInterleaving,
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRateInfo {
    pub r_in: Rate,
    pub r_out: Rate,
    pub flow: Flow,
    pub utilization: Ratio<u64>,
}

/// Flow class and utilization `min(1, r_in·C/d_in)` for a layer at `r_in`.
pub fn classify_flow(layer: &LayerSpec, r_in: Rate) -> LayerRateInfo {
    let d_in = layer.d_in;
    let r_out = layer_output_rate(layer, r_in);
    let one = Ratio::from_integer(1u64);
    let (configs, capped) = match layer.kind {
        LayerKind::Conv => {
            let want = r_in.ceil_div_into(d_in);
            let cap = d_in * layer.d_out;
            (want.min(cap), want > cap)
        }
        LayerKind::DepthwiseConv | LayerKind::MaxPool | LayerKind::AvgPool => {
            let want = r_in.ceil_div_into(d_in);
            (want.min(d_in), want > d_in)
        }
        LayerKind::DepthwiseSeparableConv => {
            let want = r_in.ceil_div_into(d_in);
            (want.min(d_in), want > d_in)
        }
        // FCUs absorb any rate by choosing h; the residual join forwards.
        LayerKind::PointwiseConv | LayerKind::FullyConnected | LayerKind::ResidualAdd => {
            return LayerRateInfo {
                r_in,
                r_out,
                flow: Flow::Continuous,
                utilization: one,
            }
        }
    };
    let utilization = (r_in.ratio() * configs / d_in).min(one);
    let flow = if capped {
        Flow::Stalled
    } else if configs > 1 {
        Flow::RestoredByInterleaving
    } else {
        Flow::Continuous
    };
    LayerRateInfo {
        r_in,
        r_out,
        flow,
        utilization,
    }
}

/// Output rate of one layer given its input rate.
pub fn layer_output_rate(layer: &LayerSpec, r_in: Rate) -> Rate {
    match layer.kind {
        LayerKind::ResidualAdd => r_in,
        _ => output_rate(layer.d_in, layer.d_out, r_in, layer.s),
    }
}

/// Walk the network from the input rate, one [`LayerRateInfo`] per layer.
/// A residual join takes the slower of its two sources.
pub fn propagate_rates(spec: &NetworkSpec) -> Vec<LayerRateInfo> {
    let mut out: Vec<LayerRateInfo> = Vec::with_capacity(spec.layers.len());
    let mut r = spec.input_rate;
    for layer in &spec.layers {
        let mut r_in = r;
        if layer.kind == LayerKind::ResidualAdd {
            if let Some(src) = layer.residual_source.filter(|&s| s < out.len()) {
                r_in = r_in.min(out[src].r_out);
            }
        }
        let info = classify_flow(layer, r_in);
        r = info.r_out;
        out.push(info);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_rate_examples() {
        assert_eq!(output_rate(8, 16, Rate::integer(2), 1), Rate::integer(4));
        assert_eq!(output_rate(16, 16, Rate::integer(4), 3), Rate::new(4, 9));
        assert_eq!(output_rate(5, 5, Rate::new(3, 7), 1), Rate::new(3, 7));
        assert_eq!(output_rate(16, 10, Rate::new(4, 9), 4), Rate::new(5, 288));
    }

    fn valid_set(f: u64, k: u64, s: u64, p: u64) -> Vec<u64> {
        (0..f * f)
            .filter(|&n| output_valid(n, f, k, s, p).unwrap())
            .collect()
    }

    #[test]
    fn valid_sets() {
        assert_eq!(valid_set(5, 3, 1, 0), vec![0, 1, 2, 5, 6, 7, 10, 11, 12]);
        assert_eq!(valid_set(5, 3, 1, 1), (0..25).collect::<Vec<_>>());
        assert_eq!(valid_set(4, 2, 2, 0), vec![0, 2, 8, 10]);
    }

    #[test]
    fn output_valid_rejects_out_of_range() {
        assert!(output_valid(25, 5, 3, 1, 0).is_err());
    }

    #[test]
    fn pad_tuples_match_timing_table() {
        let t = |c| pad_tuple(c, 5, 3, 1);
        assert_eq!(t(0), vec![true, true, false]);
        assert_eq!(t(1), vec![true, true, true]);
        assert_eq!(t(4), vec![false, true, true]);
        for c in 0..7 {
            assert!(pad_tuple(c, 7, 3, 0).iter().all(|&b| b));
        }
    }

    #[test]
    fn rate_parse_and_display() {
        let r: Rate = "10/4".parse().unwrap();
        assert_eq!(r, Rate::new(5, 2));
        assert_eq!(r.to_string(), "5/2");
        assert_eq!(r.ceil(), 3);
        assert!("1/0".parse::<Rate>().is_err());
        assert_eq!(Rate::new(5, 288).display_rounded(), "0.02");
        assert_eq!(Rate::new(4, 9).display_rounded(), "4/9");
        assert_eq!(Rate::integer(8).display_rounded(), "8");
    }

    #[test]
    fn serde_roundtrip() {
        let r = Rate::new(4, 9);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, "\"4/9\"");
        assert_eq!(serde_json::from_str::<Rate>(&s).unwrap(), r);
    }
}
