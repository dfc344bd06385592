//! Sliding-window units: the transposed-form KPU and the PPU.
//!
//! Both units share one pipeline. Row `i` of the kernel is a chain of `k`
//! taps joined by `k−1` registers; rows are joined by line buffers of
//! `f−k+1` entries. With `C` configurations every delay element is `C` deep,
//! so the unit behaves like `C` independent units stepped round-robin.

use std::collections::VecDeque;

use crate::rate::pad_select;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Mac,
    Max,
}

#[derive(Clone, Debug)]
struct WindowPipe {
    op: Op,
    k: usize,
    configs: usize,
    /// `[cfg][i][j]` for MAC units.
    weights: Vec<i64>,
    /// `regs[i*(k-1)+j]` sits between tap `j` and `j+1` of row `i`.
    regs: Vec<VecDeque<i64>>,
    lines: Vec<VecDeque<i64>>,
    /// `pads[c*k + j]`: column `j` enabled for input column `c`.
    pads: Vec<bool>,
    taps: Vec<i64>,
    next_cfg: usize,
}

impl WindowPipe {
    fn new(op: Op, f: usize, k: usize, p: usize, configs: usize, weights: Vec<i64>) -> Self {
        let identity = match op {
            Op::Mac => 0,
            Op::Max => i64::MIN,
        };
        let line_depth = (f + 1 - k) * configs;
        let pads = (0..f)
            .flat_map(|c| (0..k).map(move |j| pad_select(c as u64, j as u64, f as u64, k as u64, p as u64)))
            .collect();
        WindowPipe {
            op,
            k,
            configs,
            weights,
            regs: vec![VecDeque::from(vec![identity; configs]); k * (k - 1)],
            lines: vec![VecDeque::from(vec![identity; line_depth]); k - 1],
            pads,
            taps: vec![identity; k * k],
            next_cfg: 0,
        }
    }

    fn identity(&self) -> i64 {
        match self.op {
            Op::Mac => 0,
            Op::Max => i64::MIN,
        }
    }

    /// One clock-enabled beat. `col` is the column of `x` in its map, `None`
    /// for padding beats between maps (where `x` is zero).
    fn step(&mut self, x: i64, col: Option<usize>, cfg: usize) -> i64 {
        debug_assert_eq!(cfg, self.next_cfg, "configurations must be visited round-robin");
        self.next_cfg = (cfg + 1) % self.configs;
        let k = self.k;
        let mut y = self.identity();
        for i in 0..k {
            let mut carry = if i == 0 {
                self.identity()
            } else {
                self.lines[i - 1].pop_front().expect("line buffer depth")
            };
            for j in 0..k {
                if j > 0 {
                    carry = self.regs[i * (k - 1) + j - 1].pop_front().expect("register depth");
                }
                let a = match self.op {
                    Op::Mac => {
                        let enabled = col.is_none_or(|c| self.pads[c * k + j]);
                        if enabled {
                            carry + self.weights[(cfg * k + i) * k + j] * x
                        } else {
                            carry
                        }
                    }
                    Op::Max => carry.max(x),
                };
                self.taps[i * k + j] = a;
                if j + 1 < k {
                    self.regs[i * (k - 1) + j].push_back(a);
                } else if i + 1 < k {
                    self.lines[i].push_back(a);
                } else {
                    y = a;
                }
            }
        }
        y
    }
}

/// Kernel processing unit.
#[derive(Clone, Debug)]
pub struct KpuUnit(WindowPipe);

impl KpuUnit {
    /// `weights` holds `configs` kernels of `k·k` values, row-major.
    pub fn new(f: usize, k: usize, p: usize, configs: usize, weights: Vec<i64>) -> Self {
        assert_eq!(weights.len(), configs * k * k, "one k×k kernel per configuration");
        KpuUnit(WindowPipe::new(Op::Mac, f, k, p, configs, weights))
    }

    pub fn step(&mut self, x: i64, col: Option<usize>, cfg: usize) -> i64 {
        self.0.step(x, col, cfg)
    }

    /// Partial sum at tap `(i, j)` after the last step.
    pub fn tap(&self, i: usize, j: usize) -> i64 {
        self.0.taps[i * self.0.k + j]
    }

    pub fn configs(&self) -> usize {
        self.0.configs
    }
}

/// Pooling processing unit computing a running maximum.
#[derive(Clone, Debug)]
pub struct PpuUnit(WindowPipe);

impl PpuUnit {
    pub fn new(f: usize, k: usize, configs: usize) -> Self {
        PpuUnit(WindowPipe::new(Op::Max, f, k, 0, configs, Vec::new()))
    }

    pub fn step(&mut self, x: i64, cfg: usize) -> i64 {
        self.0.step(x, None, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::output_valid;

    #[test]
    fn single_config_matches_window_sums() {
        let (f, k) = (5, 3);
        let w: Vec<i64> = (1..=9).collect();
        let mut kpu = KpuUnit::new(f, k, 0, 1, w.clone());
        let lat = (k - 1) * (f + 1);
        for t in 0..f * f {
            let y = kpu.step(t as i64, Some(t % f), 0);
            if t >= lat {
                let n = t - lat;
                if output_valid(n as u64, 5, 3, 1, 0).unwrap() {
                    let expect: i64 = (0..9).map(|e| w[e] * (n + (e / 3) * f + e % 3) as i64).sum();
                    assert_eq!(y, expect, "window {n}");
                }
            }
        }
    }

    #[test]
    fn configs_are_independent() {
        let (f, k) = (4, 2);
        let w = vec![1, 1, 1, 1, 1, -1, 0, 0];
        let mut kpu = KpuUnit::new(f, k, 0, 2, w);
        let mut ys = Vec::new();
        for t in 0..f * f {
            ys.push(kpu.step(t as i64, Some(t % f), 0));
            ys.push(kpu.step(100 * t as i64, Some(t % f), 1));
        }
        // window 0 completes at pixel f+1
        let t = f + 1;
        assert_eq!(ys[2 * t], (1 + 4 + 5) as i64);
        assert_eq!(ys[2 * t + 1], 0 - 100);
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut kpu = KpuUnit::new(5, 3, 1, 1, vec![0; 9]);
        assert!((0..25).all(|t| kpu.step(t, Some(t as usize % 5), 0) == 0));
    }

    #[test]
    fn ppu_takes_window_max() {
        let mut ppu = PpuUnit::new(4, 2, 1);
        let xs = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3];
        let ys: Vec<i64> = xs.iter().map(|&x| ppu.step(x, 0)).collect();
        // window at n=0 covers 3,1,5,9 and completes at t=5
        assert_eq!(ys[5], 9);
        // window at n=2 covers 4,1,2,6
        assert_eq!(ys[7], 6);
    }
}
