//! Fully connected unit and its input aggregator.

/// One cycle of FCU activity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FcuBeat {
    /// Neuron slot `0..h` processed this cycle.
    pub q: usize,
    /// Configuration index `b·h + q`.
    pub cfg: usize,
    /// Partial sum read from the `h`-deep buffer (absent on the first batch).
    pub read: Option<i64>,
    /// Finished neuron value on the last batch.
    pub y: Option<i64>,
}

/// Holds `j` inputs for `h` cycles and accumulates `h` neurons.
#[derive(Clone, Debug)]
pub struct FcuUnit {
    j: usize,
    h: usize,
    batches: usize,
    /// `[cfg][i]` with `cfg = b·h + q`.
    weights: Vec<i64>,
    psum: Vec<i64>,
    held: Vec<i64>,
    batch: usize,
    q: usize,
    active: bool,
}

impl FcuUnit {
    /// `inputs` is the length of one input vector; it must be a multiple of `j`.
    pub fn new(j: usize, h: usize, inputs: usize, weights: Vec<i64>) -> Self {
        assert!(j > 0 && inputs.is_multiple_of(j), "j must divide the input length");
        let batches = inputs / j;
        assert_eq!(weights.len(), batches * h * j, "one weight per input per neuron");
        FcuUnit {
            j,
            h,
            batches,
            weights,
            psum: vec![0; h],
            held: vec![0; j],
            batch: 0,
            q: 0,
            active: false,
        }
    }

    /// Ready to take a new batch this cycle.
    pub fn idle(&self) -> bool {
        !self.active
    }

    /// The held inputs.
    pub fn held(&self) -> &[i64] {
        &self.held
    }

    /// Index of the batch being processed.
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Advance one cycle, loading `load` first if given (only when idle).
    pub fn step(&mut self, load: Option<&[i64]>) -> Option<FcuBeat> {
        if let Some(x) = load {
            assert!(self.idle(), "FCU loaded while busy");
            assert_eq!(x.len(), self.j);
            self.held.copy_from_slice(x);
            self.active = true;
            self.q = 0;
        }
        if !self.active {
            return None;
        }
        let q = self.q;
        let cfg = self.batch * self.h + q;
        let w = &self.weights[cfg * self.j..(cfg + 1) * self.j];
        let z: i64 = w.iter().zip(&self.held).map(|(a, b)| a * b).sum();
        let read = (self.batch > 0).then_some(self.psum[q]);
        let v = read.unwrap_or(0) + z;
        let last = self.batch + 1 == self.batches;
        let y = if last {
            self.psum[q] = 0;
            Some(v)
        } else {
            self.psum[q] = v;
            None
        };
        self.q += 1;
        if self.q == self.h {
            self.active = false;
            self.batch = if last { 0 } else { self.batch + 1 };
        }
        Some(FcuBeat { q, cfg, read, y })
    }

    /// Partial sum currently buffered for neuron slot `q`.
    pub fn partial(&self, q: usize) -> i64 {
        self.psum[q]
    }
}

/// Shift register gathering `j` serial inputs into one batch, presented to
/// the FCU one cycle after the last input arrives.
#[derive(Clone, Debug)]
pub struct Aggregator {
    j: usize,
    buf: Vec<i64>,
}

impl Aggregator {
    pub fn new(j: usize) -> Self {
        Aggregator {
            j,
            buf: Vec::with_capacity(j),
        }
    }

    pub fn full(&self) -> bool {
        self.buf.len() == self.j
    }

    pub fn push(&mut self, x: i64) {
        assert!(!self.full(), "aggregator overrun");
        self.buf.push(x);
    }

    pub fn take(&mut self) -> Vec<i64> {
        std::mem::replace(&mut self.buf, Vec::with_capacity(self.j))
    }

    /// Register contents, oldest first, padded on the left with `None`.
    pub fn contents(&self) -> Vec<Option<i64>> {
        let mut v = vec![None; self.j - self.buf.len()];
        v.extend(self.buf.iter().copied().map(Some));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_batches_emit_on_last() {
        // h=2 neurons over 4 inputs in batches of j=2
        let w = vec![1, 1, 2, 2, 3, 3, 4, 4];
        let mut u = FcuUnit::new(2, 2, 4, w);
        assert!(u.step(Some(&[1, 2])).unwrap().y.is_none());
        assert!(u.step(None).unwrap().y.is_none());
        assert!(u.idle());
        let b = u.step(Some(&[3, 4])).unwrap();
        assert_eq!(b.read, Some(3));
        assert_eq!(b.y, Some(3 + 3 * 3 + 3 * 4));
        assert_eq!(u.step(None).unwrap().y, Some(6 + 4 * 7));
        assert!(u.step(None).is_none());
    }

    #[test]
    fn aggregator_fills_from_the_right() {
        let mut a = Aggregator::new(3);
        a.push(7);
        assert_eq!(a.contents(), vec![None, None, Some(7)]);
        a.push(8);
        a.push(9);
        assert!(a.full());
        assert_eq!(a.take(), vec![7, 8, 9]);
        assert!(!a.full());
    }
}
