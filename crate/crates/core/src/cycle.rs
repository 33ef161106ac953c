//! Online switching-point tracker that turns rainflow degradation into a
//! per-step cost.
//!
//! The tracker keeps a stack of switching points (SPs) whose ranges strictly
//! shrink toward the top. Each step extends the current stroke away from the
//! top SP and charges `Φ(|c' − top|) − Φ(|c − top|)`. When the excursion
//! reaches the level of the SP below the top, the enclosed range is resolved
//! on the spot: the increment is split at that level, and either the top two
//! SPs are popped (a full cycle closed) or, if only two SPs remain, the oldest
//! one is dropped. Summed over a trajectory, the increments equal the offline
//! rainflow cost in [`crate::rainflow`].

use crate::error::{Error, Result};
use crate::rainflow::DegradationParams;

/// The three most recent SPs, oldest first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpTriple {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SpTriple {
    pub fn to_array(self) -> [f64; 3] {
        [self.c0, self.c1, self.c2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleTracker {
    stack: Vec<f64>,
    current: f64,
    params: DegradationParams,
    accumulated: f64,
    cap: Option<usize>,
}

fn check_soc(soc: f64) -> Result<()> {
    if (0.0..=1.0).contains(&soc) {
        Ok(())
    } else {
        Err(Error::domain(format!("SoC {soc} outside [0, 1]")))
    }
}

impl CycleTracker {
    pub fn new(initial_soc: f64, params: DegradationParams) -> Result<Self> {
        check_soc(initial_soc)?;
        Ok(Self {
            stack: vec![initial_soc],
            current: initial_soc,
            params,
            accumulated: 0.0,
            cap: None,
        })
    }

    /// Bounds the SP stack; pushing beyond `cap` forgets the oldest SP.
    /// With `cap = 3` the tracker only ever holds the three SPs it exposes,
    /// which is no longer exact once nesting gets deeper than that.
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap.max(1));
        self
    }

    pub fn reset(&mut self, initial_soc: f64) -> Result<()> {
        check_soc(initial_soc)?;
        self.stack.clear();
        self.stack.push(initial_soc);
        self.current = initial_soc;
        self.accumulated = 0.0;
        Ok(())
    }

    pub fn current_soc(&self) -> f64 {
        self.current
    }

    pub fn accumulated_cost(&self) -> f64 {
        self.accumulated
    }

    pub fn params(&self) -> &DegradationParams {
        &self.params
    }

    pub fn stack(&self) -> &[f64] {
        &self.stack
    }

    fn top(&self) -> f64 {
        *self.stack.last().expect("stack is never empty")
    }

    /// Applies a SoC change of `b` and returns the degradation increment.
    /// The caller keeps `current + b` inside [0, 1].
    pub fn step(&mut self, b: f64) -> f64 {
        self.step_to(self.current + b)
    }

    /// Moves the SoC to `next` and returns the degradation increment.
    pub fn step_to(&mut self, next: f64) -> f64 {
        debug_assert!(next.is_finite());
        let b = next - self.current;
        if b == 0.0 {
            return 0.0;
        }

        // reversal: the current level becomes a new SP
        if b * (self.current - self.top()) < 0.0 {
            self.stack.push(self.current);
            if let Some(cap) = self.cap {
                if self.stack.len() > cap {
                    self.stack.remove(0);
                }
            }
        }

        let mut increment = 0.0;
        let mut base = self.current;
        while self.stack.len() >= 2 {
            let n = self.stack.len();
            let top = self.stack[n - 1];
            let level = self.stack[n - 2];
            let range = (level - top).abs();
            if (next - top).abs() < range {
                break;
            }
            increment += self.params.phi(range) - self.params.phi((base - top).abs());
            if n >= 3 {
                // full cycle between the popped pair; the stroke continues
                // from the SP underneath
                self.stack.truncate(n - 2);
            } else {
                // the oldest SP is passed; keep the top as the reference
                self.stack.remove(0);
            }
            base = level;
        }
        let top = self.top();
        increment += self.params.phi((next - top).abs()) - self.params.phi((base - top).abs());

        self.current = next;
        self.accumulated += increment;
        increment
    }

    /// Last three SPs, left-padded with the oldest one.
    pub fn observe_sps(&self) -> SpTriple {
        let n = self.stack.len();
        let at = |back: usize| self.stack[n.saturating_sub(back)];
        SpTriple {
            c0: at(3),
            c1: at(2),
            c2: at(1),
        }
    }
}
