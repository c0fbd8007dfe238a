//! Wengert-list tape: ops append records in forward order; the backward
//! pass replays them in reverse, accumulating vector-Jacobian products.

use std::collections::{HashMap, HashSet};

use super::ops::record::Record;
use super::{Tensor, TensorId};
use crate::error::{Error, Result};

/// Records primitive applications for reverse-mode differentiation.
///
/// A tape in inference mode records nothing; ops still validate and run.
/// A single tape must not be shared across threads while being written;
/// independent passes on separate tapes are safe to run concurrently.
pub struct Tape {
    recording: bool,
    records: Vec<Record>,
    produced: HashSet<TensorId>,
}

impl Tape {
    /// Tape that records every grad-relevant primitive application.
    pub fn training() -> Self {
        Tape { recording: true, records: Vec::new(), produced: HashSet::new() }
    }

    /// Non-recording tape for forward-only work.
    pub fn inference() -> Self {
        Tape { recording: false, records: Vec::new(), produced: HashSet::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn push(&mut self, record: Record) {
        debug_assert!(
            self.produced.insert(record.out_id()),
            "tensor already produced by another record"
        );
        #[cfg(not(debug_assertions))]
        self.produced.insert(record.out_id());
        self.records.push(record);
    }

    /// Whether `t` was produced by an op recorded on this tape.
    pub fn produced(&self, t: &Tensor) -> bool {
        self.produced.contains(&t.id())
    }

    /// Reverse sweep seeded with an explicit cotangent on `seed`.
    pub fn backward_seeded(&self, seed: &Tensor, cotangent: Vec<f32>) -> Result<GradStore> {
        if cotangent.len() != seed.shape().numel() {
            return Err(Error::usage("cotangent length does not match seed shape"));
        }
        if !self.produced(seed) {
            return Err(Error::usage("seed tensor was not produced on this tape"));
        }
        let mut acc = GradStore::new();
        acc.accumulate(seed.id(), &cotangent);
        for record in self.records.iter().rev() {
            let out_id = record.out_id();
            // Grad fully accumulated by now: all consumers sit later on the tape.
            let dy = match acc.map.remove(&out_id) {
                Some(g) => g,
                None => continue,
            };
            record.backward(&dy, &mut acc);
        }
        Ok(acc)
    }
}

/// Run the reverse sweep from a scalar seed produced on `tape`.
///
/// Every `requires_grad` leaf reachable from the seed ends up with
/// d(seed)/d(leaf) in the returned store; unreachable leaves read as zero
/// through [`GradStore::or_zeros`].
pub fn backward(tape: &Tape, seed: &Tensor) -> Result<GradStore> {
    if seed.shape().numel() != 1 {
        return Err(Error::usage(format!(
            "backward seed must be a scalar tensor, got shape {}",
            seed.shape()
        )));
    }
    tape.backward_seeded(seed, vec![1.0])
}

/// Gradient accumulators keyed by tensor identity.
pub struct GradStore {
    map: HashMap<TensorId, Vec<f32>>,
}

impl GradStore {
    fn new() -> Self {
        GradStore { map: HashMap::new() }
    }

    pub(crate) fn accumulate(&mut self, id: TensorId, grad: &[f32]) {
        match self.map.get_mut(&id) {
            Some(existing) => {
                debug_assert_eq!(existing.len(), grad.len());
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            None => {
                self.map.insert(id, grad.to_vec());
            }
        }
    }

    pub(crate) fn accumulate_owned(&mut self, id: TensorId, grad: Vec<f32>) {
        match self.map.get_mut(&id) {
            Some(existing) => {
                debug_assert_eq!(existing.len(), grad.len());
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            None => {
                self.map.insert(id, grad);
            }
        }
    }

    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient of `t`, or zeros when no gradient flowed to it.
    pub fn or_zeros(&self, t: &Tensor) -> Vec<f32> {
        match self.map.get(&t.id()) {
            Some(v) => v.clone(),
            None => vec![0.0; t.shape().numel()],
        }
    }
}
