//! Counts every call into the exact-gradient oracle, by purpose.

use gradguess::{backprop, ForwardTrace, Gradients, MlpParams, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OraclePurpose {
    /// The oracle gradient is the update (backprop training).
    Update,
    /// The oracle builds a control direction (slerp-matched guesses).
    Control,
    /// Analysis only; never feeds an update.
    Measurement,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    pub update: u64,
    pub control: u64,
    pub measurement: u64,
}

impl Audit {
    pub fn oracle<T: Real>(
        &mut self,
        purpose: OraclePurpose,
        params: &MlpParams<T>,
        trace: &ForwardTrace<T>,
    ) -> Result<Gradients<T>> {
        match purpose {
            OraclePurpose::Update => self.update += 1,
            OraclePurpose::Control => self.control += 1,
            OraclePurpose::Measurement => self.measurement += 1,
        }
        backprop(params, trace)
    }

    pub fn merge(&mut self, other: &Audit) {
        self.update += other.update;
        self.control += other.control;
        self.measurement += other.measurement;
    }
}
