use std::fmt;

use serde::{Deserialize, Serialize};

/// The four servo loops of the apparatus, in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelId {
    /// Length lock of the second-harmonic (pump) cavity.
    ShgLength,
    /// Length lock of the OPA, derived from transmitted pump leakage.
    OpaLength,
    /// Offset lock between the pump and the up-converted auxiliary field.
    PumpCsfOffset,
    /// Offset lock between the auxiliary field and the local oscillator.
    CsfLoOffset,
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [
        ChannelId::ShgLength,
        ChannelId::OpaLength,
        ChannelId::PumpCsfOffset,
        ChannelId::CsfLoOffset,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The channel that must be locked before this one can engage.
    pub fn prerequisite(self) -> Option<ChannelId> {
        match self {
            ChannelId::ShgLength => None,
            ChannelId::OpaLength => Some(ChannelId::ShgLength),
            ChannelId::PumpCsfOffset => Some(ChannelId::OpaLength),
            ChannelId::CsfLoOffset => Some(ChannelId::PumpCsfOffset),
        }
    }

    /// This channel and every channel that depends on it.
    pub fn with_dependents(self) -> &'static [ChannelId] {
        &ChannelId::ALL[self.index()..]
    }

    pub fn label(self) -> &'static str {
        match self {
            ChannelId::ShgLength => "shg",
            ChannelId::OpaLength => "opa",
            ChannelId::PumpCsfOffset => "B",
            ChannelId::CsfLoOffset => "C",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LockStatus {
    Disengaged,
    /// Engaged, locking after the remaining dead time.
    Acquiring { remaining_s: f64 },
    Locked,
}

impl LockStatus {
    pub fn is_locked(&self) -> bool {
        matches!(self, LockStatus::Locked)
    }

    pub fn is_engaged(&self) -> bool {
        !matches!(self, LockStatus::Disengaged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockChannel {
    pub id: ChannelId,
    pub status: LockStatus,
    /// Actuator set point, arbitrary volts.
    pub actuator_offset: f64,
    /// A faulted channel never completes acquisition.
    pub faulted: bool,
}

impl LockChannel {
    pub fn new(id: ChannelId) -> Self {
        Self {
            id,
            status: LockStatus::Disengaged,
            actuator_offset: 0.0,
            faulted: false,
        }
    }
}
