//! Simulated ISP network elements: challenge/response spot purchases,
//! boundary referrals between ISPs, futures booking and activation,
//! capacity admission and reservation lifetime.
//!
//! NEs never check signatures; each ISP's [`Pdp`] does. Within an ISP the
//! ingress NE reaches the others only through [`NeMessage`]s.

mod calendar;
mod ne;
mod network;
mod pdp;
mod request;
mod reservation;
mod topology;

use thiserror::Error;

pub use calendar::{Booking, LinkCalendar};
pub use ne::{NeEntry, NeMessage, NeReply, NetworkElement};
pub use network::{Fabric, FutureBooking, Isp, LinkUsage, SpotOutcome};
pub use pdp::Pdp;
pub use request::{Challenge, Purpose, ReservationRequest, DEFAULT_CHALLENGE_TTL_SECS};
pub use reservation::{BoundaryReferral, Reservation, ReservationCredential, ReservationState};
pub use topology::{link_name, IspSpec, KeepalivePolicy, LinkSpec, NeSpec, Topology, TopologyError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown network element `{0}`")]
    UnknownNe(String),
    #[error("unknown challenge")]
    UnknownChallenge,
    #[error("challenge expired")]
    ExpiredChallenge,
    #[error("challenge already redeemed")]
    ReplayedChallenge,
    #[error("bad signature")]
    BadSignature,
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("payment refused: {0}")]
    PaymentRefused(String),
    #[error("capacity exhausted on {ne_id} {link}")]
    CapacityExhausted { ne_id: String, link: String },
    #[error("offer {offer_id} may not be un-bundled")]
    UnbundlingProhibited { offer_id: String },
    #[error("no route: {0}")]
    NoRoute(String),
    #[error("unknown reservation `{0}`")]
    UnknownReservation(String),
    #[error("outside the reserved interval")]
    OutsideInterval,
    #[error("reservation not active: {0}")]
    NotActive(String),
}

impl FabricError {
    /// Stable identifier used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            FabricError::Config(_) => "Config",
            FabricError::UnknownNe(_) => "UnknownNe",
            FabricError::UnknownChallenge => "UnknownChallenge",
            FabricError::ExpiredChallenge => "ExpiredChallenge",
            FabricError::ReplayedChallenge => "ReplayedChallenge",
            FabricError::BadSignature => "BadSignature",
            FabricError::MalformedRequest(_) => "MalformedRequest",
            FabricError::PaymentRefused(_) => "PaymentRefused",
            FabricError::CapacityExhausted { .. } => "CapacityExhausted",
            FabricError::UnbundlingProhibited { .. } => "UnbundlingProhibited",
            FabricError::NoRoute(_) => "NoRoute",
            FabricError::UnknownReservation(_) => "UnknownReservation",
            FabricError::OutsideInterval => "OutsideInterval",
            FabricError::NotActive(_) => "NotActive",
        }
    }
}
