//! Heterogeneous cellular world: towers, link quality, transfer latency,
//! message loss and peer-to-peer fallback.
//!
//! The fade model is a stand-in for measured signal traces: log-distance
//! path loss plus Gaussian fading, with bandwidth and loss read from a
//! per-generation SNR table in the defaults file.

mod link;
mod topology;
mod tower;

pub use link::{
    deliver, log_distance_snr, p2p_link, transfer_time, Delivery, LinkModel, LinkSample, NoCoverage, P2pConfig,
    QualityBin, RatProfile, Serving,
};
pub use topology::{emit_topology, ingest_topology, RowError, Topology, TopologyError, TOWER_CSV_HEADER};
pub use tower::{CellTower, GeoCoord, Rat, UnknownRat};
