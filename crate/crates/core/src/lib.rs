//! Any-precision K-Means over a bit-serial weaved data layout.
//!
//! A dataset is quantized once to 32-bit fixed-point fractions and stored as
//! bit planes ([`weave`]). Clustering at precision `p` reads only the `p` most
//! significant planes; distances are computed bit-serially and exactly
//! ([`bitserial`]), Lloyd iterations run on top ([`kmeans`]), and
//! [`perfmodel`] estimates what the same iteration costs on the modeled
//! FPGA datapath. [`harness`] ties these into precision sweeps and reports.

pub mod bitserial;
pub mod fixedpoint;
pub mod harness;
pub mod kmeans;
pub mod perfmodel;
pub mod weave;

pub use fixedpoint::{FixedMatrix, PrecisionLevel, RealMatrix};
pub use kmeans::{CenterSet, TrainResult};
pub use weave::{LayoutParams, WeavedMatrix};
