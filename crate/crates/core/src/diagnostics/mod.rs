//! Over-smoothing measurement, exhaustive enumeration of small search
//! spaces, and the brute-force oracle built on it.

mod mad;
mod oracle;

pub use mad::{mad, mad_among, mad_depth_sweep, mad_of_architecture, MadMethod, MadReport, MadRow};
pub use oracle::{
    enumerate_architectures, oracle_search, raw_count, OracleEntry, OracleResult, DEFAULT_CAP,
};
