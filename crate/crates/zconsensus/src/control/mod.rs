//! Z-control feedback laws: direct (top-order) and indirect (lower-order).

pub mod direct;
pub mod indirect;
