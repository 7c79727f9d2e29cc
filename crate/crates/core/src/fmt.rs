//! Number formatting shared by the JSON/CSV writers.

/// Formats `v` with 17 significant digits, which round-trips every f64.
pub fn sig17(v: f64) -> String {
    format!("{:.16e}", v)
}
