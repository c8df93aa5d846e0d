//! Physical constants (CODATA 2018) used by the geometry module.
//!
//! Kept in one table so that the golden-number checks (ion spacing,
//! projected spacing) are reproducible bit for bit.

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of a calcium-40 ion, kg (isotope mass in u times the mass unit; the
/// missing electron is negligible at the tolerances used here).
pub const CA40_MASS: f64 = 39.962_590_85 * ATOMIC_MASS_UNIT;
