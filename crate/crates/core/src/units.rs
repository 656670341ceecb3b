//! Unit table: every unit the parser recognizes, grouped by physical dimension.
//!
//! Conversions into the canonical unit of a dimension are affine,
//! `canonical = value * scale + offset`. Only temperatures carry a nonzero
//! offset.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    Temperature,
    Stress,
    Percent,
    ImpactEnergy,
    Density,
    MolarMass,
    Dimensionless,
    Viscosity,
    ElectricalConductivity,
    ThermalConductivity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub symbol: &'static str,
    pub aliases: &'static [&'static str],
    pub dimension: Dimension,
    pub scale: f64,
    pub offset: f64,
}

impl Unit {
    pub fn to_canonical(&self, value: f64) -> f64 {
        value * self.scale + self.offset
    }

    pub fn from_canonical(&self, canonical: f64) -> f64 {
        (canonical - self.offset) / self.scale
    }

    pub fn is_canonical(&self) -> bool {
        self.scale == 1.0 && self.offset == 0.0
    }
}

const fn unit(
    symbol: &'static str,
    aliases: &'static [&'static str],
    dimension: Dimension,
    scale: f64,
    offset: f64,
) -> Unit {
    Unit {
        symbol,
        aliases,
        dimension,
        scale,
        offset,
    }
}

use Dimension::*;

/// Symbol used for dimensionless canonical units in the registry file.
pub const DIMENSIONLESS_SYMBOL: &str = "-";

pub static UNITS: &[Unit] = &[
    unit("°C", &["°C", "ºC", "° C", "degC", "deg C", "celsius"], Temperature, 1.0, 0.0),
    unit("K", &["K", "kelvin"], Temperature, 1.0, -273.15),
    unit("°F", &["°F", "ºF", "degF"], Temperature, 5.0 / 9.0, -160.0 / 9.0),
    unit("MPa", &["MPa", "N/mm²", "N/mm2", "N mm-2"], Stress, 1.0, 0.0),
    unit("Pa", &["Pa"], Stress, 1e-6, 0.0),
    unit("kPa", &["kPa"], Stress, 1e-3, 0.0),
    unit("GPa", &["GPa"], Stress, 1e3, 0.0),
    unit("psi", &["psi"], Stress, 0.006_894_757_293_168_361, 0.0),
    unit("ksi", &["ksi"], Stress, 6.894_757_293_168_361, 0.0),
    unit("%", &["%", "percent", "pct"], Percent, 1.0, 0.0),
    unit("kJ/m²", &["kJ/m²", "kJ/m2", "kJ/m^2", "kJ m-2"], ImpactEnergy, 1.0, 0.0),
    unit("J/m²", &["J/m²", "J/m2", "J/m^2", "J m-2"], ImpactEnergy, 1e-3, 0.0),
    unit("g/cm³", &["g/cm³", "g/cm3", "g/cm^3", "g cm-3", "g/cc", "g/mL", "g/ml"], Density, 1.0, 0.0),
    unit("kg/m³", &["kg/m³", "kg/m3", "kg/m^3", "kg m-3"], Density, 1e-3, 0.0),
    unit("g/mol", &["g/mol", "g mol-1", "Da"], MolarMass, 1.0, 0.0),
    unit("kg/mol", &["kg/mol", "kg mol-1", "kDa"], MolarMass, 1e3, 0.0),
    unit("-", &[], Dimensionless, 1.0, 0.0),
    unit("Pa·s", &["Pa·s", "Pa s", "Pa.s", "Pa*s"], Viscosity, 1.0, 0.0),
    unit("mPa·s", &["mPa·s", "mPa s", "mPa.s", "cP", "cp"], Viscosity, 1e-3, 0.0),
    unit("kPa·s", &["kPa·s", "kPa s", "kPa.s"], Viscosity, 1e3, 0.0),
    unit("P", &["P", "poise"], Viscosity, 0.1, 0.0),
    unit("S/cm", &["S/cm", "S cm-1", "S·cm-1"], ElectricalConductivity, 1.0, 0.0),
    unit("S/m", &["S/m", "S m-1", "S·m-1"], ElectricalConductivity, 1e-2, 0.0),
    unit("mS/cm", &["mS/cm", "mS cm-1"], ElectricalConductivity, 1e-3, 0.0),
    unit("µS/cm", &["µS/cm", "μS/cm", "uS/cm"], ElectricalConductivity, 1e-6, 0.0),
    unit(
        "W/(m·K)",
        &["W/(m·K)", "W/(m K)", "W/(mK)", "W/m·K", "W/mK", "W/m/K", "W m-1 K-1", "W·m-1·K-1"],
        ThermalConductivity,
        1.0,
        0.0,
    ),
    unit("mW/(m·K)", &["mW/(m·K)", "mW/(m K)", "mW/mK", "mW m-1 K-1"], ThermalConductivity, 1e-3, 0.0),
];

pub fn by_symbol(symbol: &str) -> Option<&'static Unit> {
    UNITS.iter().find(|u| u.symbol == symbol)
}

/// All units measuring `dimension`, canonical first.
pub fn units_of(dimension: Dimension) -> impl Iterator<Item = &'static Unit> {
    UNITS.iter().filter(move |u| u.dimension == dimension)
}

pub fn canonical_of(dimension: Dimension) -> &'static Unit {
    units_of(dimension)
        .find(|u| u.is_canonical())
        .expect("every dimension has a canonical unit")
}

/// Longest unit alias that prefixes `text` and ends on a token boundary.
///
/// Matching is case-sensitive so that `MPa` and `mPa·s` stay distinct.
/// Returns the unit and the byte length consumed.
pub fn match_prefix(text: &str) -> Option<(&'static Unit, usize)> {
    let mut best: Option<(&'static Unit, usize)> = None;
    for u in UNITS {
        for alias in u.aliases {
            if !text.starts_with(alias) {
                continue;
            }
            let rest = &text[alias.len()..];
            let boundary = rest.chars().next().is_none_or(|c| !c.is_alphanumeric());
            if boundary && best.is_none_or(|(_, len)| alias.len() > len) {
                best = Some((u, alias.len()));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_dimension_has_one_canonical_unit() {
        let dims = [
            Temperature,
            Stress,
            Percent,
            ImpactEnergy,
            Density,
            MolarMass,
            Dimensionless,
            Viscosity,
            ElectricalConductivity,
            ThermalConductivity,
        ];
        for d in dims {
            assert_eq!(units_of(d).filter(|u| u.is_canonical()).count(), 1, "{d:?}");
        }
    }

    #[test]
    fn aliases_are_unique() {
        let mut seen = std::collections::HashSet::new();
        for u in UNITS {
            for a in u.aliases {
                assert!(seen.insert(*a), "duplicate alias {a}");
            }
        }
    }

    #[test]
    fn kelvin_and_fahrenheit_are_affine() {
        let k = by_symbol("K").unwrap();
        let f = by_symbol("°F").unwrap();
        assert!((k.to_canonical(378.15) - 105.0).abs() < 1e-12);
        assert!((f.to_canonical(212.0) - 100.0).abs() < 1e-12);
        assert!((f.from_canonical(f.to_canonical(-40.0)) + 40.0).abs() < 1e-12);
    }

    #[test]
    fn prefix_match_is_case_sensitive_and_longest() {
        assert_eq!(match_prefix("MPa at 25").unwrap().0.symbol, "MPa");
        assert_eq!(match_prefix("mPa·s").unwrap().0.symbol, "mPa·s");
        assert_eq!(match_prefix("Pa·s, measured").unwrap().0.symbol, "Pa·s");
        assert_eq!(match_prefix("kJ/m2").unwrap().0.symbol, "kJ/m²");
        assert!(match_prefix("PLA").is_none());
        assert!(match_prefix("Kapton").is_none());
    }
}
