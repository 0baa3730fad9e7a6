//! Feature naming grammar.
//!
//! ```text
//! power__<band>__<comp>            entropy__<band>__<comp>
//! coherence__<band>__<compA>-<compB>   sl__<band>__<compA>-<compB>
//! crossfreq__<modband>-<carrierband>__<comp>
//! ```
//!
//! Components are `C1`, `C2`, ...

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureName {
    Power {
        band: String,
        comp: usize,
    },
    Entropy {
        band: String,
        comp: usize,
    },
    Coherence {
        band: String,
        a: usize,
        b: usize,
    },
    Sl {
        band: String,
        a: usize,
        b: usize,
    },
    CrossFreq {
        modulator: String,
        carrier: String,
        comp: usize,
    },
}

impl FeatureName {
    pub fn metric(&self) -> &'static str {
        match self {
            FeatureName::Power { .. } => "power",
            FeatureName::Entropy { .. } => "entropy",
            FeatureName::Coherence { .. } => "coherence",
            FeatureName::Sl { .. } => "sl",
            FeatureName::CrossFreq { .. } => "crossfreq",
        }
    }
}

fn comp_name(c: usize) -> String {
    format!("C{c}")
}

fn parse_comp(s: &str) -> Option<usize> {
    let n = s.strip_prefix('C')?;
    if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) || n.starts_with('0') {
        return None;
    }
    n.parse().ok()
}

fn valid_band(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureName::Power { band, comp } => write!(f, "power__{band}__{}", comp_name(*comp)),
            FeatureName::Entropy { band, comp } => {
                write!(f, "entropy__{band}__{}", comp_name(*comp))
            }
            FeatureName::Coherence { band, a, b } => {
                write!(f, "coherence__{band}__{}-{}", comp_name(*a), comp_name(*b))
            }
            FeatureName::Sl { band, a, b } => {
                write!(f, "sl__{band}__{}-{}", comp_name(*a), comp_name(*b))
            }
            FeatureName::CrossFreq {
                modulator,
                carrier,
                comp,
            } => write!(f, "crossfreq__{modulator}-{carrier}__{}", comp_name(*comp)),
        }
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || {
            Error::Schema(format!(
                "feature name `{s}` does not follow the naming grammar"
            ))
        };
        let parts: Vec<&str> = s.split("__").collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (metric, mid, comp) = (parts[0], parts[1], parts[2]);
        let pair = || -> Option<(usize, usize)> {
            let (a, b) = comp.split_once('-')?;
            let (a, b) = (parse_comp(a)?, parse_comp(b)?);
            (a != b).then_some((a, b))
        };
        let name = match metric {
            "power" | "entropy" => {
                if !valid_band(mid) {
                    return Err(bad());
                }
                let comp = parse_comp(comp).ok_or_else(bad)?;
                if metric == "power" {
                    FeatureName::Power {
                        band: mid.into(),
                        comp,
                    }
                } else {
                    FeatureName::Entropy {
                        band: mid.into(),
                        comp,
                    }
                }
            }
            "coherence" | "sl" => {
                if !valid_band(mid) {
                    return Err(bad());
                }
                let (a, b) = pair().ok_or_else(bad)?;
                if metric == "coherence" {
                    FeatureName::Coherence {
                        band: mid.into(),
                        a,
                        b,
                    }
                } else {
                    FeatureName::Sl {
                        band: mid.into(),
                        a,
                        b,
                    }
                }
            }
            "crossfreq" => {
                let (m, c) = mid.split_once('-').ok_or_else(bad)?;
                if !valid_band(m) || !valid_band(c) {
                    return Err(bad());
                }
                FeatureName::CrossFreq {
                    modulator: m.into(),
                    carrier: c.into(),
                    comp: parse_comp(comp).ok_or_else(bad)?,
                }
            }
            _ => return Err(bad()),
        };
        Ok(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_every_metric() {
        for s in [
            "power__beta3__C5",
            "entropy__delta__C1",
            "coherence__theta__C4-C7",
            "sl__alpha1__C1-C2",
            "crossfreq__beta3-beta3__C1",
        ] {
            let n: FeatureName = s.parse().unwrap();
            assert_eq!(n.to_string(), s);
        }
    }

    #[test]
    fn rejects_malformed() {
        for s in [
            "power__beta3",
            "power__Beta3__C5",
            "power__beta3__C0",
            "power__beta3__5",
            "coherence__theta__C4",
            "coherence__theta__C4-C4",
            "crossfreq__beta3__C1",
            "foo__beta3__C1",
        ] {
            assert!(s.parse::<FeatureName>().is_err(), "{s}");
        }
    }
}
