use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
        }
    }

    /// Half-open membership: `lo <= f < hi`.
    #[inline]
    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f < self.hi
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}", self.name, self.lo, self.hi)
    }
}

impl FromStr for Band {
    type Err = Error;

    /// Parses `name:lo-hi`, e.g. `alpha1:8.5-10.5`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("band `{s}` must look like `name:lo-hi`"));
        let (name, range) = s.split_once(':').ok_or_else(bad)?;
        let (lo, hi) = range.split_once('-').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        Ok(Band::new(name.trim(), lo, hi))
    }
}

/// Ordered list of analysis bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScheme {
    bands: Vec<Band>,
}

impl BandScheme {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Parameter("band scheme is empty".into()));
        }
        for b in &bands {
            if b.name.is_empty()
                || !b
                    .name
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
            {
                return Err(Error::Parameter(format!(
                    "band name `{}` must be lowercase alphanumeric",
                    b.name
                )));
            }
            if !(b.lo >= 0.0 && b.lo < b.hi && b.hi.is_finite()) {
                return Err(Error::Parameter(format!(
                    "band `{}` needs 0 <= f_lo < f_hi",
                    b.name
                )));
            }
        }
        for w in bands.windows(2) {
            if w[0].lo > w[1].lo {
                return Err(Error::Parameter(format!(
                    "bands must be sorted by lower edge (`{}` before `{}`)",
                    w[0].name, w[1].name
                )));
            }
        }
        for (i, a) in bands.iter().enumerate() {
            if bands[i + 1..].iter().any(|b| b.name == a.name) {
                return Err(Error::Parameter(format!("duplicate band `{}`", a.name)));
            }
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Band> {
        self.bands.iter().find(|b| b.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }

    pub fn lowest(&self) -> f64 {
        self.bands
            .iter()
            .map(|b| b.lo)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn highest(&self) -> f64 {
        self.bands.iter().map(|b| b.hi).fold(0.0, f64::max)
    }

    /// True when `f` falls in at least one band.
    pub fn covers(&self, f: f64) -> bool {
        self.bands.iter().any(|b| b.contains(f))
    }
}

impl Default for BandScheme {
    /// The eight resting-state bands: delta 1.5–6, theta 6–8.5, alpha1
    /// 8.5–10.5, alpha2 10.5–12.5, beta1 12.5–18.5, beta2 18.5–21,
    /// beta3 21–30 and gamma 30–45 Hz.
    fn default() -> Self {
        let bands = [
            ("delta", 1.5, 6.0),
            ("theta", 6.0, 8.5),
            ("alpha1", 8.5, 10.5),
            ("alpha2", 10.5, 12.5),
            ("beta1", 12.5, 18.5),
            ("beta2", 18.5, 21.0),
            ("beta3", 21.0, 30.0),
            ("gamma", 30.0, 45.0),
        ];
        Self {
            bands: bands
                .iter()
                .map(|&(n, lo, hi)| Band::new(n, lo, hi))
                .collect(),
        }
    }
}
