use std::fmt;
use std::str::FromStr;

use super::{Georef, Grid};
use crate::error::{Error, Result};

/// Channel role in a multi-band stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    /// Landsat 8 band 1..=11.
    Landsat(u8),
    Dem,
    Slope,
    ProfileCurvature,
    TangentialCurvature,
    Unsphericity,
    SlopeAzimuthDivergence,
}

impl Band {
    pub const GREEN: Band = Band::Landsat(3);
    pub const RED: Band = Band::Landsat(4);
    pub const NIR: Band = Band::Landsat(5);
    pub const SWIR1: Band = Band::Landsat(6);

    /// The 17 channels of a full stack, in canonical order.
    pub fn all() -> Vec<Band> {
        let mut v: Vec<Band> = (1..=11).map(Band::Landsat).collect();
        v.extend([
            Band::Dem,
            Band::Slope,
            Band::ProfileCurvature,
            Band::TangentialCurvature,
            Band::Unsphericity,
            Band::SlopeAzimuthDivergence,
        ]);
        v
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Band::Landsat(n) => write!(f, "B{n}"),
            Band::Dem => f.write_str("DEM"),
            Band::Slope => f.write_str("SLOPE"),
            Band::ProfileCurvature => f.write_str("PROFC"),
            Band::TangentialCurvature => f.write_str("TANC"),
            Band::Unsphericity => f.write_str("UNSPH"),
            Band::SlopeAzimuthDivergence => f.write_str("SAD"),
        }
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let band = match up.as_str() {
            "DEM" => Band::Dem,
            "SLOPE" => Band::Slope,
            "PROFC" => Band::ProfileCurvature,
            "TANC" => Band::TangentialCurvature,
            "UNSPH" => Band::Unsphericity,
            "SAD" => Band::SlopeAzimuthDivergence,
            _ => {
                let n = up
                    .strip_prefix('B')
                    .and_then(|d| d.parse::<u8>().ok())
                    .filter(|n| (1..=11).contains(n))
                    .ok_or_else(|| Error::Config(format!("unknown band role {s:?}")))?;
                Band::Landsat(n)
            }
        };
        Ok(band)
    }
}

/// Aligned channels keyed by role; insertion order is preserved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiBandStack {
    channels: Vec<(Band, Grid)>,
}

impl MultiBandStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a channel. Fails on a duplicate role or misaligned grid.
    pub fn push(&mut self, band: Band, grid: Grid) -> Result<()> {
        if self.get(band).is_some() {
            return Err(Error::Structural(format!("duplicate channel {band}")));
        }
        if let Some(g) = self.georef() {
            g.ensure_aligned(&grid.georef, &format!("channel {band}"))?;
        }
        self.channels.push((band, grid));
        Ok(())
    }

    pub fn with(mut self, band: Band, grid: Grid) -> Result<Self> {
        self.push(band, grid)?;
        Ok(self)
    }

    pub fn get(&self, band: Band) -> Option<&Grid> {
        self.channels.iter().find(|(b, _)| *b == band).map(|(_, g)| g)
    }

    pub fn require(&self, band: Band) -> Result<&Grid> {
        self.get(band)
            .ok_or_else(|| Error::Config(format!("stack is missing required band {band}")))
    }

    pub fn georef(&self) -> Option<Georef> {
        self.channels.first().map(|(_, g)| g.georef)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// All 17 roles present.
    pub fn is_complete(&self) -> bool {
        Band::all().iter().all(|b| self.get(*b).is_some())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Band, &Grid)> {
        self.channels.iter().map(|(b, g)| (*b, g))
    }

    pub fn roles(&self) -> Vec<Band> {
        self.channels.iter().map(|(b, _)| *b).collect()
    }
}
