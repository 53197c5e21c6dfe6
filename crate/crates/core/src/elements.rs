//! Periodic-table channels for element-embracing descriptors.
//!
//! Every supported element (H through Xe) is described by its period `n`,
//! its main-group number `m` (s- and p-block, 1 to 8, helium counted as 8)
//! and its d-block position `d` (Sc = 1 ... Zn = 10), together with the
//! complements `n_bar = 6 - n`, `m_bar = 9 - m` and `d_bar = 11 - d`.
//! Complements of the block an element does not belong to are zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest supported atomic number (xenon).
pub const MAX_ATOMIC_NUMBER: u32 = 54;

/// Period ceiling used for the `n_bar` complement.
const PERIOD_CEILING: f64 = 6.0;

#[rustfmt::skip]
const SYMBOLS: [&str; 54] = [
    "H", "He",
    "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar",
    "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe",
];

/// Channel values of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementInfo {
    pub atomic_number: u8,
    pub symbol: &'static str,
    pub n: f64,
    pub m: f64,
    pub d: f64,
    pub n_bar: f64,
    pub m_bar: f64,
    pub d_bar: f64,
}

impl ElementInfo {
    pub fn channel(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Unity => 1.0,
            Channel::N => self.n,
            Channel::M => self.m,
            Channel::D => self.d,
            Channel::NBar => self.n_bar,
            Channel::MBar => self.m_bar,
            Channel::DBar => self.d_bar,
        }
    }
}

/// Element channel tag used to weight neighbor contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Unity,
    N,
    M,
    D,
    NBar,
    MBar,
    DBar,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Unity,
        Channel::N,
        Channel::M,
        Channel::D,
        Channel::NBar,
        Channel::MBar,
        Channel::DBar,
    ];

    /// Channels used when no d-block element is present.
    pub const MAIN_GROUP: [Channel; 5] = [
        Channel::Unity,
        Channel::N,
        Channel::M,
        Channel::NBar,
        Channel::MBar,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Channel::Unity => "unity",
            Channel::N => "n",
            Channel::M => "m",
            Channel::D => "d",
            Channel::NBar => "n_bar",
            Channel::MBar => "m_bar",
            Channel::DBar => "d_bar",
        }
    }

    /// Signs of γ combined with this channel in angular terms.
    pub fn angular_gammas(self) -> &'static [f64] {
        match self {
            Channel::Unity | Channel::D | Channel::DBar => &[1.0],
            _ => &[1.0, -1.0],
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Channel::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown channel code {code}")))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .iter()
            .copied()
            .find(|c| c.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown element channel '{s}'")))
    }
}

fn period_bounds(z: u32) -> (u32, u32) {
    // (period, first atomic number of that period)
    match z {
        1..=2 => (1, 1),
        3..=10 => (2, 3),
        11..=18 => (3, 11),
        19..=36 => (4, 19),
        _ => (5, 37),
    }
}

/// Channel values for atomic number `z`.
pub fn element_descriptors(z: u32) -> Result<ElementInfo> {
    if !(1..=MAX_ATOMIC_NUMBER).contains(&z) {
        return Err(Error::UnsupportedElement(z));
    }
    let (period, first) = period_bounds(z);
    let pos = z - first + 1;
    let (m, d) = match period {
        1 => (if z == 1 { 1 } else { 8 }, 0),
        2 | 3 => (pos, 0),
        _ => match pos {
            1 | 2 => (pos, 0),
            3..=12 => (0, pos - 2),
            _ => (pos - 10, 0),
        },
    };
    let n = period as f64;
    let m = m as f64;
    let d = d as f64;
    Ok(ElementInfo {
        atomic_number: z as u8,
        symbol: SYMBOLS[(z - 1) as usize],
        n,
        m,
        d,
        n_bar: PERIOD_CEILING - n,
        m_bar: if m > 0.0 { 9.0 - m } else { 0.0 },
        d_bar: if d > 0.0 { 11.0 - d } else { 0.0 },
    })
}

/// Maximum of a channel over all supported elements.
pub fn channel_max(channel: Channel) -> f64 {
    match channel {
        Channel::Unity => 1.0,
        Channel::N => 5.0,
        Channel::M => 8.0,
        Channel::D => 10.0,
        Channel::NBar => 5.0,
        Channel::MBar => 8.0,
        Channel::DBar => 10.0,
    }
}

/// Parses a channel tag and returns its maximum.
pub fn channel_max_by_tag(tag: &str) -> Result<f64> {
    Ok(channel_max(tag.parse()?))
}

pub fn symbol(z: u8) -> Result<&'static str> {
    Ok(element_descriptors(z as u32)?.symbol)
}

/// Case-sensitive IUPAC symbol lookup.
pub fn atomic_number(symbol: &str) -> Result<u8> {
    SYMBOLS
        .iter()
        .position(|s| *s == symbol)
        .map(|i| (i + 1) as u8)
        .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
}
