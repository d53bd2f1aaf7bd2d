//! Measure catalogue and names.
//!
//! Faithfulness measures are `<perturbation>-<difference>` (e.g. `ABL-Div`);
//! readability measures are `<side>-<coherence>` (e.g. `IN-EmbCos`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PerturbationKind {
    Grad,
    Abl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DifferenceKind {
    Loss,
    Div,
    PClass,
    TClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoherenceKind {
    Uci,
    UMass,
    EmbDist,
    EmbCos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaithfulnessMeasure {
    pub perturbation: PerturbationKind,
    pub difference: DifferenceKind,
}

impl FaithfulnessMeasure {
    /// GRAD-Div is not a measure: the directional derivative of a divergence
    /// at zero perturbation is not taken.
    pub fn new(perturbation: PerturbationKind, difference: DifferenceKind) -> Result<Self> {
        if perturbation == PerturbationKind::Grad && difference == DifferenceKind::Div {
            return Err(Error::UnsupportedCombination("GRAD-Div".into()));
        }
        Ok(Self { perturbation, difference })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReadabilityMeasure {
    pub side: Side,
    pub coherence: CoherenceKind,
}

impl ReadabilityMeasure {
    /// Co-occurrence measures exist only on the input side: strongly promoted
    /// output tokens need not occur in the corpus.
    pub fn new(side: Side, coherence: CoherenceKind) -> Result<Self> {
        if side == Side::Output && matches!(coherence, CoherenceKind::Uci | CoherenceKind::UMass) {
            return Err(Error::UnsupportedCombination(format!("OUT-{}", coherence_name(coherence))));
        }
        Ok(Self { side, coherence })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    Faithfulness(FaithfulnessMeasure),
    Readability(ReadabilityMeasure),
}

fn coherence_name(c: CoherenceKind) -> &'static str {
    match c {
        CoherenceKind::Uci => "UCI",
        CoherenceKind::UMass => "UMass",
        CoherenceKind::EmbDist => "EmbDist",
        CoherenceKind::EmbCos => "EmbCos",
    }
}

impl Measure {
    /// Every supported measure in canonical order.
    pub fn all() -> Vec<Measure> {
        use CoherenceKind::*;
        use DifferenceKind::*;
        use PerturbationKind::*;
        let mut out = Vec::new();
        for p in [Abl, Grad] {
            for d in [Loss, Div, PClass, TClass] {
                if let Ok(m) = FaithfulnessMeasure::new(p, d) {
                    out.push(Measure::Faithfulness(m));
                }
            }
        }
        for s in [Side::Input, Side::Output] {
            for c in [Uci, UMass, EmbDist, EmbCos] {
                if let Ok(m) = ReadabilityMeasure::new(s, c) {
                    out.push(Measure::Readability(m));
                }
            }
        }
        out
    }

    pub fn valid_names() -> String {
        Measure::all().iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
    }

    pub fn parse_list(list: &str) -> Result<Vec<Measure>> {
        let mut out: Vec<Measure> = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let m: Measure = name.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("empty measure list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Faithfulness(m) => {
                let p = match m.perturbation {
                    PerturbationKind::Grad => "GRAD",
                    PerturbationKind::Abl => "ABL",
                };
                let d = match m.difference {
                    DifferenceKind::Loss => "Loss",
                    DifferenceKind::Div => "Div",
                    DifferenceKind::PClass => "PClass",
                    DifferenceKind::TClass => "TClass",
                };
                write!(f, "{p}-{d}")
            }
            Measure::Readability(m) => {
                let s = match m.side {
                    Side::Input => "IN",
                    Side::Output => "OUT",
                };
                write!(f, "{s}-{}", coherence_name(m.coherence))
            }
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::all()
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMeasure { name: s.to_string(), valid: Measure::valid_names() })
    }
}

impl Serialize for Measure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
