//! Prediction file: per point the state, the per-phase probabilities, the
//! label mask and flags.
//!
//! ```text
//! #phaseforge-pred-v1 elements=Ag,Bi,Cu,Sn phases=... decoded=true
//! x_1 ... x_E T p_1 ... p_K mask_hex flags
//! ```
//!
//! `flags` is `-` or a comma-separated subset of `fallback`, `clamped_T`.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::{DataError, ElementSet, PhaseLabelSet, PhaseVocabulary, StatePoint};
use crate::fsutil;

const HEADER_TAG: &str = "#phaseforge-pred-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PredFlags {
    pub fallback: bool,
    pub clamped_t: bool,
}

impl PredFlags {
    fn render(self) -> String {
        let mut v = Vec::new();
        if self.fallback {
            v.push("fallback");
        }
        if self.clamped_t {
            v.push("clamped_T");
        }
        if v.is_empty() {
            "-".into()
        } else {
            v.join(",")
        }
    }

    fn parse(s: &str) -> Option<Self> {
        let mut f = Self::default();
        if s == "-" {
            return Some(f);
        }
        for part in s.split(',') {
            match part {
                "fallback" => f.fallback = true,
                "clamped_T" => f.clamped_t = true,
                _ => return None,
            }
        }
        Some(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub elements: ElementSet,
    pub phases: Vec<String>,
    pub decoded: bool,
    pub states: Vec<StatePoint>,
    /// Row-major `N x K`.
    pub probs: Vec<f64>,
    pub labels: Vec<PhaseLabelSet>,
    pub flags: Vec<PredFlags>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn vocab_matches(&self, vocab: &PhaseVocabulary) -> bool {
        self.phases.as_slice() == vocab.names()
    }

    pub fn to_canonical_string(&self) -> String {
        let k = self.phases.len();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{HEADER_TAG} elements={} phases={} decoded={}",
            self.elements.names().join(","),
            self.phases.join(","),
            self.decoded
        );
        for (n, s) in self.states.iter().enumerate() {
            for v in &s.x {
                let _ = write!(out, "{v:.9} ");
            }
            let _ = write!(out, "{:.9}", s.t);
            for p in &self.probs[n * k..(n + 1) * k] {
                let _ = write!(out, " {p:.9}");
            }
            let _ = writeln!(out, " {} {}", self.labels[n].to_hex(k), self.flags[n].render());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let perr = |line: usize, msg: String| DataError::Parse { line, msg };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty prediction file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(HEADER_TAG) {
            return Err(perr(1, format!("missing {HEADER_TAG} header")));
        }
        let (mut elements, mut phases, mut decoded) = (None, None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("elements", v)) => elements = Some(v.split(',').collect::<Vec<_>>()),
                Some(("phases", v)) => phases = Some(v.split(',').map(String::from).collect::<Vec<_>>()),
                Some(("decoded", v)) => {
                    decoded = Some(v.parse::<bool>().map_err(|_| perr(1, format!("bad decoded flag {v:?}")))?)
                }
                _ => return Err(perr(1, format!("bad header field {f:?}"))),
            }
        }
        let elements = ElementSet::new(&elements.ok_or_else(|| perr(1, "header lacks elements=".into()))?)
            .map_err(|e| perr(1, e.to_string()))?;
        let phases = phases.ok_or_else(|| perr(1, "header lacks phases=".into()))?;
        let ne = elements.len();
        let k = phases.len();
        let mut out = Self {
            elements,
            phases,
            decoded: decoded.unwrap_or(false),
            states: Vec::new(),
            probs: Vec::new(),
            labels: Vec::new(),
            flags: Vec::new(),
        };
        for (i, line) in lines {
            let line_no = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = t.split_whitespace().collect();
            if tok.len() != ne + k + 3 {
                return Err(perr(line_no, format!("expected {} fields, got {}", ne + k + 3, tok.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(line_no, format!("bad number {s:?}")));
            let x = tok[..ne].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
            let temp = num(tok[ne])?;
            for s in &tok[ne + 1..ne + 1 + k] {
                out.probs.push(num(s)?);
            }
            let mask = PhaseLabelSet::parse_hex(tok[ne + 1 + k])
                .ok_or_else(|| perr(line_no, format!("bad mask {:?}", tok[ne + 1 + k])))?;
            let flags = PredFlags::parse(tok[ne + 2 + k])
                .ok_or_else(|| perr(line_no, format!("bad flags {:?}", tok[ne + 2 + k])))?;
            out.states.push(StatePoint::new(x, temp));
            out.labels.push(mask);
            out.flags.push(flags);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fsutil::write_atomic(path, self.to_canonical_string().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
