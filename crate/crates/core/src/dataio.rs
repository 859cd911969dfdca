//! Dataset representation, the canonical line-oriented file format, temperature
//! normalization and train/validation/test split construction.
//!
//! The file format is deliberately plain text so datasets diff cleanly:
//!
//! ```text
//! #phaseforge-v1 elements=Ag,Bi,Cu,Sn phases=LIQUID,...,DO3 Tmin=<f> Tmax=<f>
//! x_Ag x_Bi x_Cu x_Sn T label_mask_hex [f_1 ... f_K] split_tag
//! ```
//!
//! Every real number is written with nine decimals. Values are quantized to
//! that grid on construction so `load(save(ds)) == ds` holds field by field.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fsutil;

/// Phase presence threshold applied to equilibrium phase fractions.
pub const EPS_PHASE: f64 = 1e-6;
/// Element presence threshold applied to atomic fractions.
pub const EPS_ELEMENT: f64 = 1e-6;
/// Maximum allowed deviation of a composition from the unit simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

const HEADER_TAG: &str = "#phaseforge-v1";
const FRACTION_SUM_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sample {index}: {msg}")]
    Invariant { index: usize, msg: String },
    #[error("invalid element set: {0}")]
    Elements(String),
    #[error("invalid phase vocabulary: {0}")]
    Vocabulary(String),
    #[error("degenerate temperature range: Tmin = Tmax = {0}")]
    DegenerateRange(f64),
    #[error("splitting needs at least 10 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rounds to the nine-decimal grid used by every text format in the crate.
pub fn quantize9(v: f64) -> f64 {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Bit set over element indices.
pub type ElementMask = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementSet {
    names: Vec<String>,
}

impl ElementSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, DataError> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        if !(2..=8).contains(&names.len()) {
            return Err(DataError::Elements(format!(
                "expected 2 to 8 elements, got {}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains([',', ' ', '-']) {
                return Err(DataError::Elements(format!("bad symbol {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(DataError::Elements(format!("duplicate symbol {n}")));
            }
        }
        Ok(Self { names })
    }

    pub fn ag_bi_cu_sn() -> Self {
        Self::new(&["Ag", "Bi", "Cu", "Sn"]).expect("static element set")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.names.iter().position(|n| n == symbol)
    }

    /// Parses a dash-separated system name such as `Ag-Bi-Sn` into its mask.
    pub fn parse_system(&self, system: &str) -> Result<ElementMask, DataError> {
        let mut mask = 0;
        for sym in system.split('-') {
            let i = self
                .index_of(sym.trim())
                .ok_or_else(|| DataError::Elements(format!("unknown element {sym:?}")))?;
            mask |= 1 << i;
        }
        Ok(mask)
    }

    /// Dash-joined symbols of the elements in `mask`, in canonical order.
    pub fn system_name(&self, mask: ElementMask) -> String {
        self.names
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, n)| n.as_str())
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseVocabulary {
    names: Vec<String>,
    required: Vec<ElementMask>,
}

impl PhaseVocabulary {
    pub fn new<S: AsRef<str>>(
        names: &[S],
        required: Vec<ElementMask>,
        elements: &ElementSet,
    ) -> Result<Self, DataError> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        if names.is_empty() || names.len() > 32 {
            return Err(DataError::Vocabulary(format!(
                "expected 1 to 32 phases, got {}",
                names.len()
            )));
        }
        if required.len() != names.len() {
            return Err(DataError::Vocabulary(
                "required-element list length differs from phase count".into(),
            ));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains([',', ' ', '+']) {
                return Err(DataError::Vocabulary(format!("bad phase name {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(DataError::Vocabulary(format!("duplicate phase {n}")));
            }
        }
        let all = (1u32 << elements.len()) - 1;
        if let Some(k) = required.iter().position(|r| r & !all != 0) {
            return Err(DataError::Vocabulary(format!(
                "phase {} requires elements outside the element set",
                names[k]
            )));
        }
        Ok(Self { names, required })
    }

    /// The nine-phase vocabulary over Ag-Bi-Cu-Sn; EPSILON, CUSN_IMC and DO3
    /// need both Cu and Sn, every other phase is admissible anywhere.
    pub fn default_nine(elements: &ElementSet) -> Self {
        let names = [
            "LIQUID",
            "FCC_A1",
            "HCP_A3",
            "BCC_A2",
            "RHOMBO_A7",
            "BCT_A5",
            "EPSILON",
            "CUSN_IMC",
            "DO3",
        ];
        let cu_sn = match (elements.index_of("Cu"), elements.index_of("Sn")) {
            (Some(cu), Some(sn)) => (1 << cu) | (1 << sn),
            _ => 0,
        };
        let required = names
            .iter()
            .map(|n| match *n {
                "EPSILON" | "CUSN_IMC" | "DO3" => cu_sn,
                _ => 0,
            })
            .collect();
        Self::new(&names, required, elements).expect("static vocabulary")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn required(&self, phase: usize) -> ElementMask {
        self.required[phase]
    }

    /// A phase is admissible when all of its required elements are present.
    pub fn admissible(&self, phase: usize, present: ElementMask) -> bool {
        self.required[phase] & !present == 0
    }

    /// `LIQUID+FCC_A1` style name, `NONE` for the empty set.
    pub fn set_name(&self, labels: PhaseLabelSet) -> String {
        if labels.is_empty() {
            return "NONE".to_string();
        }
        labels
            .iter()
            .map(|k| self.names[k].as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Presence mask over the phase vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PhaseLabelSet(pub u32);

impl PhaseLabelSet {
    pub const EMPTY: Self = Self(0);

    pub fn from_indices<I: IntoIterator<Item = usize>>(it: I) -> Self {
        Self(it.into_iter().fold(0, |m, k| m | (1 << k)))
    }

    pub fn contains(self, k: usize) -> bool {
        self.0 & (1 << k) != 0
    }

    pub fn insert(&mut self, k: usize) {
        self.0 |= 1 << k;
    }

    pub fn remove(&mut self, k: usize) {
        self.0 &= !(1 << k);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |k| self.0 & (1 << k) != 0)
    }

    pub fn to_hex(self, n_phases: usize) -> String {
        format!("{:0width$x}", self.0, width = n_phases.div_ceil(4).max(1))
    }

    pub fn parse_hex(s: &str) -> Option<Self> {
        u32::from_str_radix(s, 16).ok().map(Self)
    }
}

/// Composition (atomic fractions in element order) plus temperature in kelvin.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl StatePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        Self { x, t }
    }

    /// Elements whose fraction exceeds [`EPS_ELEMENT`].
    pub fn present(&self) -> ElementMask {
        self.x
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > EPS_ELEMENT)
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    pub fn check_simplex(&self) -> Result<(), String> {
        if let Some(v) = self.x.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(format!("negative or non-finite fraction {v}"));
        }
        let sum: f64 = self.x.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(format!("fractions sum to {sum:.12}, not 1"));
        }
        if !self.t.is_finite() {
            return Err("non-finite temperature".into());
        }
        Ok(())
    }

    fn quantized(&self) -> Self {
        Self {
            x: self.x.iter().map(|&v| quantize9(v)).collect(),
            t: quantize9(self.t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unassigned,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "tr",
            SplitTag::Val => "va",
            SplitTag::Test => "te",
            SplitTag::Unassigned => "?",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tr" => SplitTag::Train,
            "va" => SplitTag::Val,
            "te" => SplitTag::Test,
            "?" => SplitTag::Unassigned,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: StatePoint,
    pub labels: PhaseLabelSet,
    pub fractions: Option<Vec<f64>>,
    pub split: SplitTag,
}

impl Sample {
    /// Labels from explicit presence only, without phase fractions.
    pub fn with_labels(state: StatePoint, labels: PhaseLabelSet) -> Self {
        Self {
            state: state.quantized(),
            labels,
            fractions: None,
            split: SplitTag::Unassigned,
        }
    }

    /// Quantizes the fractions and binarizes them at [`EPS_PHASE`].
    pub fn from_fractions(state: StatePoint, fractions: &[f64]) -> Self {
        let fractions: Vec<f64> = fractions.iter().map(|&f| quantize9(f.max(0.0))).collect();
        let labels = PhaseLabelSet::from_indices(
            fractions
                .iter()
                .enumerate()
                .filter(|(_, &f)| f > EPS_PHASE)
                .map(|(k, _)| k),
        );
        Self {
            state: state.quantized(),
            labels,
            fractions: Some(fractions),
            split: SplitTag::Unassigned,
        }
    }

    /// A sample with no present phase. Allowed, but kept visible to callers.
    pub fn is_degenerate(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Closed temperature interval used to scale T into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TRange {
    pub min: f64,
    pub max: f64,
}

impl TRange {
    /// `(T - Tmin) / (Tmax - Tmin)`, clamped to [0, 1]; the flag reports clamping.
    pub fn normalize(&self, t: f64) -> Result<(f64, bool), DataError> {
        if self.max <= self.min {
            return Err(DataError::DegenerateRange(self.min));
        }
        let u = (t - self.min) / (self.max - self.min);
        if u < 0.0 {
            Ok((0.0, true))
        } else if u > 1.0 {
            Ok((1.0, true))
        } else {
            Ok((u, false))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub elements: ElementSet,
    pub vocab: PhaseVocabulary,
    pub t_min: f64,
    pub t_max: f64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn t_range(&self) -> TRange {
        TRange {
            min: self.t_min,
            max: self.t_max,
        }
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == tag)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subset(&self, tag: SplitTag) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == tag).collect()
    }

    /// Checks every sample invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), DataError> {
        let ne = self.elements.len();
        let k = self.vocab.len();
        if !(self.t_min <= self.t_max) {
            return Err(DataError::DegenerateRange(self.t_min));
        }
        let tol = 1e-9 * self.t_max.abs().max(1.0);
        for (index, s) in self.samples.iter().enumerate() {
            let bad = |msg: String| DataError::Invariant { index, msg };
            if s.state.x.len() != ne {
                return Err(bad(format!("expected {ne} fractions, got {}", s.state.x.len())));
            }
            s.state.check_simplex().map_err(|m| bad(format!("simplex violation: {m}")))?;
            if s.state.t < self.t_min - tol || s.state.t > self.t_max + tol {
                return Err(bad(format!(
                    "temperature {} outside [{}, {}]",
                    s.state.t, self.t_min, self.t_max
                )));
            }
            if s.labels.0 >> k != 0 {
                return Err(bad("label mask has bits beyond the vocabulary".into()));
            }
            if let Some(fr) = &s.fractions {
                if fr.len() != k {
                    return Err(bad(format!("expected {k} phase fractions, got {}", fr.len())));
                }
                if fr.iter().any(|f| !f.is_finite() || *f < 0.0) {
                    return Err(bad("negative or non-finite phase fraction".into()));
                }
                let sum: f64 = fr.iter().sum();
                if (sum - 1.0).abs() > FRACTION_SUM_TOL {
                    return Err(bad(format!("phase fractions sum to {sum}")));
                }
                for (p, &f) in fr.iter().enumerate() {
                    if s.labels.contains(p) != (f > EPS_PHASE) {
                        return Err(bad(format!(
                            "label bit {p} disagrees with fraction {f}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical serialization; identical datasets give identical bytes.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{HEADER_TAG} elements={} phases={} Tmin={:.9} Tmax={:.9}",
            self.elements.names().join(","),
            self.vocab.names().join(","),
            self.t_min,
            self.t_max
        );
        let k = self.vocab.len();
        for s in &self.samples {
            for v in &s.state.x {
                let _ = write!(out, "{v:.9} ");
            }
            let _ = write!(out, "{:.9} {}", s.state.t, s.labels.to_hex(k));
            if let Some(fr) = &s.fractions {
                for f in fr {
                    let _ = write!(out, " {f:.9}");
                }
            }
            let _ = writeln!(out, " {}", s.split.as_str());
        }
        out
    }

    /// Parses the canonical format. Required elements are taken from `vocab`
    /// when its phase names match the header, otherwise they default to none.
    pub fn parse(text: &str, vocab_hint: Option<&PhaseVocabulary>) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DataError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let (elements, vocab, t_min, t_max) = parse_header(header, vocab_hint)?;
        let ne = elements.len();
        let k = vocab.len();
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let perr = |msg: String| DataError::Parse { line: line_no, msg };
            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            let with_fractions = match tokens.len() {
                n if n == ne + 3 => false,
                n if n == ne + 3 + k => true,
                n => {
                    return Err(perr(format!(
                        "expected {} or {} fields, got {n}",
                        ne + 3,
                        ne + 3 + k
                    )))
                }
            };
            let num = |s: &str| -> Result<f64, DataError> {
                s.parse::<f64>()
                    .map_err(|_| perr(format!("bad number {s:?}")))
            };
            let x = tokens[..ne].iter().map(|t| num(t)).collect::<Result<Vec<_>, _>>()?;
            let t = num(tokens[ne])?;
            let labels = PhaseLabelSet::parse_hex(tokens[ne + 1])
                .ok_or_else(|| perr(format!("bad label mask {:?}", tokens[ne + 1])))?;
            let fractions = if with_fractions {
                Some(
                    tokens[ne + 2..ne + 2 + k]
                        .iter()
                        .map(|t| num(t))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            } else {
                None
            };
            let tag = tokens[tokens.len() - 1];
            let split = SplitTag::parse(tag).ok_or_else(|| perr(format!("bad split tag {tag:?}")))?;
            samples.push(Sample {
                state: StatePoint { x, t },
                labels,
                fractions,
                split,
            });
        }
        let ds = Dataset {
            elements,
            vocab,
            t_min,
            t_max,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn parse_header(
    header: &str,
    vocab_hint: Option<&PhaseVocabulary>,
) -> Result<(ElementSet, PhaseVocabulary, f64, f64), DataError> {
    let perr = |msg: String| DataError::Parse { line: 1, msg };
    let mut fields = header.split_whitespace();
    if fields.next() != Some(HEADER_TAG) {
        return Err(perr(format!("missing {HEADER_TAG} header")));
    }
    let (mut elements, mut phases, mut t_min, mut t_max) = (None, None, None, None);
    for f in fields {
        let (key, value) = f
            .split_once('=')
            .ok_or_else(|| perr(format!("bad header field {f:?}")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| perr(format!("bad number {v:?}")));
        match key {
            "elements" => elements = Some(value.split(',').collect::<Vec<_>>()),
            "phases" => phases = Some(value.split(',').collect::<Vec<_>>()),
            "Tmin" => t_min = Some(num(value)?),
            "Tmax" => t_max = Some(num(value)?),
            _ => return Err(perr(format!("unknown header key {key:?}"))),
        }
    }
    let missing = |k: &str| perr(format!("header lacks {k}="));
    let elements = ElementSet::new(&elements.ok_or_else(|| missing("elements"))?)
        .map_err(|e| perr(e.to_string()))?;
    let phases = phases.ok_or_else(|| missing("phases"))?;
    let vocab = match vocab_hint {
        Some(v) if v.names().iter().map(String::as_str).eq(phases.iter().copied()) => v.clone(),
        _ => {
            let dflt = PhaseVocabulary::default_nine(&elements);
            if dflt.names().iter().map(String::as_str).eq(phases.iter().copied()) {
                dflt
            } else {
                PhaseVocabulary::new(&phases, vec![0; phases.len()], &elements)
                    .map_err(|e| perr(e.to_string()))?
            }
        }
    };
    Ok((
        elements,
        vocab,
        t_min.ok_or_else(|| missing("Tmin"))?,
        t_max.ok_or_else(|| missing("Tmax"))?,
    ))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    load_dataset_with(path, None)
}

pub fn load_dataset_with(path: &Path, vocab: Option<&PhaseVocabulary>) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    Dataset::parse(&text, vocab)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    fsutil::write_atomic(path, ds.to_canonical_string().as_bytes())?;
    Ok(())
}

/// Positive counts per phase and split, plus the phases that could not be
/// guaranteed `min_positives` positives in both validation and test.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub sizes: [usize; 3],
    pub positives_total: Vec<usize>,
    pub positives_val: Vec<usize>,
    pub positives_test: Vec<usize>,
    pub under_represented: Vec<usize>,
}

/// Seeded 80/10/10 split. Phases are served rarest first: each phase with at
/// least `3 * min_positives` positives receives `min_positives` of them in
/// validation and in test before the remaining capacity is filled at random.
pub fn make_splits(
    ds: &Dataset,
    seed: u64,
    min_positives: usize,
) -> Result<(Dataset, SplitReport), DataError> {
    let n = ds.samples.len();
    if n < 10 {
        return Err(DataError::TooFewSamples(n));
    }
    let k = ds.vocab.len();
    let n_val = (n as f64 * 0.1).round() as usize;
    let n_test = n_val;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total: Vec<usize> = (0..k)
        .map(|p| ds.samples.iter().filter(|s| s.labels.contains(p)).count())
        .collect();
    let mut tags = vec![SplitTag::Unassigned; n];
    let mut val_pos = vec![0usize; k];
    let mut test_pos = vec![0usize; k];
    let (mut val_size, mut test_size) = (0usize, 0usize);

    let mut eligible: Vec<usize> = (0..k)
        .filter(|&p| total[p] > 0 && total[p] >= 3 * min_positives)
        .collect();
    eligible.sort_by_key(|&p| (total[p], p));

    for &p in &eligible {
        for &i in &order {
            if val_pos[p] >= min_positives && test_pos[p] >= min_positives {
                break;
            }
            let labels = ds.samples[i].labels;
            if tags[i] != SplitTag::Unassigned || !labels.contains(p) {
                continue;
            }
            if val_pos[p] < min_positives && val_size < n_val {
                tags[i] = SplitTag::Val;
                val_size += 1;
                labels.iter().for_each(|q| val_pos[q] += 1);
            } else if test_pos[p] < min_positives && test_size < n_test {
                tags[i] = SplitTag::Test;
                test_size += 1;
                labels.iter().for_each(|q| test_pos[q] += 1);
            }
        }
    }
    for &i in &order {
        if tags[i] != SplitTag::Unassigned {
            continue;
        }
        let labels = ds.samples[i].labels;
        tags[i] = if val_size < n_val {
            val_size += 1;
            labels.iter().for_each(|q| val_pos[q] += 1);
            SplitTag::Val
        } else if test_size < n_test {
            test_size += 1;
            labels.iter().for_each(|q| test_pos[q] += 1);
            SplitTag::Test
        } else {
            SplitTag::Train
        };
    }

    let under_represented = (0..k)
        .filter(|&p| {
            total[p] > 0
                && (total[p] < 3 * min_positives
                    || val_pos[p] < min_positives
                    || test_pos[p] < min_positives)
        })
        .collect();
    let mut out = ds.clone();
    for (s, t) in out.samples.iter_mut().zip(tags) {
        s.split = t;
    }
    let report = SplitReport {
        sizes: [n - val_size - test_size, val_size, test_size],
        positives_total: total,
        positives_val: val_pos,
        positives_test: test_pos,
        under_represented,
    };
    Ok((out, report))
}

/// Normalized temperature over the dataset range (see [`TRange::normalize`]).
pub fn normalize_t(ds: &Dataset, t: f64) -> Result<(f64, bool), DataError> {
    ds.t_range().normalize(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sample_text() -> String {
        format!(
            "{HEADER_TAG} elements=Ag,Bi,Cu,Sn phases=LIQUID,FCC_A1,HCP_A3,BCC_A2,RHOMBO_A7,BCT_A5,EPSILON,CUSN_IMC,DO3 Tmin=500 Tmax=500\n\
             1 0 0 0 500 002 ?\n"
        )
    }

    #[test]
    fn minimal_file_loads() {
        let ds = Dataset::parse(&one_sample_text(), None).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.samples[0].labels, PhaseLabelSet::from_indices([1]));
        assert_eq!(ds.vocab.required(6), 0b1100);
    }

    #[test]
    fn simplex_violation_is_reported_with_index() {
        let text = one_sample_text().replace("1 0 0 0 500", "0.98 0 0 0 500");
        match Dataset::parse(&text, None) {
            Err(DataError::Invariant { index, msg }) => {
                assert_eq!(index, 0);
                assert!(msg.contains("simplex"), "{msg}");
            }
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = one_sample_text() + "1 0 0 zero 500 002 ?\n";
        match Dataset::parse(&text, None) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut ds = Dataset::parse(&one_sample_text(), None).unwrap();
        ds.samples.clear();
        let text = ds.to_canonical_string();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with(HEADER_TAG));
        assert_eq!(text, ds.to_canonical_string());
    }

    #[test]
    fn fractions_binarize_at_threshold() {
        let s = Sample::from_fractions(
            StatePoint::new(vec![0.5, 0.5, 0.0, 0.0], 600.0),
            &[0.999999, 1e-6, 1e-7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        );
        assert_eq!(s.labels, PhaseLabelSet::from_indices([0]));
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        let r = TRange { min: 400.0, max: 1000.0 };
        assert_eq!(r.normalize(400.0).unwrap(), (0.0, false));
        assert_eq!(r.normalize(1000.0).unwrap(), (1.0, false));
        assert_eq!(r.normalize(700.0).unwrap(), (0.5, false));
        assert_eq!(r.normalize(1200.0).unwrap(), (1.0, true));
        assert_eq!(r.normalize(-3.0).unwrap(), (0.0, true));
        assert!(matches!(
            TRange { min: 5.0, max: 5.0 }.normalize(5.0),
            Err(DataError::DegenerateRange(_))
        ));
    }

    fn toy(n: usize) -> Dataset {
        let el = ElementSet::ag_bi_cu_sn();
        let vocab = PhaseVocabulary::default_nine(&el);
        let samples = (0..n)
            .map(|i| {
                let a = (i % 11) as f64 / 10.0;
                Sample::with_labels(
                    StatePoint::new(vec![a, 1.0 - a, 0.0, 0.0], 500.0),
                    PhaseLabelSet::from_indices([i % 3]),
                )
            })
            .collect();
        Dataset {
            elements: el,
            vocab,
            t_min: 500.0,
            t_max: 600.0,
            samples,
        }
    }

    #[test]
    fn ten_samples_split_8_1_1() {
        let (ds, rep) = make_splits(&toy(10), 0, 5).unwrap();
        assert_eq!(rep.sizes, [8, 1, 1]);
        assert_eq!(ds.indices(SplitTag::Train).len(), 8);
        // every phase has fewer than 15 positives
        assert_eq!(rep.under_represented, vec![0, 1, 2]);
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let ds = toy(200);
        let (a, _) = make_splits(&ds, 3, 5).unwrap();
        let (b, _) = make_splits(&ds, 3, 5).unwrap();
        let (c, _) = make_splits(&ds, 4, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_samples_to_split() {
        assert!(matches!(make_splits(&toy(9), 0, 5), Err(DataError::TooFewSamples(9))));
    }

    #[test]
    fn label_set_names_and_hex() {
        let el = ElementSet::ag_bi_cu_sn();
        let v = PhaseVocabulary::default_nine(&el);
        assert_eq!(v.set_name(PhaseLabelSet::EMPTY), "NONE");
        assert_eq!(v.set_name(PhaseLabelSet::from_indices([1, 0])), "LIQUID+FCC_A1");
        assert_eq!(PhaseLabelSet(0x1ff).to_hex(9), "1ff");
        assert_eq!(PhaseLabelSet(3).to_hex(9), "003");
        assert!(v.admissible(0, 0b0001));
        assert!(!v.admissible(7, 0b0100));
        assert!(v.admissible(7, 0b1100));
        assert_eq!(el.parse_system("Bi-Sn").unwrap(), 0b1010);
        assert_eq!(el.system_name(0b1010), "Bi-Sn");
    }
}
