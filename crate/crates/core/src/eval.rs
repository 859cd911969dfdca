//! Metrics, per-subsystem aggregation, dense evaluation grids, report files
//! and PPM maps.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::{quantize9, DataError, ElementMask, ElementSet, PhaseLabelSet, StatePoint};
use crate::decode::feasibility_violations;
use crate::fsutil;
use crate::prediction::Predictions;
use crate::thermo_oracle::subsystem_grid;

/// Coordinate tolerance when aligning predictions with truth.
pub const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("predictions and truth are misaligned at point {index}: {detail}")]
    Misaligned { index: usize, detail: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("cannot render map: {0}")]
    Render(String),
    #[error("composition step {0} does not divide 100")]
    Step(u32),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub f1: f64,
    /// No positives in truth or prediction; F1 is defined as 1.0.
    pub degenerate: bool,
}

impl ClassStats {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let denom = 2 * tp + fp + fn_;
        let degenerate = denom == 0;
        let f1 = if degenerate {
            1.0
        } else {
            (2 * tp) as f64 / denom as f64
        };
        Self {
            tp,
            fp,
            fn_,
            f1,
            degenerate,
        }
    }
}

fn check_len(pred: &[PhaseLabelSet], truth: &[PhaseLabelSet]) -> Result<(), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions vs {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Per-class confusion counts and F1 over `k` classes.
pub fn f1_per_class(pred: &[PhaseLabelSet], truth: &[PhaseLabelSet], k: usize) -> Result<Vec<ClassStats>, EvalError> {
    check_len(pred, truth)?;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (p, t) in pred.iter().zip(truth) {
        for c in 0..k {
            match (p.contains(c), t.contains(c)) {
                (true, true) => tp[c] += 1,
                (true, false) => fp[c] += 1,
                (false, true) => fn_[c] += 1,
                (false, false) => {}
            }
        }
    }
    Ok((0..k).map(|c| ClassStats::from_counts(tp[c], fp[c], fn_[c])).collect())
}

/// Unweighted mean of per-class F1 over all classes.
pub fn macro_f1(stats: &[ClassStats]) -> f64 {
    if stats.is_empty() {
        return 1.0;
    }
    stats.iter().map(|s| s.f1).sum::<f64>() / stats.len() as f64
}

/// `(accuracy, N_mismatch)` under exact-set equality.
pub fn subset_accuracy(pred: &[PhaseLabelSet], truth: &[PhaseLabelSet]) -> Result<(f64, usize), EvalError> {
    check_len(pred, truth)?;
    let m = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok((accuracy_from_counts(m, pred.len()), m))
}

/// `1 - N_mismatch / N`; an empty set counts as fully correct.
pub fn accuracy_from_counts(n_mismatch: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    1.0 - n_mismatch as f64 / n as f64
}

/// Accuracy in percent with four decimals.
pub fn format_accuracy_percent(n_mismatch: usize, n: usize) -> String {
    format!("{:.4}", 100.0 * accuracy_from_counts(n_mismatch, n))
}

fn mask_key(mask: ElementMask) -> (u32, Vec<u32>) {
    let bits: Vec<u32> = (0..32).filter(|b| mask & (1 << b) != 0).collect();
    (mask.count_ones(), bits)
}

/// Sample indices grouped by present-element set, ordered by subsystem size,
/// then lexicographically by element index.
pub fn group_by_subsystem(states: &[StatePoint]) -> Vec<(ElementMask, Vec<usize>)> {
    let mut map: HashMap<ElementMask, Vec<usize>> = HashMap::new();
    for (i, s) in states.iter().enumerate() {
        map.entry(s.present()).or_default().push(i);
    }
    let mut groups: Vec<_> = map.into_iter().collect();
    groups.sort_by_key(|(m, _)| mask_key(*m));
    groups
}

/// Which lattice points of a dense grid are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridConvention {
    /// Every lattice point, vertices and edges included.
    #[default]
    Full,
    /// Drops the pure-element vertices.
    NoVertices,
    /// Only points where every subsystem element is present.
    Interior,
}

impl GridConvention {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Self::Full),
            "no-vertices" => Some(Self::NoVertices),
            "interior" => Some(Self::Interior),
            _ => None,
        }
    }

    fn keeps(self, x: &[f64], subsystem: ElementMask) -> bool {
        let present = x.iter().filter(|&&v| v > 0.0).count();
        match self {
            Self::Full => true,
            Self::NoVertices => present > 1,
            Self::Interior => present == subsystem.count_ones() as usize,
        }
    }
}

/// Simplex lattice of `subsystem` at `comp_step` at.% crossed with `temps`,
/// temperature-major.
pub fn dense_grid(
    n_elements: usize,
    subsystem: ElementMask,
    comp_step: u32,
    temps: &[f64],
    convention: GridConvention,
) -> Result<Vec<StatePoint>, EvalError> {
    if comp_step == 0 || 100 % comp_step != 0 {
        return Err(EvalError::Step(comp_step));
    }
    if subsystem == 0 || subsystem >> n_elements != 0 {
        return Err(EvalError::Shape(format!("bad subsystem mask {subsystem:#x}")));
    }
    let comps: Vec<Vec<f64>> = subsystem_grid(n_elements, subsystem, comp_step)
        .into_iter()
        .filter(|x| convention.keeps(x, subsystem))
        .map(|x| x.into_iter().map(quantize9).collect())
        .collect();
    let mut out = Vec::with_capacity(comps.len() * temps.len());
    for &t in temps {
        for x in &comps {
            out.push(StatePoint::new(x.clone(), quantize9(t)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemRow {
    pub mask: ElementMask,
    pub name: String,
    pub n: usize,
    pub n_mismatch: usize,
    pub accuracy: f64,
    /// Mean F1 over the classes that occur in this subsystem's truth or
    /// predictions; 1.0 when none do.
    pub macro_f1: f64,
}

/// Mean over subsystems of one order (2 = binary, 3 = ternary, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct OrderAggregate {
    pub order: u32,
    pub systems: usize,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub phases: Vec<String>,
    pub per_class: Vec<ClassStats>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub n_mismatch: usize,
    pub subsystems: Vec<SubsystemRow>,
    /// Unary groups are excluded.
    pub aggregates: Vec<OrderAggregate>,
    /// `(multiplicity, predicted count, truth count)`.
    pub multiplicity: Vec<(usize, usize, usize)>,
    pub violations: usize,
    pub fallbacks: usize,
}

fn check_alignment(pred: &[StatePoint], truth: &[StatePoint]) -> Result<(), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Misaligned {
            index: pred.len().min(truth.len()),
            detail: format!("{} predicted points vs {} truth points", pred.len(), truth.len()),
        });
    }
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        let same = p.x.len() == t.x.len()
            && p.x.iter().zip(&t.x).all(|(a, b)| (a - b).abs() <= ALIGN_TOL)
            && (p.t - t.t).abs() <= ALIGN_TOL;
        if !same {
            return Err(EvalError::Misaligned {
                index: i,
                detail: format!("predicted x={:?} T={} vs truth x={:?} T={}", p.x, p.t, t.x, t.t),
            });
        }
    }
    Ok(())
}

/// Scores predicted label sets against truth on aligned points.
pub fn evaluate(
    pred: &Predictions,
    truth_states: &[StatePoint],
    truth: &[PhaseLabelSet],
) -> Result<MetricsReport, EvalError> {
    check_alignment(&pred.states, truth_states)?;
    check_len(&pred.labels, truth)?;
    let k = pred.phases.len();
    let per_class = f1_per_class(&pred.labels, truth, k)?;
    let (accuracy, n_mismatch) = subset_accuracy(&pred.labels, truth)?;

    let mut subsystems = Vec::new();
    for (mask, idx) in group_by_subsystem(truth_states) {
        let p: Vec<PhaseLabelSet> = idx.iter().map(|&i| pred.labels[i]).collect();
        let t: Vec<PhaseLabelSet> = idx.iter().map(|&i| truth[i]).collect();
        let stats = f1_per_class(&p, &t, k)?;
        let active: Vec<ClassStats> = stats.into_iter().filter(|s| !s.degenerate).collect();
        let (acc, m) = subset_accuracy(&p, &t)?;
        subsystems.push(SubsystemRow {
            mask,
            name: pred.elements.system_name(mask),
            n: idx.len(),
            n_mismatch: m,
            accuracy: acc,
            macro_f1: macro_f1(&active),
        });
    }

    let mut aggregates = Vec::new();
    for order in 2..=pred.elements.len() as u32 {
        let rows: Vec<&SubsystemRow> = subsystems.iter().filter(|r| r.mask.count_ones() == order).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        aggregates.push(OrderAggregate {
            order,
            systems: rows.len(),
            mean_accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
            mean_macro_f1: rows.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        });
    }

    let max_m = pred.labels.iter().chain(truth).map(|l| l.len()).max().unwrap_or(0);
    let mut multiplicity: Vec<(usize, usize, usize)> = (0..=max_m).map(|m| (m, 0, 0)).collect();
    for l in &pred.labels {
        multiplicity[l.len()].1 += 1;
    }
    for l in truth {
        multiplicity[l.len()].2 += 1;
    }

    Ok(MetricsReport {
        n: truth.len(),
        phases: pred.phases.clone(),
        macro_f1: macro_f1(&per_class),
        per_class,
        accuracy,
        n_mismatch,
        subsystems,
        aggregates,
        multiplicity,
        violations: feasibility_violations(&pred.labels, &pred.states),
        fallbacks: pred.flags.iter().filter(|f| f.fallback).count(),
    })
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "points       {}", self.n);
        let _ = writeln!(s, "mismatches   {}", self.n_mismatch);
        let _ = writeln!(
            s,
            "accuracy     {}%  ({}/{})",
            format_accuracy_percent(self.n_mismatch, self.n),
            self.n - self.n_mismatch,
            self.n
        );
        let _ = writeln!(s, "macro_f1     {:.6}", self.macro_f1);
        let _ = writeln!(s, "violations   {}", self.violations);
        let _ = writeln!(s, "fallbacks    {}", self.fallbacks);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8} {:>10}", "phase", "tp", "fp", "fn", "f1");
        for (name, c) in self.phases.iter().zip(&self.per_class) {
            let flag = if c.degenerate { "  (no positives)" } else { "" };
            let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8} {:>10.6}{flag}", name, c.tp, c.fp, c.fn_, c.f1);
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>10} {:>10} {:>10}",
            "system", "n", "mismatch", "acc%", "macro_f1"
        );
        for r in &self.subsystems {
            let _ = writeln!(
                s,
                "{:<14} {:>8} {:>10} {:>10} {:>10.6}",
                r.name,
                r.n,
                r.n_mismatch,
                format_accuracy_percent(r.n_mismatch, r.n),
                r.macro_f1
            );
        }
        let _ = writeln!(s);
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "order {} mean over {} systems: acc {:.4}%  macro_f1 {:.6}",
                a.order,
                a.systems,
                100.0 * a.mean_accuracy,
                a.mean_macro_f1
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>10} {:>10}", "multiplicity", "predicted", "truth");
        for &(m, p, t) in &self.multiplicity {
            let _ = writeln!(s, "{m:<12} {p:>10} {t:>10}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,name,n,n_mismatch,accuracy,macro_f1,tp,fp,fn,f1,degenerate\n");
        let _ = writeln!(
            s,
            "overall,all,{},{},{:.12},{:.12},,,,,",
            self.n, self.n_mismatch, self.accuracy, self.macro_f1
        );
        for r in &self.subsystems {
            let _ = writeln!(
                s,
                "system,{},{},{},{:.12},{:.12},,,,,",
                r.name, r.n, r.n_mismatch, r.accuracy, r.macro_f1
            );
        }
        for (name, c) in self.phases.iter().zip(&self.per_class) {
            let _ = writeln!(
                s,
                "class,{},,,,,{},{},{},{:.12},{}",
                name, c.tp, c.fp, c.fn_, c.f1, c.degenerate
            );
        }
        s
    }
}

/// `x..., T, truth_mask, pred_mask, match` per point.
pub fn mismatch_csv(elements: &ElementSet, pred: &Predictions, truth: &[PhaseLabelSet]) -> String {
    let k = pred.phases.len();
    let mut s = String::new();
    for e in elements.names() {
        let _ = write!(s, "x_{e},");
    }
    s.push_str("T,truth_mask,pred_mask,match\n");
    for ((st, p), t) in pred.states.iter().zip(&pred.labels).zip(truth) {
        for v in &st.x {
            let _ = write!(s, "{v:.9},");
        }
        let _ = writeln!(s, "{:.9},{},{},{}", st.t, t.to_hex(k), p.to_hex(k), u8::from(p == t));
    }
    s
}

/// `x..., T, pred_multiplicity, truth_multiplicity` per point.
pub fn multiplicity_csv(elements: &ElementSet, pred: &Predictions, truth: &[PhaseLabelSet]) -> String {
    let mut s = String::new();
    for e in elements.names() {
        let _ = write!(s, "x_{e},");
    }
    s.push_str("T,pred_multiplicity,truth_multiplicity\n");
    for ((st, p), t) in pred.states.iter().zip(&pred.labels).zip(truth) {
        for v in &st.x {
            let _ = write!(s, "{v:.9},");
        }
        let _ = writeln!(s, "{:.9},{},{}", st.t, p.len(), t.len());
    }
    s
}

/// Writes `report.txt`, `report.csv`, `mismatch.csv` and `multiplicity.csv`
/// into `dir`, returning the written paths.
pub fn write_reports(
    dir: &Path,
    report: &MetricsReport,
    pred: &Predictions,
    truth: &[PhaseLabelSet],
) -> Result<Vec<std::path::PathBuf>, EvalError> {
    let files = [
        ("report.txt", report.to_text()),
        ("report.csv", report.to_csv()),
        ("mismatch.csv", mismatch_csv(&pred.elements, pred, truth)),
        ("multiplicity.csv", multiplicity_csv(&pred.elements, pred, truth)),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fsutil::write_atomic(&path, body.as_bytes())?;
        out.push(path);
    }
    Ok(out)
}

fn lattice_coords(x: &[f64], n: usize, index: usize) -> Result<Vec<i64>, EvalError> {
    x.iter()
        .map(|&v| {
            let c = v * n as f64;
            let r = c.round();
            if (c - r).abs() > 1e-6 {
                Err(EvalError::Render(format!(
                    "point {index} is off the composition lattice (x={v})"
                )))
            } else {
                Ok(r as i64)
            }
        })
        .collect()
}

/// For every point, whether a lattice neighbor (one composition step, same
/// T) carries different truth labels.
pub fn near_label_change(states: &[StatePoint], truth: &[PhaseLabelSet], comp_step: u32) -> Result<Vec<bool>, EvalError> {
    if comp_step == 0 || 100 % comp_step != 0 {
        return Err(EvalError::Step(comp_step));
    }
    let n = (100 / comp_step) as usize;
    let mut index: HashMap<(Vec<i64>, u64), usize> = HashMap::new();
    let mut keys = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let c = lattice_coords(&s.x, n, i)?;
        let key = (c, quantize9(s.t).to_bits());
        index.insert(key.clone(), i);
        keys.push(key);
    }
    let mut out = vec![false; states.len()];
    for (i, (c, tb)) in keys.iter().enumerate() {
        let d = c.len();
        'search: for a in 0..d {
            for b in 0..d {
                if a == b || c[b] == 0 {
                    continue;
                }
                let mut nb = c.clone();
                nb[a] += 1;
                nb[b] -= 1;
                if let Some(&j) = index.get(&(nb, *tb)) {
                    if truth[j] != truth[i] {
                        out[i] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Value shown in one map pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Multiplicity(usize),
    Match(bool),
}

pub const BACKGROUND: [u8; 3] = [255, 255, 255];
pub const MULTIPLICITY_COLORS: [[u8; 3]; 5] = [
    [0, 0, 0],
    [68, 119, 170],
    [238, 102, 119],
    [34, 136, 51],
    [204, 187, 68],
];
pub const MATCH_COLOR: [u8; 3] = [60, 180, 75];
pub const MISMATCH_COLOR: [u8; 3] = [230, 25, 75];

pub fn cell_color(c: Cell) -> [u8; 3] {
    match c {
        Cell::Multiplicity(m) => MULTIPLICITY_COLORS[m.min(4)],
        Cell::Match(true) => MATCH_COLOR,
        Cell::Match(false) => MISMATCH_COLOR,
    }
}

/// RGB raster before PPM encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Raster {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![BACKGROUND; width * height],
        }
    }

    fn set(&mut self, row: usize, col: usize, c: [u8; 3]) {
        self.pixels[row * self.width + col] = c;
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

/// Rasterizes a map over one subsystem.
///
/// Binary: one column per composition step of the second element, one row per
/// temperature with the hottest at the top. Ternary (single T): barycentric
/// triangle with the third element at the apex, two pixels per lattice point,
/// `2n+2` wide and `n+1` tall. Quaternary (single T): one ternary section per
/// fourth-element level, stacked top to bottom and separated by a blank row.
pub fn render_raster(states: &[StatePoint], cells: &[Cell], comp_step: u32) -> Result<Raster, EvalError> {
    if states.len() != cells.len() {
        return Err(EvalError::Shape(format!("{} points vs {} values", states.len(), cells.len())));
    }
    if states.is_empty() {
        return Err(EvalError::Render("no points".into()));
    }
    if comp_step == 0 || 100 % comp_step != 0 {
        return Err(EvalError::Step(comp_step));
    }
    let n = (100 / comp_step) as usize;
    let union = states.iter().fold(0, |m, s| m | s.present());
    let elems: Vec<usize> = (0..states[0].x.len()).filter(|e| union & (1 << e) != 0).collect();
    let mut temps: Vec<u64> = states.iter().map(|s| quantize9(s.t).to_bits()).collect();
    temps.sort_by(|a, b| f64::from_bits(*b).total_cmp(&f64::from_bits(*a)));
    temps.dedup();
    let sub = |i: usize| -> Result<Vec<usize>, EvalError> {
        let c = lattice_coords(&states[i].x, n, i)?;
        Ok(elems.iter().map(|&e| c[e] as usize).collect())
    };
    match elems.len() {
        2 => {
            let mut r = Raster::new(n + 1, temps.len());
            for (i, &cell) in cells.iter().enumerate() {
                let c = sub(i)?;
                let row = temps
                    .iter()
                    .position(|&t| t == quantize9(states[i].t).to_bits())
                    .expect("temperature collected above");
                r.set(row, c[1], cell_color(cell));
            }
            Ok(r)
        }
        3 | 4 => {
            if temps.len() != 1 {
                return Err(EvalError::Render(format!(
                    "{}-element maps need a single temperature, got {}",
                    elems.len(),
                    temps.len()
                )));
            }
            let slices = if elems.len() == 3 { 1 } else { n + 1 };
            let mut r = Raster::new(2 * n + 2, slices * (n + 2) - 1);
            for (i, &cell) in cells.iter().enumerate() {
                let c = sub(i)?;
                let level = if elems.len() == 4 { c[3] } else { 0 };
                let (b, top) = (c[1], c[2]);
                let row = level * (n + 2) + (n - top);
                let col = 2 * b + top + level;
                let color = cell_color(cell);
                r.set(row, col, color);
                r.set(row, col + 1, color);
            }
            Ok(r)
        }
        d => Err(EvalError::Render(format!("unsupported dimensionality: {d} elements present"))),
    }
}

/// PPM bytes of [`render_raster`].
pub fn render_map(states: &[StatePoint], cells: &[Cell], comp_step: u32) -> Result<Vec<u8>, EvalError> {
    Ok(render_raster(states, cells, comp_step)?.to_ppm())
}
