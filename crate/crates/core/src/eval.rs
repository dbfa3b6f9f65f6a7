//! Sample-level scores (confusion matrix, Se/P+/F, ROC) and tolerance-window
//! event matching for beats and wave boundaries.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnnotatedWave, SampleClass, N_CLASSES};
use crate::delineate::WaveSegment;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {truth} reference labels vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("scores must have {N_CLASSES} finite columns per sample")]
    BadScores,
    #[error("tolerance must be positive")]
    Tolerance,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Rows are reference classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[SampleClass], pred: &[SampleClass]) -> Result<Self> {
        let mut cm = Self::default();
        cm.add(truth, pred)?;
        Ok(cm)
    }

    pub fn add(&mut self, truth: &[SampleClass], pred: &[SampleClass]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                truth: truth.len(),
                pred: pred.len(),
            });
        }
        for (&a, &p) in truth.iter().zip(pred) {
            self.counts[a.code()][p.code()] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (v, w) in r.iter_mut().zip(o) {
                *v += w;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names: Vec<&str> = SampleClass::ALL.iter().map(|c| c.name()).collect();
        writeln!(w, "actual\\predicted,{}", names.join(","))?;
        for (c, row) in SampleClass::ALL.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", c.name(), cells.join(","))?;
        }
        Ok(())
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Which F-score formula to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FScoreMode {
    /// `(1+b) P S / (b^2 P + S)`
    AsWritten,
    /// `(1+b^2) P S / (b^2 P + S)`
    Standard,
}

pub fn f_score(precision: f64, sensitivity: f64, beta: f64, mode: FScoreMode) -> Option<f64> {
    let den = beta * beta * precision + sensitivity;
    if den <= 0.0 {
        return None;
    }
    let k = match mode {
        FScoreMode::AsWritten => 1.0 + beta,
        FScoreMode::Standard => 1.0 + beta * beta,
    };
    Some(k * precision * sensitivity / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: SampleClass,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub f_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub beta: f64,
    pub mode: FScoreMode,
    pub classes: Vec<ClassScore>,
    pub accuracy: Option<f64>,
}

pub fn class_metrics(cm: &ConfusionMatrix, beta: f64, mode: FScoreMode) -> ClassMetrics {
    let total = cm.total();
    let classes = SampleClass::ALL
        .iter()
        .map(|&c| {
            let i = c.code();
            let tp = cm.counts[i][i];
            let fn_ = cm.row_sum(i) - tp;
            let fp = cm.col_sum(i) - tp;
            let tn = total - tp - fn_ - fp;
            let sensitivity = ratio(tp, tp + fn_);
            let precision = ratio(tp, tp + fp);
            let f = match (precision, sensitivity) {
                (Some(p), Some(s)) => f_score(p, s, beta, mode),
                _ => None,
            };
            ClassScore {
                class: c,
                tp,
                fp,
                fn_,
                tn,
                sensitivity,
                precision,
                f_score: f,
            }
        })
        .collect();
    ClassMetrics {
        beta,
        mode,
        classes,
        accuracy: ratio(cm.trace(), total),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub micro_precision: Option<f64>,
    pub micro_sensitivity: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_sensitivity: Option<f64>,
    /// Classes whose ratio was defined and entered the macro mean.
    pub macro_precision_classes: usize,
    pub macro_sensitivity_classes: usize,
}

pub fn averaged_metrics(cm: &ConfusionMatrix) -> AveragedMetrics {
    let m = class_metrics(cm, 1.0, FScoreMode::AsWritten);
    let (tp, fp, fn_) = m
        .classes
        .iter()
        .fold((0, 0, 0), |(a, b, c), s| (a + s.tp, b + s.fp, c + s.fn_));
    let mean = |vals: Vec<f64>| {
        let n = vals.len();
        ((n > 0).then(|| vals.iter().sum::<f64>() / n as f64), n)
    };
    let (macro_precision, np) = mean(m.classes.iter().filter_map(|s| s.precision).collect());
    let (macro_sensitivity, ns) = mean(m.classes.iter().filter_map(|s| s.sensitivity).collect());
    AveragedMetrics {
        micro_precision: ratio(tp, tp + fp),
        micro_sensitivity: ratio(tp, tp + fn_),
        macro_precision,
        macro_sensitivity,
        macro_precision_classes: np,
        macro_sensitivity_classes: ns,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Keeps both endpoints and at most `max_points` points overall.
    pub fn decimated(&self, max_points: usize) -> RocCurve {
        let n = self.points.len();
        if n <= max_points || max_points < 2 {
            return self.clone();
        }
        let points = (0..max_points)
            .map(|i| self.points[i * (n - 1) / (max_points - 1)])
            .collect();
        RocCurve {
            points,
            auc: self.auc,
        }
    }

    /// TPR at `fpr`, linear between points and the upper value on
    /// vertical steps.
    fn tpr_at(&self, fpr: f64) -> f64 {
        let p = &self.points;
        let idx = p.partition_point(|&(x, _)| x <= fpr);
        if idx == 0 {
            return p[0].1;
        }
        if idx == p.len() {
            return p[p.len() - 1].1;
        }
        let (x0, y0) = p[idx - 1];
        let (x1, y1) = p[idx];
        if x1 == x0 {
            y1
        } else {
            y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
        }
    }
}

/// Binary ROC from `(score, is_positive)` pairs; `None` without both
/// positives and negatives.
pub fn binary_roc(pairs: &mut [(f64, bool)]) -> Option<RocCurve> {
    let pos = pairs.iter().filter(|p| p.1).count() as f64;
    let neg = pairs.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / neg, tp / pos));
    }
    let auc = trapezoid(&points);
    Some(RocCurve { points, auc })
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Points of the common FPR grid used for the macro-average curve.
pub const MACRO_GRID: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSet {
    /// One-vs-rest per class; absent when a class has no reference samples
    /// (or no negatives).
    pub per_class: Vec<Option<RocCurve>>,
    pub micro: Option<RocCurve>,
    pub macro_avg: Option<RocCurve>,
}

impl RocSet {
    pub fn decimated(&self, max_points: usize) -> RocSet {
        let d = |c: &Option<RocCurve>| c.as_ref().map(|c| c.decimated(max_points));
        RocSet {
            per_class: self.per_class.iter().map(d).collect(),
            micro: d(&self.micro),
            macro_avg: d(&self.macro_avg),
        }
    }
}

/// `scores` holds `N_CLASSES` values per sample, row-major.
pub fn roc_auc(truth: &[SampleClass], scores: &[f64]) -> Result<RocSet> {
    if scores.len() != truth.len() * N_CLASSES {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: scores.len() / N_CLASSES,
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::BadScores);
    }
    let per_class: Vec<Option<RocCurve>> = (0..N_CLASSES)
        .map(|c| {
            let mut pairs: Vec<(f64, bool)> = truth
                .iter()
                .zip(scores.chunks_exact(N_CLASSES))
                .map(|(t, row)| (row[c], t.code() == c))
                .collect();
            binary_roc(&mut pairs)
        })
        .collect();
    let mut pooled: Vec<(f64, bool)> = truth
        .iter()
        .zip(scores.chunks_exact(N_CLASSES))
        .flat_map(|(t, row)| row.iter().enumerate().map(move |(c, &s)| (s, t.code() == c)))
        .collect();
    let micro = binary_roc(&mut pooled);
    let present: Vec<&RocCurve> = per_class.iter().flatten().collect();
    let macro_avg = (!present.is_empty()).then(|| {
        let mut points = vec![(0.0, 0.0)];
        for g in 0..MACRO_GRID {
            let x = g as f64 / (MACRO_GRID - 1) as f64;
            let y = present.iter().map(|c| c.tpr_at(x)).sum::<f64>() / present.len() as f64;
            points.push((x, y));
        }
        let auc = trapezoid(&points);
        RocCurve { points, auc }
    });
    Ok(RocSet {
        per_class,
        micro,
        macro_avg,
    })
}

/// Tolerance in whole samples; 150 ms at 250 Hz is 37.
pub fn tolerance_samples(tolerance_s: f64, fs: f64) -> usize {
    (tolerance_s * fs + 1e-9).floor().max(0.0) as usize
}

pub const DEFAULT_TOLERANCE_S: f64 = 0.150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatMatchResult {
    pub tolerance_samples: usize,
    pub n_beats: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(reference index, predicted index)` of every matched pair.
    #[serde(skip)]
    pub pairs: Vec<(usize, usize)>,
}

impl BeatMatchResult {
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp as u64, (self.tp + self.fn_) as u64)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp as u64, (self.tp + self.fp) as u64)
    }

    /// `100 (FP + FN) / n_beats`
    pub fn error_rate(&self) -> Option<f64> {
        ratio(100 * (self.fp + self.fn_) as u64, self.n_beats as u64)
    }

    pub fn merge(&mut self, other: &BeatMatchResult) {
        self.n_beats += other.n_beats;
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// One-to-one matching of sorted event lists within `±tol` samples.
///
/// Among all matchings with the most pairs, the one with the smallest
/// total distance is chosen, ties going to earlier references. Events are
/// processed in clusters linked by gaps of at most `tol`, each solved by
/// dynamic programming over the two lists.
pub fn match_events(reference: &[usize], predicted: &[usize], tol: usize) -> BeatMatchResult {
    let mut r = reference.to_vec();
    let mut p = predicted.to_vec();
    r.sort_unstable();
    p.sort_unstable();
    let mut merged: Vec<(usize, bool)> = r.iter().map(|&v| (v, true)).chain(p.iter().map(|&v| (v, false))).collect();
    merged.sort_unstable();
    let mut pairs = Vec::new();
    let (mut ri, mut pi) = (0, 0);
    let mut start = 0;
    while start < merged.len() {
        let mut end = start + 1;
        while end < merged.len() && merged[end].0 - merged[end - 1].0 <= tol {
            end += 1;
        }
        let nr = merged[start..end].iter().filter(|e| e.1).count();
        let np = end - start - nr;
        if nr > 0 && np > 0 {
            for (a, b) in match_cluster(&r[ri..ri + nr], &p[pi..pi + np], tol) {
                pairs.push((ri + a, pi + b));
            }
        }
        ri += nr;
        pi += np;
        start = end;
    }
    let tp = pairs.len();
    BeatMatchResult {
        tolerance_samples: tol,
        n_beats: r.len(),
        tp,
        fp: p.len() - tp,
        fn_: r.len() - tp,
        pairs,
    }
}

fn match_cluster(r: &[usize], p: &[usize], tol: usize) -> Vec<(usize, usize)> {
    let (n, m) = (r.len(), p.len());
    // score = (pairs, -distance); larger is better
    let mut best = vec![(0usize, 0i64); (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        for j in 1..=m {
            let mut s = best[at(i - 1, j)].max(best[at(i, j - 1)]);
            let d = r[i - 1].abs_diff(p[j - 1]);
            if d <= tol {
                let (c, neg) = best[at(i - 1, j - 1)];
                s = s.max((c + 1, neg - d as i64));
            }
            best[at(i, j)] = s;
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let here = best[at(i, j)];
        if best[at(i, j - 1)] == here {
            j -= 1;
        } else if best[at(i - 1, j)] == here {
            i -= 1;
        } else {
            out.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Beat-level QRS scoring with a tolerance in seconds.
pub fn match_beats(reference: &[usize], predicted: &[usize], tolerance_s: f64, fs: f64) -> Result<BeatMatchResult> {
    if !(tolerance_s > 0.0) || !(fs > 0.0) {
        return Err(EvalError::Tolerance);
    }
    Ok(match_events(reference, predicted, tolerance_samples(tolerance_s, fs)))
}

/// Wave boundary landmarks scored per column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fiducial {
    POn,
    PPeak,
    PEnd,
    QrsOn,
    QrsEnd,
    TPeak,
    TEnd,
}

impl Fiducial {
    pub const ALL: [Fiducial; 7] = [
        Fiducial::POn,
        Fiducial::PPeak,
        Fiducial::PEnd,
        Fiducial::QrsOn,
        Fiducial::QrsEnd,
        Fiducial::TPeak,
        Fiducial::TEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fiducial::POn => "P_on",
            Fiducial::PPeak => "P_peak",
            Fiducial::PEnd => "P_end",
            Fiducial::QrsOn => "QRS_on",
            Fiducial::QrsEnd => "QRS_end",
            Fiducial::TPeak => "T_peak",
            Fiducial::TEnd => "T_end",
        }
    }

    pub fn class(self) -> SampleClass {
        match self {
            Fiducial::POn | Fiducial::PPeak | Fiducial::PEnd => SampleClass::P,
            Fiducial::QrsOn | Fiducial::QrsEnd => SampleClass::Qrs,
            Fiducial::TPeak | Fiducial::TEnd => SampleClass::T,
        }
    }

    fn of_prediction(self, w: &WaveSegment) -> usize {
        match self {
            Fiducial::POn | Fiducial::QrsOn => w.onset,
            Fiducial::PPeak | Fiducial::TPeak => w.peak,
            Fiducial::PEnd | Fiducial::QrsEnd | Fiducial::TEnd => w.offset,
        }
    }

    fn of_reference(self, w: &AnnotatedWave) -> Option<usize> {
        let v = match self {
            Fiducial::POn | Fiducial::QrsOn => w.onset,
            Fiducial::PPeak | Fiducial::TPeak => Some(w.peak),
            Fiducial::PEnd | Fiducial::QrsEnd | Fiducial::TEnd => w.offset,
        };
        v.map(|x| x as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub fiducial: Fiducial,
    pub result: BeatMatchResult,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
}

/// Scores every fiducial column independently. When `window` is given
/// (inclusive sample bounds), events outside it are ignored on both sides,
/// so partially annotated records are not charged for unannotated beats.
pub fn boundary_metrics(
    predicted: &[WaveSegment],
    reference: &[AnnotatedWave],
    tol: usize,
    window: Option<(usize, usize)>,
) -> Vec<BoundaryRow> {
    let inside = |x: &usize| window.is_none_or(|(a, b)| (a..=b).contains(x));
    Fiducial::ALL
        .iter()
        .map(|&f| {
            let r: Vec<usize> = reference
                .iter()
                .filter(|w| w.class == f.class())
                .filter_map(|w| f.of_reference(w))
                .filter(inside)
                .collect();
            let p: Vec<usize> = predicted
                .iter()
                .filter(|w| w.class == f.class())
                .map(|w| f.of_prediction(w))
                .filter(inside)
                .collect();
            let result = match_events(&r, &p, tol);
            BoundaryRow {
                fiducial: f,
                sensitivity: result.sensitivity(),
                precision: result.precision(),
                result,
            }
        })
        .collect()
}

/// Sums per-record boundary rows column by column.
pub fn merge_boundary_rows(acc: &mut Vec<BoundaryRow>, rows: &[BoundaryRow]) {
    if acc.is_empty() {
        acc.extend(rows.iter().cloned());
    } else {
        for (a, r) in acc.iter_mut().zip(rows) {
            a.result.merge(&r.result);
        }
    }
    for a in acc.iter_mut() {
        a.sensitivity = a.result.sensitivity();
        a.precision = a.result.precision();
    }
}

/// Everything one evaluation produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub metrics: ClassMetrics,
    pub averaged: AveragedMetrics,
    pub roc: Option<RocSet>,
    pub tolerance_ms: Option<f64>,
    pub beats: Option<BeatMatchResult>,
    pub boundaries: Vec<BoundaryRow>,
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        Self {
            confusion: cm,
            metrics: class_metrics(&cm, 1.0, FScoreMode::AsWritten),
            averaged: averaged_metrics(&cm),
            roc: None,
            tolerance_ms: None,
            beats: None,
            boundaries: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-class rows: class, TP, FP, FN, TN, Se, P+, F, AUC.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,tp,fp,fn,tn,sensitivity,precision,f_score,auc")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for (i, s) in self.metrics.classes.iter().enumerate() {
            let auc = self
                .roc
                .as_ref()
                .and_then(|r| r.per_class[i].as_ref())
                .map(|c| c.auc);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.class,
                s.tp,
                s.fp,
                s.fn_,
                s.tn,
                opt(s.sensitivity),
                opt(s.precision),
                opt(s.f_score),
                opt(auc)
            )?;
        }
        Ok(())
    }

    /// Long-format ROC points: curve, fpr, tpr.
    pub fn write_roc_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "curve,fpr,tpr")?;
        if let Some(roc) = &self.roc {
            let named = SampleClass::ALL
                .iter()
                .map(|c| c.name())
                .zip(&roc.per_class)
                .chain([("micro", &roc.micro), ("macro", &roc.macro_avg)]);
            for (name, curve) in named {
                for (x, y) in curve.iter().flat_map(|c| &c.points) {
                    writeln!(w, "{name},{x:.6},{y:.6}")?;
                }
            }
        }
        Ok(())
    }

    /// Fiducial columns plus the beat row, with counts, Se and P+ in percent.
    pub fn write_boundaries_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "fiducial,n_ref,tp,fp,fn,sensitivity_pct,precision_pct,error_pct")?;
        let pct = |v: Option<f64>| v.map_or(String::new(), |x| format!("{:.2}", 100.0 * x));
        let rows = self
            .boundaries
            .iter()
            .map(|b| (b.fiducial.name(), &b.result))
            .chain(self.beats.iter().map(|b| ("beats", b)));
        for (name, r) in rows {
            writeln!(
                w,
                "{name},{},{},{},{},{},{},{}",
                r.n_beats,
                r.tp,
                r.fp,
                r.fn_,
                pct(r.sensitivity()),
                pct(r.precision()),
                r.error_rate().map_or(String::new(), |e| format!("{e:.2}"))
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SampleClass::*;

    #[test]
    fn diagonal_for_perfect_prediction() {
        let y = [P, Qrs, T, Nw, Nw, Qrs];
        let cm = ConfusionMatrix::from_labels(&y, &y).unwrap();
        assert_eq!(cm.trace(), 6);
        let m = class_metrics(&cm, 1.0, FScoreMode::AsWritten);
        for s in &m.classes {
            assert_eq!(s.sensitivity, Some(1.0));
            assert_eq!(s.precision, Some(1.0));
            assert_eq!(s.f_score, Some(1.0));
        }
        assert_eq!(m.accuracy, Some(1.0));
    }

    #[test]
    fn single_off_diagonal_cell() {
        let cm = ConfusionMatrix::from_labels(&[Nw; 5], &[P; 5]).unwrap();
        assert_eq!(cm.counts[Nw.code()][P.code()], 5);
        assert_eq!(cm.total(), 5);
        assert!(ConfusionMatrix::from_labels(&[Nw; 2], &[P; 3]).is_err());
    }

    #[test]
    fn substitution() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0][0] = 9;
        cm.counts[0][3] = 1;
        cm.counts[3][0] = 1;
        cm.counts[3][3] = 5;
        let m = class_metrics(&cm, 1.0, FScoreMode::AsWritten);
        let p = &m.classes[0];
        assert_eq!((p.tp, p.fn_, p.fp), (9, 1, 1));
        assert!((p.sensitivity.unwrap() - 0.9).abs() < 1e-15);
        assert!((p.precision.unwrap() - 0.9).abs() < 1e-15);
        assert!((p.f_score.unwrap() - 0.9).abs() < 1e-15);
        let absent = &m.classes[1];
        assert_eq!(absent.sensitivity, None);
        assert_eq!(absent.precision, None);
        assert_eq!(absent.f_score, None);
    }

    #[test]
    fn f_modes_agree_at_beta_one_only() {
        let a = f_score(0.8, 0.6, 1.0, FScoreMode::AsWritten).unwrap();
        let b = f_score(0.8, 0.6, 1.0, FScoreMode::Standard).unwrap();
        assert_eq!(a, b);
        assert!((a - 2.0 * 0.8 * 0.6 / 1.4).abs() < 1e-12);
        let a = f_score(0.8, 0.6, 2.0, FScoreMode::AsWritten).unwrap();
        let b = f_score(0.8, 0.6, 2.0, FScoreMode::Standard).unwrap();
        assert!((a - 3.0 * 0.48 / 3.8).abs() < 1e-12);
        assert!((b - 5.0 * 0.48 / 3.8).abs() < 1e-12);
    }

    #[test]
    fn macro_mean_of_two_classes() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0][0] = 10;
        cm.counts[1][0] = 10;
        let a = averaged_metrics(&cm);
        assert_eq!(a.macro_sensitivity, Some(0.5));
        assert_eq!(a.macro_sensitivity_classes, 2);
        assert_eq!(a.micro_sensitivity, Some(0.5));
        assert_eq!(a.micro_precision, Some(0.5));
    }

    #[test]
    fn perfect_and_reversed_auc() {
        let truth = [P, Qrs, T, Nw, P, Qrs, T, Nw];
        let scores: Vec<f64> = truth
            .iter()
            .flat_map(|t| (0..4).map(move |c| if c == t.code() { 0.9 } else { 0.1 / 3.0 }))
            .collect();
        let roc = roc_auc(&truth, &scores).unwrap();
        for c in &roc.per_class {
            assert_eq!(c.as_ref().unwrap().auc, 1.0);
        }
        let rev: Vec<f64> = scores.iter().map(|s| -s).collect();
        let roc = roc_auc(&truth, &rev).unwrap();
        for c in &roc.per_class {
            assert_eq!(c.as_ref().unwrap().auc, 0.0);
        }
        let c = roc.per_class[0].as_ref().unwrap();
        assert_eq!(c.points[0], (0.0, 0.0));
        assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn absent_class_has_no_curve() {
        let truth = [P, P, Nw, Nw];
        let scores = vec![0.25; 16];
        let roc = roc_auc(&truth, &scores).unwrap();
        assert!(roc.per_class[1].is_none());
        assert!(roc.per_class[0].is_some());
        assert_eq!(roc.per_class[0].as_ref().unwrap().auc, 0.5);
    }

    #[test]
    fn beat_matching_examples() {
        let r = match_events(&[10, 500, 900], &[10, 500, 900], 37);
        assert_eq!((r.tp, r.fp, r.fn_), (3, 0, 0));
        assert_eq!(r.error_rate(), Some(0.0));
        assert_eq!(tolerance_samples(0.150, 250.0), 37);
        let r = match_beats(&[1000], &[1030], 0.150, 250.0).unwrap();
        assert_eq!(r.tp, 1);
        let r = match_beats(&[1000, 2000], &[1500], 0.150, 250.0).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 2));
    }

    #[test]
    fn matching_prefers_more_pairs() {
        // nearest-first would pair 15 with 20 and leave 0 and 30 single
        let r = match_events(&[0, 20], &[15, 30], 16);
        assert_eq!(r.tp, 2);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        let s = match_events(&[15, 30], &[0, 20], 16);
        assert_eq!(s.tp, 2);
    }

    #[test]
    fn matching_prefers_closer_pairs() {
        let r = match_events(&[100], &[90, 105], 20);
        assert_eq!(r.pairs, vec![(0, 1)]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
    }

    fn wave(class: SampleClass, onset: usize, peak: usize, offset: usize) -> (WaveSegment, AnnotatedWave) {
        (
            WaveSegment {
                class,
                onset,
                peak,
                offset,
            },
            AnnotatedWave {
                class,
                onset: Some(onset as u64),
                peak: peak as u64,
                offset: Some(offset as u64),
            },
        )
    }

    #[test]
    fn boundaries() {
        let (pred, refs): (Vec<_>, Vec<_>) = (0..10)
            .flat_map(|b| {
                let o = 1000 * b + 100;
                [wave(P, o, o + 20, o + 40), wave(Qrs, o + 80, o + 90, o + 100), wave(T, o + 200, o + 250, o + 300)]
            })
            .unzip();
        let rows = boundary_metrics(&pred, &refs, 37, None);
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r.sensitivity == Some(1.0) && r.precision == Some(1.0)));

        let mut missing = pred.clone();
        missing.remove(0);
        let rows = boundary_metrics(&missing, &refs, 37, None);
        assert_eq!(rows[0].fiducial, Fiducial::POn);
        assert!((rows[0].sensitivity.unwrap() - 0.9).abs() < 1e-12);

        let shifted: Vec<WaveSegment> = pred
            .iter()
            .map(|w| WaveSegment {
                onset: w.onset + 38,
                peak: w.peak + 38,
                offset: w.offset + 38,
                ..*w
            })
            .collect();
        let rows = boundary_metrics(&shifted, &refs, 37, None);
        assert!(rows.iter().all(|r| r.sensitivity == Some(0.0)));

        let rows = boundary_metrics(&pred, &refs[..3], 37, Some((0, 999)));
        assert!(rows.iter().all(|r| r.result.fp == 0 && r.result.tp == 1));
    }

    #[test]
    fn report_exports() {
        let truth = [P, Qrs, T, Nw];
        let cm = ConfusionMatrix::from_labels(&truth, &truth).unwrap();
        let mut rep = EvalReport::from_confusion(cm);
        rep.roc = Some(roc_auc(&truth, &[0.7, 0.1, 0.1, 0.1, 0.1, 0.7, 0.1, 0.1, 0.1, 0.1, 0.7, 0.1, 0.1, 0.1, 0.1, 0.7]).unwrap());
        rep.beats = Some(match_events(&[1, 2], &[1], 0));
        let mut buf = Vec::new();
        rep.write_metrics_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "QRS,1,0,0,3,1.000000,1.000000,1.000000,1.000000");
        let mut buf = Vec::new();
        rep.write_boundaries_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("beats,2,1,0,1,50.00,100.00,50.00"));
        let back: EvalReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back.confusion, rep.confusion);
    }
}
