//! Classification metrics and inter-annotator agreement.
//!
//! Zero-division conventions: precision (recall) with no predicted (gold)
//! positives is 0 and flagged; a kappa whose chance agreement is exactly 1 is
//! [`Kappa::Undefined`] rather than NaN.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::label::EmotionLabel;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{left} predictions but {right} gold labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("sample ids do not line up: {0}")]
    IdMismatch(String),
    #[error("invalid annotation table: {0}")]
    InvalidTable(String),
    #[error("annotation file: {0}")]
    Annotations(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 3×3 counts, rows = gold, columns = predicted, in [`EmotionLabel::ALL`]
/// order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_labels(predicted: &[EmotionLabel], gold: &[EmotionLabel]) -> Result<Self, EvalError> {
        if predicted.len() != gold.len() {
            return Err(EvalError::LengthMismatch {
                left: predicted.len(),
                right: gold.len(),
            });
        }
        let mut m = ConfusionMatrix::default();
        for (p, g) in predicted.iter().zip(gold) {
            m.counts[g.index()][p.index()] += 1;
        }
        Ok(m)
    }

    pub fn get(&self, gold: EmotionLabel, predicted: EmotionLabel) -> usize {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn gold_count(&self, l: EmotionLabel) -> usize {
        self.counts[l.index()].iter().sum()
    }

    pub fn predicted_count(&self, l: EmotionLabel) -> usize {
        self.counts.iter().map(|row| row[l.index()]).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("gold \\ pred    angry    calm   panic\n");
        for g in EmotionLabel::ALL {
            let r = &self.counts[g.index()];
            let _ = writeln!(s, "{:<12} {:>7} {:>7} {:>7}", g.as_str(), r[0], r[1], r[2]);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: EmotionLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    /// Precision or recall hit a zero denominator and was set to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn metrics(predicted: &[EmotionLabel], gold: &[EmotionLabel]) -> Result<MetricsReport, EvalError> {
    let cm = ConfusionMatrix::from_labels(predicted, gold)?;
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    Ok(metrics_from_confusion(&cm))
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> MetricsReport {
    let per_class: Vec<ClassMetrics> = EmotionLabel::ALL
        .iter()
        .map(|&l| {
            let tp = cm.get(l, l) as f64;
            let support = cm.gold_count(l);
            let predicted = cm.predicted_count(l);
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            ClassMetrics {
                label: l,
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                predicted,
                zero_division: predicted == 0 || support == 0,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    let n = cm.total();
    MetricsReport {
        n,
        accuracy: if n > 0 { cm.trace() as f64 / n as f64 } else { 0.0 },
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        confusion: *cm,
    }
}

/// Chance-corrected agreement; undefined when chance agreement is total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Value(f64),
    Undefined,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined => None,
        }
    }
}

impl std::fmt::Display for Kappa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kappa::Value(v) => write!(f, "{v:.4}"),
            Kappa::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Kappa {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Kappa::Value(v) => s.serialize_f64(*v),
            Kappa::Undefined => s.serialize_str("undefined"),
        }
    }
}

/// Per-item category counts. Row `i`, column `j` is how many raters put item
/// `i` in category `j`; every row sums to `n_raters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTable {
    rows: Vec<[u32; 3]>,
    n_raters: u32,
}

impl AnnotationTable {
    pub fn new(rows: Vec<[u32; 3]>) -> Result<Self, EvalError> {
        let n_raters = rows.first().map_or(0, |r| r.iter().sum());
        if n_raters < 2 {
            return Err(EvalError::InvalidTable("need at least two raters per item".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.iter().sum::<u32>() != n_raters) {
            return Err(EvalError::InvalidTable(format!(
                "row {i} sums to {} but row 0 sums to {n_raters}",
                rows[i].iter().sum::<u32>()
            )));
        }
        Ok(AnnotationTable { rows, n_raters })
    }

    pub fn from_annotations(items: &[[EmotionLabel; 3]]) -> Result<Self, EvalError> {
        Self::new(
            items
                .iter()
                .map(|labels| {
                    let mut row = [0u32; 3];
                    labels.iter().for_each(|l| row[l.index()] += 1);
                    row
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[[u32; 3]] {
        &self.rows
    }

    pub fn n_raters(&self) -> u32 {
        self.n_raters
    }
}

/// Fleiss' kappa `(P̄ − P̄e) / (1 − P̄e)` for a fixed number of raters.
pub fn fleiss_kappa(t: &AnnotationTable) -> Result<Kappa, EvalError> {
    let n_items = t.rows.len();
    if n_items < 2 {
        return Err(EvalError::InvalidTable(format!("need at least 2 items, got {n_items}")));
    }
    let n = t.n_raters as u64;
    // Per-item agreement numerators are integers; keep them exact.
    let agree: u64 = t
        .rows
        .iter()
        .map(|r| r.iter().map(|&c| c as u64 * c as u64).sum::<u64>() - n)
        .sum();
    let p_bar = agree as f64 / (n_items as u64 * n * (n - 1)) as f64;
    let total = (n_items as u64 * n) as f64;
    let p_e: f64 = (0..3)
        .map(|j| {
            let pj = t.rows.iter().map(|r| r[j] as u64).sum::<u64>() as f64 / total;
            pj * pj
        })
        .sum();
    if p_e >= 1.0 {
        return Ok(Kappa::Undefined);
    }
    Ok(Kappa::Value((p_bar - p_e) / (1.0 - p_e)))
}

/// Cohen's kappa `(p_o − p_e) / (1 − p_e)` between two raters.
pub fn cohens_kappa(a: &[EmotionLabel], b: &[EmotionLabel]) -> Result<Kappa, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(EvalError::InvalidTable(format!(
            "need at least 2 items, got {}",
            a.len()
        )));
    }
    let n = a.len() as u64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u64;
    let mut ca = [0u64; 3];
    let mut cb = [0u64; 3];
    a.iter().for_each(|l| ca[l.index()] += 1);
    b.iter().for_each(|l| cb[l.index()] += 1);
    let chance: u64 = (0..3).map(|k| ca[k] * cb[k]).sum();
    let p_o = agree as f64 / n as f64;
    let p_e = chance as f64 / (n * n) as f64;
    if p_e >= 1.0 {
        return Ok(Kappa::Undefined);
    }
    Ok(Kappa::Value((p_o - p_e) / (1.0 - p_e)))
}

/// Label held by at least two of three annotators; `None` on a three-way
/// split.
pub fn majority_label(labels: &[EmotionLabel; 3]) -> Option<EmotionLabel> {
    let [a, b, c] = *labels;
    if a == b || a == c {
        Some(a)
    } else if b == c {
        Some(b)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorAccuracy {
    pub overall: f64,
    /// Recall against each reference class; `None` when the reference has no
    /// item of that class.
    pub per_class: [Option<f64>; 3],
    pub scored: usize,
    pub excluded_no_majority: usize,
}

/// Agreement of one annotator with a reference, skipping items without a
/// majority.
pub fn annotator_accuracy(
    annotator: &[EmotionLabel],
    reference: &[Option<EmotionLabel>],
) -> Result<AnnotatorAccuracy, EvalError> {
    if annotator.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            left: annotator.len(),
            right: reference.len(),
        });
    }
    let mut hit = [0usize; 3];
    let mut tot = [0usize; 3];
    let mut excluded = 0;
    for (a, r) in annotator.iter().zip(reference) {
        match r {
            Some(r) => {
                tot[r.index()] += 1;
                if a == r {
                    hit[r.index()] += 1;
                }
            }
            None => excluded += 1,
        }
    }
    let scored: usize = tot.iter().sum();
    if scored == 0 {
        return Err(EvalError::Empty);
    }
    Ok(AnnotatorAccuracy {
        overall: hit.iter().sum::<usize>() as f64 / scored as f64,
        per_class: std::array::from_fn(|k| (tot[k] > 0).then(|| hit[k] as f64 / tot[k] as f64)),
        scored,
        excluded_no_majority: excluded,
    })
}

/// Full agreement picture for a three-annotator label set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub n_items: usize,
    pub fleiss: Kappa,
    pub cohen_ab: Kappa,
    pub cohen_ac: Kappa,
    pub cohen_bc: Kappa,
    /// Mean of the defined pairwise Cohen values.
    pub cohen_mean: Kappa,
    pub annotators: Vec<AnnotatorAccuracy>,
    pub no_majority_items: usize,
}

pub fn agreement_report(items: &[[EmotionLabel; 3]]) -> Result<AgreementReport, EvalError> {
    let table = AnnotationTable::from_annotations(items)?;
    let col = |k: usize| items.iter().map(|r| r[k]).collect::<Vec<_>>();
    let (a, b, c) = (col(0), col(1), col(2));
    let pairs = [cohens_kappa(&a, &b)?, cohens_kappa(&a, &c)?, cohens_kappa(&b, &c)?];
    let defined: Vec<f64> = pairs.iter().filter_map(|k| k.value()).collect();
    let cohen_mean = if defined.is_empty() {
        Kappa::Undefined
    } else {
        Kappa::Value(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let reference: Vec<Option<EmotionLabel>> = items.iter().map(majority_label).collect();
    let annotators = [a, b, c]
        .iter()
        .map(|labels| annotator_accuracy(labels, &reference))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AgreementReport {
        n_items: items.len(),
        fleiss: fleiss_kappa(&table)?,
        cohen_ab: pairs[0],
        cohen_ac: pairs[1],
        cohen_bc: pairs[2],
        cohen_mean,
        annotators,
        no_majority_items: reference.iter().filter(|r| r.is_none()).count(),
    })
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    sample_id: String,
    annotator_a: String,
    annotator_b: String,
    annotator_c: String,
}

/// Reads `sample_id,annotator_a,annotator_b,annotator_c` CSV.
pub fn read_annotations<R: std::io::Read>(input: R) -> Result<Vec<(String, [EmotionLabel; 3])>, EvalError> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(input)
        .deserialize::<AnnotationRow>()
        .enumerate()
    {
        let row = row?;
        let parse = |s: &str, col: &str| {
            s.parse::<EmotionLabel>()
                .map_err(|e| EvalError::Annotations(format!("row {} column {col}: {e}", i + 2)))
        };
        out.push((
            row.sample_id,
            [
                parse(&row.annotator_a, "annotator_a")?,
                parse(&row.annotator_b, "annotator_b")?,
                parse(&row.annotator_c, "annotator_c")?,
            ],
        ));
    }
    Ok(out)
}

/// Canonical row order for comparison tables.
pub const VERSION_ORDER: [&str; 6] = [
    "v1_basic",
    "v2_rules",
    "v3_refined",
    "v4_hybrid",
    "v5_auto",
    "text_baseline",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub version: String,
    pub accuracy_pct: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    #[serde(skip)]
    pub text: String,
}

/// Version-comparison table: accuracy in percent with two decimals,
/// macro precision/recall with two, macro F1 with three.
pub fn compare_report(runs: &[(String, MetricsReport)]) -> ComparisonTable {
    let rank = |v: &str| {
        VERSION_ORDER
            .iter()
            .position(|&o| o == v)
            .unwrap_or(VERSION_ORDER.len())
    };
    let mut idx: Vec<usize> = (0..runs.len()).collect();
    idx.sort_by_key(|&i| (rank(&runs[i].0), i));
    let rows: Vec<ComparisonRow> = idx
        .into_iter()
        .map(|i| {
            let (v, m) = &runs[i];
            ComparisonRow {
                version: v.clone(),
                accuracy_pct: m.accuracy * 100.0,
                precision: m.macro_precision,
                recall: m.macro_recall,
                f1: m.macro_f1,
                n: m.n,
            }
        })
        .collect();
    let mut text = format!(
        "{:<14} {:>8} {:>6} {:>6} {:>7}\n",
        "Version", "Acc (%)", "Prec", "Rec", "F1"
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<14} {:>8.2} {:>6.2} {:>6.2} {:>7.3}",
            r.version, r.accuracy_pct, r.precision, r.recall, r.f1
        );
    }
    ComparisonTable { rows, text }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::{Angry as A, Calm as C, Panic as P};

    #[test]
    fn perfect_predictions() {
        let g = [A, C, P, P];
        let m = metrics(&g, &g).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn nine_sample_hand_fixture() {
        // Gold three per class; one error each: A→P, C→P, P→A.
        let gold = [A, A, A, C, C, C, P, P, P];
        let pred = [A, A, P, C, C, P, P, P, A];
        let m = metrics(&pred, &gold).unwrap();
        assert!((m.accuracy - 6.0 / 9.0).abs() < 1e-15);
        let expect = [
            (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0),
            (1.0, 2.0 / 3.0, 0.8),
            (0.5, 2.0 / 3.0, 4.0 / 7.0),
        ];
        for (c, (p, r, f)) in m.per_class.iter().zip(expect) {
            assert!((c.precision - p).abs() < 1e-12, "{c:?}");
            assert!((c.recall - r).abs() < 1e-12, "{c:?}");
            assert!((c.f1 - f).abs() < 1e-12, "{c:?}");
        }
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.8 + 4.0 / 7.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_predicted_positives_flagged() {
        let m = metrics(&[A, A], &[A, C]).unwrap();
        let calm = &m.per_class[1];
        assert_eq!(calm.precision, 0.0);
        assert!(calm.zero_division);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(metrics(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(metrics(&[A], &[A, C]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn fleiss_four_item_fixture() {
        // P_i = 1, 1, 1, 0 so P̄ = 3/4; p_j = 1/3 each so P̄e = 1/3;
        // κ = (3/4 − 1/3) / (2/3) = 5/8.
        let t = AnnotationTable::new(vec![[3, 0, 0], [0, 3, 0], [0, 0, 3], [1, 1, 1]]).unwrap();
        let k = fleiss_kappa(&t).unwrap().value().unwrap();
        assert!((k - 0.625).abs() < 1e-10);
    }

    #[test]
    fn fleiss_unanimous_mixed_is_one() {
        let t = AnnotationTable::new(vec![[3, 0, 0], [0, 3, 0], [3, 0, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&t).unwrap(), Kappa::Value(1.0));
    }

    #[test]
    fn fleiss_single_category_is_undefined() {
        let t = AnnotationTable::new(vec![[0, 3, 0], [0, 3, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&t).unwrap(), Kappa::Undefined);
    }

    #[test]
    fn invalid_tables() {
        assert!(AnnotationTable::new(vec![[3, 0, 0], [1, 1, 0]]).is_err());
        let one = AnnotationTable::new(vec![[3, 0, 0]]).unwrap();
        assert!(matches!(fleiss_kappa(&one), Err(EvalError::InvalidTable(_))));
    }

    #[test]
    fn cohen_six_item_fixture() {
        // 4 agreements: p_o = 2/3. Marginals a = (2,2,2), b = (2,3,1):
        // p_e = (4 + 6 + 2) / 36 = 1/3, κ = (2/3 − 1/3) / (2/3) = 1/2.
        let a = [A, A, C, C, P, P];
        let b = [A, C, C, C, P, A];
        let k = cohens_kappa(&a, &b).unwrap().value().unwrap();
        assert!((k - 0.5).abs() < 1e-12);
        assert_eq!(cohens_kappa(&b, &a).unwrap().value().unwrap(), k);
    }

    #[test]
    fn cohen_identity_and_degenerate() {
        assert_eq!(cohens_kappa(&[A, C, C], &[A, C, C]).unwrap(), Kappa::Value(1.0));
        assert_eq!(cohens_kappa(&[C, C], &[C, C]).unwrap(), Kappa::Undefined);
        assert!(matches!(
            cohens_kappa(&[A], &[A, C]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn majority_cases() {
        assert_eq!(majority_label(&[A, A, C]), Some(A));
        assert_eq!(majority_label(&[C, A, A]), Some(A));
        assert_eq!(majority_label(&[A, C, P]), None);
        assert_eq!(majority_label(&[P, P, P]), Some(P));
    }

    #[test]
    fn annotator_accuracy_planted_disagreements() {
        // Items: (A,A,C) (C,C,C) (P,A,P) (A,C,P) (P,P,C) (C,C,A)
        // Majorities: A, C, P, none, P, C
        let items = [[A, A, C], [C, C, C], [P, A, P], [A, C, P], [P, P, C], [C, C, A]];
        let reference: Vec<_> = items.iter().map(majority_label).collect();
        let third: Vec<_> = items.iter().map(|r| r[2]).collect();
        let acc = annotator_accuracy(&third, &reference).unwrap();
        // Annotator C on scored items: C≠A, C=C, P=P, C≠P, A≠C → 2/5.
        assert_eq!(acc.scored, 5);
        assert_eq!(acc.excluded_no_majority, 1);
        assert!((acc.overall - 0.4).abs() < 1e-15);
        assert_eq!(acc.per_class, [Some(0.0), Some(0.5), Some(0.5)]);

        let first: Vec<_> = items.iter().map(|r| r[0]).collect();
        let acc = annotator_accuracy(&first, &reference).unwrap();
        assert!((acc.overall - 1.0).abs() < 1e-15);
    }

    #[test]
    fn compare_orders_versions() {
        let m = metrics(&[A, C, P], &[A, C, C]).unwrap();
        let runs: Vec<(String, MetricsReport)> = ["v5_auto", "v2_rules", "v4_hybrid", "v1_basic", "v3_refined"]
            .iter()
            .map(|v| (v.to_string(), m.clone()))
            .collect();
        let t = compare_report(&runs);
        let order: Vec<&str> = t.rows.iter().map(|r| r.version.as_str()).collect();
        assert_eq!(order, ["v1_basic", "v2_rules", "v3_refined", "v4_hybrid", "v5_auto"]);
        assert_eq!(t.text.lines().count(), 6);
    }

    #[test]
    fn compare_formatting() {
        // 85.13 % accuracy, F1 0.847 style rounding.
        let mut m = metrics(&[A], &[A]).unwrap();
        m.accuracy = 0.85134;
        m.macro_precision = 0.8512;
        m.macro_recall = 0.849;
        m.macro_f1 = 0.84712;
        let t = compare_report(&[("v4_hybrid".into(), m)]);
        let line = t.text.lines().nth(1).unwrap();
        assert_eq!(
            line.split_whitespace().collect::<Vec<_>>(),
            ["v4_hybrid", "85.13", "0.85", "0.85", "0.847"]
        );
    }

    #[test]
    fn annotation_csv() {
        let csv = "sample_id,annotator_a,annotator_b,annotator_c\ns1,angry,angry,calm\ns2,calm,Calm,CALM\n";
        let rows = read_annotations(csv.as_bytes()).unwrap();
        assert_eq!(rows[1].1, [C, C, C]);
        let bad = "sample_id,annotator_a,annotator_b,annotator_c\ns1,angry,sad,calm\n";
        let e = read_annotations(bad.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("annotator_b"), "{e}");
    }
}
