//! Error matrices and accuracy metrics, and the side-by-side comparison of an
//! optical-only and a fused classification.
//!
//! Matrix rows are reference (true) classes and columns are predicted classes,
//! both in ascending class-id order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cart::DecisionTree;
use crate::error::{Error, Result};
use crate::raster::Legend;
use crate::samples::LabeledVectors;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub legend: Legend,
    /// `counts[i][j]`: rows of reference class `i` predicted as class `j`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(legend: Legend) -> Self {
        let k = legend.len();
        ConfusionMatrix {
            legend,
            counts: vec![vec![0; k]; k],
        }
    }

    /// Tally `(reference, predicted)` class-id pairs.
    pub fn from_pairs(legend: Legend, pairs: impl IntoIterator<Item = (u8, u8)>) -> Result<Self> {
        let mut m = ConfusionMatrix::zeros(legend);
        for (truth, pred) in pairs {
            let i = m.index(truth)?;
            let j = m.index(pred)?;
            m.counts[i][j] += 1;
        }
        Ok(m)
    }

    fn index(&self, id: u8) -> Result<usize> {
        self.legend
            .index_of(id)
            .ok_or_else(|| Error::LegendMismatch(format!("class {id} not in legend")))
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

/// Error matrix of `tree` on labelled validation vectors.
pub fn confusion_matrix(tree: &DecisionTree, v: &LabeledVectors) -> Result<ConfusionMatrix> {
    if v.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    if v.band_names != tree.bands {
        return Err(Error::BandOrderMismatch {
            expected: tree.bands.clone(),
            found: v.band_names.clone(),
        });
    }
    if v.legend != tree.legend {
        return Err(Error::LegendMismatch(
            "validation legend differs from the model's".into(),
        ));
    }
    let pairs = v
        .rows
        .iter()
        .map(|r| Ok((r.y, tree.predict(&r.x)?)))
        .collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_pairs(tree.legend.clone(), pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: u8,
    pub name: String,
    /// Reference samples of this class (row sum).
    pub reference: u64,
    /// Samples predicted as this class (column sum).
    pub predicted: u64,
    /// Recall; absent when the class has no reference samples.
    pub producers: Option<f64>,
    /// Precision; absent when nothing was predicted as this class.
    pub users: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall_accuracy: f64,
    /// Cohen's kappa; absent when chance agreement is 1.
    pub kappa: Option<f64>,
    pub total: u64,
    pub classes: Vec<ClassAccuracy>,
    pub matrix: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn accuracy_metrics(m: &ConfusionMatrix) -> Result<AccuracyReport> {
    let total = m.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let rows = m.row_sums();
    let cols = m.col_sums();
    let t = total as f64;
    let p_o = m.trace() as f64 / t;
    let p_e: f64 = rows
        .iter()
        .zip(&cols)
        .map(|(&r, &c)| r as f64 * c as f64)
        .sum::<f64>()
        / (t * t);
    let kappa = (p_e < 1.0).then(|| (p_o - p_e) / (1.0 - p_e));
    let classes = m
        .legend
        .0
        .iter()
        .enumerate()
        .map(|(i, (&id, name))| ClassAccuracy {
            class_id: id,
            name: name.clone(),
            reference: rows[i],
            predicted: cols[i],
            producers: ratio(m.counts[i][i], rows[i]),
            users: ratio(m.counts[i][i], cols[i]),
        })
        .collect();
    Ok(AccuracyReport {
        overall_accuracy: p_o,
        kappa,
        total,
        classes,
        matrix: m.clone(),
    })
}

fn fmt3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl AccuracyReport {
    /// Aligned plain-text rendering, accuracies to three decimals.
    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        let names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(9);
        let _ = writeln!(s, "{title}");
        let _ = writeln!(s, "error matrix (rows = reference, columns = predicted)");
        let _ = write!(s, "{:<w$}", "");
        for n in &names {
            let _ = write!(s, " {n:>w$}");
        }
        let _ = writeln!(s, " {:>w$}", "total");
        for (c, row) in self.classes.iter().zip(&self.matrix.counts) {
            let _ = write!(s, "{:<w$}", c.name);
            for v in row {
                let _ = write!(s, " {v:>w$}");
            }
            let _ = writeln!(s, " {:>w$}", c.reference);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<w$} {:>10} {:>10}", "class", "producer's", "user's");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<w$} {:>10} {:>10}",
                c.name,
                fmt3(c.producers),
                fmt3(c.users)
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "overall accuracy {:.3} ({:.1}%) on {} samples",
            self.overall_accuracy,
            self.overall_accuracy * 100.0,
            self.total
        );
        let _ = writeln!(s, "kappa            {}", fmt3(self.kappa));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    pub class_id: u8,
    pub name: String,
    pub producers_optical: Option<f64>,
    pub producers_fused: Option<f64>,
    pub users_optical: Option<f64>,
    pub users_fused: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub optical_overall: f64,
    pub fused_overall: f64,
    /// `fused - optical`; negative when fusion did not help.
    pub overall_delta: f64,
    pub optical_kappa: Option<f64>,
    pub fused_kappa: Option<f64>,
    pub classes: Vec<ClassComparison>,
    pub optical: AccuracyReport,
    pub fused: AccuracyReport,
}

pub fn compare_report(optical: &AccuracyReport, fused: &AccuracyReport) -> Result<Comparison> {
    if optical.matrix.legend != fused.matrix.legend {
        return Err(Error::LegendMismatch(
            "optical and fused reports use different legends".into(),
        ));
    }
    let classes = optical
        .classes
        .iter()
        .zip(&fused.classes)
        .map(|(o, f)| ClassComparison {
            class_id: o.class_id,
            name: o.name.clone(),
            producers_optical: o.producers,
            producers_fused: f.producers,
            users_optical: o.users,
            users_fused: f.users,
        })
        .collect();
    Ok(Comparison {
        optical_overall: optical.overall_accuracy,
        fused_overall: fused.overall_accuracy,
        overall_delta: fused.overall_accuracy - optical.overall_accuracy,
        optical_kappa: optical.kappa,
        fused_kappa: fused.kappa,
        classes,
        optical: optical.clone(),
        fused: fused.clone(),
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = self
            .classes
            .iter()
            .map(|c| c.name.len() + 11)
            .max()
            .unwrap_or(0)
            .max(16);
        let _ = writeln!(
            s,
            "{:<w$} {:>9} {:>9} {:>9}",
            "metric", "optical", "fused", "delta"
        );
        let delta = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => format!("{:+.3}", b - a),
            _ => "-".into(),
        };
        let _ = writeln!(
            s,
            "{:<w$} {:>9.3} {:>9.3} {:>+9.3}",
            "overall accuracy", self.optical_overall, self.fused_overall, self.overall_delta
        );
        let _ = writeln!(
            s,
            "{:<w$} {:>9} {:>9} {:>9}",
            "kappa",
            fmt3(self.optical_kappa),
            fmt3(self.fused_kappa),
            delta(self.optical_kappa, self.fused_kappa)
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<w$} {:>9} {:>9} {:>9}",
                format!("{} producer's", c.name),
                fmt3(c.producers_optical),
                fmt3(c.producers_fused),
                delta(c.producers_optical, c.producers_fused)
            );
            let _ = writeln!(
                s,
                "{:<w$} {:>9} {:>9} {:>9}",
                format!("{} user's", c.name),
                fmt3(c.users_optical),
                fmt3(c.users_fused),
                delta(c.users_optical, c.users_fused)
            );
        }
        s
    }
}
