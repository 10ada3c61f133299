//! Scene completion (occupied vs empty) and semantic scene completion
//! (per-class IoU) scores over an evaluation region.
//!
//! Conventions: a ratio with zero denominator is 1 (nothing to get wrong);
//! classes absent from both prediction and ground truth inside the region
//! are left out of the SSC average.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::voxcore::{LabelVolume, Visibility, EMPTY};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction grid {pred:?} (C={pred_c}) does not match ground truth {gt:?} (C={gt_c})")]
    Shape {
        pred: [usize; 3],
        gt: [usize; 3],
        pred_c: usize,
        gt_c: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Occluded,
    ObservedAndOccluded,
    AllInView,
}

impl Region {
    pub fn contains(self, v: Visibility) -> bool {
        match self {
            Region::Occluded => v == Visibility::Occluded,
            Region::ObservedAndOccluded | Region::AllInView => v != Visibility::OutOfView,
        }
    }
}

impl std::str::FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "occluded" => Ok(Region::Occluded),
            "observed_and_occluded" => Ok(Region::ObservedAndOccluded),
            "all_in_view" => Ok(Region::AllInView),
            _ => Err(format!(
                "unknown region {s:?} (expected occluded, observed_and_occluded or all_in_view)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    /// True when neither side has any positive.
    pub fn is_absent(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScMetrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub counts: Counts,
    pub region_size: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SscMetrics {
    /// IoU for classes `1..C`; `None` for classes excluded as absent.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean over included classes; `None` when no class is included.
    pub avg: Option<f64>,
    pub counts: Vec<Counts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub region: Region,
    pub region_size: u64,
    pub sc_precision: f64,
    pub sc_recall: f64,
    pub sc_iou: f64,
    pub sc_counts: Counts,
    pub per_class_iou: Vec<Option<f64>>,
    pub ssc_avg: Option<f64>,
    /// False when no class was present in the region.
    pub ssc_avg_defined: bool,
    pub class_counts: Vec<Counts>,
}

fn check(pred: &LabelVolume, gt: &LabelVolume) -> Result<(), MetricsError> {
    if pred.spec.dims() != gt.spec.dims() || pred.spec.num_classes != gt.spec.num_classes {
        return Err(MetricsError::Shape {
            pred: pred.spec.dims(),
            gt: gt.spec.dims(),
            pred_c: pred.spec.num_classes,
            gt_c: gt.spec.num_classes,
        });
    }
    Ok(())
}

/// Running totals over any number of scenes; the report is computed from
/// the summed counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    pub region: Region,
    pub region_size: u64,
    pub sc: Counts,
    pub classes: Vec<Counts>,
}

impl Accumulator {
    pub fn new(num_classes: usize, region: Region) -> Self {
        Self {
            region,
            region_size: 0,
            sc: Counts::default(),
            classes: vec![Counts::default(); num_classes.saturating_sub(1)],
        }
    }

    pub fn add(&mut self, pred: &LabelVolume, gt: &LabelVolume) -> Result<(), MetricsError> {
        check(pred, gt)?;
        if self.classes.len() + 1 != gt.spec.num_classes {
            return Err(MetricsError::Shape {
                pred: pred.spec.dims(),
                gt: gt.spec.dims(),
                pred_c: self.classes.len() + 1,
                gt_c: gt.spec.num_classes,
            });
        }
        for ((&p, &g), &v) in pred.labels.iter().zip(&gt.labels).zip(&gt.visibility) {
            if !self.region.contains(v) {
                continue;
            }
            self.region_size += 1;
            match (p != EMPTY, g != EMPTY) {
                (true, true) => self.sc.tp += 1,
                (true, false) => self.sc.fp += 1,
                (false, true) => self.sc.fn_ += 1,
                (false, false) => {}
            }
            if p == g {
                if p != EMPTY {
                    self.classes[p as usize - 1].tp += 1;
                }
            } else {
                if p != EMPTY {
                    self.classes[p as usize - 1].fp += 1;
                }
                if g != EMPTY {
                    self.classes[g as usize - 1].fn_ += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.region_size += other.region_size;
        self.sc.add(&other.sc);
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.add(b);
        }
    }

    pub fn sc(&self) -> ScMetrics {
        ScMetrics {
            precision: self.sc.precision(),
            recall: self.sc.recall(),
            iou: self.sc.iou(),
            counts: self.sc,
            region_size: self.region_size,
        }
    }

    pub fn ssc(&self) -> SscMetrics {
        ssc_from_counts(&self.classes)
    }

    pub fn report(&self) -> EvalReport {
        let sc = self.sc();
        let ssc = self.ssc();
        EvalReport {
            region: self.region,
            region_size: self.region_size,
            sc_precision: sc.precision,
            sc_recall: sc.recall,
            sc_iou: sc.iou,
            sc_counts: sc.counts,
            ssc_avg_defined: ssc.avg.is_some(),
            per_class_iou: ssc.per_class_iou,
            ssc_avg: ssc.avg,
            class_counts: ssc.counts,
        }
    }
}

/// Per-class IoU and average from stored counts.
pub fn ssc_from_counts(counts: &[Counts]) -> SscMetrics {
    let per_class_iou: Vec<Option<f64>> = counts.iter().map(|c| (!c.is_absent()).then(|| c.iou())).collect();
    let included: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let avg = (!included.is_empty()).then(|| included.iter().sum::<f64>() / included.len() as f64);
    SscMetrics {
        per_class_iou,
        avg,
        counts: counts.to_vec(),
    }
}

pub fn sc_metrics(pred: &LabelVolume, gt: &LabelVolume, region: Region) -> Result<ScMetrics, MetricsError> {
    let mut acc = Accumulator::new(gt.spec.num_classes, region);
    acc.add(pred, gt)?;
    Ok(acc.sc())
}

pub fn ssc_metrics(pred: &LabelVolume, gt: &LabelVolume, region: Region) -> Result<SscMetrics, MetricsError> {
    let mut acc = Accumulator::new(gt.spec.num_classes, region);
    acc.add(pred, gt)?;
    Ok(acc.ssc())
}

pub fn evaluate(pred: &LabelVolume, gt: &LabelVolume, region: Region) -> Result<EvalReport, MetricsError> {
    let mut acc = Accumulator::new(gt.spec.num_classes, region);
    acc.add(pred, gt)?;
    Ok(acc.report())
}

/// SSC average of the best constant predictor: each class (empty included)
/// predicted everywhere, scored with the same summed counts as a model.
pub fn majority_baseline(gts: &[&LabelVolume], region: Region) -> Result<f64, MetricsError> {
    let Some(first) = gts.first() else {
        return Ok(0.0);
    };
    let c = first.spec.num_classes;
    let mut best: f64 = 0.0;
    for class in 0..c as u8 {
        let mut acc = Accumulator::new(c, region);
        for gt in gts {
            let mut pred = (*gt).clone();
            pred.labels.iter_mut().for_each(|l| *l = class);
            acc.add(&pred, gt)?;
        }
        best = best.max(acc.ssc().avg.unwrap_or(0.0));
    }
    Ok(best)
}
