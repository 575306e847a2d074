//! T@k-PCK@alpha: a predicted keypoint is correct when it lands within `k`
//! frames and within `alpha * b` pixels of its ground truth, `b` being the
//! larger side of the bounding box of the ground-truth keypoints in the
//! target frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::benchmark::{GtFile, GtPair, KeypointClass, SetupSpec, VideoAnnotation};
use crate::error::{Error, Result};
use crate::keypoint::SpaceTimeKeypoint;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_KS: [u32; 3] = [1, 3, 5];
/// Lower bound on `b` for degenerate boxes.
pub const MIN_BBOX_SCALE: f64 = 1.0;
pub const ALL: &str = "all";
/// Class of type ids the class map does not mention.
pub const OTHER: &str = "other";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub alpha: f64,
    pub ks: Vec<u32>,
    #[serde(default)]
    pub classes: BTreeMap<u32, KeypointClass>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            ks: DEFAULT_KS.to_vec(),
            classes: BTreeMap::new(),
        }
    }
}

impl EvalConfig {
    pub fn with_setup(mut self, setup: &SetupSpec) -> Self {
        self.classes = setup
            .human
            .iter()
            .map(|&id| (id, KeypointClass::Human))
            .chain(setup.object.iter().map(|&id| (id, KeypointClass::Object)))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha {} must be positive", self.alpha)));
        }
        if self.ks.is_empty() || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "k values {:?} must be non-empty and strictly increasing",
                self.ks
            )));
        }
        Ok(())
    }

    fn class_name(&self, type_id: u32) -> &'static str {
        self.classes.get(&type_id).map_or(OTHER, KeypointClass::as_str)
    }
}

/// Larger side of the bounding box of the visible keypoints, floored at one
/// pixel.
pub fn bbox_scale(frame_keypoints: &[SpaceTimeKeypoint]) -> Result<f64> {
    let mut visible = frame_keypoints.iter().filter(|k| k.visible);
    let first = visible
        .next()
        .ok_or_else(|| Error::invalid("bounding box of a frame without visible keypoints"))?;
    let (mut x0, mut x1, mut y0, mut y1) = (first.x, first.x, first.y, first.y);
    for k in visible {
        x0 = x0.min(k.x);
        x1 = x1.max(k.x);
        y0 = y0.min(k.y);
        y1 = y1.max(k.y);
    }
    Ok((x1 - x0).max(y1 - y0).max(MIN_BBOX_SCALE))
}

/// Both bounds are inclusive.
pub fn judge_keypoint(pred: &SpaceTimeKeypoint, gt: &SpaceTimeKeypoint, k: u32, alpha: f64, b: f64) -> bool {
    let dt = (pred.t as i64 - gt.t as i64).unsigned_abs();
    let dist = (pred.x - gt.x).hypot(pred.y - gt.y);
    dt <= k as u64 && dist <= alpha * b
}

/// Transferred keypoints of one pair, in the order of its ground-truth
/// matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub src: String,
    pub tgt: String,
    pub keypoints: Vec<SpaceTimeKeypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub pairs: Vec<PairPrediction>,
}

impl PredictionFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub k: u32,
    pub correct: u64,
    pub n: u64,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
}

/// Scores of one `(action, class)` partition; either may be `"all"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub action: String,
    pub class: String,
    pub scores: Vec<Score>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub ks: Vec<u32>,
    pub overall: Vec<Score>,
    pub per_action: BTreeMap<String, Vec<Score>>,
    pub per_class: BTreeMap<String, Vec<Score>>,
    /// Every action x class cell, including the `"all"` margins.
    pub breakdown: Vec<Breakdown>,
}

impl EvalReport {
    pub fn accuracy_at(&self, k: u32) -> Option<f64> {
        self.overall.iter().find(|s| s.k == k).map(|s| s.accuracy)
    }

    pub const CSV_HEADER: &'static str = "setup,action,class,k,accuracy,n";

    pub fn to_csv(&self, setup: &str) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for cell in &self.breakdown {
            for s in &cell.scores {
                let _ = writeln!(out, "{setup},{},{},{},{:.4},{}", cell.action, cell.class, s.k, s.accuracy, s.n);
            }
        }
        out
    }
}

fn frame_scales(pair: &GtPair) -> Result<BTreeMap<u32, f64>> {
    let mut frames: BTreeMap<u32, Vec<SpaceTimeKeypoint>> = BTreeMap::new();
    for m in &pair.matches {
        frames.entry(m.tgt.t).or_default().push(m.tgt.keypoint(m.type_id));
    }
    frames
        .into_iter()
        .map(|(t, kps)| Ok((t, bbox_scale(&kps)?)))
        .collect()
}

/// Per-keypoint T@k judgments over every ground-truth pair. Pairs or
/// keypoints without a prediction count as incorrect.
pub fn evaluate(
    predictions: &PredictionFile,
    ground_truth: &GtFile,
    annotations: &[VideoAnnotation],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let mut by_pair: BTreeMap<(&str, &str), &PairPrediction> = BTreeMap::new();
    for p in &predictions.pairs {
        if ground_truth.find(&p.src, &p.tgt).is_none() {
            return Err(Error::UnknownPair {
                src: p.src.clone(),
                tgt: p.tgt.clone(),
            });
        }
        if by_pair.insert((p.src.as_str(), p.tgt.as_str()), p).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for pair {} -> {}", p.src, p.tgt)));
        }
    }

    let nk = config.ks.len();
    let mut tallies: BTreeMap<(String, String), Vec<(u64, u64)>> = BTreeMap::new();
    for pair in &ground_truth.pairs {
        let action = annotations
            .iter()
            .find(|v| v.id == pair.src)
            .map(|v| v.action.clone())
            .ok_or_else(|| Error::Validation {
                video_id: pair.src.clone(),
                reason: "ground-truth pair references an unannotated video".into(),
            })?;
        let preds = by_pair.get(&(pair.src.as_str(), pair.tgt.as_str())).map(|p| &p.keypoints);
        if let Some(preds) = preds {
            if preds.len() > pair.matches.len() {
                return Err(Error::invalid(format!(
                    "{} predictions for {} ground-truth matches in pair {} -> {}",
                    preds.len(),
                    pair.matches.len(),
                    pair.src,
                    pair.tgt
                )));
            }
        }
        let scales = frame_scales(pair)?;
        for (i, m) in pair.matches.iter().enumerate() {
            let pred = preds.and_then(|p| p.get(i));
            if let Some(pred) = pred {
                if pred.type_id != m.type_id {
                    return Err(Error::invalid(format!(
                        "prediction {i} of pair {} -> {} has type {} but ground truth has {}",
                        pair.src, pair.tgt, pred.type_id, m.type_id
                    )));
                }
            }
            let gt = m.tgt.keypoint(m.type_id);
            let b = scales[&m.tgt.t];
            let class = config.class_name(m.type_id);
            for key in [
                (ALL, ALL),
                (ALL, class),
                (action.as_str(), ALL),
                (action.as_str(), class),
            ] {
                let cell = tallies
                    .entry((key.0.to_string(), key.1.to_string()))
                    .or_insert_with(|| vec![(0, 0); nk]);
                for (slot, &k) in cell.iter_mut().zip(&config.ks) {
                    slot.1 += 1;
                    if pred.is_some_and(|p| judge_keypoint(p, &gt, k, config.alpha, b)) {
                        slot.0 += 1;
                    }
                }
            }
        }
    }

    let scores = |counts: &[(u64, u64)]| -> Vec<Score> {
        counts
            .iter()
            .zip(&config.ks)
            .map(|(&(correct, n), &k)| Score {
                k,
                correct,
                n,
                accuracy: if n == 0 { 0.0 } else { 100.0 * correct as f64 / n as f64 },
            })
            .collect()
    };
    let empty = vec![(0, 0); nk];
    let overall = scores(tallies.get(&(ALL.to_string(), ALL.to_string())).unwrap_or(&empty));
    let mut per_action = BTreeMap::new();
    let mut per_class = BTreeMap::new();
    let mut breakdown = Vec::with_capacity(tallies.len());
    for ((action, class), counts) in &tallies {
        let s = scores(counts);
        if action == ALL && class != ALL {
            per_class.insert(class.clone(), s.clone());
        }
        if class == ALL && action != ALL {
            per_action.insert(action.clone(), s.clone());
        }
        breakdown.push(Breakdown {
            action: action.clone(),
            class: class.clone(),
            scores: s,
        });
    }
    Ok(EvalReport {
        alpha: config.alpha,
        ks: config.ks.clone(),
        overall,
        per_action,
        per_class,
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{GtMatch, Split};
    use crate::keypoint::{PointXyt, VideoDims};
    use proptest::prelude::*;

    fn kp(x: f64, y: f64, t: u32) -> SpaceTimeKeypoint {
        SpaceTimeKeypoint::new(x, y, t, 0)
    }

    #[test]
    fn bbox_examples() {
        assert_eq!(bbox_scale(&[kp(0.0, 0.0, 0), kp(10.0, 4.0, 0)]).unwrap(), 10.0);
        assert_eq!(bbox_scale(&[kp(3.0, 3.0, 0)]).unwrap(), 1.0);
        assert_eq!(bbox_scale(&[kp(0.0, 0.0, 0), kp(2.0, 7.0, 0), kp(5.0, 3.0, 0)]).unwrap(), 7.0);
        let mut hidden = kp(100.0, 100.0, 0);
        hidden.visible = false;
        assert_eq!(bbox_scale(&[kp(0.0, 0.0, 0), hidden]).unwrap(), 1.0);
        assert!(bbox_scale(&[hidden]).is_err());
    }

    #[test]
    fn judge_examples() {
        let gt = kp(10.0, 20.0, 5);
        for k in [0, 1, 3, 5] {
            assert!(judge_keypoint(&gt, &gt, k, 0.1, 50.0));
        }
        let late = kp(10.0, 20.0, 7);
        assert!(!judge_keypoint(&late, &gt, 1, 0.1, 50.0));
        assert!(judge_keypoint(&late, &gt, 3, 0.1, 50.0));
        assert!(judge_keypoint(&late, &gt, 5, 0.1, 50.0));
        let edge = kp(13.0, 24.0, 5);
        assert!(judge_keypoint(&edge, &gt, 0, 0.1, 50.0));
        assert!(!judge_keypoint(&kp(13.0, 24.001, 5), &gt, 0, 0.1, 50.0));
    }

    fn video(id: &str, action: &str) -> VideoAnnotation {
        VideoAnnotation {
            id: id.into(),
            action: action.into(),
            split: Split::Train,
            dims: VideoDims::new(20, 100, 100).unwrap(),
            key_moments: vec![2],
            keypoints: vec![],
        }
    }

    fn gt_pair(src: &str, tgt: &str, pts: &[(u32, f64, f64, u32)]) -> GtPair {
        GtPair {
            src: src.into(),
            tgt: tgt.into(),
            matches: pts
                .iter()
                .map(|&(type_id, x, y, t)| GtMatch {
                    type_id,
                    src: PointXyt { x, y, t },
                    tgt: PointXyt { x, y, t },
                })
                .collect(),
        }
    }

    fn exact(p: &GtPair) -> PairPrediction {
        PairPrediction {
            src: p.src.clone(),
            tgt: p.tgt.clone(),
            keypoints: p.matches.iter().map(|m| m.tgt.keypoint(m.type_id)).collect(),
        }
    }

    /// Two actions; box side 40 in every target frame, so the radius is 4.
    fn fixture() -> (Vec<VideoAnnotation>, GtFile, EvalConfig) {
        let anns = vec![video("a0", "golf"), video("a1", "golf"), video("b0", "bowl"), video("b1", "bowl")];
        let pts = [(0, 0.0, 0.0, 2), (13, 40.0, 40.0, 2), (5, 20.0, 10.0, 2), (14, 10.0, 20.0, 2)];
        let gt = GtFile {
            pairs: vec![gt_pair("a0", "a1", &pts), gt_pair("b0", "b1", &pts)],
        };
        let cfg = EvalConfig::default().with_setup(&SetupSpec::preset("3+3").unwrap());
        (anns, gt, cfg)
    }

    #[test]
    fn perfect_run_is_hundred_everywhere() {
        let (anns, gt, cfg) = fixture();
        let preds = PredictionFile { pairs: gt.pairs.iter().map(exact).collect() };
        let report = evaluate(&preds, &gt, &anns, &cfg).unwrap();
        for cell in &report.breakdown {
            assert!(cell.scores.iter().all(|s| s.accuracy == 100.0), "{cell:?}");
        }
        assert_eq!(report.overall[0].n, 8);
        assert_eq!(report.per_class["human"][0].n, 4);
    }

    #[test]
    fn hand_tally_per_action_and_class() {
        let (anns, gt, cfg) = fixture();
        let mut golf = exact(&gt.pairs[0]);
        golf.keypoints[0].t = 4; // human, off by 2 frames
        golf.keypoints[1].x += 5.0; // object, beyond radius 4
        let mut bowl = exact(&gt.pairs[1]);
        bowl.keypoints[2].t = 6; // human, off by 4 frames
        let report = evaluate(&PredictionFile { pairs: vec![golf, bowl] }, &gt, &anns, &cfg).unwrap();
        let acc = |s: &[Score]| s.iter().map(|s| s.accuracy).collect::<Vec<_>>();
        assert_eq!(acc(&report.per_action["golf"]), vec![50.0, 75.0, 75.0]);
        assert_eq!(acc(&report.per_action["bowl"]), vec![75.0, 75.0, 100.0]);
        assert_eq!(acc(&report.per_class["human"]), vec![50.0, 75.0, 100.0]);
        assert_eq!(acc(&report.per_class["object"]), vec![75.0, 75.0, 75.0]);
        assert_eq!(acc(&report.overall), vec![62.5, 75.0, 87.5]);
        let n_parts: u64 = report.per_action.values().map(|s| s[0].n).sum();
        assert_eq!(n_parts, report.overall[0].n);
    }

    #[test]
    fn missing_predictions_are_wrong() {
        let (anns, gt, cfg) = fixture();
        let mut half = exact(&gt.pairs[0]);
        half.keypoints.truncate(2);
        let report = evaluate(&PredictionFile { pairs: vec![half, exact(&gt.pairs[1])] }, &gt, &anns, &cfg).unwrap();
        assert_eq!(report.accuracy_at(5), Some(75.0));
        let none = evaluate(&PredictionFile { pairs: vec![] }, &gt, &anns, &cfg).unwrap();
        assert_eq!(none.accuracy_at(1), Some(0.0));
    }

    #[test]
    fn half_correct_at_five() {
        let (anns, gt, cfg) = fixture();
        let mut preds: Vec<_> = gt.pairs.iter().map(exact).collect();
        for kp in preds[0].keypoints.iter_mut() {
            kp.t += 6;
        }
        let report = evaluate(&PredictionFile { pairs: preds }, &gt, &anns, &cfg).unwrap();
        assert_eq!(report.accuracy_at(5), Some(50.0));
    }

    #[test]
    fn errors() {
        let (anns, gt, cfg) = fixture();
        let stray = PairPrediction { src: "a0".into(), tgt: "b1".into(), keypoints: vec![] };
        assert!(matches!(
            evaluate(&PredictionFile { pairs: vec![stray] }, &gt, &anns, &cfg),
            Err(Error::UnknownPair { .. })
        ));
        let mut wrong_type = exact(&gt.pairs[0]);
        wrong_type.keypoints[0].type_id = 99;
        assert!(evaluate(&PredictionFile { pairs: vec![wrong_type] }, &gt, &anns, &cfg).is_err());
        let bad = EvalConfig { ks: vec![3, 1], ..cfg.clone() };
        assert!(evaluate(&PredictionFile { pairs: vec![] }, &gt, &anns, &bad).is_err());
        let bad = EvalConfig { alpha: 0.0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_rows() {
        let (anns, gt, cfg) = fixture();
        let preds = PredictionFile { pairs: gt.pairs.iter().map(exact).collect() };
        let csv = evaluate(&preds, &gt, &anns, &cfg).unwrap().to_csv("3+3");
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(EvalReport::CSV_HEADER));
        assert!(csv.contains("3+3,all,all,5,100.0000,8\n"));
        assert!(csv.contains("3+3,golf,object,1,100.0000,2\n"));
    }

    // (type, x, y, t) ground truth and (dx, dy, dt) prediction offsets.
    type Case = (Vec<(u32, f64, f64, u32)>, Vec<(f64, f64, i64)>);

    fn arb_case() -> impl Strategy<Value = Case> {
        prop::collection::vec((0u32..16, -50.0..50.0f64, -50.0..50.0f64, 8u32..20), 1..12).prop_flat_map(|gts| {
            let n = gts.len();
            (Just(gts), prop::collection::vec((-8.0..8.0f64, -8.0..8.0f64, -7i64..7), n))
        })
    }

    fn run(gts: &[(u32, f64, f64, u32)], offs: &[(f64, f64, i64)], shift: (f64, f64), scale: f64) -> EvalReport {
        let pts: Vec<_> = gts
            .iter()
            .enumerate()
            .map(|(i, &(_, x, y, t))| (i as u32, x * scale + shift.0, y * scale + shift.1, t))
            .collect();
        let pair = gt_pair("a0", "a1", &pts);
        let mut pred = exact(&pair);
        for (kp, &(dx, dy, dt)) in pred.keypoints.iter_mut().zip(offs) {
            kp.x += dx * scale;
            kp.y += dy * scale;
            kp.t = (kp.t as i64 + dt) as u32;
        }
        let cfg = EvalConfig { ks: vec![0, 1, 3, 5], ..EvalConfig::default() };
        evaluate(&PredictionFile { pairs: vec![pred] }, &GtFile { pairs: vec![pair] }, &[video("a0", "golf")], &cfg).unwrap()
    }

    proptest! {
        #[test]
        fn monotone_in_k((gts, offs) in arb_case()) {
            let r = run(&gts, &offs, (0.0, 0.0), 1.0);
            for cell in &r.breakdown {
                for w in cell.scores.windows(2) {
                    prop_assert!(w[0].correct <= w[1].correct);
                }
                prop_assert!(cell.scores.iter().all(|s| (0.0..=100.0).contains(&s.accuracy)));
            }
        }

        #[test]
        fn translation_invariant((gts, offs) in arb_case(), sx in -1000i32..1000, sy in -1000i32..1000) {
            let base = run(&gts, &offs, (0.0, 0.0), 1.0);
            let moved = run(&gts, &offs, (sx as f64 * 0.5, sy as f64 * 0.25), 1.0);
            for (a, b) in base.overall.iter().zip(&moved.overall) {
                prop_assert_eq!(a.correct, b.correct);
            }
        }

        #[test]
        fn scale_invariant(
            g in (-50.0..50.0f64, -50.0..50.0f64),
            d in (-8.0..8.0f64, -8.0..8.0f64),
            b in 1.0..100.0f64,
            p in -3i32..4,
        ) {
            let s = 2f64.powi(p);
            let gt = kp(g.0, g.1, 3);
            let pred = kp(g.0 + d.0, g.1 + d.1, 4);
            let scaled_gt = kp(g.0 * s, g.1 * s, 3);
            let scaled_pred = kp((g.0 + d.0) * s, (g.1 + d.1) * s, 4);
            for k in [0, 1, 3] {
                prop_assert_eq!(
                    judge_keypoint(&pred, &gt, k, 0.1, b),
                    judge_keypoint(&scaled_pred, &scaled_gt, k, 0.1, b * s)
                );
            }
        }
    }
}
