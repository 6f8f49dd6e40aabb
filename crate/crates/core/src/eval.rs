//! Evaluation metrics: confusion matrices, per-video accuracy and its group
//! summaries, transition lag, label oscillation and the Wilcoxon rank-sum
//! test.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::data::{preprocess_frame_at, Depth, Lateral, NeedleState, VideoClip};
use crate::error::{Error, Result};
use crate::model::Model;

/// Lag matching only pairs transitions at most this many frames apart.
pub const LAG_HORIZON: usize = 45;

fn check_lengths(predictions: &[NeedleState], labels: &[NeedleState]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NeedleState::COUNT]; NeedleState::COUNT],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..NeedleState::COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total().max(1) as f64
    }

    /// Row-normalized proportions; rows with no frames are all zero.
    pub fn normalized(&self) -> [[f64; NeedleState::COUNT]; NeedleState::COUNT] {
        self.counts.map(|row| {
            let n: usize = row.iter().sum();
            row.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        })
    }

    pub fn recall(&self, state: NeedleState) -> f64 {
        self.normalized()[state.index()][state.index()]
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    /// Plain-text grid of the normalized matrix, two decimals per cell.
    pub fn grid(&self) -> String {
        let norm = self.normalized();
        let mut out = format!("{:<10}", "truth\\pred");
        for s in NeedleState::ALL {
            let _ = write!(out, "{:>10}", s.name());
        }
        out.push('\n');
        for (s, row) in NeedleState::ALL.iter().zip(norm) {
            let _ = write!(out, "{:<10}", s.name());
            for v in row {
                let _ = write!(out, "{v:>10.2}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(predictions: &[NeedleState], labels: &[NeedleState]) -> Result<ConfusionMatrix> {
    check_lengths(predictions, labels)?;
    let mut m = ConfusionMatrix::default();
    for (p, l) in predictions.iter().zip(labels) {
        m.counts[l.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Fraction of frames predicted correctly.
pub fn per_video_accuracy(predictions: &[NeedleState], labels: &[NeedleState]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty video".into()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub acc_max: f64,
    pub acc_min: f64,
    pub acc_avg: f64,
    pub videos: usize,
}

pub fn group_summary(accuracies: &[f64]) -> Result<AccuracySummary> {
    if accuracies.is_empty() {
        return Err(Error::InvalidArgument("summary of an empty group".into()));
    }
    Ok(AccuracySummary {
        acc_max: accuracies.iter().copied().fold(f64::MIN, f64::max),
        acc_min: accuracies.iter().copied().fold(f64::MAX, f64::min),
        acc_avg: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
        videos: accuracies.len(),
    })
}

/// A change of state between frame `index - 1` and frame `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub index: usize,
    pub from: NeedleState,
    pub to: NeedleState,
}

pub fn transitions(sequence: &[NeedleState]) -> Vec<Transition> {
    sequence
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, w)| Transition {
            index: i + 1,
            from: w[0],
            to: w[1],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchedTransition {
    pub truth: usize,
    pub predicted: usize,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LagReport {
    /// In ground-truth order.
    pub matched: Vec<MatchedTransition>,
    /// Ground-truth transitions with no same-direction prediction in range.
    pub unmatched: Vec<Transition>,
    /// Predicted transitions left over after matching.
    pub spurious: usize,
}

impl LagReport {
    pub fn lags(&self) -> Vec<usize> {
        self.matched.iter().map(|m| m.lag).collect()
    }

    pub fn max(&self) -> Option<usize> {
        self.matched.iter().map(|m| m.lag).max()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.matched.is_empty()).then(|| self.matched.iter().map(|m| m.lag as f64).sum::<f64>() / self.matched.len() as f64)
    }
}

/// Pairs each ground-truth transition with a predicted transition in the
/// same direction, one-to-one, closest pairs first, within
/// [`LAG_HORIZON`] frames.
pub fn transition_lag(predictions: &[NeedleState], labels: &[NeedleState]) -> LagReport {
    let truth = transitions(labels);
    let pred = transitions(predictions);
    let mut candidates = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            let lag = t.index.abs_diff(p.index);
            if t.from == p.from && t.to == p.to && lag <= LAG_HORIZON {
                candidates.push((lag, t.index.min(p.index), t.index.max(p.index), ti, pi));
            }
        }
    }
    candidates.sort_unstable();
    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut matched = Vec::new();
    for (lag, _, _, ti, pi) in candidates {
        if !truth_used[ti] && !pred_used[pi] {
            truth_used[ti] = true;
            pred_used[pi] = true;
            matched.push(MatchedTransition {
                truth: truth[ti].index,
                predicted: pred[pi].index,
                lag,
            });
        }
    }
    matched.sort_by_key(|m| m.truth);
    LagReport {
        matched,
        unmatched: truth.iter().zip(&truth_used).filter(|(_, &u)| !u).map(|(t, _)| *t).collect(),
        spurious: pred_used.iter().filter(|&&u| !u).count(),
    }
}

/// Mean lag pooled over every matched transition of every experiment.
pub fn mean_lag_over_transitions(reports: &[LagReport]) -> Option<f64> {
    let lags: Vec<usize> = reports.iter().flat_map(LagReport::lags).collect();
    (!lags.is_empty()).then(|| lags.iter().sum::<usize>() as f64 / lags.len() as f64)
}

/// Mean of per-experiment mean lags, skipping experiments with no match.
pub fn mean_lag_over_experiments(reports: &[LagReport]) -> Option<f64> {
    let means: Vec<f64> = reports.iter().filter_map(LagReport::mean).collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

/// Number of label changes.
pub fn oscillation_count(sequence: &[NeedleState]) -> usize {
    sequence.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Label changes in the predictions beyond those in the ground truth.
pub fn oscillation_excess(predictions: &[NeedleState], labels: &[NeedleState]) -> i64 {
    oscillation_count(predictions) as i64 - oscillation_count(labels) as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSum {
    /// Mann-Whitney U of the first group.
    pub u: f64,
    /// Sum of the first group's midranks.
    pub rank_sum: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Combined size at or below which p-values come from full enumeration.
pub const EXACT_LIMIT: usize = 12;

fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon rank-sum test with midranks for ties. Exact by enumeration for
/// small samples, otherwise the tie-corrected normal approximation with a
/// continuity correction.
pub fn ranksum_test(a: &[f64], b: &[f64]) -> Result<RankSum> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("rank-sum test needs two non-empty groups".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("rank-sum test input contains NaN".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let combined: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&combined);
    let w: f64 = ranks[..na].iter().sum();
    let u = w - (na * (na + 1)) as f64 / 2.0;
    let expected = na as f64 * (n + 1) as f64 / 2.0;
    let observed = (w - expected).abs();
    const EPS: f64 = 1e-9;

    if n <= EXACT_LIMIT {
        let (mut extreme, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            let s: f64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            total += 1;
            if (s - expected).abs() >= observed - EPS {
                extreme += 1;
            }
        }
        return Ok(RankSum {
            u,
            rank_sum: w,
            p: extreme as f64 / total as f64,
            exact: true,
        });
    }

    let mut ties = 0.0;
    let mut sorted = combined.clone();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        ties += t * t * t - t;
    }
    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let var = naf * nbf / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - naf * nbf / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(RankSum {
        u,
        rank_sum: w,
        p,
        exact: false,
    })
}

/// Per-frame predictions for a clip. Light CNNs classify frames
/// independently; CRNNs run frame by frame with the LSTM state carried
/// through the whole clip.
pub fn predict_clip(model: &Model, clip: &VideoClip) -> Result<Vec<(NeedleState, [f32; 3])>> {
    let triple = |p: Vec<f32>| -> (NeedleState, [f32; 3]) { (NeedleState::argmax(&p), [p[0], p[1], p[2]]) };
    match model {
        Model::LightCnn(m) => {
            use rayon::prelude::*;
            let side = m.spec().input_side();
            clip.frames
                .par_iter()
                .map(|f| m.predict(&preprocess_frame_at(f, side)).map(triple))
                .collect()
        }
        Model::Crnn(m) => {
            let side = m.spec().base.input_side();
            let mut state = m.zero_state();
            clip.frames
                .iter()
                .map(|f| m.step_frame(&mut state, &preprocess_frame_at(f, side)).map(triple))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub section: String,
    pub infiltration: bool,
    pub frames: usize,
    pub accuracy: f64,
    pub oscillations: usize,
    pub excess: i64,
    pub mean_lag: Option<f64>,
    pub max_lag: Option<usize>,
    pub unmatched: usize,
}

/// Metrics for one evaluated split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub clips: Vec<ClipMetrics>,
    pub lags: Vec<LagReport>,
    /// Named groups: the split as a whole, each lateral position and depth,
    /// and with or without infiltration. Empty groups are left out.
    pub groups: Vec<(String, AccuracySummary)>,
}

impl EvalReport {
    pub fn frame_accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }

    pub fn total_excess(&self) -> i64 {
        self.clips.iter().map(|c| c.excess).sum()
    }

    pub fn accuracies(&self, filter: impl Fn(&ClipMetrics) -> bool) -> Vec<f64> {
        self.clips.iter().filter(|c| filter(c)).map(|c| c.accuracy).collect()
    }

    pub fn group(&self, name: &str) -> Option<&AccuracySummary> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Rank-sum comparison of per-video accuracy with and without
    /// infiltration.
    pub fn infiltration_ranksum(&self) -> Result<RankSum> {
        ranksum_test(&self.accuracies(|c| c.infiltration), &self.accuracies(|c| !c.infiltration))
    }

    pub fn write_clip_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| Error::io(path, e.into()))?;
        for c in &self.clips {
            w.serialize(c).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames: {}", self.confusion.total())?;
        writeln!(f, "frame accuracy: {:.4}", self.frame_accuracy())?;
        writeln!(f, "confusion (row-normalized):")?;
        write!(f, "{}", self.confusion.grid())?;
        writeln!(f, "groups:")?;
        for (name, s) in &self.groups {
            writeln!(
                f,
                "  {name:<16} n={:<3} max={:.3} min={:.3} avg={:.3}",
                s.videos, s.acc_max, s.acc_min, s.acc_avg
            )?;
        }
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
        let max_lag = self.lags.iter().filter_map(LagReport::max).max();
        let unmatched: usize = self.lags.iter().map(|l| l.unmatched.len()).sum();
        writeln!(
            f,
            "transition lag: mean/transition {} mean/video {} max {} unmatched {unmatched}",
            show(mean_lag_over_transitions(&self.lags)),
            show(mean_lag_over_experiments(&self.lags)),
            max_lag.map_or("n/a".to_string(), |m| m.to_string())
        )?;
        writeln!(f, "oscillation excess: {}", self.total_excess())?;
        if let Ok(rs) = self.infiltration_ranksum() {
            writeln!(
                f,
                "rank-sum (infiltration vs none): U={:.1} p={:.3}{}",
                rs.u,
                rs.p,
                if rs.exact { " (exact)" } else { "" }
            )?;
        }
        Ok(())
    }
}

fn lateral_name(l: Lateral) -> &'static str {
    match l {
        Lateral::Left => "Left",
        Lateral::Center => "Center",
        Lateral::Right => "Right",
    }
}

fn depth_name(d: Depth) -> &'static str {
    match d {
        Depth::Front => "Front",
        Depth::Middle => "Middle",
        Depth::Back => "Back",
    }
}

/// Evaluates per-frame predictions against their clips.
pub fn evaluate(clips: &[&VideoClip], predictions: &[Vec<NeedleState>]) -> Result<EvalReport> {
    if clips.len() != predictions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction sequences for {} clips",
            predictions.len(),
            clips.len()
        )));
    }
    if clips.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut total = ConfusionMatrix::default();
    let mut metrics = Vec::with_capacity(clips.len());
    let mut lags = Vec::with_capacity(clips.len());
    for (clip, pred) in clips.iter().zip(predictions) {
        total.merge(&confusion(pred, &clip.labels)?);
        let lag = transition_lag(pred, &clip.labels);
        metrics.push(ClipMetrics {
            clip_id: clip.id.clone(),
            section: clip.section.code().to_string(),
            infiltration: clip.infiltration,
            frames: clip.len(),
            accuracy: per_video_accuracy(pred, &clip.labels)?,
            oscillations: oscillation_count(pred),
            excess: oscillation_excess(pred, &clip.labels),
            mean_lag: lag.mean(),
            max_lag: lag.max(),
            unmatched: lag.unmatched.len(),
        });
        lags.push(lag);
    }

    let mut groups = Vec::new();
    let mut add = |name: &str, filter: &dyn Fn(&VideoClip) -> bool| {
        let accs: Vec<f64> = clips
            .iter()
            .zip(&metrics)
            .filter(|(c, _)| filter(c))
            .map(|(_, m)| m.accuracy)
            .collect();
        if let Ok(s) = group_summary(&accs) {
            groups.push((name.to_string(), s));
        }
    };
    add("All", &|_| true);
    for l in [Lateral::Left, Lateral::Center, Lateral::Right] {
        add(lateral_name(l), &|c| c.section.lateral() == l);
    }
    for d in [Depth::Front, Depth::Middle, Depth::Back] {
        add(depth_name(d), &|c| c.section.depth() == d);
    }
    add("Infiltration", &|c| c.infiltration);
    add("No infiltration", &|c| !c.infiltration);

    Ok(EvalReport {
        confusion: total,
        clips: metrics,
        lags,
        groups,
    })
}

/// Runs a model over clips and evaluates the result.
pub fn evaluate_model(model: &Model, clips: &[VideoClip]) -> Result<(EvalReport, Vec<Vec<NeedleState>>)> {
    let predictions: Vec<Vec<NeedleState>> = clips
        .iter()
        .map(|c| Ok(predict_clip(model, c)?.into_iter().map(|(s, _)| s).collect()))
        .collect::<Result<_>>()?;
    let refs: Vec<&VideoClip> = clips.iter().collect();
    Ok((evaluate(&refs, &predictions)?, predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use NeedleState::*;

    fn seq(spec: &[(NeedleState, usize)]) -> Vec<NeedleState> {
        spec.iter().flat_map(|&(s, n)| std::iter::repeat_n(s, n)).collect()
    }

    fn shifted(labels: &[NeedleState], k: usize) -> Vec<NeedleState> {
        let mut out = vec![labels[0]; k];
        out.extend_from_slice(&labels[..labels.len() - k]);
        out
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = seq(&[(NoNeedle, 5), (Fist, 3), (Infil, 2)]);
        let m = confusion(&labels, &labels).unwrap();
        assert_eq!(m.counts, [[5, 0, 0], [0, 3, 0], [0, 0, 2]]);
        assert_eq!(m.accuracy(), 1.0);
    }

    #[test]
    fn constant_prediction_fills_one_column() {
        let labels = seq(&[(NoNeedle, 5), (Fist, 3), (Infil, 2)]);
        let m = confusion(&[NoNeedle; 10], &labels).unwrap();
        for row in m.counts {
            assert_eq!(row[1] + row[2], 0);
        }
        assert_eq!(m.total(), 10);
    }

    #[test]
    fn ninety_of_hundred_normalizes_to_point_nine() {
        let labels = vec![Fist; 100];
        let mut pred = labels.clone();
        for p in &mut pred[..10] {
            *p = NoNeedle;
        }
        let m = confusion(&pred, &labels).unwrap();
        assert!((m.normalized()[1][1] - 0.9).abs() < 1e-12);
        assert!(m.grid().contains("0.90"));
        assert!(confusion(&pred[..5], &labels).is_err());
    }

    #[test]
    fn video_accuracy_and_summaries() {
        let labels = seq(&[(NoNeedle, 5), (Fist, 5)]);
        assert_eq!(per_video_accuracy(&labels, &labels).unwrap(), 1.0);
        assert!(per_video_accuracy(&[], &[]).is_err());
        let s = group_summary(&[0.955, 0.997]).unwrap();
        assert_eq!((s.acc_max, s.acc_min), (0.997, 0.955));
        assert!((s.acc_avg - 0.976).abs() < 1e-12);
        let one = group_summary(&[0.9]).unwrap();
        assert!(one.acc_max == one.acc_min && one.acc_min == one.acc_avg);
        assert!(group_summary(&[]).is_err());
    }

    #[test]
    fn lag_of_perfect_and_shifted_predictions() {
        let labels = seq(&[(NoNeedle, 40), (Fist, 25), (Infil, 30), (Fist, 20), (NoNeedle, 35)]);
        let perfect = transition_lag(&labels, &labels);
        assert_eq!(perfect.lags(), vec![0; 4]);
        assert!(perfect.unmatched.is_empty());
        let late = transition_lag(&shifted(&labels, 2), &labels);
        assert_eq!(late.lags(), vec![2; 4]);
        assert_eq!(late.mean(), Some(2.0));
    }

    #[test]
    fn one_late_switch_sets_the_maximum() {
        let labels = seq(&[(NoNeedle, 40), (Fist, 25), (NoNeedle, 40)]);
        let pred = seq(&[(NoNeedle, 51), (Fist, 14), (NoNeedle, 40)]);
        let r = transition_lag(&pred, &labels);
        assert_eq!(r.max(), Some(11));
        assert_eq!(r.lags(), vec![11, 0]);
    }

    #[test]
    fn far_or_wrong_direction_changes_stay_unmatched() {
        let labels = seq(&[(NoNeedle, 10), (Fist, 100)]);
        let pred = seq(&[(NoNeedle, 60), (Fist, 50)]);
        let r = transition_lag(&pred, &labels);
        assert!(r.matched.is_empty());
        assert_eq!(r.unmatched.len(), 1);
        assert_eq!(r.spurious, 1);
        let flipped = seq(&[(Fist, 10), (NoNeedle, 100)]);
        assert!(transition_lag(&flipped, &labels).matched.is_empty());
    }

    #[test]
    fn lag_means_over_transitions_and_experiments() {
        let a = LagReport {
            matched: vec![
                MatchedTransition { truth: 1, predicted: 1, lag: 0 },
                MatchedTransition { truth: 5, predicted: 9, lag: 4 },
                MatchedTransition { truth: 9, predicted: 11, lag: 2 },
            ],
            ..LagReport::default()
        };
        let b = LagReport {
            matched: vec![MatchedTransition { truth: 3, predicted: 9, lag: 6 }],
            ..LagReport::default()
        };
        assert_eq!(mean_lag_over_transitions(&[a.clone(), b.clone()]), Some(3.0));
        assert_eq!(mean_lag_over_experiments(&[a, b]), Some(4.0));
    }

    #[test]
    fn oscillation_counts() {
        assert_eq!(oscillation_count(&[Fist; 7]), 0);
        assert_eq!(oscillation_count(&[NoNeedle, Fist, NoNeedle, Fist, NoNeedle]), 4);
        let labels = seq(&[(NoNeedle, 3), (Fist, 2)]);
        assert_eq!(oscillation_excess(&[NoNeedle, Fist, NoNeedle, Fist, Fist], &labels), 2);
    }

    #[test]
    fn exact_ranksum_hand_cases() {
        let r = ranksum_test(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!(r.exact);
        assert!((r.p - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.u, 0.0);
        // a = {1}, b = {2, 3}: rank sums 1, 2, 3 equally likely
        let r = ranksum_test(&[1.0], &[2.0, 3.0]).unwrap();
        assert!((r.p - 2.0 / 3.0).abs() < 1e-12);
        let same = [0.9, 0.95, 0.97];
        assert!((ranksum_test(&same, &same).unwrap().p - 1.0).abs() < 1e-12);
        assert!(ranksum_test(&[], &[1.0]).is_err());
    }

    #[test]
    fn normal_approximation_identical_groups() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = ranksum_test(&a, &a).unwrap();
        assert!(!r.exact);
        assert!((r.p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normal_approximation_matches_reference_value() {
        // scipy.stats.mannwhitneyu(range(10), range(5, 15), method="asymptotic")
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b: Vec<f64> = (5..15).map(f64::from).collect();
        let r = ranksum_test(&a, &b).unwrap();
        assert_eq!(r.u, 12.5);
        assert!((r.p - 0.0050754).abs() < 1e-6, "{}", r.p);
    }

    #[test]
    fn null_calibration_18_vs_18() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let runs = 1000;
        let mut rejected = 0;
        for _ in 0..runs {
            let a: Vec<f64> = (0..18).map(|_| rng.gen()).collect();
            let b: Vec<f64> = (0..18).map(|_| rng.gen()).collect();
            if ranksum_test(&a, &b).unwrap().p < 0.05 {
                rejected += 1;
            }
        }
        let rate = rejected as f64 / runs as f64;
        assert!((0.03..=0.07).contains(&rate), "rejection rate {rate}");
    }

    fn grammar_sequence() -> impl Strategy<Value = Vec<NeedleState>> {
        (1usize..20, proptest::collection::vec((1usize..20, any::<bool>()), 1..6)).prop_map(|(first, rest)| {
            let mut out = vec![NoNeedle; first];
            let mut state = NoNeedle;
            for (len, up) in rest {
                state = match (state, up) {
                    (NoNeedle, _) => Fist,
                    (Fist, true) => Infil,
                    (Fist, false) => NoNeedle,
                    (Infil, _) => Fist,
                };
                out.extend(std::iter::repeat_n(state, len));
            }
            out
        })
    }

    proptest! {
        #[test]
        fn diagonal_equals_frame_accuracy(labels in grammar_sequence(), flips in proptest::collection::vec(0usize..3, 1..30)) {
            let mut pred = labels.clone();
            for (i, f) in flips.iter().enumerate() {
                let k = (i * 7919) % pred.len();
                pred[k] = NeedleState::ALL[*f];
            }
            let m = confusion(&pred, &labels).unwrap();
            prop_assert_eq!(m.accuracy(), per_video_accuracy(&pred, &labels).unwrap());
        }

        #[test]
        fn lag_is_symmetric(a in grammar_sequence(), b in grammar_sequence()) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let mut ab = transition_lag(a, b).lags();
            let mut ba = transition_lag(b, a).lags();
            ab.sort_unstable();
            ba.sort_unstable();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn ranksum_is_symmetric(a in proptest::collection::vec(0.0f64..1.0, 1..10), b in proptest::collection::vec(0.0f64..1.0, 1..10)) {
            let ab = ranksum_test(&a, &b).unwrap().p;
            let ba = ranksum_test(&b, &a).unwrap().p;
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn summary_is_ordered(accs in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let s = group_summary(&accs).unwrap();
            prop_assert!(s.acc_min <= s.acc_avg + 1e-12 && s.acc_avg <= s.acc_max + 1e-12);
        }
    }
}
