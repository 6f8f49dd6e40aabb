//! Balanced validation sampling and CRNN sequence windows.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::NeedleState;
use crate::error::{DatasetError, Error, Result};

/// A frame addressed by clip position and frame index within that clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameRef {
    pub clip: usize,
    pub frame: usize,
}

/// Samples, uniformly without replacement, the same number of frames from
/// every class: the size of the rarest class. The selection is returned in
/// original (clip, frame) order, so an already balanced input comes back as a
/// full copy in its own order.
pub fn make_balanced_validation(clips: &[&[NeedleState]], seed: u64) -> Result<Vec<FrameRef>> {
    let mut per_class: [Vec<FrameRef>; NeedleState::COUNT] = Default::default();
    for (c, labels) in clips.iter().enumerate() {
        for (f, l) in labels.iter().enumerate() {
            per_class[l.index()].push(FrameRef { clip: c, frame: f });
        }
    }
    if let Some(empty) = per_class.iter().position(Vec::is_empty) {
        return Err(DatasetError::EmptyClass(NeedleState::ALL[empty]).into());
    }
    let take = per_class.iter().map(Vec::len).min().expect("three classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(take * NeedleState::COUNT);
    for frames in &per_class {
        let mut chosen: Vec<usize> = index::sample(&mut rng, frames.len(), take).into_vec();
        chosen.sort_unstable();
        picked.extend(chosen.into_iter().map(|i| frames[i]));
    }
    picked.sort_unstable();
    Ok(picked)
}

/// `time_steps` consecutive frames of one clip. Padding slots repeat the last
/// real frame and are excluded from the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceWindow {
    pub frames: Vec<usize>,
    pub labels: Vec<NeedleState>,
    pub valid: Vec<bool>,
}

impl SequenceWindow {
    pub fn real_len(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Splits a clip's frames into non-overlapping windows in temporal order; the
/// trailing partial window is padded.
pub fn window_sequences(labels: &[NeedleState], time_steps: usize) -> Result<Vec<SequenceWindow>> {
    if time_steps == 0 {
        return Err(Error::InvalidArgument("time steps must be at least 1".into()));
    }
    let windows = labels
        .chunks(time_steps)
        .enumerate()
        .map(|(w, chunk)| {
            let start = w * time_steps;
            let last = start + chunk.len() - 1;
            let frames = (0..time_steps).map(|k| (start + k).min(last)).collect();
            let labels = (0..time_steps).map(|k| chunk[k.min(chunk.len() - 1)]).collect();
            let valid = (0..time_steps).map(|k| k < chunk.len()).collect();
            SequenceWindow { frames, labels, valid }
        })
        .collect();
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::state::first_grammar_violation;
    use proptest::prelude::*;
    use NeedleState::*;

    fn counts(refs: &[FrameRef], labels: &[Vec<NeedleState>]) -> [usize; 3] {
        let mut c = [0; 3];
        for r in refs {
            c[labels[r.clip][r.frame].index()] += 1;
        }
        c
    }

    #[test]
    fn table_one_validation_counts() {
        // one long sequence per class block, sized like the unbalanced set
        let clips = vec![
            vec![NoNeedle; 3703],
            vec![Fist; 970],
            vec![Infil; 1137],
        ];
        let views: Vec<&[NeedleState]> = clips.iter().map(Vec::as_slice).collect();
        let picked = make_balanced_validation(&views, 3).unwrap();
        assert_eq!(counts(&picked, &clips), [970, 970, 970]);
        let unique: std::collections::HashSet<_> = picked.iter().collect();
        assert_eq!(unique.len(), picked.len());
    }

    #[test]
    fn balanced_input_is_copied_in_order() {
        let clips = vec![vec![NoNeedle, Fist, Infil, Fist, NoNeedle, Infil]];
        let views: Vec<&[NeedleState]> = clips.iter().map(Vec::as_slice).collect();
        let picked = make_balanced_validation(&views, 42).unwrap();
        let all: Vec<FrameRef> = (0..6).map(|f| FrameRef { clip: 0, frame: f }).collect();
        assert_eq!(picked, all);
    }

    #[test]
    fn same_seed_same_selection() {
        let clips = vec![vec![NoNeedle; 50], vec![Fist; 10], vec![Infil; 20]];
        let views: Vec<&[NeedleState]> = clips.iter().map(Vec::as_slice).collect();
        assert_eq!(
            make_balanced_validation(&views, 5).unwrap(),
            make_balanced_validation(&views, 5).unwrap()
        );
        assert_ne!(
            make_balanced_validation(&views, 5).unwrap(),
            make_balanced_validation(&views, 6).unwrap()
        );
    }

    #[test]
    fn missing_class_is_rejected() {
        let clips = vec![vec![NoNeedle, Fist, NoNeedle]];
        let views: Vec<&[NeedleState]> = clips.iter().map(Vec::as_slice).collect();
        assert!(matches!(
            make_balanced_validation(&views, 0),
            Err(Error::Dataset(DatasetError::EmptyClass(Infil)))
        ));
    }

    #[test]
    fn ninety_frames_three_windows() {
        let w = window_sequences(&vec![NoNeedle; 90], 30).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|w| w.valid.iter().all(|&v| v)));
        assert_eq!(w[2].frames[0], 60);
    }

    #[test]
    fn hundred_frames_padded_tail() {
        let w = window_sequences(&vec![Fist; 100], 30).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[3].real_len(), 10);
        assert_eq!(w[3].valid.iter().filter(|&&v| !v).count(), 20);
        assert!(w[3].frames[10..].iter().all(|&f| f == 99));
    }

    #[test]
    fn short_clip_single_window() {
        let w = window_sequences(&[NoNeedle, Fist], 5).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].frames, vec![0, 1, 1, 1, 1]);
        assert_eq!(w[0].valid, vec![true, true, false, false, false]);
        assert!(window_sequences(&[NoNeedle], 0).is_err());
    }

    fn grammar_sequence() -> impl Strategy<Value = Vec<NeedleState>> {
        proptest::collection::vec((1usize..15, 1usize..15, 0usize..15), 1..4).prop_map(|phases| {
            let mut labels = Vec::new();
            for (n, f, i) in phases {
                labels.extend(std::iter::repeat_n(NoNeedle, n));
                labels.extend(std::iter::repeat_n(Fist, f));
                labels.extend(std::iter::repeat_n(Infil, i));
                if i > 0 {
                    labels.extend(std::iter::repeat_n(Fist, f));
                }
            }
            labels
        })
    }

    proptest! {
        #[test]
        fn windows_preserve_labels_and_grammar(labels in grammar_sequence(), t in 1usize..40) {
            let windows = window_sequences(&labels, t).unwrap();
            prop_assert_eq!(windows.len(), labels.len().div_ceil(t));
            let mut rebuilt = Vec::new();
            for w in &windows {
                prop_assert!(first_grammar_violation(&w.labels).is_none());
                for k in 0..t {
                    prop_assert_eq!(w.labels[k], labels[w.frames[k]]);
                    if w.valid[k] {
                        rebuilt.push(w.frames[k]);
                    }
                }
            }
            prop_assert_eq!(rebuilt, (0..labels.len()).collect::<Vec<_>>());
        }
    }
}
