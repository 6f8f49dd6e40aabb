//! Labeled clips, on-disk layout, preprocessing, augmentation and sampling.

mod augment;
mod dataset;
mod preprocess;
mod sampling;
mod state;

pub use augment::{apply_augmentation, augment, AugmentConfig, AugmentParams};
pub use dataset::{
    clip_dir, frame_file_name, load_clip, load_dataset, load_dataset_with, read_frame, read_labels,
    read_manifest, write_clip, write_manifest, DataSplit, LoadOptions, ManifestEntry, SplitKind,
    VideoClip, LABELS, MANIFEST,
};
pub use preprocess::{preprocess_frame, preprocess_frame_at, preprocess_raw, resize_bilinear, zero_center, INPUT_SIDE, MEAN_RGB};
pub use sampling::{make_balanced_validation, window_sequences, FrameRef, SequenceWindow};
pub use state::{first_grammar_violation, Depth, Lateral, NeedleState, ParseStateError, Section};
