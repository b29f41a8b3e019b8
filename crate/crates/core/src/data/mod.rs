//! Frame I/O, window sampling, augmentation, normalization and synthetic clips.

mod frames;
mod sampling;
mod synth;

pub use frames::{
    frame_file_name, frame_to_rgb8, load_dataset, load_frames, save_frame, save_frames, FrameSequence, DEFAULT_FPS,
};
pub use sampling::{
    augment, channel_means, collate, denormalize, denormalize_batch, enumerate_indices, enumerate_samples,
    materialize, normalize, Batch, Sample, SampleSpec,
};
pub use synth::{square_origin, synth_clips, synth_motion, MotionKind, SynthSpec};
