//! Drive-log indexes, sequence windows with optical flow, and the synthetic
//! road generator used for desk-scale verification.

mod cache;
mod index;
mod sequence;
mod split;
mod synthetic;

pub use cache::{decode_flow, encode_flow, flow_key, FlowCache, FLOW_MAGIC};
pub use index::{
    load_index, load_index_with, write_index, Camera, ColumnMap, DriveIndex, IndexOptions,
    IndexRow, INDEX_HEADER,
};
pub use sequence::{
    batch_input, batch_targets, make_sequences, window_starts, SequenceOptions, SequenceSample,
    DEFAULT_FLOW_MAG_CAP, MIN_FRAME_SIDE,
};
pub use split::{split, split_point};
pub use synthetic::{
    generate_synthetic, parse_segments, render_view, steering_label, track_truth, FrameTruth,
    Segment, SpeedProfile, TrackSpec, MAX_STEER_RAD, WHEELBASE_M,
};
