//! Frames, PPM I/O, optical flow and its colour coding, augmentation.

pub mod augment;
pub mod color;
pub mod flow;
mod frame;
pub mod ppm;
pub mod resize;

pub use augment::{augment, AugmentPolicy};
pub use color::encode_flow_hsv;
pub use flow::{compute_dense_flow, exponential_weights, weighted_flow_average, FlowParams};
pub use frame::{FlowField, Frame};
pub use ppm::{decode_ppm, encode_ppm, encode_rgb8, quantize, read_ppm, write_ppm};
pub use resize::resize_bilinear;
