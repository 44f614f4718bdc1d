//! File formats: the weight container, image inputs and pair/score lists.

pub mod container;
pub mod image;
pub mod pairs;

pub use container::{load, load_file, save, save_file, Manifest, ModelInfo, TensorEntry};
pub use image::{decode_image, load_image, INPUT_SIDE};
pub use pairs::{format_scores, parse_pairs, read_pairs};

/// Rounds to at most 9 significant decimal digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}
