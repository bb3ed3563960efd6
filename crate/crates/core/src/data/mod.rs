//! Dataset indexing, image decoding and resizing, augmentation and batching.

mod augment;
mod batch;
mod image;
mod index;
mod source;

pub use augment::{augment, AugmentPolicy, Transform};
pub use batch::{Batch, BatchIterator};
pub use image::{decode_bytes, decode_image, encode_ppm, resize_bilinear};
pub use index::{index_dataset, split_counts, DatasetIndex, RatioSplit, Record, Split, SplitMode, IMAGE_EXTENSIONS};
pub use source::{class_color, FileSource, ImageSource, SyntheticSource};

/// SplitMix64 finalizer over two words; derives independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
