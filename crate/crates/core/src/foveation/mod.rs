//! Token-level machinery of the foveated policy: concentric crop pyramids,
//! per-token source coordinates, 3D rotary embeddings and attention masks.

mod mask;
mod pyramid;
mod rotary;
mod tokens;

pub use mask::{attention_mask, AttentionMask, Role};
pub use pyramid::{build_pyramid, ObservationPyramid, PyramidConfig, PyramidRenderer};
pub use rotary::{apply_rotary, RotaryConfig};
pub use tokens::{
    assign_token_coords, level_point_to_source, level_source_size, patch_center,
    patch_coord_for_point, source_size, LayoutSpec, Token, TokenKind, TokenLayout,
};
