//! Spatial coordinates for every token of a foveated observation.
//!
//! All pyramid levels are treated as centered crops of one virtual source image
//! sampled at the finest level's pixel density. Level `l` spans
//! `S_l = resolution * 2^l` source pixels per side, so the source image is
//! `I = S_{N-1}` pixels wide and every level shares the center `(I/2, I/2)`.

use serde::{Deserialize, Serialize};

use super::PyramidConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Image,
    Proprio,
    Gaze,
    Target,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub level: Option<usize>,
}

impl Token {
    pub fn coords(&self) -> [f64; 3] {
        [self.t as f64, self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutSpec {
    pub pyramid: PyramidConfig,
    /// Observation timesteps, one block of tokens per entry.
    pub timesteps: Vec<usize>,
    /// Query tokens per observation; 1 for the eye, the action chunk size for the hand.
    pub chunk_size: usize,
    pub with_proprio: bool,
    pub with_gaze: bool,
    pub with_target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenLayout {
    pub tokens: Vec<Token>,
    /// Side length `I` of the virtual source image, in source pixels.
    pub source_size: f64,
}

impl TokenLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.source_size / 2.0, self.source_size / 2.0)
    }
}

/// Source side length of pyramid level `level`.
pub fn level_source_size(pyramid: &PyramidConfig, level: usize) -> f64 {
    pyramid.resolution as f64 * f64::from(1u32 << level)
}

pub fn source_size(pyramid: &PyramidConfig) -> f64 {
    level_source_size(pyramid, pyramid.levels - 1)
}

/// Source coordinate of a point given in normalized level coordinates
/// (`-1..1` across the level, `+y` downward).
pub fn level_point_to_source(pyramid: &PyramidConfig, level: usize, nx: f64, ny: f64) -> (f64, f64) {
    let c = source_size(pyramid) / 2.0;
    let half = level_source_size(pyramid, level) / 2.0;
    (c + nx * half, c + ny * half)
}

/// Source coordinate of the center of the patch that contains the normalized
/// level point `(nx, ny)`.
pub fn patch_coord_for_point(
    pyramid: &PyramidConfig,
    level: usize,
    nx: f64,
    ny: f64,
) -> (f64, f64) {
    let p = pyramid.patch_grid;
    let cell = |n: f64| {
        let idx = (((n + 1.0) / 2.0) * p as f64).floor() as isize;
        idx.clamp(0, p as isize - 1) as usize
    };
    patch_center(pyramid, level, cell(nx), cell(ny))
}

/// Source coordinate of the center of patch `(a, b)` (column, row) of `level`.
pub fn patch_center(pyramid: &PyramidConfig, level: usize, a: usize, b: usize) -> (f64, f64) {
    let p = pyramid.patch_grid as f64;
    let nx = 2.0 * (a as f64 + 0.5) / p - 1.0;
    let ny = 2.0 * (b as f64 + 0.5) / p - 1.0;
    level_point_to_source(pyramid, level, nx, ny)
}

/// Per timestep: `levels x P x P` image tokens, then proprio, gaze and target
/// tokens, then `chunk_size` query tokens spanning `t..t + chunk_size`.
pub fn assign_token_coords(spec: &LayoutSpec) -> TokenLayout {
    let pyr = &spec.pyramid;
    let size = source_size(pyr);
    let (cx, cy) = (size / 2.0, size / 2.0);
    let p = pyr.patch_grid;
    let mut tokens = Vec::new();
    for &t in &spec.timesteps {
        for level in 0..pyr.levels {
            for b in 0..p {
                for a in 0..p {
                    let (x, y) = patch_center(pyr, level, a, b);
                    tokens.push(Token {
                        kind: TokenKind::Image,
                        t,
                        x,
                        y,
                        level: Some(level),
                    });
                }
            }
        }
        let mut centered = |kind| {
            tokens.push(Token {
                kind,
                t,
                x: cx,
                y: cy,
                level: None,
            })
        };
        if spec.with_proprio {
            centered(TokenKind::Proprio);
        }
        if spec.with_gaze {
            centered(TokenKind::Gaze);
        }
        if spec.with_target {
            centered(TokenKind::Target);
        }
        for k in 0..spec.chunk_size {
            tokens.push(Token {
                kind: TokenKind::Query,
                t: t + k,
                x: cx,
                y: cy,
                level: None,
            });
        }
    }
    TokenLayout {
        tokens,
        source_size: size,
    }
}
