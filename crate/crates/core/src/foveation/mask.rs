use serde::{Deserialize, Serialize};

use super::{TokenKind, TokenLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Eye,
    Hand,
}

impl Role {
    /// Sliding-window length in timesteps.
    pub fn default_window(self) -> usize {
        match self {
            Role::Eye => 10,
            Role::Hand => 1,
        }
    }
}

/// Dense boolean attention mask; `true` means query `i` may attend key `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.n..(i + 1) * self.n]
    }
}

/// Image-image pairs are always masked; everything else is causal within
/// `window` timesteps (`0 <= t_i - t_j < window`).
pub fn attention_mask(layout: &TokenLayout, role: Role, window: Option<usize>) -> AttentionMask {
    let window = window.unwrap_or_else(|| role.default_window());
    let n = layout.tokens.len();
    let mut allowed = Vec::with_capacity(n * n);
    for qi in &layout.tokens {
        for kj in &layout.tokens {
            let both_image = qi.kind == TokenKind::Image && kj.kind == TokenKind::Image;
            let in_window = kj.t <= qi.t && qi.t - kj.t < window;
            allowed.push(!both_image && in_window);
        }
    }
    AttentionMask { n, allowed }
}
