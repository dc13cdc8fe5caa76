//! Scene specification and sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Canvas side length in pixels.
pub const CANVAS: usize = 32;

const MIN_SHAPES: usize = 1;
const MAX_SHAPES: usize = 5;
const MIN_SIZE: usize = 3;
const MAX_SIZE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circles",
            ShapeKind::Square => "squares",
            ShapeKind::Triangle => "triangles",
        }
    }
}

/// The eight named colors shapes can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
    White,
}

impl ColorName {
    pub const ALL: [ColorName; 8] = [
        ColorName::Red,
        ColorName::Green,
        ColorName::Blue,
        ColorName::Yellow,
        ColorName::Purple,
        ColorName::Orange,
        ColorName::Cyan,
        ColorName::White,
    ];

    pub fn word(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
            ColorName::Purple => "purple",
            ColorName::Orange => "orange",
            ColorName::Cyan => "cyan",
            ColorName::White => "white",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            ColorName::Red => [0.90, 0.15, 0.15],
            ColorName::Green => [0.15, 0.80, 0.20],
            ColorName::Blue => [0.20, 0.25, 0.90],
            ColorName::Yellow => [0.95, 0.90, 0.20],
            ColorName::Purple => [0.60, 0.20, 0.80],
            ColorName::Orange => [0.95, 0.55, 0.15],
            ColorName::Cyan => [0.20, 0.80, 0.85],
            ColorName::White => [0.95, 0.95, 0.95],
        }
    }
}

/// One shape: kind, color, center, and half-extent, all in integer pixels so
/// sampling and rendering are exactly reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color: ColorName,
    pub cx: usize,
    pub cy: usize,
    pub size: usize,
}

/// A full scene: 1–5 shapes, each fully inside the canvas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub canvas: usize,
    pub shapes: Vec<ShapeSpec>,
}

/// Draw a random scene. Overlap is allowed; captions list shapes
/// independently.
pub fn sample_scene(seed: u64, rng: &mut ChaCha8Rng) -> SceneSpec {
    let count = rng.random_range(MIN_SHAPES..=MAX_SHAPES);
    let shapes = (0..count)
        .map(|_| {
            let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
            let color = ColorName::ALL[rng.random_range(0..ColorName::ALL.len())];
            let size = rng.random_range(MIN_SIZE..=MAX_SIZE);
            let cx = rng.random_range(size..CANVAS - size);
            let cy = rng.random_range(size..CANVAS - size);
            ShapeSpec {
                kind,
                color,
                cx,
                cy,
                size,
            }
        })
        .collect();
    SceneSpec {
        seed,
        canvas: CANVAS,
        shapes,
    }
}

impl ShapeSpec {
    /// Half-extent bucket used by the verbose caption.
    pub fn size_word(&self) -> &'static str {
        match self.size {
            0..=4 => "small",
            5 => "medium",
            _ => "big",
        }
    }

    /// Vertical third of the canvas the center falls in.
    pub fn vertical_word(&self) -> &'static str {
        match 3 * self.cy / CANVAS {
            0 => "top",
            1 => "middle",
            _ => "bottom",
        }
    }

    /// Horizontal third of the canvas the center falls in.
    pub fn horizontal_word(&self) -> &'static str {
        match 3 * self.cx / CANVAS {
            0 => "left",
            1 => "center",
            _ => "right",
        }
    }
}
