//! Caption templates.
//!
//! Each scene gets a terse caption (shape list), a verbose caption
//! (sizes, positions, conjunctions), and with probability one half a counting
//! caption, so references for the same image differ in verbosity and length.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scene::{SceneSpec, ShapeKind};

/// Hard cap on caption length in words; two below the decode cap so SOS and
/// EOS always fit.
pub const MAX_CAPTION_WORDS: usize = 58;

/// Reference captions for a scene, as word lists.
pub fn caption_grammar(scene: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut captions = vec![terse(scene), verbose(scene, rng)];
    if rng.random_bool(0.5) && !scene.shapes.is_empty() {
        captions.push(counting(scene));
    }
    for cap in &mut captions {
        cap.truncate(MAX_CAPTION_WORDS);
    }
    captions
}

/// "a red circle and a blue square ." — 4n words for n shapes.
fn terse(scene: &SceneSpec) -> Vec<String> {
    let mut words = Vec::new();
    for (i, shape) in scene.shapes.iter().enumerate() {
        if i > 0 {
            words.push("and");
        }
        words.push("a");
        words.push(shape.color.word());
        words.push(shape.kind.word());
    }
    words.push(".");
    words.iter().map(|s| s.to_string()).collect()
}

/// "there is a small red circle at top left and ... ." — opener plus seven
/// words per shape.
fn verbose(scene: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words: Vec<&str> = match rng.random_range(0..3u8) {
        0 => {
            if scene.shapes.len() == 1 {
                vec!["there", "is"]
            } else {
                vec!["there", "are"]
            }
        }
        1 => vec!["the", "image", "shows"],
        _ => vec!["the", "scene", "contains"],
    };
    for (i, shape) in scene.shapes.iter().enumerate() {
        if i > 0 {
            words.push("and");
        }
        words.push("a");
        words.push(shape.size_word());
        words.push(shape.color.word());
        words.push(shape.kind.word());
        words.push("at");
        words.push(shape.vertical_word());
        words.push(shape.horizontal_word());
    }
    words.push(".");
    words.iter().map(|s| s.to_string()).collect()
}

/// "two circles and one square ." — grouped per kind, in kind order.
fn counting(scene: &SceneSpec) -> Vec<String> {
    const NUMBERS: [&str; 5] = ["one", "two", "three", "four", "five"];
    let mut words: Vec<&str> = Vec::new();
    let mut first = true;
    for kind in ShapeKind::ALL {
        let count = scene.shapes.iter().filter(|s| s.kind == kind).count();
        if count == 0 {
            continue;
        }
        if !first {
            words.push("and");
        }
        first = false;
        words.push(NUMBERS[count - 1]);
        words.push(if count == 1 {
            kind.word()
        } else {
            kind.plural()
        });
    }
    words.push(".");
    words.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::scene::{sample_scene, ColorName, ShapeSpec, CANVAS};
    use crate::rng::rng_from_seed;

    fn one_shape_scene() -> SceneSpec {
        SceneSpec {
            seed: 0,
            canvas: CANVAS,
            shapes: vec![ShapeSpec {
                kind: ShapeKind::Circle,
                color: ColorName::Red,
                cx: 5,
                cy: 5,
                size: 3,
            }],
        }
    }

    fn five_shape_scene() -> SceneSpec {
        let shapes = (0..5)
            .map(|i| ShapeSpec {
                kind: ShapeKind::ALL[i % 3],
                color: ColorName::ALL[i],
                cx: 6 + 4 * i,
                cy: 10,
                size: 4,
            })
            .collect();
        SceneSpec {
            seed: 0,
            canvas: CANVAS,
            shapes,
        }
    }

    #[test]
    fn one_shape_terse_caption_is_the_grammar_floor() {
        let mut rng = rng_from_seed(0);
        let caps = caption_grammar(&one_shape_scene(), &mut rng);
        assert_eq!(caps[0], vec!["a", "red", "circle", "."]);
        assert!(caps[0].len() >= 4 && caps[0].len() <= 5);
    }

    #[test]
    fn one_shape_verbose_caption_has_eight_to_twelve_words() {
        // template slots: opener (2–3) + 7 per shape + final period
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let caps = caption_grammar(&one_shape_scene(), &mut rng);
            let verbose_len = caps[1].len();
            assert!(
                (8..=12).contains(&verbose_len),
                "verbose length {verbose_len}"
            );
        }
    }

    #[test]
    fn five_shape_verbose_caption_is_at_least_twenty_words() {
        let mut rng = rng_from_seed(1);
        let caps = caption_grammar(&five_shape_scene(), &mut rng);
        assert!(caps[1].len() >= 20, "verbose length {}", caps[1].len());
    }

    #[test]
    fn captions_never_exceed_the_word_cap() {
        for seed in 0..100 {
            let mut rng = rng_from_seed(seed);
            let scene = sample_scene(seed, &mut rng);
            for cap in caption_grammar(&scene, &mut rng) {
                assert!(cap.len() <= MAX_CAPTION_WORDS);
            }
        }
    }

    #[test]
    fn counting_caption_groups_by_kind() {
        let mut scene = five_shape_scene();
        scene.shapes.truncate(3); // circle, square, triangle
        scene.shapes[1].kind = ShapeKind::Circle;
        scene.shapes[2].kind = ShapeKind::Square;
        let words = counting(&scene);
        assert_eq!(words, vec!["two", "circles", "and", "one", "square", "."]);
    }
}
