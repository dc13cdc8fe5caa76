//! Scene rasterization.

use crate::autodiff::Tensor;

use super::scene::{SceneSpec, ShapeSpec};

/// Background gray for empty pixels.
pub const BACKGROUND: f64 = 0.10;

/// Rasterize a scene into a [3 × canvas × canvas] image with values in
/// [0, 1]. Shapes are painted in list order, later over earlier; the test is
/// pure integer geometry, so rendering is exactly reproducible.
pub fn render(scene: &SceneSpec) -> Tensor {
    let n = scene.canvas;
    let mut data = vec![BACKGROUND; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            for shape in scene.shapes.iter().rev() {
                if contains(shape, x, y) {
                    let rgb = shape.color.rgb();
                    for (c, &v) in rgb.iter().enumerate() {
                        data[c * n * n + y * n + x] = v;
                    }
                    break;
                }
            }
        }
    }
    Tensor::new(vec![3, n, n], data).expect("palette values are finite and shaped")
}

fn contains(s: &ShapeSpec, x: usize, y: usize) -> bool {
    let dx = x as i64 - s.cx as i64;
    let dy = y as i64 - s.cy as i64;
    let r = s.size as i64;
    match s.kind {
        super::scene::ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        super::scene::ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        // apex at (cx, cy−r), base from (cx−r, cy+r) to (cx+r, cy+r)
        super::scene::ShapeKind::Triangle => dy >= -r && dy <= r && 2 * dx.abs() <= dy + r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::scene::{ColorName, SceneSpec, ShapeKind, ShapeSpec, CANVAS};

    fn scene_with(shapes: Vec<ShapeSpec>) -> SceneSpec {
        SceneSpec {
            seed: 0,
            canvas: CANVAS,
            shapes,
        }
    }

    fn pixel(img: &Tensor, c: usize, x: usize, y: usize) -> f64 {
        img.data()[c * CANVAS * CANVAS + y * CANVAS + x]
    }

    #[test]
    fn empty_canvas_is_all_background() {
        let img = render(&scene_with(vec![]));
        assert!(img.data().iter().all(|&v| v == BACKGROUND));
    }

    #[test]
    fn centered_square_paints_its_color_at_the_center() {
        let shape = ShapeSpec {
            kind: ShapeKind::Square,
            color: ColorName::Blue,
            cx: 16,
            cy: 16,
            size: 5,
        };
        let img = render(&scene_with(vec![shape]));
        let rgb = ColorName::Blue.rgb();
        for c in 0..3 {
            assert_eq!(pixel(&img, c, 16, 16), rgb[c]);
        }
        // a corner stays background
        assert_eq!(pixel(&img, 0, 0, 0), BACKGROUND);
    }

    #[test]
    fn render_is_pure() {
        let shape = ShapeSpec {
            kind: ShapeKind::Triangle,
            color: ColorName::Orange,
            cx: 10,
            cy: 20,
            size: 6,
        };
        let scene = scene_with(vec![shape]);
        assert_eq!(render(&scene), render(&scene));
    }

    #[test]
    fn values_stay_in_unit_range() {
        let shapes = vec![
            ShapeSpec {
                kind: ShapeKind::Circle,
                color: ColorName::White,
                cx: 8,
                cy: 8,
                size: 7,
            },
            ShapeSpec {
                kind: ShapeKind::Square,
                color: ColorName::Red,
                cx: 20,
                cy: 20,
                size: 7,
            },
        ];
        let img = render(&scene_with(shapes));
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
