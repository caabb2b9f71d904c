//! Fixtures shared by the benches.

use std::sync::Arc;

use scenefix_core::backend::mock::world::{color_index, render, Shape, ShapeKind};
use scenefix_core::backend::mock::MockConfig;
use scenefix_core::config::BackendsConfig;
use scenefix_core::geometry::{Rect, Size};
use scenefix_core::image::Image;
use scenefix_core::orchestrator::Engine;
use scenefix_core::prompts::PromptSet;

pub const DEER_SCENE: &str = "a yellow deer and a red bear and three blue birds";
pub const FOUR: &str = "a red bear and a blue dog and a yellow bird and a purple cat";

fn shape(kind: ShapeKind, color: &str, rect: Rect) -> Shape {
    Shape {
        kind,
        color: color_index(color).expect("palette color"),
        striped: false,
        rect,
    }
}

/// Green deer, red bear, two blue birds.
pub fn deer_image() -> Image {
    render(
        Size::new(160, 160),
        &[
            shape(ShapeKind::Rect, "green", Rect::new(14, 20, 24, 40)),
            shape(ShapeKind::Rect, "red", Rect::new(70, 24, 34, 34)),
            shape(ShapeKind::Ellipse, "blue", Rect::new(20, 100, 24, 24)),
            shape(ShapeKind::Ellipse, "blue", Rect::new(70, 100, 22, 22)),
        ],
    )
}

/// Four green objects that each need a color edit.
pub fn four_image() -> Image {
    render(
        Size::new(160, 160),
        &[
            shape(ShapeKind::Rect, "green", Rect::new(10, 10, 30, 30)),
            shape(ShapeKind::Rect, "green", Rect::new(90, 10, 40, 24)),
            shape(ShapeKind::Ellipse, "green", Rect::new(10, 90, 30, 30)),
            shape(ShapeKind::Ellipse, "green", Rect::new(90, 90, 44, 24)),
        ],
    )
}

pub fn engine(mock: MockConfig) -> Engine {
    let suite = BackendsConfig::mock(mock).suite().expect("mock suite");
    Engine::new(Arc::new(suite), PromptSet::default(), None).expect("engine")
}
