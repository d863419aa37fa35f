//! Synthetic depth corpus: piecewise-constant regions with moving sharp
//! edges, the statistics that make depth maps compressible.
//!
//! Every item is a deterministic function of its index.

use crate::frame::Frame;
use crate::pipeline::DepthSequence;

pub const CORPUS_WIDTH: usize = 64;
pub const CORPUS_HEIGHT: usize = 64;
pub const CORPUS_FRAMES: usize = 16;
pub const CORPUS_FPS: f64 = 15.0;

/// Names of the corpus items, in index order.
pub const CORPUS_ITEMS: [&str; 5] = ["slab", "disc", "steps", "crowd", "tiles"];

/// A depth scene sampled at `(x, y, frame)`, returning a 16-bit depth.
type Scene = fn(f64, f64, f64) -> u16;

/// Background plane with one horizontal slab sliding down: low rank.
fn slab(_x: f64, y: f64, t: f64) -> u16 {
    let top = 8.0 + 2.0 * t;
    if (top..top + 14.0).contains(&y) {
        52000
    } else {
        12000
    }
}

/// A disc moving diagonally: curved edges, moderate rank per frame.
fn disc(x: f64, y: f64, t: f64) -> u16 {
    let (cx, cy) = (14.0 + 2.2 * t, 18.0 + 1.6 * t);
    if (x - cx).powi(2) + (y - cy).powi(2) <= 13.0f64.powi(2) {
        48000
    } else {
        9000
    }
}

/// Terraced depth layers with a vertical occluder edge sweeping across.
fn steps(x: f64, y: f64, t: f64) -> u16 {
    let edge = 6.0 + 3.0 * t;
    if x < edge {
        60000
    } else {
        let level = (y / 13.0).floor();
        (10000.0 + 7000.0 * level) as u16
    }
}

/// Several overlapping shapes moving in different directions: high rank.
fn crowd(x: f64, y: f64, t: f64) -> u16 {
    let near_disc = (x - (50.0 - 2.0 * t)).powi(2) + (y - (20.0 + t)).powi(2) <= 81.0;
    if near_disc {
        return 62000;
    }
    let (dx, dy) = (40.0 - 1.5 * t, 6.0 + 2.5 * t);
    let diamond = (x - dx).abs() + (y - dy).abs() <= 10.0;
    if diamond {
        return 47000;
    }
    let bar = (6.0 + 1.8 * t..18.0 + 1.8 * t).contains(&x) && (30.0..58.0).contains(&y);
    if bar {
        return 36000;
    }
    let tri = y > 0.7 * x + 20.0 - t && y < 62.0;
    if tri {
        return 24000;
    }
    11000
}

/// Irregular tiles whose boundaries drift sideways: high rank.
fn tiles(x: f64, y: f64, t: f64) -> u16 {
    let shift = 1.25 * t;
    let row = (y / 9.0).floor();
    let col = ((x + shift * (1.0 + 0.5 * row)) / 11.0).floor();
    let v = ((row * 7.0 + col * 13.0) % 9.0 + 9.0) % 9.0;
    (8000.0 + 6000.0 * v) as u16
}

const SCENES: [Scene; 5] = [slab, disc, steps, crowd, tiles];

/// Corpus item `index` (0..5) at the standard 64×64×16 size.
pub fn corpus_item(index: usize) -> Option<DepthSequence> {
    let scene = *SCENES.get(index)?;
    Some(render(scene, CORPUS_WIDTH, CORPUS_HEIGHT, CORPUS_FRAMES))
}

/// All corpus items with their names.
pub fn corpus() -> Vec<(&'static str, DepthSequence)> {
    CORPUS_ITEMS
        .iter()
        .enumerate()
        .map(|(i, &name)| (name, corpus_item(i).expect("index in range")))
        .collect()
}

fn render(scene: Scene, width: usize, height: usize, frames: usize) -> DepthSequence {
    let frames = (0..frames)
        .map(|f| {
            let samples = (0..height)
                .flat_map(|y| (0..width).map(move |x| scene(x as f64, y as f64, f as f64)))
                .collect();
            Frame::new(width, height, 16, samples).expect("valid synthetic frame")
        })
        .collect();
    DepthSequence::new(frames, CORPUS_FPS).expect("valid synthetic sequence")
}
