//! Runs spatial and modality sync on random BEV features.

use hybridgen::dsm::{dual_sync, focal_loss, rasterize_boxes, BevBox, DsmWeights, FeatureMap};
use hybridgen::encoding::GridConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hybridgen::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = GridConfig {
        x_min: 0.0,
        x_max: 12.8,
        y_min: -6.4,
        y_max: 6.4,
        cell_size: 0.4,
    };
    let (nx, ny) = (grid.nx(), grid.ny());
    let radar = FeatureMap::random(4, nx, ny, &mut rng);
    let image = FeatureMap::random(4, nx, ny, &mut rng);
    let weights = DsmWeights::random(4, &mut rng);

    let out = dual_sync(&radar, &image, &weights)?;
    let s = out.pattern.as_map().data();
    println!(
        "spatial pattern over {nx}×{ny}: min {:.4}, max {:.4}",
        s.iter().copied().fold(f64::INFINITY, f64::min),
        s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    );
    println!("modality weights: {:.4?}", out.fusion.weights.0);

    let boxes = [
        BevBox {
            x: 5.0,
            y: 1.0,
            length: 4.0,
            width: 1.8,
            yaw: 0.3,
        },
        BevBox {
            x: 9.0,
            y: -3.0,
            length: 0.8,
            width: 0.8,
            yaw: 0.0,
        },
    ];
    let gt = rasterize_boxes(&boxes, &grid)?;
    let positives = gt.data().iter().filter(|&&v| v == 1.0).count();
    let loss = focal_loss(out.pattern.as_map(), &gt, 2.0, 0.25)?;
    println!("{positives} positive cells, focal loss {loss:.5}");
    Ok(())
}
