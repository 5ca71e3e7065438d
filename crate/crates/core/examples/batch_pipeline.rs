//! Simulates a small dataset and runs generate, encode and stats on it.

use hybridgen::cli::{
    cmd_encode, cmd_generate, cmd_simulate, cmd_stats, Overrides, PipelineConfig, SimulationSpec,
};
use hybridgen::synth::demo_scene;

fn main() -> hybridgen::Result<()> {
    let root = std::env::temp_dir().join("hybridgen-batch-example");
    let _ = std::fs::remove_dir_all(&root);
    let spec = SimulationSpec {
        frames: 4,
        scene: demo_scene(21),
    };
    cmd_simulate(&spec, &root, &Overrides::default())?;

    let mut cfg = PipelineConfig::load(root.join("config.json"))?;
    cfg.apply(&Overrides {
        jobs: Some(2),
        ..Default::default()
    });
    let gen = cmd_generate(&cfg)?;
    println!(
        "generated {} points in {:?}",
        gen.total_generated, gen.elapsed
    );
    let enc = cmd_encode(&cfg)?;
    println!(
        "encoded {} frames ({} values per pillar)",
        enc.frames.len(),
        enc.feature_len
    );
    let stats = cmd_stats(&cfg)?;
    for (class, kinds) in &stats.counts {
        println!("  {class}: {kinds:?}");
    }
    for d in &stats.density {
        println!(
            "  frame {} mask {} ({}): {:.1} generated per 1000 px",
            d.frame, d.instance, d.class, d.per_kilopixel
        );
    }
    println!("outputs under {}", root.display());
    Ok(())
}
