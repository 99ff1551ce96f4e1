//! Saves a pruned model and its masks, reloads them, and writes one layer
//! in block-structured form.
//!
//!     cargo run --example checkpoint_roundtrip

use blockprune::model::{build_model, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig};
use blockprune::pruner::{load_masks, prune_model, save_masks, PruneSpec};
use blockprune::sparse::{load_block_structured, save_block_structured, to_block_structured, StorageCost};
use blockprune::{Axis, Rng};

fn main() -> blockprune::Result<()> {
    let dir = std::env::temp_dir().join(format!("blockprune-example-{}", std::process::id()));
    let mut params = build_model(ModelConfig::default(), &mut Rng::new(5))?;
    let spec = PruneSpec::uniform(&params.prunable_names(), Axis::Row, 4, 0.5);
    let masks = prune_model(&mut params, &spec)?;

    save_checkpoint(&dir.join("ckpt"), &Checkpoint::from_params(&params, 5))?;
    save_masks(&dir.join("masks.txt"), &masks)?;
    let restored = load_checkpoint(&dir.join("ckpt"))?.into_params()?;
    let masks_back = load_masks(&dir.join("masks.txt"))?;
    println!("fingerprints match: {}", restored.fingerprint() == params.fingerprint());
    println!("masks match: {}", masks_back == masks);

    let wq = to_block_structured(&restored.get("wq")?.matrix, masks_back.get("wq").expect("wq mask"))?;
    save_block_structured(&dir.join("wq.bsm"), &wq)?;
    let wq_back = load_block_structured(&dir.join("wq.bsm"))?;
    println!("wq {}", wq_back.storage_cost());
    println!("wq densifies back exactly: {}", wq_back.densify() == restored.get("wq")?.matrix);
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
