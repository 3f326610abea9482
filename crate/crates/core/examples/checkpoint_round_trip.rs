//! Saves a model to the text checkpoint format, reloads it and confirms that
//! decoding is unchanged.

use anyhow::Result;
use editor_core::decoder::{decode, DecodeConfig};
use editor_core::model::{load_checkpoint, save_checkpoint, EditorModel, ModelConfig};
use editor_core::tasks::{generate, TaskKind, TaskSpec};
use editor_core::types::Sequence;

fn main() -> Result<()> {
    let data = generate(&TaskSpec::new(TaskKind::Copy, 20, 3))?;
    let cfg = ModelConfig { d_model: 16, d_ff: 32, max_len: 32, ..ModelConfig::default() };
    let model = EditorModel::new(cfg, data.src_vocab.clone(), data.tgt_vocab.clone())?;

    let dir = std::env::temp_dir().join(format!("editor-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    let bytes = std::fs::metadata(&path)?.len();
    let back = load_checkpoint(&path)?;
    assert_eq!(back.params, model.params);
    println!("saved {} parameters in {bytes} bytes, reload is bit-exact", model.params.num_parameters());

    let cfg = DecodeConfig { max_iters: 3, ..DecodeConfig::default() };
    for pair in data.pairs.iter().take(3) {
        let (a, _) = decode(&model.params, &pair.source, &Sequence::empty(), &cfg)?;
        let (b, _) = decode(&back.params, &pair.source, &Sequence::empty(), &cfg)?;
        assert_eq!(a, b);
        println!("{:<40} -> {}", data.src_vocab.decode_line(&pair.source), data.tgt_vocab.decode_line(&a));
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
