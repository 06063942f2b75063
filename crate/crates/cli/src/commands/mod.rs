pub mod analyze;
pub mod evaluate;
pub mod generate;
pub mod prepare;
pub mod sweep;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use tripletqa::corpus::read_jsonl;
use tripletqa::TripletExample;

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn load_corpus(path: &Path) -> Result<Vec<TripletExample>> {
    read_jsonl(path).with_context(|| format!("loading corpus {}", path.display()))
}
