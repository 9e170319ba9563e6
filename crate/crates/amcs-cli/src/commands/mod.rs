pub mod dataset;
pub mod evaluate;
pub mod inspect;
pub mod reconstruct;
pub mod train;

use std::path::Path;

use amcs_core::{Error, Result};

/// True when the file starts with the AMCS container magic.
pub fn is_chunk_container(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 4];
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    match f.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == amcs_core::model_file::MAGIC),
        Err(_) => Ok(false),
    }
}
