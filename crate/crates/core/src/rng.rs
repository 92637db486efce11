//! Named random substreams derived from a single root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Independent generator for the stage `name` under `root`.
///
/// Streams are keyed by SHA-256 of the root seed and the name, so re-running one
/// stage in isolation reproduces exactly the draws of a full pipeline run.
pub fn substream(root: u64, name: &str) -> StageRng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

pub mod streams {
    pub const GRID: &str = "grid";
    pub const SYNTH: &str = "synth";
    pub const INIT: &str = "init";
    pub const TRIPLET: &str = "triplet-sampling";
    pub const DROPOUT: &str = "dropout";
    pub const STREETVIEW: &str = "streetview";
    pub const STREETVIEW_HEAD: &str = "streetview-head";
    pub const PROMPT_INIT: &str = "prompt-init";
    pub const FOLDS: &str = "folds";
    pub const SELECTION: &str = "selection";
    pub const MERGE: &str = "merge";
    pub const BASELINE: &str = "baseline";
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_stable_and_distinct() {
        let a: u64 = substream(7, "init").random();
        let b: u64 = substream(7, "init").random();
        let c: u64 = substream(7, "folds").random();
        let d: u64 = substream(8, "init").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
