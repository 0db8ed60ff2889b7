#![allow(dead_code)]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spinproj::{read_fcidump, IntegralSet, SystemSpec};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fcidump").join(name)
}

pub fn load(name: &str) -> (SystemSpec, IntegralSet) {
    read_fcidump(data(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two-orbital minimal-basis H2 near equilibrium.
pub const H2: &str = "&FCI NORB=2,NELEC=2,MS2=0,\n ORBSYM=1,1,\n ISYM=1,\n&END
 0.6744 1 1 1 1
 0.6636 2 2 1 1
 0.1813 2 1 2 1
 0.6975 2 2 2 2
 -1.2528 1 1 0 0
 -0.4756 2 2 0 0
 0.7137 0 0 0 0
";

/// Two sites far apart: weak hopping, strong on-site repulsion.
pub const H2_STRETCHED: &str = "&FCI NORB=2,NELEC=2,MS2=0 &END
 0.60 1 1 1 1
 0.05 2 2 1 1
 0.001 2 1 2 1
 0.60 2 2 2 2
 -0.50 1 1 0 0
 -0.05 2 1 0 0
 -0.50 2 2 0 0
 0.0 0 0 0 0
";
