use std::fmt::{self, Write as _};

use sha2::{Digest, Sha256};

use crate::autodiff::optim::ParamStore;

/// Name, shape and scalar count of every parameter, sorted by name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamManifest {
    pub entries: Vec<(String, Vec<usize>, usize)>,
}

impl ParamManifest {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.2).sum()
    }
}

impl fmt::Display for ParamManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, shape, count) in &self.entries {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            writeln!(f, "{name}\t[{}]\t{count}", dims.join(", "))?;
        }
        writeln!(f, "total\t-\t{}", self.total())
    }
}

pub fn manifest(params: &ParamStore) -> ParamManifest {
    ParamManifest {
        entries: params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.len()))
            .collect(),
    }
}

/// Hex SHA-256 of the manifest text (shapes only) or, with
/// `include_values`, of the manifest plus every value's bit pattern.
pub fn manifest_hash(params: &ParamStore, include_values: bool) -> String {
    let mut h = Sha256::new();
    h.update(manifest(params).to_string().as_bytes());
    if include_values {
        for (_, t) in params.iter() {
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
