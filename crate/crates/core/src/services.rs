use sha2::{Digest, Sha256};

use crate::engine::InMemoryDb;
use crate::executor::{Catalog, Gateway};
use crate::llm::{Decoding, GenerationModel, RetryPolicy, Templates};
use crate::model::SchemaInfo;

/// Everything a stage needs to talk to the model and the databases.
pub struct Services<'a> {
    pub gateway: &'a Gateway,
    pub model: &'a dyn GenerationModel,
    pub templates: &'a Templates,
    pub catalog: &'a Catalog,
    pub retry: RetryPolicy,
    pub decoding: Decoding,
    pub workers: usize,
}

impl Services<'_> {
    /// Schema of a fixture database; empty when the catalog lacks it.
    pub fn schema(&self, db_id: &str) -> SchemaInfo {
        match self.catalog.get(db_id) {
            Ok((db, _)) => db.schema_info(),
            Err(e) => {
                log::warn!("no schema for {}: {}", db_id, e);
                SchemaInfo::default()
            }
        }
    }

    pub fn database(&self, db_id: &str) -> Option<std::sync::Arc<InMemoryDb>> {
        self.catalog.get(db_id).ok().map(|(d, _)| d)
    }
}

/// Stable per-item seed from a run seed and item labels.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let n = workers.max(1).min(items.len().max(1));
    if n == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..n {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_part_boundaries() {
        assert_ne!(derive_seed(1, &["ab", "c"]), derive_seed(1, &["a", "bc"]));
        assert_eq!(derive_seed(1, &["x"]), derive_seed(1, &["x"]));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<u32> = (0..100).collect();
        assert_eq!(parallel_map(&v, 7, |_, x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
