//! Black-box trajectory evaluators and the on-disk evaluation cache.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use stochmpc_core::{simulate, ControlSchedule, FieldArray, FieldShape, ParameterDraw, PlantConfig, Result};

/// Something that maps a control schedule and a parameter draw to measured
/// space-time fields `[k+1 × field × node]`.
pub trait Evaluator: Sync {
    fn field_names(&self) -> Vec<String>;
    fn grid(&self) -> Vec<f64>;
    /// Stable description used in cache keys; `None` disables caching.
    fn identity(&self) -> Option<String>;
    fn evaluate(&self, schedule: &[f64], draw: &ParameterDraw, seed: u64) -> Result<FieldArray>;
}

/// The method-of-lines plant, returning its noisy outputs.
pub struct PlantEvaluator {
    pub config: PlantConfig,
}

impl Evaluator for PlantEvaluator {
    fn field_names(&self) -> Vec<String> {
        self.config.field_names().iter().map(|s| s.to_string()).collect()
    }

    fn grid(&self) -> Vec<f64> {
        self.config.grid()
    }

    fn identity(&self) -> Option<String> {
        Some(format!("plant {:?}", self.config))
    }

    fn evaluate(&self, schedule: &[f64], draw: &ParameterDraw, seed: u64) -> Result<FieldArray> {
        Ok(simulate(&self.config, draw, &ControlSchedule::new(schedule.to_vec()), seed)?.outputs)
    }
}

/// Evaluation cache: one little-endian binary file per evaluation, named by
/// the SHA-256 of everything that determines the result.
pub struct EvalCache {
    dir: Option<PathBuf>,
}

impl EvalCache {
    pub fn new(dir: Option<&Path>) -> Self {
        EvalCache { dir: dir.map(Path::to_path_buf) }
    }

    pub fn disabled() -> Self {
        EvalCache { dir: None }
    }

    fn key(identity: &str, tag: &str, schedule: &[f64], draw: &ParameterDraw, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(identity.as_bytes());
        h.update([0]);
        h.update(tag.as_bytes());
        for v in schedule {
            h.update(v.to_bits().to_le_bytes());
        }
        for (k, v) in &draw.values {
            h.update(k.as_bytes());
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Evaluate through the cache; `tag` names the (schedule, quadrature node) slot.
    pub fn get_or_eval(
        &self,
        ev: &dyn Evaluator,
        tag: &str,
        schedule: &[f64],
        draw: &ParameterDraw,
        seed: u64,
    ) -> Result<FieldArray> {
        let (Some(dir), Some(id)) = (&self.dir, ev.identity()) else {
            return ev.evaluate(schedule, draw, seed);
        };
        let path = dir.join(format!("{tag}-{}.bin", &Self::key(&id, tag, schedule, draw, seed)[..32]));
        if let Some(a) = read_array(&path) {
            return Ok(a);
        }
        let a = ev.evaluate(schedule, draw, seed)?;
        // A failed cache write only costs a recomputation later.
        let _ = std::fs::create_dir_all(dir).and_then(|_| write_array(&path, &a));
        Ok(a)
    }
}

fn write_array(path: &Path, a: &FieldArray) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(24 + 8 * a.data.len());
    for d in [a.shape.times, a.shape.fields, a.shape.nodes] {
        bytes.extend((d as u64).to_le_bytes());
    }
    for v in &a.data {
        bytes.extend(v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn read_array(path: &Path) -> Option<FieldArray> {
    let bytes = std::fs::read(path).ok()?;
    if bytes.len() < 24 {
        return None;
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap()) as usize;
    let shape = FieldShape::new(word(0), word(1), word(2));
    if bytes.len() != 24 + 8 * shape.len() {
        return None;
    }
    let data = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    FieldArray::from_vec(shape, data).ok()
}

/// Map `f` over `0..n` on scoped worker threads, preserving order.
pub fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n).max(1);
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        for (ci, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(ci * chunk + j));
                }
            });
        }
    });
    out.into_iter().map(|x| x.expect("filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl Evaluator for Counting {
        fn field_names(&self) -> Vec<String> {
            vec!["y".into()]
        }
        fn grid(&self) -> Vec<f64> {
            vec![0.0, 1.0]
        }
        fn identity(&self) -> Option<String> {
            Some("counting".into())
        }
        fn evaluate(&self, schedule: &[f64], _: &ParameterDraw, seed: u64) -> Result<FieldArray> {
            self.0.fetch_add(1, Ordering::SeqCst);
            let shape = FieldShape::new(schedule.len() + 1, 1, 2);
            FieldArray::from_vec(shape, (0..shape.len()).map(|i| i as f64 + seed as f64).collect())
        }
    }

    #[test]
    fn cache_hits_skip_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EvalCache::new(Some(dir.path()));
        let ev = Counting(AtomicUsize::new(0));
        let d = ParameterDraw::default();
        let a = cache.get_or_eval(&ev, "s0-q0", &[1.0, 2.0], &d, 3).unwrap();
        let b = cache.get_or_eval(&ev, "s0-q0", &[1.0, 2.0], &d, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ev.0.load(Ordering::SeqCst), 1);
        cache.get_or_eval(&ev, "s0-q0", &[1.0, 2.5], &d, 3).unwrap();
        cache.get_or_eval(&ev, "s0-q0", &[1.0, 2.0], &d, 4).unwrap();
        assert_eq!(ev.0.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn par_map_keeps_order() {
        assert_eq!(par_map(7, |i| i * i), vec![0, 1, 4, 9, 16, 25, 36]);
        assert!(par_map(0, |i| i).is_empty());
    }
}
