//! Named parameter storage, initialization, and the checkpoint format.
//!
//! Checkpoints are a named-tensor table: magic `PTCK`, a version word, then
//! (name, rows, cols, raw little-endian f64 values) per tensor. Optimizer and
//! trainer state ride along as reserved `__`-prefixed entries.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DiffError, DiffResult, Tape, Var};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn scalar(v: T) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&x| U::from_f64_c(x.to_f64_c())).collect(),
        )
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in ±1/sqrt(fan_in).
    UniformFanIn { fan_in: usize },
    Zeros,
    Const(f64),
}

/// Ordered, named parameter tensors. Iteration order is registration order,
/// which fixes RNG consumption and checkpoint layout.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            index: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn register(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let data: Vec<T> = match init {
            Init::UniformFanIn { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..rows * cols)
                    .map(|_| T::from_f64_c((rng.random::<f64>() * 2.0 - 1.0) * bound))
                    .collect()
            }
            Init::Zeros => vec![T::zero(); rows * cols],
            Init::Const(v) => vec![T::from_f64_c(v); rows * cols],
        };
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(Tensor::new(rows, cols, data));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> DiffResult<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| DiffError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> DiffResult<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(DiffError::MissingParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            index: self.index.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Create tape leaves for every parameter.
    pub fn bind(&self, tape: &Tape<T>) -> DiffResult<Binding> {
        let mut vars = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            vars.push(tape.leaf(t.rows, t.cols, t.data.clone(), true)?);
        }
        Ok(Binding {
            vars,
            index: self.index.clone(),
        })
    }

    /// Collect leaf gradients after a backward pass. Absent gradients are
    /// omitted (parameters not touched by the loss).
    pub fn grads(&self, tape: &Tape<T>, binding: &Binding) -> BTreeMap<String, Vec<T>> {
        let mut out = BTreeMap::new();
        for (name, &i) in &binding.index {
            if let Some(g) = tape.grad(binding.vars[i]) {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

/// Tape handles for a bound parameter set.
pub struct Binding {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl Binding {
    pub fn var(&self, name: &str) -> DiffResult<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| DiffError::MissingParam(name.to_string()))
    }
}

// ---------------------------------------------------------------------------
// checkpoint IO
// ---------------------------------------------------------------------------

/// Write a named-tensor table. Values are stored as little-endian f64.
pub fn write_named_tensors<T: Scalar, W: Write>(
    mut w: W,
    entries: impl Iterator<Item = (String, Tensor<T>)>,
    count: usize,
) -> DiffResult<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())?;
    let mut written = 0usize;
    for (name, t) in entries {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for &v in &t.data {
            w.write_all(&v.to_f64_c().to_le_bytes())?;
        }
        written += 1;
    }
    if written != count {
        return Err(DiffError::Checkpoint(format!(
            "declared {count} tensors, wrote {written}"
        )));
    }
    Ok(())
}

/// Read a named-tensor table.
pub fn read_named_tensors<T: Scalar, R: Read>(mut r: R) -> DiffResult<Vec<(String, Tensor<T>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != CHECKPOINT_VERSION {
        return Err(DiffError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let count = u64::from_le_bytes(u64b) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32b)?;
        let name_len = u32::from_le_bytes(u32b) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| DiffError::Checkpoint("tensor name is not UTF-8".into()))?;
        r.read_exact(&mut u64b)?;
        let rows = u64::from_le_bytes(u64b) as usize;
        r.read_exact(&mut u64b)?;
        let cols = u64::from_le_bytes(u64b) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut u64b)?;
            data.push(T::from_f64_c(f64::from_le_bytes(u64b)));
        }
        out.push((name, Tensor::new(rows, cols, data)));
    }
    Ok(out)
}

/// Save parameters plus extra state tensors to a checkpoint file.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &ParamStore<T>,
    extras: &BTreeMap<String, Tensor<T>>,
) -> DiffResult<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let count = params.len() + extras.len();
    let it = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .chain(extras.iter().map(|(n, t)| (n.clone(), t.clone())));
    write_named_tensors(&mut w, it, count)?;
    Ok(())
}

/// Load a checkpoint into the layout of `template`. Every template parameter
/// must be present with matching shape; `__`-prefixed entries are returned
/// separately as state.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    template: &ParamStore<T>,
) -> DiffResult<(ParamStore<T>, BTreeMap<String, Tensor<T>>)> {
    let file = std::fs::File::open(path)?;
    let entries = read_named_tensors::<T, _>(std::io::BufReader::new(file))?;
    let mut map: BTreeMap<String, Tensor<T>> = entries.into_iter().collect();
    let mut out = template.clone();
    for i in 0..out.names.len() {
        let name = out.names[i].clone();
        let t = map
            .remove(&name)
            .ok_or_else(|| DiffError::Checkpoint(format!("missing tensor {name}")))?;
        let want = (out.tensors[i].rows, out.tensors[i].cols);
        if (t.rows, t.cols) != want {
            return Err(DiffError::Checkpoint(format!(
                "tensor {name}: shape {}x{} does not match expected {}x{}",
                t.rows, t.cols, want.0, want.1
            )));
        }
        out.tensors[i] = t;
    }
    for name in map.keys() {
        if !name.starts_with("__") {
            log::warn!("checkpoint contains unused tensor {name}");
        }
    }
    Ok((out, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", 16, 64, Init::UniformFanIn { fan_in: 64 }, &mut rng);
        ps.register("b", 1, 16, Init::Zeros, &mut rng);
        let bound = 1.0 / 8.0;
        assert!(ps.get("w").unwrap().data.iter().all(|v| v.abs() <= bound));
        assert!(ps.get("b").unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::<f64>::new();
        ps.register("a.w", 4, 3, Init::UniformFanIn { fan_in: 3 }, &mut rng);
        ps.register("a.b", 1, 4, Init::Const(0.25), &mut rng);
        let mut extras = BTreeMap::new();
        extras.insert("__step".to_string(), Tensor::scalar(7.0f64));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ptck");
        save_checkpoint(&path, &ps, &extras).unwrap();
        let (loaded, state) = load_checkpoint(&path, &ps).unwrap();
        for (name, t) in ps.iter() {
            assert_eq!(t.data, loaded.get(name).unwrap().data, "{name}");
        }
        assert_eq!(state.get("__step").unwrap().data, vec![7.0]);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", 2, 2, Init::Zeros, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ptck");
        save_checkpoint(&path, &ps, &BTreeMap::new()).unwrap();
        let mut other = ParamStore::<f64>::new();
        other.register("w", 3, 2, Init::Zeros, &mut rng);
        assert!(matches!(
            load_checkpoint(&path, &other),
            Err(DiffError::Checkpoint(_))
        ));
    }
}
