use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use safetensors::tensor::TensorView;
use safetensors::SafeTensors;

use super::param::Module;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named matrices plus string metadata, persisted as a safetensors file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore<T> {
    pub tensors: BTreeMap<String, Array2<T>>,
    pub metadata: BTreeMap<String, String>,
}

impl<T: Scalar> TensorStore<T> {
    pub fn new() -> Self {
        TensorStore {
            tensors: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array2<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn export<M: Module<T> + ?Sized>(&mut self, module: &M, prefix: &str) {
        module.visit_params(prefix, &mut |name, p| {
            self.tensors.insert(name.to_string(), p.value.clone());
        });
    }

    /// Copies stored values into `module`, checking names and shapes.
    pub fn import<M: Module<T> + ?Sized>(&self, module: &mut M, prefix: &str) -> Result<()> {
        let mut err = None;
        module.visit_params_mut(prefix, &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(name) {
                Some(v) if v.dim() == p.value.dim() => p.value.assign(v),
                Some(v) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {name:?} has shape {:?}, expected {:?}",
                        v.dim(),
                        p.value.dim()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor {name:?}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let mut buf = Vec::new();
                let contiguous = v.as_standard_layout();
                T::extend_le_bytes(contiguous.as_slice().expect("standard layout"), &mut buf);
                (k.clone(), buf, vec![v.nrows(), v.ncols()])
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(k, b, shape)| {
                TensorView::new(T::DTYPE, shape.clone(), b)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        safetensors::serialize_to_file(views, Some(meta), path).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut store = TensorStore::new();
        if let Some(meta) = header.metadata() {
            store.metadata = meta.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        }
        for (name, view) in st.tensors() {
            if view.dtype() != T::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has dtype {:?}, expected {:?}",
                    view.dtype(),
                    T::DTYPE
                )));
            }
            let shape = view.shape();
            let (r, c) = match shape {
                [r, c] => (*r, *c),
                _ => return Err(Error::Checkpoint(format!("tensor {name:?} is not a matrix"))),
            };
            let values = T::from_le_bytes(view.data());
            let arr = Array2::from_shape_vec((r, c), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.tensors.insert(name, arr);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;

    #[test]
    fn roundtrips_through_a_file() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let lin: Linear<f32> = Linear::new(3, 2, &mut rng);
        let mut store = TensorStore::new();
        store.export(&lin, "head");
        store.metadata.insert("config".into(), "{}".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        store.save(&path).unwrap();
        let back = TensorStore::<f32>::load(&path).unwrap();
        assert_eq!(back, store);
        let mut other: Linear<f32> = Linear::zeros(3, 2);
        back.import(&mut other, "head").unwrap();
        assert_eq!(other.weight.value, lin.weight.value);
        assert!(back.import(&mut other, "nope").is_err());
        assert!(TensorStore::<f64>::load(&path).is_err());
    }
}
