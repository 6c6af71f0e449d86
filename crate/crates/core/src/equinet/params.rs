use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::difftrain::tape::{Grads, Tape, Var};
use crate::difftrain::tensor::Tensor;
use crate::{Error, Result};

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`
    FanIn(usize),
    Zeros,
    Ones,
}

/// Expected name, shape and initializer of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

impl ParamSpec {
    pub(crate) fn new(name: impl Into<String>, shape: (usize, usize), init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init,
        }
    }
}

/// Named trainable tensors plus non-trainable buffers (batch-norm running
/// statistics). Iteration order is by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    /// Fresh tensors drawn in the order of `specs`.
    pub fn initialize<R: Rng + ?Sized>(specs: &[ParamSpec], buffers: &[ParamSpec], rng: &mut R) -> Self {
        let mut store = ParameterStore::new();
        for s in specs {
            store.params.insert(s.name.clone(), init_tensor(s, rng));
        }
        for s in buffers {
            store.buffers.insert(s.name.clone(), init_tensor(s, rng));
        }
        store
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing buffer {name:?}")))
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().chain(self.buffers.values()).all(Tensor::is_finite)
    }

    /// Same names and shapes with every value zero; no buffers.
    pub fn zeros_like(&self) -> Self {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.rows, t.cols)))
                .collect(),
            buffers: BTreeMap::new(),
        }
    }

    /// Check that names and shapes match `specs` exactly and that every value
    /// is finite.
    pub fn check(&self, specs: &[ParamSpec], buffers: &[ParamSpec]) -> Result<()> {
        check_map(&self.params, specs, "parameter")?;
        check_map(&self.buffers, buffers, "buffer")?;
        if !self.is_finite() {
            return Err(Error::Config("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Record every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t.clone())))
                .collect(),
        }
    }
}

fn check_map(map: &BTreeMap<String, Tensor>, specs: &[ParamSpec], what: &str) -> Result<()> {
    for s in specs {
        let t = map
            .get(&s.name)
            .ok_or_else(|| Error::Config(format!("missing {what} {:?}", s.name)))?;
        if t.shape() != s.shape {
            return Err(Error::Config(format!(
                "{what} {:?} has shape {:?}, expected {:?}",
                s.name,
                t.shape(),
                s.shape
            )));
        }
    }
    if map.len() != specs.len() {
        let extra = map
            .keys()
            .find(|k| !specs.iter().any(|s| &s.name == *k))
            .cloned()
            .unwrap_or_default();
        return Err(Error::Config(format!("unexpected {what} {extra:?}")));
    }
    Ok(())
}

fn init_tensor<R: Rng + ?Sized>(s: &ParamSpec, rng: &mut R) -> Tensor {
    let (r, c) = s.shape;
    match s.init {
        Init::Zeros => Tensor::zeros(r, c),
        Init::Ones => Tensor::filled(r, c, 1.0),
        Init::FanIn(fan_in) => {
            let a = 1.0 / (fan_in.max(1) as f64).sqrt();
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-a..a)).collect())
        }
    }
}

/// Parameters recorded on a tape, by name.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Tape handle of a parameter. Panics on unknown names; callers validate
    /// the store against the model's specs first.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients as a store; parameters that did not reach the loss get zeros.
    pub fn gradients(&self, grads: &Grads, tape: &Tape) -> ParameterStore {
        ParameterStore {
            params: self
                .vars
                .iter()
                .map(|(k, &v)| (k.clone(), grads.or_zeros(v, tape.value(v))))
                .collect(),
            buffers: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_and_check() {
        let specs = vec![
            ParamSpec::new("w", (3, 2), Init::FanIn(3)),
            ParamSpec::new("b", (1, 2), Init::Zeros),
        ];
        let bufs = vec![ParamSpec::new("r", (1, 2), Init::Ones)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = ParameterStore::initialize(&specs, &bufs, &mut rng);
        s.check(&specs, &bufs).unwrap();
        let a = 1.0 / 3f64.sqrt();
        assert!(s.get("w").unwrap().data.iter().all(|v| v.abs() < a));
        assert_eq!(s.get("b").unwrap().data, vec![0.0, 0.0]);
        assert_eq!(s.num_scalars(), 8);

        let mut bad = s.clone();
        bad.params.insert("w".into(), Tensor::zeros(2, 2));
        assert!(bad.check(&specs, &bufs).is_err());
        let mut extra = s.clone();
        extra.params.insert("z".into(), Tensor::zeros(1, 1));
        assert!(extra.check(&specs, &bufs).is_err());
    }
}
