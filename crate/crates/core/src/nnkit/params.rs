use super::{NnError, SeededRng, Tensor};

/// Handle to one tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Named trainable tensors, each paired with a gradient buffer of the same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: GradStore,
}

/// Gradient buffers, split off from the values so backward passes can read
/// parameters while accumulating into gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStore {
    grads: Vec<Tensor>,
}

/// Read-only view of parameter values.
#[derive(Debug, Clone, Copy)]
pub struct ParamView<'a> {
    values: &'a [Tensor],
}

impl<'a> ParamView<'a> {
    pub fn get(&self, id: ParamId) -> &'a Tensor {
        &self.values[id.0]
    }
}

impl GradStore {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, delta: &Tensor) -> Result<(), NnError> {
        self.grads[id.0].add_assign(delta)
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.grads.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        let mut t = Tensor::zeros(shape);
        t.fill(value);
        self.add(name, t)
    }

    /// Xavier-uniform matrix: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut SeededRng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        self.add(name, Tensor::matrix(fan_in, fan_out, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn view(&self) -> ParamView<'_> {
        ParamView {
            values: &self.values,
        }
    }

    /// Values for reading alongside gradients for writing.
    pub fn split(&mut self) -> (ParamView<'_>, &mut GradStore) {
        (
            ParamView {
                values: &self.values,
            },
            &mut self.grads,
        )
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads.grads[id.0]
    }

    pub fn grads(&self) -> &GradStore {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut GradStore {
        &mut self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.zero();
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// `(name, value, grad)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.grads.grads)
            .map(|((n, v), g)| (n.as_str(), v, g))
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.values, &mut self.grads.grads)
    }

    /// Replaces a value by name, checking the shape.
    pub fn load(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let id = self
            .find(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if !self.values[id.0].same_shape(&value) {
            return Err(NnError::ShapeMismatch(format!(
                "parameter {name}: expected {:?}, got {:?}",
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_mirror_shapes() {
        let mut rng = SeededRng::new(1);
        let mut ps = ParamSet::new();
        let w = ps.xavier("w", 3, 4, &mut rng);
        let b = ps.zeros("b", &[1, 4]);
        for (_, v, g) in ps.iter() {
            assert_eq!(v.shape(), g.shape());
        }
        assert_eq!(ps.num_scalars(), 16);
        assert_eq!(ps.find("b"), Some(b));
        let bound = (6.0f64 / 7.0).sqrt();
        assert!(ps.value(w).data().iter().all(|v| v.abs() <= bound));
        assert!(ps.load("w", Tensor::zeros(&[4, 3])).is_err());
        assert!(ps.load("nope", Tensor::zeros(&[1])).is_err());
    }
}
