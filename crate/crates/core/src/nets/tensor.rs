use crate::scalar::Scalar;

/// Dense row-major array for a single sample.
///
/// Spatial activations use shape `[channels, h, w, d]`, flattened feature
/// vectors use `[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Spatial dims of a `[c, h, w, d]` tensor.
    pub fn spatial(&self) -> [usize; 3] {
        assert_eq!(self.shape.len(), 4, "not a volumetric tensor: {:?}", self.shape);
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn voxels(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v = *v * s;
        }
    }

    /// Stacks tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Tensor<T> {
        let spatial = parts[0].spatial();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut channels = 0;
        for p in parts {
            assert_eq!(p.spatial(), spatial, "concat of mismatched volumes");
            channels += p.channels();
            data.extend_from_slice(&p.data);
        }
        Tensor {
            shape: vec![channels, spatial[0], spatial[1], spatial[2]],
            data,
        }
    }

    /// Splits along the channel axis into chunks of the given channel counts.
    pub fn split_channels(&self, counts: &[usize]) -> Vec<Tensor<T>> {
        let n = self.voxels();
        let spatial = self.spatial();
        let mut at = 0;
        counts
            .iter()
            .map(|&c| {
                let t = Tensor {
                    shape: vec![c, spatial[0], spatial[1], spatial[2]],
                    data: self.data[at * n..(at + c) * n].to_vec(),
                };
                at += c;
                t
            })
            .collect()
    }
}
