use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shape of a model: feature width, class count, attribute category sizes
/// and the number of refinement heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub num_classes: usize,
    pub attribute_sizes: Vec<usize>,
    pub num_heads: usize,
}

impl ModelDims {
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        attribute_sizes: Vec<usize>,
        num_heads: usize,
    ) -> Result<Self> {
        let dims = ModelDims {
            input_dim,
            num_classes,
            attribute_sizes,
            num_heads,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.num_heads == 0 {
            return Err(Error::Dimension(format!(
                "input_dim, num_classes and num_heads must be positive (got {}, {}, {})",
                self.input_dim, self.num_classes, self.num_heads
            )));
        }
        if self.attribute_sizes.contains(&0) {
            return Err(Error::Dimension("empty attribute category".into()));
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        self.attribute_sizes.len()
    }
}

/// Location of one affine map `R^inp -> R^out` inside the flat buffer:
/// an `out x inp` row-major weight followed by an `out` bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    offset: usize,
    pub out: usize,
    pub inp: usize,
}

impl Affine {
    fn len(&self) -> usize {
        self.out * self.inp + self.out
    }

    pub fn weight<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        let s = &data[self.offset..self.offset + self.out * self.inp];
        ArrayView2::from_shape((self.out, self.inp), s).expect("layout")
    }

    pub fn bias<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.out * self.inp;
        ArrayView1::from(&data[start..start + self.out])
    }

    pub fn split_mut<'a>(&self, data: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let block = &mut data[self.offset..self.offset + self.len()];
        let (w, b) = block.split_at_mut(self.out * self.inp);
        (
            ArrayViewMut2::from_shape((self.out, self.inp), w).expect("layout"),
            ArrayViewMut1::from(b),
        )
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.out * self.inp
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.out * self.inp;
        start..start + self.out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub object_heads: Vec<Affine>,
    pub attribute_heads: Vec<Vec<Affine>>,
    pub mid_det: Affine,
    pub mid_cls: Affine,
    len: usize,
}

impl Layout {
    fn new(dims: &ModelDims) -> Self {
        let mut offset = 0;
        let mut next = |out: usize| {
            let a = Affine {
                offset,
                out,
                inp: dims.input_dim,
            };
            offset += a.len();
            a
        };
        let object_heads = (0..dims.num_heads).map(|_| next(dims.num_classes + 1)).collect();
        let attribute_heads = (0..dims.num_heads)
            .map(|_| dims.attribute_sizes.iter().map(|&n| next(n)).collect())
            .collect();
        let mid_det = next(dims.num_classes);
        let mid_cls = next(dims.num_classes);
        Layout {
            object_heads,
            attribute_heads,
            mid_det,
            mid_cls,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// All trainable maps of the score network stored in one flat buffer.
///
/// The same type carries parameter gradients: a gradient is a `ModelParams`
/// whose buffer holds partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    layout: Layout,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let layout = Layout::new(&dims);
        let data = vec![0.0; layout.len()];
        Ok(ModelParams { dims, layout, data })
    }

    pub fn from_flat(dims: ModelDims, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        if data.len() != p.data.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            dims: self.dims.clone(),
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        assert_eq!(self.dims, other.dims, "add_scaled: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Weights drawn uniformly from `[-1/sqrt(d), 1/sqrt(d))`, biases zero.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(dims)?;
    let bound = 1.0 / (params.dims.input_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = params.layout.clone();
    let maps = layout
        .object_heads
        .iter()
        .chain(layout.attribute_heads.iter().flatten())
        .chain([&layout.mid_det, &layout.mid_cls]);
    for map in maps {
        for w in &mut params.data[map.weight_range()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims::new(64, 12, vec![8, 3, 4, 4], 3).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(dims(), 5).unwrap();
        let b = init_params(dims(), 5).unwrap();
        let c = init_params(dims(), 6).unwrap();
        assert_eq!(
            a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, c);
    }

    #[test]
    fn default_head_shapes() {
        let p = init_params(dims(), 0).unwrap();
        let l = p.layout();
        assert_eq!(l.object_heads.len(), 3);
        for h in &l.object_heads {
            assert_eq!((h.inp, h.out), (64, 13));
        }
        assert_eq!(
            l.attribute_heads[0].iter().map(|a| a.out).collect::<Vec<_>>(),
            vec![8, 3, 4, 4]
        );
        assert_eq!((l.mid_det.out, l.mid_cls.out), (12, 12));
        // 3 * 13 + 3 * 19 + 2 * 12 output rows, each with 64 weights + 1 bias
        assert_eq!(p.len(), (3 * 13 + 3 * 19 + 24) * 65);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let p = init_params(dims(), 1).unwrap();
        let bound = 1.0 / 8.0;
        let l = p.layout();
        assert!(l.mid_cls.weight(p.as_slice()).iter().all(|w| w.abs() <= bound));
        assert!(l.object_heads[2].bias(p.as_slice()).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_dims() {
        assert!(ModelDims::new(0, 3, vec![], 1).is_err());
        assert!(ModelDims::new(4, 3, vec![2, 0], 1).is_err());
        assert!(ModelDims::new(4, 3, vec![2], 0).is_err());
        let d = ModelDims::new(4, 2, vec![2], 1).unwrap();
        assert!(ModelParams::from_flat(d, vec![0.0; 3]).is_err());
    }
}
