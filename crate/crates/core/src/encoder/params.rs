use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureConfig;
use crate::error::{Error, Result};

/// Shape of the inter-sentence attention stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            layers: 2,
            heads: 4,
            ff_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub arch: ArchConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let d = self.features.dim;
        let a = &self.arch;
        if a.heads == 0 || !d.is_multiple_of(a.heads) {
            return Err(Error::InvalidArgument(format!(
                "dim {d} is not divisible by {} heads",
                a.heads
            )));
        }
        if a.ff_dim == 0 {
            return Err(Error::InvalidArgument("ff_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of one pre-norm transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable parameters. The same type doubles as the gradient
/// accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Projection of raw features to the model width.
    pub proj: Array2<f64>,
    pub proj_bias: Array1<f64>,
    pub layers: Vec<LayerParams>,
    pub w_sum: Array1<f64>,
    pub b_sum: f64,
    pub w_seg: Array1<f64>,
    pub b_seg: f64,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.features.dim;
        let f = config.features.raw_width();
        let ff = config.arch.ff_dim;
        let z1 = |n| Array1::<f64>::zeros(n);
        let z2 = |r, c| Array2::<f64>::zeros((r, c));
        let layers = (0..config.arch.layers)
            .map(|_| LayerParams {
                ln1_gain: z1(d),
                ln1_bias: z1(d),
                wq: z2(d, d),
                bq: z1(d),
                wk: z2(d, d),
                bk: z1(d),
                wv: z2(d, d),
                bv: z1(d),
                wo: z2(d, d),
                bo: z1(d),
                ln2_gain: z1(d),
                ln2_bias: z1(d),
                w1: z2(d, ff),
                b1: z1(ff),
                w2: z2(ff, d),
                b2: z1(d),
            })
            .collect();
        ModelParams {
            config: config.clone(),
            proj: z2(f, d),
            proj_bias: z1(d),
            layers,
            w_sum: z1(d),
            b_sum: 0.0,
            w_seg: z1(d),
            b_seg: 0.0,
        }
    }

    /// Xavier-uniform weights, unit layer-norm gains, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        let d = config.features.dim;
        p.proj = xavier(&mut rng, config.features.raw_width(), d);
        for l in &mut p.layers {
            l.ln1_gain.fill(1.0);
            l.ln2_gain.fill(1.0);
            l.wq = xavier(&mut rng, d, d);
            l.wk = xavier(&mut rng, d, d);
            l.wv = xavier(&mut rng, d, d);
            l.wo = xavier(&mut rng, d, d);
            l.w1 = xavier(&mut rng, d, config.arch.ff_dim);
            l.w2 = xavier(&mut rng, config.arch.ff_dim, d);
        }
        let head_bound = (1.0 / d as f64).sqrt();
        p.w_sum = Array1::from_shape_fn(d, |_| rng.gen_range(-head_bound..head_bound));
        p.w_seg = Array1::from_shape_fn(d, |_| rng.gen_range(-head_bound..head_bound));
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Visits every tensor as `(name, shape, values)` in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64])) {
        let s1 = |a: &'a Array1<f64>| a.as_slice().expect("contiguous");
        let s2 = |a: &'a Array2<f64>| a.as_slice().expect("contiguous");
        f("proj", self.proj.shape(), s2(&self.proj));
        f("proj_bias", self.proj_bias.shape(), s1(&self.proj_bias));
        for (i, l) in self.layers.iter().enumerate() {
            let tensors: [(&str, &'a [usize], &'a [f64]); 16] = [
                ("ln1_gain", l.ln1_gain.shape(), s1(&l.ln1_gain)),
                ("ln1_bias", l.ln1_bias.shape(), s1(&l.ln1_bias)),
                ("wq", l.wq.shape(), s2(&l.wq)),
                ("bq", l.bq.shape(), s1(&l.bq)),
                ("wk", l.wk.shape(), s2(&l.wk)),
                ("bk", l.bk.shape(), s1(&l.bk)),
                ("wv", l.wv.shape(), s2(&l.wv)),
                ("bv", l.bv.shape(), s1(&l.bv)),
                ("wo", l.wo.shape(), s2(&l.wo)),
                ("bo", l.bo.shape(), s1(&l.bo)),
                ("ln2_gain", l.ln2_gain.shape(), s1(&l.ln2_gain)),
                ("ln2_bias", l.ln2_bias.shape(), s1(&l.ln2_bias)),
                ("w1", l.w1.shape(), s2(&l.w1)),
                ("b1", l.b1.shape(), s1(&l.b1)),
                ("w2", l.w2.shape(), s2(&l.w2)),
                ("b2", l.b2.shape(), s1(&l.b2)),
            ];
            for (name, shape, data) in tensors {
                f(&format!("layer{i}.{name}"), shape, data);
            }
        }
        f("w_sum", self.w_sum.shape(), s1(&self.w_sum));
        f("b_sum", &[], std::slice::from_ref(&self.b_sum));
        f("w_seg", self.w_seg.shape(), s1(&self.w_seg));
        f("b_seg", &[], std::slice::from_ref(&self.b_seg));
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order and names.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        fn m1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("contiguous")
        }
        fn m2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("contiguous")
        }
        f("proj", m2(&mut self.proj));
        f("proj_bias", m1(&mut self.proj_bias));
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            f(&p("ln1_gain"), m1(&mut l.ln1_gain));
            f(&p("ln1_bias"), m1(&mut l.ln1_bias));
            f(&p("wq"), m2(&mut l.wq));
            f(&p("bq"), m1(&mut l.bq));
            f(&p("wk"), m2(&mut l.wk));
            f(&p("bk"), m1(&mut l.bk));
            f(&p("wv"), m2(&mut l.wv));
            f(&p("bv"), m1(&mut l.bv));
            f(&p("wo"), m2(&mut l.wo));
            f(&p("bo"), m1(&mut l.bo));
            f(&p("ln2_gain"), m1(&mut l.ln2_gain));
            f(&p("ln2_bias"), m1(&mut l.ln2_bias));
            f(&p("w1"), m2(&mut l.w1));
            f(&p("b1"), m1(&mut l.b1));
            f(&p("w2"), m2(&mut l.w2));
            f(&p("b2"), m1(&mut l.b2));
        }
        f("w_sum", m1(&mut self.w_sum));
        f("b_sum", std::slice::from_mut(&mut self.b_sum));
        f("w_seg", m1(&mut self.w_seg));
        f("b_seg", std::slice::from_mut(&mut self.b_seg));
    }

    /// Flattened copy of all parameters in visit order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.visit_mut(&mut |_, v| {
            let len = v.len();
            for (x, g) in v.iter_mut().zip(&flat[offset..offset + len]) {
                *x += scale * g;
            }
            offset += len;
        });
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visit_orders_agree() {
        let p = ModelParams::init(&ModelConfig::default(), 1).unwrap();
        let mut names = Vec::new();
        p.visit(&mut |n, shape, v| {
            assert_eq!(shape.iter().product::<usize>().max(1), v.len());
            names.push(n.to_string());
        });
        let mut q = p.clone();
        let mut names_mut = Vec::new();
        q.visit_mut(&mut |n, _| names_mut.push(n.to_string()));
        assert_eq!(names, names_mut);
        assert_eq!(names.len(), 2 + 16 * 2 + 4);
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::default();
        assert_eq!(
            ModelParams::init(&c, 3).unwrap(),
            ModelParams::init(&c, 3).unwrap()
        );
        assert_ne!(
            ModelParams::init(&c, 3).unwrap(),
            ModelParams::init(&c, 4).unwrap()
        );
    }

    #[test]
    fn add_scaled_is_axpy() {
        let c = ModelConfig::default();
        let a = ModelParams::init(&c, 1).unwrap();
        let b = ModelParams::init(&c, 2).unwrap();
        let mut x = a.clone();
        x.add_scaled(&b, -0.5);
        for ((x, a), b) in x.to_flat().iter().zip(a.to_flat()).zip(b.to_flat()) {
            assert_eq!(*x, a - 0.5 * b);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::default();
        c.arch.heads = 5;
        assert!(ModelParams::init(&c, 0).is_err());
    }
}
