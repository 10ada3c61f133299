use rayon::prelude::*;

use super::layers::{relu, leaky_relu_backward, softmax_channels, softmax_channels_backward, Conv3d, Grads};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::{NetError, NetKind, NetSpec};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    conv_a: Conv3d,
    conv_b: Conv3d,
    /// Pointwise projection on the skip path when the width changes.
    proj: Option<Conv3d>,
}

#[derive(Clone, Debug)]
struct BlockTrace<T> {
    input: Tensor<T>,
    a: Tensor<T>,
    a_act: Tensor<T>,
    sum: Tensor<T>,
}

#[derive(Clone, Debug)]
struct SampleTrace<T> {
    /// `(input, pre-activation)` for each stem convolution.
    stem: Vec<(Tensor<T>, Tensor<T>)>,
    blocks: Vec<BlockTrace<T>>,
    feature_channels: Vec<usize>,
    concat: Tensor<T>,
    head: Tensor<T>,
    head_act: Tensor<T>,
    probs: Tensor<T>,
}

/// SSCNet-style generator. See the module docs of [`crate::nets`].
#[derive(Clone, Debug)]
pub struct Generator<T> {
    spec: NetSpec,
    stem: Vec<Conv3d>,
    blocks: Vec<ResBlock>,
    head_a: Conv3d,
    head_b: Conv3d,
    template: ParamStore<T>,
    tape: Option<Vec<SampleTrace<T>>>,
}

/// Stride factors of the stem: 2s first, then whatever remains.
fn stem_strides(scale: usize) -> Vec<usize> {
    let mut s = scale;
    let mut out = Vec::new();
    while s % 2 == 0 {
        out.push(2);
        s /= 2;
    }
    if s > 1 {
        out.push(s);
    }
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    out.add_assign(b);
    out
}

fn relu_backward<T: Scalar>(pre: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    leaky_relu_backward(pre, g, T::zero())
}

impl<T: Scalar> Generator<T> {
    pub fn new(spec: NetSpec) -> Result<Self, NetError> {
        if spec.kind != NetKind::Generator {
            return Err(NetError::Config("spec does not describe a generator".into()));
        }
        spec.validate()?;
        let mut ps = ParamStore::new(0);
        let stem_w = spec.widths[0];
        let mut stem = Vec::new();
        let mut in_ch = 1;
        for (n, s) in stem_strides(spec.grid.input_scale).into_iter().enumerate() {
            let k = if s <= 3 { 3 } else if s % 2 == 1 { s } else { s + 1 };
            stem.push(Conv3d::declare(&mut ps, &format!("stem{n}"), in_ch, stem_w, k, s, (k - 1) / 2, 1, true));
            in_ch = stem_w;
        }
        let mut blocks = Vec::new();
        let n_blocks = spec.dilations.len();
        for b in 0..n_blocks {
            let w = spec.widths[b + 1];
            let d = spec.dilations[b];
            let conv_a = Conv3d::declare(&mut ps, &format!("block{b}.conv_a"), in_ch, w, 3, 1, d, d, true);
            let conv_b = Conv3d::declare(&mut ps, &format!("block{b}.conv_b"), w, w, 3, 1, d, d, true);
            let proj = (in_ch != w)
                .then(|| Conv3d::declare(&mut ps, &format!("block{b}.proj"), in_ch, w, 1, 1, 0, 1, false));
            blocks.push(ResBlock { conv_a, conv_b, proj });
            in_ch = w;
        }
        let concat_ch = spec.widths[..=n_blocks].iter().sum();
        let head_w = spec.widths[n_blocks + 1];
        let head_a = Conv3d::declare(&mut ps, "head_a", concat_ch, head_w, 1, 1, 0, 1, true);
        let head_b = Conv3d::declare(&mut ps, "head_b", head_w, spec.grid.num_classes, 1, 1, 0, 1, true);
        Ok(Self {
            spec,
            stem,
            blocks,
            head_a,
            head_b,
            template: ps,
            tape: None,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    /// Fresh parameters: fan-in scaled uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamStore<T> {
        let mut ps = self.template.clone();
        ps.seed = seed;
        ps.initialize();
        ps
    }

    /// Index of the final pointwise convolution's weight.
    pub fn output_weight(&self) -> usize {
        self.head_b.weight
    }

    fn check(&self, params: &ParamStore<T>, xs: &[Tensor<T>]) -> Result<(), NetError> {
        if !params.same_layout(&self.template) {
            return Err(NetError::Layout);
        }
        let d = self.spec.grid.input_grid().dims();
        let want = vec![1, d[0], d[1], d[2]];
        for x in xs {
            if x.shape != want {
                return Err(NetError::Shape(format!(
                    "generator input {:?}, expected {:?}",
                    x.shape, want
                )));
            }
        }
        Ok(())
    }

    fn forward_sample(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> SampleTrace<T> {
        let mut stem = Vec::with_capacity(self.stem.len());
        let mut h = x.clone();
        for conv in &self.stem {
            let pre = conv.forward(ps, &h);
            let next = relu(&pre);
            stem.push((h, pre));
            h = next;
        }
        let mut features = vec![h.clone()];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let a = blk.conv_a.forward(ps, &h);
            let a_act = relu(&a);
            let b = blk.conv_b.forward(ps, &a_act);
            let skip = match &blk.proj {
                Some(p) => p.forward(ps, &h),
                None => h.clone(),
            };
            let sum = add(&b, &skip);
            let out = relu(&sum);
            blocks.push(BlockTrace {
                input: h,
                a,
                a_act,
                sum,
            });
            features.push(out.clone());
            h = out;
        }
        let feature_channels = features.iter().map(|f| f.channels()).collect();
        let concat = Tensor::concat_channels(&features.iter().collect::<Vec<_>>());
        let head = self.head_a.forward(ps, &concat);
        let head_act = relu(&head);
        let logits = self.head_b.forward(ps, &head_act);
        let probs = softmax_channels(&logits);
        SampleTrace {
            stem,
            blocks,
            feature_channels,
            concat,
            head,
            head_act,
            probs,
        }
    }

    fn backward_sample(&self, ps: &ParamStore<T>, tr: &SampleTrace<T>, gprobs: &Tensor<T>) -> Grads<T> {
        let mut grads = Vec::new();
        let glogits = softmax_channels_backward(&tr.probs, gprobs);
        let (g, g_head_act) = self.head_b.backward(ps, &tr.head_act, &glogits, true);
        grads.extend(g);
        let g_head = relu_backward(&tr.head, &g_head_act.expect("requested"));
        let (g, g_concat) = self.head_a.backward(ps, &tr.concat, &g_head, true);
        grads.extend(g);
        let g_features = g_concat.expect("requested").split_channels(&tr.feature_channels);

        let mut g_out = g_features[self.blocks.len()].clone();
        for (b, blk) in self.blocks.iter().enumerate().rev() {
            let t = &tr.blocks[b];
            let g_sum = relu_backward(&t.sum, &g_out);
            let (g, g_a_act) = blk.conv_b.backward(ps, &t.a_act, &g_sum, true);
            grads.extend(g);
            let g_a = relu_backward(&t.a, &g_a_act.expect("requested"));
            let (g, g_in) = blk.conv_a.backward(ps, &t.input, &g_a, true);
            grads.extend(g);
            let mut g_in = g_in.expect("requested");
            match &blk.proj {
                Some(p) => {
                    let (g, g_skip) = p.backward(ps, &t.input, &g_sum, true);
                    grads.extend(g);
                    g_in.add_assign(&g_skip.expect("requested"));
                }
                None => g_in.add_assign(&g_sum),
            }
            g_in.add_assign(&g_features[b]);
            g_out = g_in;
        }

        let mut g = g_out;
        for (n, conv) in self.stem.iter().enumerate().rev() {
            let (input, pre) = &tr.stem[n];
            let g_pre = relu_backward(pre, &g);
            let (gr, g_in) = conv.backward(ps, input, &g_pre, n > 0);
            grads.extend(gr);
            if let Some(g_in) = g_in {
                g = g_in;
            }
        }
        grads
    }

    /// Forward pass that records activations for [`Generator::backward`].
    /// Each output is a `[C, H, W, D]` probability tensor.
    pub fn forward(&mut self, params: &ParamStore<T>, xs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, NetError> {
        self.check(params, xs)?;
        let traces: Vec<SampleTrace<T>> = xs.par_iter().map(|x| self.forward_sample(params, x)).collect();
        let out = traces.iter().map(|t| t.probs.clone()).collect();
        self.tape = Some(traces);
        Ok(out)
    }

    /// Forward pass without recording.
    pub fn infer(&self, params: &ParamStore<T>, xs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, NetError> {
        self.check(params, xs)?;
        Ok(xs
            .par_iter()
            .map(|x| self.forward_sample(params, x).probs)
            .collect())
    }

    /// Backpropagates `grad_probs` (dLoss/dOutput per sample) through the
    /// recorded pass and accumulates into the gradient slots of `params`.
    /// Consumes the recording.
    pub fn backward(&mut self, params: &mut ParamStore<T>, grad_probs: &[Tensor<T>]) -> Result<(), NetError> {
        let tape = self.tape.take().ok_or(NetError::NoForward)?;
        if tape.len() != grad_probs.len() {
            return Err(NetError::Shape(format!(
                "{} gradients for {} recorded samples",
                grad_probs.len(),
                tape.len()
            )));
        }
        let shared: &ParamStore<T> = params;
        let per_sample: Vec<Grads<T>> = tape
            .par_iter()
            .zip(grad_probs.par_iter())
            .map(|(tr, g)| self.backward_sample(shared, tr, g))
            .collect();
        for grads in per_sample {
            for (idx, g) in grads {
                params.accumulate_grad(idx, &g);
            }
        }
        Ok(())
    }

    pub fn has_recording(&self) -> bool {
        self.tape.is_some()
    }
}
