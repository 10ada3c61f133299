use super::layers::{Conv3d, Grads, Linear, Mode, Norm, Op, SeqTrace, Sequential};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::{NetError, NetKind, NetSpec};
use crate::scalar::Scalar;

/// Global or local, conditional or unconditional discriminator.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    spec: NetSpec,
    net: Sequential,
    /// Index of the flatten op (global variant).
    flatten_at: Option<usize>,
    template: ParamStore<T>,
    tape: Option<SeqTrace<T>>,
    pending_stats: Grads<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(spec: NetSpec) -> Result<Self, NetError> {
        if spec.kind == NetKind::Generator {
            return Err(NetError::Config("spec does not describe a discriminator".into()));
        }
        spec.validate()?;
        let mut ps = ParamStore::new(0);
        let mut net = Sequential::default();
        let classes = spec.grid.num_classes;
        let mut in_ch = classes + usize::from(spec.conditional);
        for (b, ((&w, &k), &s)) in spec
            .widths
            .iter()
            .zip(&spec.kernels)
            .zip(&spec.strides)
            .enumerate()
        {
            let norm = Norm::declare(&mut ps, &format!("block{b}.norm"), spec.normalization, w);
            // The bias is redundant in front of a normalization layer.
            let conv = Conv3d::declare(&mut ps, &format!("block{b}.conv"), in_ch, w, k, s, (k - 1) / 2, 1, norm.is_none());
            net.push(Op::Conv(conv));
            if let Some(n) = norm {
                net.push(Op::Norm(n));
            }
            net.push(Op::LeakyRelu(spec.leaky_slope));
            in_ch = w;
        }
        let mut flatten_at = None;
        match spec.kind {
            NetKind::DiscGlobal => {
                flatten_at = Some(net.ops.len());
                net.push(Op::Flatten);
                let mut width = spec.flatten_width();
                for (n, &out) in spec.fc_widths.iter().enumerate() {
                    net.push(Op::Linear(Linear::declare(&mut ps, &format!("fc{n}"), width, out)));
                    net.push(Op::LeakyRelu(spec.leaky_slope));
                    width = out;
                }
                net.push(Op::Linear(Linear::declare(&mut ps, "logit", width, 1)));
            }
            NetKind::DiscLocal => {
                let out = if spec.single_channel { 1 } else { classes };
                net.push(Op::Conv(Conv3d::declare(&mut ps, "logit", in_ch, out, 1, 1, 0, 1, true)));
                net.push(Op::Upsample(spec.reduction()));
            }
            NetKind::Generator => unreachable!(),
        }
        net.push(Op::Sigmoid);
        Ok(Self {
            spec,
            net,
            flatten_at,
            template: ps,
            tape: None,
            pending_stats: Vec::new(),
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn init_params(&self, seed: u64) -> ParamStore<T> {
        let mut ps = self.template.clone();
        ps.seed = seed;
        ps.initialize();
        ps
    }

    /// Output shape for one sample: `[1]` (global) or `[C or 1, H, W, D]`.
    pub fn output_shape(&self) -> Vec<usize> {
        match self.spec.kind {
            NetKind::DiscGlobal => vec![1],
            _ => {
                let d = self.spec.grid.dims();
                let c = if self.spec.single_channel { 1 } else { self.spec.grid.num_classes };
                vec![c, d[0], d[1], d[2]]
            }
        }
    }

    /// Widths of the fully connected layers including the final logit.
    pub fn fc_shapes(&self) -> Vec<(usize, usize)> {
        self.net
            .ops
            .iter()
            .filter_map(|op| match op {
                Op::Linear(l) => Some((l.inputs, l.outputs)),
                _ => None,
            })
            .collect()
    }

    fn assemble(&self, params: &ParamStore<T>, volumes: &[Tensor<T>], cond: Option<&[Tensor<T>]>) -> Result<Vec<Tensor<T>>, NetError> {
        if !params.same_layout(&self.template) {
            return Err(NetError::Layout);
        }
        let d = self.spec.grid.dims();
        let want = vec![self.spec.grid.num_classes, d[0], d[1], d[2]];
        for v in volumes {
            if v.shape != want {
                return Err(NetError::Shape(format!(
                    "discriminator input {:?}, expected {:?}",
                    v.shape, want
                )));
            }
        }
        if !self.spec.conditional {
            // Unconditional: the conditioning argument is ignored entirely.
            return Ok(volumes.to_vec());
        }
        let cond = cond.ok_or(NetError::MissingCondition)?;
        if cond.len() != volumes.len() {
            return Err(NetError::Shape(format!(
                "{} conditioning channels for {} volumes",
                cond.len(),
                volumes.len()
            )));
        }
        let cwant = vec![1, d[0], d[1], d[2]];
        volumes
            .iter()
            .zip(cond)
            .map(|(v, c)| {
                if c.shape != cwant {
                    return Err(NetError::Shape(format!(
                        "conditioning channel {:?}, expected {:?}",
                        c.shape, cwant
                    )));
                }
                Ok(Tensor::concat_channels(&[v, c]))
            })
            .collect()
    }

    /// Recorded forward pass. Batch-norm running statistics computed in
    /// training mode are held back until [`Discriminator::commit_running_stats`].
    pub fn forward(
        &mut self,
        params: &ParamStore<T>,
        volumes: &[Tensor<T>],
        cond: Option<&[Tensor<T>]>,
        mode: Mode,
    ) -> Result<Vec<Tensor<T>>, NetError> {
        let input = self.assemble(params, volumes, cond)?;
        let (trace, stats) = self.net.forward(params, input, mode);
        let out = trace.acts.last().expect("output").clone();
        self.tape = Some(trace);
        self.pending_stats = stats;
        Ok(out)
    }

    pub fn infer(
        &self,
        params: &ParamStore<T>,
        volumes: &[Tensor<T>],
        cond: Option<&[Tensor<T>]>,
    ) -> Result<Vec<Tensor<T>>, NetError> {
        let input = self.assemble(params, volumes, cond)?;
        let (mut trace, _) = self.net.forward(params, input, Mode::Eval);
        Ok(trace.acts.pop().expect("output"))
    }

    /// Stores the running statistics from the last training-mode forward.
    pub fn commit_running_stats(&mut self, params: &mut ParamStore<T>) {
        for (idx, v) in self.pending_stats.drain(..) {
            params.get_mut(idx).value = v;
        }
    }

    /// Accumulates parameter gradients for `grad_out` (dLoss/dOutput per
    /// sample) and returns dLoss/dVolume for the class channels.
    pub fn backward(
        &mut self,
        params: &mut ParamStore<T>,
        grad_out: Vec<Tensor<T>>,
        need_input_grad: bool,
    ) -> Result<Option<Vec<Tensor<T>>>, NetError> {
        let trace = self.tape.take().ok_or(NetError::NoForward)?;
        let out = trace.acts.last().expect("output");
        if grad_out.len() != out.len() || grad_out.iter().zip(out).any(|(g, o)| g.shape != o.shape) {
            return Err(NetError::Shape("gradient does not match recorded output".into()));
        }
        let g = self.net.backward(params, &trace, grad_out, need_input_grad);
        let classes = self.spec.grid.num_classes;
        Ok(g.map(|gs| {
            gs.into_iter()
                .map(|t| {
                    if self.spec.conditional {
                        t.split_channels(&[classes, 1]).swap_remove(0)
                    } else {
                        t
                    }
                })
                .collect()
        }))
    }

    /// Activation shape entering the flatten op, recorded by the last
    /// forward (global variant only).
    pub fn recorded_flatten_shape(&self) -> Option<Vec<usize>> {
        let at = self.flatten_at?;
        let trace = self.tape.as_ref()?;
        trace.acts[at].first().map(|t| t.shape.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Normalization;
    use crate::voxcore::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    fn small(kind: NetKind, conditional: bool, norm: Normalization) -> NetSpec {
        let mut s = NetSpec::discriminator(GridSpec::cube(12, 3), kind, conditional);
        s.widths = vec![4, 5, 4, 3];
        s.fc_widths = vec![6, 5];
        s.normalization = norm;
        s
    }

    #[test]
    fn output_ranges_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [NetKind::DiscGlobal, NetKind::DiscLocal] {
            for cond in [false, true] {
                let net = Discriminator::<f64>::new(small(kind, cond, Normalization::Instance)).unwrap();
                let ps = net.init_params(1);
                let v = rand_t(&mut rng, &[3, 12, 12, 12]);
                let c = rand_t(&mut rng, &[1, 12, 12, 12]);
                let out = net.infer(&ps, &[v], Some(&[c])).unwrap();
                assert_eq!(out[0].shape, net.output_shape());
                assert!(out[0].data.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn unconditional_ignores_cond_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Discriminator::<f32>::new(small(NetKind::DiscLocal, false, Normalization::Instance)).unwrap();
        let ps = net.init_params(2);
        let v = rand_t(&mut rng, &[3, 12, 12, 12]).cast::<f32>();
        let c = rand_t(&mut rng, &[1, 12, 12, 12]).cast::<f32>();
        let a = net.infer(&ps, &[v.clone()], None).unwrap();
        let b = net.infer(&ps, &[v], Some(&[c])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_requires_and_uses_cond() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Discriminator::<f64>::new(small(NetKind::DiscGlobal, true, Normalization::None)).unwrap();
        let ps = net.init_params(3);
        let v = rand_t(&mut rng, &[3, 12, 12, 12]);
        assert!(matches!(net.infer(&ps, &[v.clone()], None), Err(NetError::MissingCondition)));
        let c1 = rand_t(&mut rng, &[1, 12, 12, 12]);
        let c2 = rand_t(&mut rng, &[1, 12, 12, 12]);
        let a = net.infer(&ps, &[v.clone()], Some(&[c1])).unwrap();
        let b = net.infer(&ps, &[v], Some(&[c2])).unwrap();
        assert!((a[0].data[0] - b[0].data[0]).abs() > 0.0);
    }

    fn weighted(net: &Discriminator<f64>, ps: &ParamStore<f64>, vs: &[Tensor<f64>], cs: &[Tensor<f64>], w: &[Tensor<f64>]) -> f64 {
        let mut n = net.clone();
        n.forward(ps, vs, Some(cs), Mode::Train)
            .unwrap()
            .iter()
            .zip(w)
            .map(|(o, w)| o.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cases = [
            (NetKind::DiscGlobal, Normalization::None),
            (NetKind::DiscLocal, Normalization::Instance),
            (NetKind::DiscLocal, Normalization::Batch),
        ];
        for (kind, norm) in cases {
            let mut net = Discriminator::<f64>::new(small(kind, true, norm)).unwrap();
            let mut ps = net.init_params(5);
            // Move biases and shifts off zero so no activation sits on a kink.
            for (_, p) in ps.iter_mut() {
                if matches!(p.kind, crate::nets::ParamKind::Bias | crate::nets::ParamKind::NormShift) {
                    p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
                }
            }
            let vs = vec![rand_t(&mut rng, &[3, 12, 12, 12]), rand_t(&mut rng, &[3, 12, 12, 12])];
            let cs = vec![rand_t(&mut rng, &[1, 12, 12, 12]), rand_t(&mut rng, &[1, 12, 12, 12])];
            let out = net.forward(&ps, &vs, Some(&cs), Mode::Train).unwrap();
            let w: Vec<Tensor<f64>> = out.iter().map(|o| rand_t(&mut rng, &o.shape)).collect();
            ps.zero_grad();
            let gx = net.backward(&mut ps, w.clone(), true).unwrap().unwrap();
            assert_eq!(gx[0].shape, vec![3, 12, 12, 12]);
            let h = 1e-6;
            for name in ps.names() {
                let p = ps.by_name(&name).unwrap();
                if !p.kind.trainable() {
                    continue;
                }
                let len = p.len();
                for e in [0, len / 3, len - 1] {
                    let mut a = ps.clone();
                    a.by_name_mut(&name).unwrap().value[e] += h;
                    let mut b = ps.clone();
                    b.by_name_mut(&name).unwrap().value[e] -= h;
                    let fd = (weighted(&net, &a, &vs, &cs, &w) - weighted(&net, &b, &vs, &cs, &w)) / (2.0 * h);
                    let an = ps.by_name(&name).unwrap().grad[e];
                    assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "{kind:?}/{norm:?} {name}[{e}]: {fd} vs {an}");
                }
            }
            for (s, e) in [(0, 5), (1, 3000), (1, 5000)] {
                let mut a = vs.clone();
                a[s].data[e] += h;
                let mut b = vs.clone();
                b[s].data[e] -= h;
                let fd = (weighted(&net, &ps, &a, &cs, &w) - weighted(&net, &ps, &b, &cs, &w)) / (2.0 * h);
                assert!((fd - gx[s].data[e]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn wide_grid_geometry_flattens_to_1200() {
        let grid = GridSpec {
            height: 60,
            width: 36,
            depth: 60,
            num_classes: 12,
            ..GridSpec::default()
        };
        let mut net = Discriminator::<f32>::new(NetSpec::discriminator(grid, NetKind::DiscGlobal, false)).unwrap();
        assert_eq!(net.fc_shapes(), vec![(1200, 256), (256, 128), (128, 1)]);
        let ps = net.init_params(0);
        let v = Tensor::<f32>::zeros(&[12, 60, 36, 60]);
        net.forward(&ps, &[v], None, Mode::Eval).unwrap();
        assert_eq!(net.recorded_flatten_shape(), Some(vec![16, 5, 3, 5]));
    }
}
