//! TinyZoneNet: a small encoder/decoder segmentation network.
//!
//! ```text
//! in(1) -conv-> e1(16) -pool-> conv-> e2(32) -pool-> conv-> e3(64) -pool-> conv-> b(128)
//!                                                                         + attention
//! logits(3) <-1x1- d1(16) <-conv(up+e1)- d2(32) <-conv(up+e2)- d3(64) <-conv(up+e3)-
//! ```
//!
//! Every conv is 3×3 followed by SiLU; encoder stages downsample with 2×2
//! average pooling. Decoder stages upsample with a 2×2
//! stride-2 transposed conv, add the matching encoder output, convolve, and
//! apply dropout. `output_stride` 2 or 4 drops the shallowest decoder stages
//! and projects a coarser map.
//!
//! The trunk (everything up to the first decoder activation) has no dropout,
//! so Monte Carlo sampling reuses one trunk pass across all stochastic tails.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::attention::{attention_backward, attention_forward, AttnCache, AttnWeights};
use super::ops::{
    avgpool2_backward, avgpool2_forward, conv1_backward, conv1_forward, conv3_backward, conv3_forward, silu,
    silu_backward_inplace, upconv2_backward, upconv2_forward, ConvGrads, Scratch,
};
use super::params::{Gradients, Param, ParamSet};
use super::prob::{softmax, ProbMap};
use super::tensor::Tensor;
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// 1 / E[silu(z)^2] for standard normal z: keeps activations near unit scale
/// where He-normal (gain 2, tuned for ReLU) lets them shrink layer by layer.
const SILU_GAIN_SQ: f64 = 2.8126;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub input_size: usize,
    pub encoder_channels: [usize; 3],
    pub bottleneck_channels: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub use_lora_bottleneck: bool,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub output_stride: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            encoder_channels: [16, 32, 64],
            bottleneck_channels: 128,
            num_classes: NUM_CLASSES,
            dropout_rate: 0.1,
            use_lora_bottleneck: false,
            lora_rank: 4,
            lora_alpha: 4.0,
            output_stride: 1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if self.lora_rank < 1 {
            return bad("lora_rank must be >= 1");
        }
        if !self.lora_alpha.is_finite() {
            return bad("lora_alpha must be finite");
        }
        if self.num_classes != NUM_CLASSES {
            return bad("num_classes must be 3");
        }
        if self.input_size < 8 || !self.input_size.is_multiple_of(8) {
            return bad("input_size must be a positive multiple of 8");
        }
        if ![1, 2, 4].contains(&self.output_stride) {
            return bad("output_stride must be 1, 2 or 4");
        }
        if self.encoder_channels.contains(&0) || self.bottleneck_channels == 0 {
            return bad("channel counts must be positive");
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        self.input_size / self.output_stride
    }

    fn decoder_stages(&self) -> usize {
        match self.output_stride {
            1 => 3,
            2 => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Off,
    Stochastic,
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: [Lin; 3],
    bott: Lin,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    lora: Option<[usize; 4]>,
    dec: Vec<(Lin, Lin)>,
    head: Lin,
}

/// Network definition. Holds no weights; parameters live in a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct TinyZoneNet {
    cfg: ArchConfig,
    layout: Layout,
    specs: Vec<(String, Vec<usize>, bool)>,
}

struct ParamSpecs {
    items: Vec<(String, Vec<usize>, bool)>,
}

impl ParamSpecs {
    fn push(&mut self, name: String, shape: Vec<usize>, trainable: bool) -> usize {
        self.items.push((name, shape, trainable));
        self.items.len() - 1
    }

    fn lin(&mut self, name: &str, wshape: Vec<usize>, bias: usize, trainable: bool) -> Lin {
        Lin {
            w: self.push(format!("{name}.weight"), wshape, trainable),
            b: self.push(format!("{name}.bias"), vec![bias], trainable),
        }
    }
}

pub struct TrunkCache {
    x: Vec<f64>,
    enc_pre: [Vec<f64>; 3],
    enc_out: [Vec<f64>; 3],
    pooled: [Vec<f64>; 3],
    bott_pre: Vec<f64>,
    bott_out: Vec<f64>,
    attn: AttnCache,
    attn_out: Vec<f64>,
    dec0_sum: Vec<f64>,
    dec0_pre: Vec<f64>,
    dec0_out: Vec<f64>,
}

pub struct TailCache {
    /// Dropout scale per decoder stage (`None` when dropout is inactive).
    masks: Vec<Option<Vec<f64>>>,
    /// Stage outputs after dropout.
    dropped: Vec<Vec<f64>>,
    /// Conv inputs (`up + skip`) for stages 1.. (stage 0 is in the trunk).
    sums: Vec<Vec<f64>>,
    /// Conv outputs before the activation for stages 1..
    pres: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

pub struct SampleCache {
    trunk: TrunkCache,
    tail: TailCache,
}

/// Activations retained by [`TinyZoneNet::forward_train`] for backprop.
pub struct ForwardCache {
    samples: Vec<SampleCache>,
}

struct Accum {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Accum {
    fn new(params: &ParamSet) -> Self {
        Self {
            bufs: params
                .params()
                .iter()
                .map(|p| p.trainable.then(|| vec![0.0; p.len()]))
                .collect(),
        }
    }

    fn two(&mut self, a: usize, b: usize) -> (Option<&mut [f64]>, Option<&mut [f64]>) {
        assert!(a < b);
        let (lo, hi) = self.bufs.split_at_mut(b);
        (lo[a].as_deref_mut(), hi[0].as_deref_mut())
    }

    fn add(&mut self, i: usize, g: &[f64]) {
        if let Some(buf) = self.bufs[i].as_deref_mut() {
            buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }

    fn finish(self, params: &ParamSet) -> Gradients {
        let indices = params.trainable_indices();
        let mut bufs = self.bufs;
        let values = indices.iter().map(|&i| bufs[i].take().unwrap()).collect();
        Gradients { indices, values }
    }
}

impl TinyZoneNet {
    pub fn new(cfg: ArchConfig) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, c3] = cfg.encoder_channels;
        let cb = cfg.bottleneck_channels;
        let base_trainable = !cfg.use_lora_bottleneck;
        let mut s = ParamSpecs { items: Vec::new() };
        let enc = [
            s.lin("enc1", vec![c1, 1, 3, 3], c1, true),
            s.lin("enc2", vec![c2, c1, 3, 3], c2, true),
            s.lin("enc3", vec![c3, c2, 3, 3], c3, true),
        ];
        let bott = s.lin("bottleneck", vec![cb, c3, 3, 3], cb, base_trainable);
        let wq = s.push("attn.q.weight".into(), vec![cb, cb], base_trainable);
        let wk = s.push("attn.k.weight".into(), vec![cb, cb], base_trainable);
        let wv = s.push("attn.v.weight".into(), vec![cb, cb], base_trainable);
        let wo = s.push("attn.o.weight".into(), vec![cb, cb], base_trainable);
        let lora = cfg.use_lora_bottleneck.then(|| {
            let r = cfg.lora_rank;
            [
                s.push("attn.q.lora_a".into(), vec![r, cb], true),
                s.push("attn.q.lora_b".into(), vec![cb, r], true),
                s.push("attn.v.lora_a".into(), vec![r, cb], true),
                s.push("attn.v.lora_b".into(), vec![cb, r], true),
            ]
        });
        let enc_ch = cfg.encoder_channels;
        let mut dec = Vec::new();
        let mut cin = cb;
        for k in 0..cfg.decoder_stages() {
            let cout = enc_ch[2 - k];
            let name = format!("dec{}", 3 - k);
            let up = s.lin(&format!("{name}.up"), vec![cout, 2, 2, cin], cout, true);
            let conv = s.lin(&format!("{name}.conv"), vec![cout, cout, 3, 3], cout, true);
            dec.push((up, conv));
            cin = cout;
        }
        let head = s.lin("head", vec![cfg.num_classes, cin], cfg.num_classes, true);
        Ok(Self {
            layout: Layout {
                enc,
                bott,
                wq,
                wk,
                wv,
                wo,
                lora,
                dec,
                head,
            },
            specs: s.items,
            cfg,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    /// Deterministic initialization. Convolutions use fan-in normal weights with
    /// the SiLU gain and zero biases; LoRA `A` is Gaussian (from its own stream,
    /// so base weights do not depend on whether adapters exist) and LoRA `B` is
    /// zero.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut base = rng::stream(seed, &[tag::INIT]);
        let mut lora_rng = rng::stream(seed, &[tag::INIT_LORA]);
        let gaussian = |rng: &mut rng::StreamRng, n: usize, std: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
                .collect()
        };
        let params = self
            .specs
            .iter()
            .map(|(name, shape, trainable)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".bias") || name.ends_with("lora_b") {
                    vec![0.0; n]
                } else if name.ends_with("lora_a") {
                    gaussian(&mut lora_rng, n, 1.0 / (shape[1] as f64).sqrt())
                } else if name.starts_with("attn.") {
                    gaussian(&mut base, n, 1.0 / (shape[1] as f64).sqrt())
                } else if name.starts_with("head") {
                    gaussian(&mut base, n, (1.0 / shape[1] as f64).sqrt())
                } else {
                    let fan_in: usize = if name.contains(".up.") {
                        shape[3]
                    } else {
                        shape[1..].iter().product()
                    };
                    gaussian(&mut base, n, (SILU_GAIN_SQ / fan_in as f64).sqrt())
                };
                Param {
                    name: name.clone(),
                    shape: shape.clone(),
                    trainable: *trainable,
                    data,
                }
            })
            .collect();
        ParamSet::new(params)
    }

    fn check_params(&self, params: &ParamSet) -> Result<()> {
        let ok = params.len() == self.specs.len()
            && params.params().iter().zip(&self.specs).all(|(p, (name, shape, tr))| {
                &p.name == name && &p.shape == shape && p.trainable == *tr && p.len() == shape.iter().product::<usize>()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "parameter set does not match the architecture".into(),
            ))
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = self.cfg.input_size;
        let (_, c, h, w) = input.shape();
        if c != 1 || h != s || w != s {
            return Err(Error::ShapeMismatch(format!(
                "input ({c},{h},{w}) but network expects (1,{s},{s})"
            )));
        }
        Ok(())
    }

    fn attn_weights<'a>(&self, params: &'a ParamSet) -> AttnWeights<'a> {
        let l = &self.layout;
        let d = |i: usize| params.get(i).data.as_slice();
        AttnWeights {
            wq: d(l.wq),
            wk: d(l.wk),
            wv: d(l.wv),
            wo: d(l.wo),
            lora: l.lora.map(|[a, b, c, e]| (d(a), d(b), d(c), d(e))),
            lora_alpha: self.cfg.lora_alpha,
            lora_rank: self.cfg.lora_rank,
        }
    }

    fn side(&self, level: usize) -> usize {
        self.cfg.input_size >> level
    }

    /// Deterministic part of the forward pass for one sample.
    pub fn trunk(&self, params: &ParamSet, x: &[f64], scratch: &mut Scratch) -> TrunkCache {
        let l = &self.layout;
        let d = |i: usize| params.get(i).data.as_slice();
        let ch = self.cfg.encoder_channels;
        let cb = self.cfg.bottleneck_channels;

        let mut enc_pre: [Vec<f64>; 3] = Default::default();
        let mut enc_out: [Vec<f64>; 3] = Default::default();
        let mut pooled: [Vec<f64>; 3] = Default::default();
        let mut cin = 1;
        for k in 0..3 {
            let s = self.side(k);
            let input = if k == 0 { x } else { &pooled[k - 1] };
            let pre = conv3_forward(input, cin, s, s, d(l.enc[k].w), d(l.enc[k].b), ch[k], scratch);
            let a = silu(&pre);
            pooled[k] = avgpool2_forward(&a, ch[k], s, s);
            enc_pre[k] = pre;
            enc_out[k] = a;
            cin = ch[k];
        }
        let sb = self.side(3);
        let bott_pre = conv3_forward(&pooled[2], ch[2], sb, sb, d(l.bott.w), d(l.bott.b), cb, scratch);
        let bott_out = silu(&bott_pre);
        let (attn_out, attn) = attention_forward(&self.attn_weights(params), &bott_out, cb, sb * sb);

        let (up, conv) = l.dec[0];
        let s0 = self.side(2);
        let mut sum = upconv2_forward(&attn_out, cb, sb, sb, d(up.w), d(up.b), ch[2]);
        sum.iter_mut().zip(&enc_out[2]).for_each(|(a, b)| *a += b);
        let dec0_pre = conv3_forward(&sum, ch[2], s0, s0, d(conv.w), d(conv.b), ch[2], scratch);
        let dec0_out = silu(&dec0_pre);

        TrunkCache {
            x: x.to_vec(),
            enc_pre,
            enc_out,
            pooled,
            bott_pre,
            bott_out,
            attn,
            attn_out,
            dec0_sum: sum,
            dec0_pre,
            dec0_out,
        }
    }

    fn dropout(&self, a: &[f64], mode: DropoutMode, rng: &mut impl Rng) -> (Vec<f64>, Option<Vec<f64>>) {
        let p = self.cfg.dropout_rate;
        if mode == DropoutMode::Off || p == 0.0 {
            return (a.to_vec(), None);
        }
        let keep = 1.0 / (1.0 - p);
        // Drop when a uniform u32 falls below p * 2^32.
        let threshold = (p * 4_294_967_296.0) as u64;
        let mask: Vec<f64> = a
            .iter()
            .map(|_| {
                if (rng.random::<u32>() as u64) < threshold {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = a.iter().zip(&mask).map(|(v, m)| v * m).collect();
        (out, Some(mask))
    }

    /// Stochastic part: dropout, remaining decoder stages and the head.
    pub fn tail(
        &self,
        params: &ParamSet,
        trunk: &TrunkCache,
        mode: DropoutMode,
        rng: &mut impl Rng,
        scratch: &mut Scratch,
    ) -> TailCache {
        let l = &self.layout;
        let d = |i: usize| params.get(i).data.as_slice();
        let ch = self.cfg.encoder_channels;
        let mut masks = Vec::new();
        let mut dropped = Vec::new();
        let mut sums = Vec::new();
        let mut pres = Vec::new();

        let (first, m0) = self.dropout(&trunk.dec0_out, mode, rng);
        masks.push(m0);
        dropped.push(first);
        for k in 1..l.dec.len() {
            let (up, conv) = l.dec[k];
            let s_in = self.side(3 - k);
            let s = self.side(2 - k);
            let (cin, cout) = (ch[3 - k], ch[2 - k]);
            let mut sum = upconv2_forward(&dropped[k - 1], cin, s_in, s_in, d(up.w), d(up.b), cout);
            sum.iter_mut().zip(&trunk.enc_out[2 - k]).for_each(|(a, b)| *a += b);
            let pre = conv3_forward(&sum, cout, s, s, d(conv.w), d(conv.b), cout, scratch);
            let (dr, m) = self.dropout(&silu(&pre), mode, rng);
            sums.push(sum);
            pres.push(pre);
            masks.push(m);
            dropped.push(dr);
        }
        let last = dropped.last().unwrap();
        let cin = ch[3 - l.dec.len()];
        let so = self.cfg.output_size();
        let logits = conv1_forward(last, cin, so * so, d(l.head.w), d(l.head.b), self.cfg.num_classes);
        TailCache {
            masks,
            dropped,
            sums,
            pres,
            logits,
        }
    }

    fn logits_tensor(&self, n: usize, data: Vec<f64>) -> Tensor {
        let so = self.cfg.output_size();
        Tensor::from_vec(n, self.cfg.num_classes, so, so, data).expect("logit shape")
    }

    /// Logits `(n, 3, H/stride, W/stride)`. Samples are processed in order and
    /// dropout masks are drawn from `rng` stage by stage.
    pub fn forward(&self, params: &ParamSet, input: &Tensor, mode: DropoutMode, rng: &mut impl Rng) -> Result<Tensor> {
        self.check_params(params)?;
        self.check_input(input)?;
        let mut scratch = Scratch::default();
        let mut data = Vec::new();
        for i in 0..input.batch() {
            let trunk = self.trunk(params, input.sample(i), &mut scratch);
            let tail = self.tail(params, &trunk, mode, rng, &mut scratch);
            data.extend_from_slice(&tail.logits);
        }
        Ok(self.logits_tensor(input.batch(), data))
    }

    /// Forward pass that keeps activations for [`TinyZoneNet::backward`].
    pub fn forward_train(
        &self,
        params: &ParamSet,
        input: &Tensor,
        mode: DropoutMode,
        rng: &mut impl Rng,
    ) -> Result<(Tensor, ForwardCache)> {
        self.check_params(params)?;
        self.check_input(input)?;
        let mut scratch = Scratch::default();
        let mut data = Vec::new();
        let mut samples = Vec::with_capacity(input.batch());
        for i in 0..input.batch() {
            let trunk = self.trunk(params, input.sample(i), &mut scratch);
            let tail = self.tail(params, &trunk, mode, rng, &mut scratch);
            data.extend_from_slice(&tail.logits);
            samples.push(SampleCache { trunk, tail });
        }
        Ok((self.logits_tensor(input.batch(), data), ForwardCache { samples }))
    }

    /// Mean softmax over `passes` stochastic forward passes per sample.
    ///
    /// The mean is accumulated incrementally (`m += (p - m) / k`), so identical
    /// passes reproduce the single-pass probabilities bit for bit.
    pub fn mc_mean_probs(
        &self,
        params: &ParamSet,
        input: &Tensor,
        passes: usize,
        rng: &mut impl Rng,
    ) -> Result<ProbMap> {
        self.check_params(params)?;
        self.check_input(input)?;
        if passes == 0 {
            return Err(Error::InvalidInput("at least one Monte Carlo pass".into()));
        }
        let mut scratch = Scratch::default();
        let c = self.cfg.num_classes;
        let so = self.cfg.output_size();
        let mut data = Vec::with_capacity(input.batch() * c * so * so);
        for i in 0..input.batch() {
            let trunk = self.trunk(params, input.sample(i), &mut scratch);
            let mut mean: Vec<f64> = Vec::new();
            for k in 1..=passes {
                let tail = self.tail(params, &trunk, DropoutMode::Stochastic, rng, &mut scratch);
                let p = softmax(&self.logits_tensor(1, tail.logits)).into_tensor().into_data();
                if k == 1 {
                    mean = p;
                } else {
                    let kf = k as f64;
                    mean.iter_mut().zip(&p).for_each(|(m, v)| *m += (v - *m) / kf);
                }
            }
            data.extend_from_slice(&mean);
        }
        Ok(super::prob::ProbMap::new_unchecked(
            self.logits_tensor(input.batch(), data),
        ))
    }

    /// Gradients of `sum_i <dlogits_i, logits_i>` with respect to the
    /// trainable parameters. Frozen parameters get no entry.
    pub fn backward(&self, params: &ParamSet, cache: &ForwardCache, dlogits: &Tensor) -> Result<Gradients> {
        self.check_params(params)?;
        if dlogits.batch() != cache.samples.len()
            || dlogits.sample_len() != cache.samples.first().map_or(0, |s| s.tail.logits.len())
        {
            return Err(Error::ShapeMismatch("logit gradient does not match cache".into()));
        }
        let mut acc = Accum::new(params);
        let mut scratch = Scratch::default();
        for (i, sc) in cache.samples.iter().enumerate() {
            self.backward_sample(params, sc, dlogits.sample(i), &mut acc, &mut scratch);
        }
        Ok(acc.finish(params))
    }

    fn backward_sample(
        &self,
        params: &ParamSet,
        sc: &SampleCache,
        dlogits: &[f64],
        acc: &mut Accum,
        scratch: &mut Scratch,
    ) {
        let l = &self.layout;
        let d = |i: usize| params.get(i).data.as_slice();
        let ch = self.cfg.encoder_channels;
        let cb = self.cfg.bottleneck_channels;
        let (trunk, tail) = (&sc.trunk, &sc.tail);
        let nd = l.dec.len();

        // head
        let so = self.cfg.output_size();
        let cin_head = ch[3 - nd];
        let mut dcur = vec![0.0; cin_head * so * so];
        {
            let (dw, db) = acc.two(l.head.w, l.head.b);
            conv1_backward(
                &tail.dropped[nd - 1],
                cin_head,
                so * so,
                d(l.head.w),
                self.cfg.num_classes,
                dlogits,
                ConvGrads {
                    dx: Some(&mut dcur),
                    dw,
                    db,
                },
            );
        }

        let mut denc: [Vec<f64>; 3] = [
            vec![0.0; trunk.enc_out[0].len()],
            vec![0.0; trunk.enc_out[1].len()],
            vec![0.0; trunk.enc_out[2].len()],
        ];

        // decoder, shallowest stage first
        for k in (0..nd).rev() {
            let (up, conv) = l.dec[k];
            let cout = ch[2 - k];
            let s = self.side(2 - k);
            let (pre, sum) = if k == 0 {
                (&trunk.dec0_pre, &trunk.dec0_sum)
            } else {
                (&tail.pres[k - 1], &tail.sums[k - 1])
            };
            if let Some(m) = &tail.masks[k] {
                dcur.iter_mut().zip(m).for_each(|(g, m)| *g *= m);
            }
            silu_backward_inplace(pre, &mut dcur);
            let mut dsum = vec![0.0; sum.len()];
            {
                let (dw, db) = acc.two(conv.w, conv.b);
                conv3_backward(
                    sum,
                    cout,
                    s,
                    s,
                    d(conv.w),
                    cout,
                    &dcur,
                    ConvGrads {
                        dx: Some(&mut dsum),
                        dw,
                        db,
                    },
                    scratch,
                );
            }
            denc[2 - k].iter_mut().zip(&dsum).for_each(|(a, b)| *a += b);
            let (cin, s_in, input) = if k == 0 {
                (cb, self.side(3), &trunk.attn_out)
            } else {
                (ch[3 - k], self.side(3 - k), &tail.dropped[k - 1])
            };
            let mut dinput = vec![0.0; input.len()];
            {
                let (dw, db) = acc.two(up.w, up.b);
                upconv2_backward(
                    input,
                    cin,
                    s_in,
                    s_in,
                    d(up.w),
                    cout,
                    &dsum,
                    ConvGrads {
                        dx: Some(&mut dinput),
                        dw,
                        db,
                    },
                );
            }
            dcur = dinput;
        }

        // attention
        let sb = self.side(3);
        let base_trainable = params.get(l.wq).trainable;
        let mut dbott = vec![0.0; trunk.bott_out.len()];
        let g = attention_backward(
            &self.attn_weights(params),
            &trunk.attn,
            &trunk.bott_out,
            &dcur,
            cb,
            sb * sb,
            base_trainable,
            &mut dbott,
        );
        if base_trainable {
            acc.add(l.wq, &g.wq);
            acc.add(l.wk, &g.wk);
            acc.add(l.wv, &g.wv);
            acc.add(l.wo, &g.wo);
        }
        if let Some([aq, bq, av, bv]) = l.lora {
            acc.add(aq, &g.aq);
            acc.add(bq, &g.bq);
            acc.add(av, &g.av);
            acc.add(bv, &g.bv);
        }

        // bottleneck conv
        silu_backward_inplace(&trunk.bott_pre, &mut dbott);
        let mut dpool = vec![0.0; trunk.pooled[2].len()];
        {
            let (dw, db) = acc.two(l.bott.w, l.bott.b);
            conv3_backward(
                &trunk.pooled[2],
                ch[2],
                sb,
                sb,
                d(l.bott.w),
                cb,
                &dbott,
                ConvGrads {
                    dx: Some(&mut dpool),
                    dw,
                    db,
                },
                scratch,
            );
        }

        // encoder
        for k in (0..3).rev() {
            let s = self.side(k);
            avgpool2_backward(&dpool, ch[k], s, s, &mut denc[k]);
            let mut da = std::mem::take(&mut denc[k]);
            silu_backward_inplace(&trunk.enc_pre[k], &mut da);
            let cin = if k == 0 { 1 } else { ch[k - 1] };
            let input = if k == 0 { &trunk.x } else { &trunk.pooled[k - 1] };
            let mut dx = if k == 0 { Vec::new() } else { vec![0.0; input.len()] };
            {
                let (dw, db) = acc.two(l.enc[k].w, l.enc[k].b);
                let dxo = if k == 0 { None } else { Some(dx.as_mut_slice()) };
                conv3_backward(
                    input,
                    cin,
                    s,
                    s,
                    d(l.enc[k].w),
                    ch[k],
                    &da,
                    ConvGrads { dx: dxo, dw, db },
                    scratch,
                );
            }
            dpool = dx;
        }
    }
}
