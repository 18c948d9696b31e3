//! The two-level, two-branch detail-injection network.
//!
//! A PAN branch extracts detail planes at full and half resolution. The
//! fusion branch upsamples the MS image ×2 twice; at each level an
//! injection block adds attention-weighted details to the upsampled image
//! and a multi-scale convolution block refines the result.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{GainMode, TdnetConfig, UpsampleMode, Variant};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::imaging::{decimate, lowpass, mtf_gaussian_kernel, Raster, DEFAULT_SUPPORT};
use crate::rng::{derive_seed, seeded};
use crate::tensor::gradcheck::{op_cases, Builder, GradCase};
use crate::tensor::{kaiming_uniform, zeros_like_bias, Graph, Tensor, Var};

/// HPM denominator floor.
pub const TMRA_EPSILON: f32 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
struct ConvSpec {
    name: String,
    cin: usize,
    cout: usize,
    kernel: usize,
    /// Transposed convolution with this stride.
    transposed: Option<usize>,
}

impl ConvSpec {
    fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        ConvSpec {
            name: name.into(),
            cin,
            cout,
            kernel,
            transposed: None,
        }
    }

    fn weight_shape(&self) -> [usize; 4] {
        match self.transposed {
            Some(_) => [self.cin, self.cout, self.kernel, self.kernel],
            None => [self.cout, self.cin, self.kernel, self.kernel],
        }
    }
}

fn level_names(config: &TdnetConfig) -> Vec<&'static str> {
    if config.levels == 2 {
        vec!["l1", "l2"]
    } else {
        vec!["l1"]
    }
}

/// Every convolution of a configuration, in parameter order.
fn layout(config: &TdnetConfig) -> Vec<ConvSpec> {
    let (c, f, pk) = (config.bands, config.feature_width, config.pan_kernel);
    let mut convs = Vec::new();
    if config.use_pan_branch {
        convs.push(ConvSpec::new("pan.head", 1, f, pk));
        convs.push(ConvSpec::new("pan.res1", f, f, pk));
        convs.push(ConvSpec::new("pan.res2", f, f, pk));
        convs.push(ConvSpec::new("pan.full", f, c, pk));
        if config.levels == 2 {
            convs.push(ConvSpec::new("pan.half", f, c, pk));
        }
    }
    let s = config.level_scale();
    for lvl in level_names(config) {
        match config.upsample_mode {
            UpsampleMode::PixelShuffle => convs.push(ConvSpec::new(format!("{lvl}.up"), c, c * s * s, 3)),
            UpsampleMode::Bilinear => {}
            UpsampleMode::Deconv => convs.push(ConvSpec {
                transposed: Some(s),
                ..ConvSpec::new(format!("{lvl}.up"), c, c, 2 * s)
            }),
        }
        if config.use_mrab && config.gain_mode == GainMode::LearnedAttention {
            convs.push(ConvSpec::new(format!("{lvl}.att1"), 2 * c, f, 3));
            convs.push(ConvSpec::new(format!("{lvl}.att2"), f, c, 3));
        }
        convs.push(ConvSpec::new(format!("{lvl}.mscb.in"), 2 * c, f, 3));
        for &k in &config.mscb_kernels {
            convs.push(ConvSpec::new(format!("{lvl}.mscb.k{k}"), f, config.mscb_width, k));
        }
        convs.push(ConvSpec::new(
            format!("{lvl}.mscb.out"),
            config.mscb_width * config.mscb_kernels.len(),
            c,
            3,
        ));
    }
    convs
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors): (Vec<String>, Vec<Tensor>) = entries.into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        ParamStore { names, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// How the injection block weights the details; the non-learned settings
/// exist to probe the block in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Injection {
    #[default]
    Configured,
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    pub injection: Injection,
}

/// Graph handles of the two outputs.
#[derive(Debug, Clone, Copy)]
pub struct TdnetVars {
    pub ms_hat_d: Option<Var>,
    pub ms_hat: Var,
}

/// Output tensors: first level (`2×` the input) and final (`ratio×`).
#[derive(Debug, Clone, PartialEq)]
pub struct TdnetOutput {
    pub ms_hat_d: Option<Tensor>,
    pub ms_hat: Tensor,
}

/// Network configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TdnetModel {
    pub config: TdnetConfig,
    pub params: ParamStore,
}

/// Parameter count of a configuration without allocating it.
pub fn parameter_count(config: &TdnetConfig) -> usize {
    layout(config)
        .iter()
        .map(|s| s.weight_shape().iter().product::<usize>() + s.cout)
        .sum()
}

impl TdnetModel {
    /// Kaiming-uniform weights and zero biases from `seed`.
    pub fn new(config: TdnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut entries = Vec::new();
        for spec in layout(&config) {
            entries.push((
                format!("{}.weight", spec.name),
                kaiming_uniform(&spec.weight_shape(), &mut rng),
            ));
            entries.push((format!("{}.bias", spec.name), zeros_like_bias(spec.cout)));
        }
        Ok(TdnetModel {
            config,
            params: ParamStore::from_entries(entries),
        })
    }

    /// Replaces the parameters, checking names and shapes against the
    /// configuration.
    pub fn with_params(config: TdnetConfig, params: ParamStore) -> Result<Self> {
        let fresh = TdnetModel::new(config, 0)?;
        if fresh.params.names() != params.names() {
            return Err(Error::Format("parameter names do not match the configuration".into()));
        }
        for ((name, a), b) in fresh.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(TdnetModel {
            config: fresh.config,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Records every parameter as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.set_requires_grad(trainable);
                g.leaf(t)
            })
            .collect()
    }

    /// Forward pass recorded on `g` with parameters bound by [`Self::bind`].
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        params: &[Var],
        lrms: Var,
        pan: Var,
        opts: ForwardOptions,
    ) -> Result<TdnetVars> {
        Forward {
            config: &self.config,
            store: &self.params,
            params,
            opts,
        }
        .run(g, lrms, pan)
    }

    /// Inference without gradient recording.
    pub fn forward(&self, lrms: &Tensor, pan: &Tensor) -> Result<TdnetOutput> {
        self.forward_with(lrms, pan, ForwardOptions::default())
    }

    pub fn forward_with(&self, lrms: &Tensor, pan: &Tensor, opts: ForwardOptions) -> Result<TdnetOutput> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let l = g.constant(lrms.clone());
        let q = g.constant(pan.clone());
        let out = self.forward_graph(&mut g, &p, l, q, opts)?;
        Ok(TdnetOutput {
            ms_hat_d: out.ms_hat_d.map(|v| g.value(v).clone()),
            ms_hat: g.value(out.ms_hat).clone(),
        })
    }

    /// A finite-difference builder over the parameters: the probe is
    /// `Σ ms_hat ⊙ R₁ + Σ ms_hat_d ⊙ R₂` for fixed data.
    pub fn gradcheck_builder(&self, lrms: Tensor, pan: Tensor, seed: u64) -> Box<Builder<'static>> {
        let model = self.clone();
        let mut rng = seeded(seed);
        use crate::rng::RngExt;
        let [b, c, h, w] = lrms.dims4("gradcheck").unwrap_or([1, 1, 1, 1]);
        let r = self.config.ratio;
        let r1 = Tensor::from_fn(&[b, c, h * r, w * r], |_| rng.random_range(-1.0f32..1.0));
        let r2 = Tensor::from_fn(&[b, c, h * 2, w * 2], |_| rng.random_range(-1.0f32..1.0));
        Box::new(move |g: &mut Graph, vars: &[Var]| {
            let l = g.constant(lrms.clone());
            let q = g.constant(pan.clone());
            let out = model.forward_graph(g, vars, l, q, ForwardOptions::default())?;
            let w1 = g.constant(r1.clone());
            let p1 = g.mul(out.ms_hat, w1)?;
            let mut total = g.sum(p1);
            if let Some(d) = out.ms_hat_d {
                let w2 = g.constant(r2.clone());
                let p2 = g.mul(d, w2)?;
                let s2 = g.sum(p2);
                total = g.add(total, s2)?;
            }
            Ok(total)
        })
    }
}

struct Forward<'a> {
    config: &'a TdnetConfig,
    store: &'a ParamStore,
    params: &'a [Var],
    opts: ForwardOptions,
}

impl Forward<'_> {
    fn param(&self, name: &str) -> Result<Var> {
        self.store
            .position(name)
            .map(|i| self.params[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    fn conv(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let k = g.value(w).shape()[2];
        g.conv2d(x, w, b, k / 2)
    }

    fn run(&self, g: &mut Graph, lrms: Var, pan: Var) -> Result<TdnetVars> {
        let cfg = self.config;
        let [b, c, h, w] = g.value(lrms).dims4("tdnet")?;
        let [pb, pc, ph, pw] = g.value(pan).dims4("tdnet")?;
        if c != cfg.bands || pb != b || pc != 1 || ph != cfg.ratio * h || pw != cfg.ratio * w {
            return Err(Error::shape(
                "tdnet",
                format!(
                    "lrms {:?} and pan {:?} do not fit {} bands at ratio {}",
                    g.value(lrms).shape(),
                    g.value(pan).shape(),
                    cfg.bands,
                    cfg.ratio
                ),
            ));
        }
        if ph % 2 != 0 || pw % 2 != 0 {
            return Err(Error::shape("tdnet", "PAN extent must be even"));
        }
        let aux = PanAux::new(g.value(pan), cfg)?;
        let (d_full, d_half) = if cfg.use_pan_branch {
            self.pan_branch(g, pan)?
        } else {
            let full = broadcast(g, pan, c)?;
            let half = match &aux.half {
                Some(t) => {
                    let v = g.constant(t.clone());
                    Some(broadcast(g, v, c)?)
                }
                None => None,
            };
            (full, half)
        };
        if cfg.levels == 2 {
            let d_half = d_half.expect("two-level details");
            let pl_half = aux.low_half.as_ref().map(|t| g.constant(t.clone()));
            let y1 = self.mrab(g, "l1", lrms, d_half, pl_half)?;
            let ms_hat_d = self.mscb(g, "l1", y1, d_half)?;
            let pl_full = aux.low_full.as_ref().map(|t| g.constant(t.clone()));
            let y2 = self.mrab(g, "l2", ms_hat_d, d_full, pl_full)?;
            let ms_hat = self.mscb(g, "l2", y2, d_full)?;
            Ok(TdnetVars {
                ms_hat_d: Some(ms_hat_d),
                ms_hat,
            })
        } else {
            let pl_full = aux.low_full.as_ref().map(|t| g.constant(t.clone()));
            let y = self.mrab(g, "l1", lrms, d_full, pl_full)?;
            let ms_hat = self.mscb(g, "l1", y, d_full)?;
            Ok(TdnetVars { ms_hat_d: None, ms_hat })
        }
    }

    /// Details at full and (for two levels) half resolution.
    fn pan_branch(&self, g: &mut Graph, pan: Var) -> Result<(Var, Option<Var>)> {
        let head = self.conv(g, pan, "pan.head")?;
        let h0 = g.relu(head);
        let r1 = self.conv(g, h0, "pan.res1")?;
        let r1 = g.relu(r1);
        let r2 = self.conv(g, r1, "pan.res2")?;
        let skip = g.add(h0, r2)?;
        let df = g.relu(skip);
        let d_full = self.conv(g, df, "pan.full")?;
        let d_half = if self.config.levels == 2 {
            let pooled = g.maxpool2d(df, 2)?;
            Some(self.conv(g, pooled, "pan.half")?)
        } else {
            None
        };
        Ok((d_full, d_half))
    }

    fn upsample(&self, g: &mut Graph, lvl: &str, x: Var) -> Result<Var> {
        let s = self.config.level_scale();
        match self.config.upsample_mode {
            UpsampleMode::PixelShuffle => {
                let y = self.conv(g, x, &format!("{lvl}.up"))?;
                g.pixel_shuffle(y, s)
            }
            UpsampleMode::Bilinear => g.upsample_linear(x, s),
            UpsampleMode::Deconv => {
                let w = self.param(&format!("{lvl}.up.weight"))?;
                let b = self.param(&format!("{lvl}.up.bias"))?;
                g.conv_transpose2d(x, w, b, s, s / 2)
            }
        }
    }

    /// Upsampled MS plus weighted details.
    fn mrab(&self, g: &mut Graph, lvl: &str, ms_low: Var, d: Var, pan_low: Option<Var>) -> Result<Var> {
        let ms_up = self.upsample(g, lvl, ms_low)?;
        if g.value(ms_up).shape() != g.value(d).shape() {
            return Err(Error::shape(
                "mrab",
                format!(
                    "upsampled {:?} vs details {:?}",
                    g.value(ms_up).shape(),
                    g.value(d).shape()
                ),
            ));
        }
        let weighted = match self.opts.injection {
            Injection::Zero => return Ok(ms_up),
            Injection::One => d,
            Injection::Configured if !self.config.use_mrab => d,
            Injection::Configured => match self.config.gain_mode {
                GainMode::LearnedAttention => {
                    let cat = g.concat(&[ms_up, d], 1)?;
                    let a = self.conv(g, cat, &format!("{lvl}.att1"))?;
                    let a = g.relu(a);
                    let a = self.conv(g, a, &format!("{lvl}.att2"))?;
                    let weights = g.sigmoid(a);
                    g.mul(weights, d)?
                }
                GainMode::TmraHpm => {
                    let pl = pan_low.ok_or_else(|| Error::invalid("tmra injection needs the low-pass PAN"))?;
                    tmra_detail(g, ms_up, pl, d)?
                }
            },
        };
        g.add(ms_up, weighted)
    }

    fn mscb(&self, g: &mut Graph, lvl: &str, x: Var, d: Var) -> Result<Var> {
        let cat = g.concat(&[x, d], 1)?;
        let t = self.conv(g, cat, &format!("{lvl}.mscb.in"))?;
        let t = g.relu(t);
        let mut branches = Vec::with_capacity(self.config.mscb_kernels.len());
        for &k in &self.config.mscb_kernels {
            let y = self.conv(g, t, &format!("{lvl}.mscb.k{k}"))?;
            branches.push(y);
        }
        let joined = g.concat(&branches, 1)?;
        let joined = g.relu(joined);
        let body = self.conv(g, joined, &format!("{lvl}.mscb.out"))?;
        g.add(x, body)
    }
}

/// `(ms_up / max(pan_low, ε)) ⊙ d`, where `pan_low` has one channel and is
/// a recorded constant.
pub fn tmra_detail(g: &mut Graph, ms_up: Var, pan_low: Var, d: Var) -> Result<Var> {
    let [b, c, h, w] = g.value(ms_up).dims4("tmra")?;
    let pl = g.value(pan_low);
    if pl.shape() != [b, 1, h, w] {
        return Err(Error::shape(
            "tmra",
            format!("low-pass PAN {:?} for {:?}", pl.shape(), [b, c, h, w]),
        ));
    }
    let src = pl.data();
    let inv = Tensor::from_fn(&[b, c, h, w], |i| {
        let n = i / (c * h * w);
        let p = i % (h * w);
        1.0 / src[n * h * w + p].max(TMRA_EPSILON)
    });
    let inv = g.constant(inv);
    let gain = g.mul(ms_up, inv)?;
    g.mul(gain, d)
}

/// `ms_up + tmra_detail(...)` evaluated without a graph.
pub fn tmra_injection(ms_up: &Tensor, pan_low: &Tensor, d: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (m, p, dv) = (
        g.constant(ms_up.clone()),
        g.constant(pan_low.clone()),
        g.constant(d.clone()),
    );
    let det = tmra_detail(&mut g, m, p, dv)?;
    let out = g.add(m, det)?;
    Ok(g.value(out).clone())
}

fn broadcast(g: &mut Graph, x: Var, c: usize) -> Result<Var> {
    let copies = vec![x; c];
    g.concat(&copies, 1)
}

/// PAN-derived constants: the ×2-degraded PAN and low-pass PAN planes at
/// each level's scale (MTF blur matched to that level's ×2 or ×ratio gap).
struct PanAux {
    half: Option<Tensor>,
    low_full: Option<Tensor>,
    low_half: Option<Tensor>,
}

impl PanAux {
    fn new(pan: &Tensor, cfg: &TdnetConfig) -> Result<Self> {
        let need_half = cfg.levels == 2 && (!cfg.use_pan_branch || cfg.gain_mode == GainMode::TmraHpm);
        let need_low = cfg.gain_mode == GainMode::TmraHpm;
        let gap = cfg.level_scale();
        let half = if need_half {
            Some(map_planes(pan, |p| blur_decimate(p, cfg.pan_gain, 2))?)
        } else {
            None
        };
        let low_full = if need_low {
            Some(map_planes(pan, |p| blur(p, cfg.pan_gain, gap))?)
        } else {
            None
        };
        let low_half = match (&half, need_low && cfg.levels == 2) {
            (Some(hp), true) => Some(map_planes(hp, |p| blur(p, cfg.pan_gain, 2))?),
            _ => None,
        };
        Ok(PanAux {
            half,
            low_full,
            low_half,
        })
    }
}

fn blur(p: &Raster, gain: f64, ratio: usize) -> Result<Raster> {
    Ok(lowpass(p, &mtf_gaussian_kernel(gain, ratio, DEFAULT_SUPPORT)?))
}

fn blur_decimate(p: &Raster, gain: f64, ratio: usize) -> Result<Raster> {
    decimate(&blur(p, gain, ratio)?, ratio)
}

/// Applies a raster operation to every `[1, h, w]` plane of a 4-D tensor.
fn map_planes(t: &Tensor, f: impl Fn(&Raster) -> Result<Raster>) -> Result<Tensor> {
    let [b, c, h, w] = t.dims4("pan planes")?;
    let mut out = Vec::new();
    let mut dims = (0, 0);
    for plane in t.data().chunks_exact(h * w) {
        let r = Raster::new(h, w, 1, plane.iter().map(|&v| v as f64).collect())?;
        let y = f(&r)?;
        dims = (y.height(), y.width());
        out.extend(y.data().iter().map(|&v| v as f32));
    }
    Tensor::new(&[b, c, dims.0, dims.1], out)
}

/// Finite-difference case over every parameter of the default `bands`-band
/// network on one sample with an 8×8 PAN. Three largest and three random
/// entries of each parameter tensor are checked.
pub fn full_model_case(bands: usize, seed: u64) -> Result<GradCase> {
    use crate::rng::RngExt;
    let model = TdnetModel::new(TdnetConfig::new(bands), seed)?;
    let mut rng = seeded(derive_seed(seed, 1));
    let lrms = Tensor::from_fn(&[1, bands, 2, 2], |_| rng.random_range(0.05f32..0.95));
    let pan = Tensor::from_fn(&[1, 1, 8, 8], |_| rng.random_range(0.05f32..0.95));
    let build = model.gradcheck_builder(lrms, pan, derive_seed(seed, 2));
    Ok(GradCase {
        name: "tdnet",
        inputs: model.params.tensors().to_vec(),
        build,
        max_entries: Some(3),
        // rounding in ~50 stacked f32 layers dominates below this step,
        // and on a frozen piece the truncation error is far smaller
        step: Some(1e-2),
    })
}

/// Every operator case followed by the full network.
pub fn gradient_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut cases = op_cases(seed);
    cases.push(full_model_case(8, seed)?);
    Ok(cases)
}

/// `1 × c × h × w` tensor from a band-interleaved raster.
pub fn raster_to_tensor(r: &Raster) -> Tensor {
    let (h, w, c) = r.dims();
    let mut data = Vec::with_capacity(h * w * c);
    for b in 0..c {
        data.extend(r.band(b).into_iter().map(|v| v as f32));
    }
    Tensor::new(&[1, c, h, w], data).expect("raster dims")
}

/// Sample `b` of a `B × c × h × w` tensor as a raster.
pub fn tensor_to_raster(t: &Tensor, b: usize) -> Result<Raster> {
    let [n, c, h, w] = t.dims4("tensor_to_raster")?;
    if b >= n {
        return Err(Error::invalid(format!("sample {b} of a batch of {n}")));
    }
    let planes: Vec<Vec<f64>> = t
        .sample(b)
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().map(|&v| v as f64).collect())
        .collect();
    debug_assert_eq!(planes.len(), c);
    Raster::from_bands(h, w, &planes)
}

impl TdnetModel {
    /// Fuses one LRMS/PAN raster pair; the output is not clamped.
    pub fn fuse_raster(&self, lrms: &Raster, pan: &Raster) -> Result<Raster> {
        if lrms.bands() != self.config.bands {
            return Err(Error::shape(
                "tdnet fuse",
                format!("{} bands for a {}-band model", lrms.bands(), self.config.bands),
            ));
        }
        let out = self.forward(&raster_to_tensor(lrms), &raster_to_tensor(pan))?;
        tensor_to_raster(&out.ms_hat, 0)
    }
}

/// `γ·ℓ₁(ms_hat_d, gt_d) + (1 − γ)·ℓ₁(ms_hat, gt)`; a zero weight drops
/// its term from the graph.
pub fn tdnet_loss(g: &mut Graph, out: &TdnetVars, gt: Var, gt_d: Var, gamma: f32) -> Result<Var> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    let final_term = if gamma < 1.0 {
        let l2 = g.l1_loss(out.ms_hat, gt)?;
        Some(g.scale(l2, 1.0 - gamma))
    } else {
        None
    };
    let first_term = if gamma > 0.0 {
        let d = out
            .ms_hat_d
            .ok_or_else(|| Error::invalid("first-level loss weight is nonzero but the model has one level"))?;
        let l1 = g.l1_loss(d, gt_d)?;
        Some(g.scale(l1, gamma))
    } else {
        None
    };
    match (first_term, final_term) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => unreachable!("gamma lies in [0, 1]"),
    }
}
