//! Branch architectures assembled from layers, with end-to-end
//! forward/backward, a symbolic shape walk, and directory checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv;
use crate::layers::{
    ActivationLayer, BatchNorm, Conv1d, Conv3d, Dense, Direction, Dropout, ExpandChannel, Layer,
    LstmLayer, MaxPool1d, MaxPool2dSpatial, MeanOverTime, Mode, Param, SpatialMeanToSeq, TakeLast,
    Transpose12,
};
use crate::rng::{rng_from, subseed};
use crate::tensor::kernels::Activation;
use crate::tensor::{load_tensor, save_tensor, Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Gavd1d,
    Oumvlp3d,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Gavd1d => "gavd_1d",
            Branch::Oumvlp3d => "oumvlp_3d",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "gavd_1d" => Ok(Branch::Gavd1d),
            "oumvlp_3d" => Ok(Branch::Oumvlp3d),
            _ => Err(Error::config(format!("unknown branch '{}'", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Single logit, thresholded at 0.5 after sigmoid.
    SigmoidBinary,
    /// K logits, softmax + argmax.
    SoftmaxMulticlass(usize),
}

impl Head {
    pub fn out_dim(&self) -> usize {
        match self {
            Head::SigmoidBinary => 1,
            Head::SoftmaxMulticlass(k) => *k,
        }
    }

    pub fn as_str(&self) -> String {
        match self {
            Head::SigmoidBinary => "sigmoid".into(),
            Head::SoftmaxMulticlass(k) => format!("softmax:{}", k),
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        if s == "sigmoid" {
            return Ok(Head::SigmoidBinary);
        }
        if let Some(k) = s.strip_prefix("softmax:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::config(format!("bad head '{}'", s)))?;
            if k < 2 {
                return Err(Error::config("softmax head needs K >= 2"));
            }
            return Ok(Head::SoftmaxMulticlass(k));
        }
        Err(Error::config(format!("unknown head '{}'", s)))
    }
}

/// Configuration for the 1D joint branch.
#[derive(Clone, Debug)]
pub struct GavdConfig {
    pub seq_len: usize,
    pub feat_dim: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub lstm_hidden: Vec<usize>,
    pub bidirectional: bool,
    pub use_lstm: bool,
    pub dense_units: usize,
    pub dropout: f64,
    pub head: Head,
    pub seed: u64,
}

impl Default for GavdConfig {
    fn default() -> Self {
        GavdConfig {
            seq_len: 50,
            feat_dim: 36,
            conv_channels: vec![128, 256, 512],
            kernel: 3,
            stride: 1,
            padding: 1,
            pool_window: 2,
            pool_stride: 2,
            lstm_hidden: vec![256, 128],
            bidirectional: false,
            use_lstm: true,
            dense_units: 256,
            dropout: 0.5,
            head: Head::SigmoidBinary,
            seed: 0,
        }
    }
}

/// Configuration for the 3D silhouette branch.
#[derive(Clone, Debug)]
pub struct OumvlpConfig {
    pub frames: usize,
    pub dim1: usize,
    pub dim2: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub lstm_hidden: Vec<usize>,
    pub bidirectional: bool,
    pub use_lstm: bool,
    pub dense_units: usize,
    pub dropout: f64,
    pub head: Head,
    pub seed: u64,
}

impl Default for OumvlpConfig {
    fn default() -> Self {
        OumvlpConfig {
            frames: 50,
            dim1: 44,
            dim2: 64,
            conv_channels: vec![32, 64],
            kernel: 3,
            pool_window: 2,
            pool_stride: 2,
            lstm_hidden: vec![128],
            bidirectional: true,
            use_lstm: true,
            dense_units: 128,
            dropout: 0.5,
            head: Head::SigmoidBinary,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub enum ModelConfig {
    Gavd(GavdConfig),
    Oumvlp(OumvlpConfig),
}

impl ModelConfig {
    pub fn branch(&self) -> Branch {
        match self {
            ModelConfig::Gavd(_) => Branch::Gavd1d,
            ModelConfig::Oumvlp(_) => Branch::Oumvlp3d,
        }
    }

    pub fn head(&self) -> Head {
        match self {
            ModelConfig::Gavd(c) => c.head,
            ModelConfig::Oumvlp(c) => c.head,
        }
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("branch".into(), self.branch().as_str().into());
        match self {
            ModelConfig::Gavd(c) => {
                m.insert("seq_len".into(), c.seq_len.to_string());
                m.insert("feat_dim".into(), c.feat_dim.to_string());
                m.insert("conv_channels".into(), kv::format_usize_list(&c.conv_channels));
                m.insert("kernel".into(), c.kernel.to_string());
                m.insert("stride".into(), c.stride.to_string());
                m.insert("padding".into(), c.padding.to_string());
                m.insert("pool_window".into(), c.pool_window.to_string());
                m.insert("pool_stride".into(), c.pool_stride.to_string());
                m.insert("lstm_hidden".into(), kv::format_usize_list(&c.lstm_hidden));
                m.insert("bidirectional".into(), c.bidirectional.to_string());
                m.insert("use_lstm".into(), c.use_lstm.to_string());
                m.insert("dense_units".into(), c.dense_units.to_string());
                m.insert("dropout".into(), c.dropout.to_string());
                m.insert("head".into(), c.head.as_str());
                m.insert("seed".into(), c.seed.to_string());
            }
            ModelConfig::Oumvlp(c) => {
                m.insert("frames".into(), c.frames.to_string());
                m.insert("dim1".into(), c.dim1.to_string());
                m.insert("dim2".into(), c.dim2.to_string());
                m.insert("conv_channels".into(), kv::format_usize_list(&c.conv_channels));
                m.insert("kernel".into(), c.kernel.to_string());
                m.insert("pool_window".into(), c.pool_window.to_string());
                m.insert("pool_stride".into(), c.pool_stride.to_string());
                m.insert("lstm_hidden".into(), kv::format_usize_list(&c.lstm_hidden));
                m.insert("bidirectional".into(), c.bidirectional.to_string());
                m.insert("use_lstm".into(), c.use_lstm.to_string());
                m.insert("dense_units".into(), c.dense_units.to_string());
                m.insert("dropout".into(), c.dropout.to_string());
                m.insert("head".into(), c.head.as_str());
                m.insert("seed".into(), c.seed.to_string());
            }
        }
        m
    }

    pub fn from_kv(m: &BTreeMap<String, String>) -> Result<Self> {
        let branch = Branch::from_str(
            m.get("branch")
                .ok_or_else(|| Error::config("missing branch"))?,
        )?;
        let head = Head::from_str(m.get("head").ok_or_else(|| Error::config("missing head"))?)?;
        match branch {
            Branch::Gavd1d => Ok(ModelConfig::Gavd(GavdConfig {
                seq_len: kv::get_parsed(m, "seq_len")?,
                feat_dim: kv::get_parsed(m, "feat_dim")?,
                conv_channels: kv::parse_usize_list(
                    m.get("conv_channels")
                        .ok_or_else(|| Error::config("missing conv_channels"))?,
                )?,
                kernel: kv::get_parsed(m, "kernel")?,
                stride: kv::get_parsed(m, "stride")?,
                padding: kv::get_parsed(m, "padding")?,
                pool_window: kv::get_parsed(m, "pool_window")?,
                pool_stride: kv::get_parsed(m, "pool_stride")?,
                lstm_hidden: kv::parse_usize_list(
                    m.get("lstm_hidden")
                        .ok_or_else(|| Error::config("missing lstm_hidden"))?,
                )?,
                bidirectional: kv::get_parsed(m, "bidirectional")?,
                use_lstm: kv::get_parsed(m, "use_lstm")?,
                dense_units: kv::get_parsed(m, "dense_units")?,
                dropout: kv::get_parsed(m, "dropout")?,
                head,
                seed: kv::get_parsed(m, "seed")?,
            })),
            Branch::Oumvlp3d => Ok(ModelConfig::Oumvlp(OumvlpConfig {
                frames: kv::get_parsed(m, "frames")?,
                dim1: kv::get_parsed(m, "dim1")?,
                dim2: kv::get_parsed(m, "dim2")?,
                conv_channels: kv::parse_usize_list(
                    m.get("conv_channels")
                        .ok_or_else(|| Error::config("missing conv_channels"))?,
                )?,
                kernel: kv::get_parsed(m, "kernel")?,
                pool_window: kv::get_parsed(m, "pool_window")?,
                pool_stride: kv::get_parsed(m, "pool_stride")?,
                lstm_hidden: kv::parse_usize_list(
                    m.get("lstm_hidden")
                        .ok_or_else(|| Error::config("missing lstm_hidden"))?,
                )?,
                bidirectional: kv::get_parsed(m, "bidirectional")?,
                use_lstm: kv::get_parsed(m, "use_lstm")?,
                dense_units: kv::get_parsed(m, "dense_units")?,
                dropout: kv::get_parsed(m, "dropout")?,
                head,
                seed: kv::get_parsed(m, "seed")?,
            })),
        }
    }
}

/// Ordered layer stack with a classification head. Logits come out of the
/// last layer; head activations live in the loss functions and metrics.
pub struct ModelGraph {
    pub branch: Branch,
    pub head: Head,
    pub input_spec: Vec<usize>,
    pub config: ModelConfig,
    layers: Vec<Box<dyn Layer>>,
    cached_outputs: Option<Vec<Tensor>>,
}

/// Shape-walk a hypothetical stack; `Err` means the stack cannot be built
/// for this input shape.
fn walk_shapes(layers: &[Box<dyn Layer>], batch_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut cur = batch_shape.to_vec();
    let mut all = Vec::with_capacity(layers.len());
    for layer in layers {
        cur = layer.out_shape(&cur)?;
        all.push(cur.clone());
    }
    Ok(all)
}

/// Build the 1D joint branch:
/// conv(+BN+ReLU+pool+dropout) blocks over time, reshape to time-major
/// features, LSTM stack (or temporal mean for the CNN-only ablation),
/// dense + ReLU, and a linear head.
pub fn build_gavd_branch(config: &GavdConfig) -> Result<ModelGraph> {
    if config.conv_channels.is_empty() {
        return Err(Error::config("need at least one conv block"));
    }
    if config.use_lstm && config.lstm_hidden.is_empty() {
        return Err(Error::config("need at least one LSTM layer when use_lstm"));
    }
    let mut rng = rng_from(subseed(config.seed, "init"));
    let drop_seed = subseed(config.seed, "dropout");

    let assemble = |cfg: &GavdConfig, rng: &mut crate::rng::Rng| -> Result<Vec<Box<dyn Layer>>> {
        let mut layers: Vec<Box<dyn Layer>> = Vec::new();
        layers.push(Box::new(Transpose12::new())); // [N,T,F] -> [N,F,T]
        let mut c_prev = cfg.feat_dim;
        for (bi, &ch) in cfg.conv_channels.iter().enumerate() {
            layers.push(Box::new(Conv1d::new(
                c_prev, ch, cfg.kernel, cfg.stride, cfg.padding, rng,
            )));
            layers.push(Box::new(BatchNorm::new(ch)));
            layers.push(Box::new(ActivationLayer::new(Activation::Relu)));
            layers.push(Box::new(MaxPool1d::new(cfg.pool_window, cfg.pool_stride)));
            layers.push(Box::new(Dropout::new(
                cfg.dropout,
                subseed(drop_seed, &format!("conv{}", bi)),
            )?));
            c_prev = ch;
        }
        layers.push(Box::new(Transpose12::new())); // [N,C,L'] -> [N,L',C]
        let mut width = c_prev;
        if cfg.use_lstm {
            let dir = if cfg.bidirectional {
                Direction::Bidirectional
            } else {
                Direction::Forward
            };
            for &h in &cfg.lstm_hidden {
                let l = LstmLayer::new(width, h, dir, rng);
                width = l.out_width();
                layers.push(Box::new(l));
            }
            layers.push(Box::new(TakeLast::new()));
        } else {
            layers.push(Box::new(MeanOverTime::new()));
        }
        layers.push(Box::new(Dense::new(width, cfg.dense_units, rng)));
        layers.push(Box::new(ActivationLayer::new(Activation::Relu)));
        layers.push(Box::new(Dropout::new(
            cfg.dropout,
            subseed(drop_seed, "dense"),
        )?));
        layers.push(Box::new(Dense::new(cfg.dense_units, cfg.head.out_dim(), rng)));
        Ok(layers)
    };

    let layers = assemble(config, &mut rng)?;
    let batch_shape = vec![2, config.seq_len, config.feat_dim];
    if let Err(e) = walk_shapes(&layers, &batch_shape) {
        // pooling starves on short sequences; report the minimum workable T
        for t in config.seq_len..=4096 {
            let mut probe_rng = rng_from(subseed(config.seed, "init"));
            let mut probe_cfg = config.clone();
            probe_cfg.seq_len = t;
            let probe = assemble(&probe_cfg, &mut probe_rng)?;
            if walk_shapes(&probe, &[2, t, config.feat_dim]).is_ok() {
                return Err(Error::config(format!(
                    "seq_len {} too short for {} pooling stages; minimum is {}",
                    config.seq_len,
                    config.conv_channels.len(),
                    t
                )));
            }
        }
        return Err(e);
    }

    Ok(ModelGraph {
        branch: Branch::Gavd1d,
        head: config.head,
        input_spec: vec![config.seq_len, config.feat_dim],
        config: ModelConfig::Gavd(config.clone()),
        layers,
        cached_outputs: None,
    })
}

/// Build the 3D silhouette branch:
/// conv3d(+BN+ReLU+spatial pool+dropout) blocks, global spatial mean per
/// frame, LSTM stack (bidirectional by default), dense + ReLU, linear head.
pub fn build_oumvlp_branch(config: &OumvlpConfig) -> Result<ModelGraph> {
    if config.conv_channels.is_empty() {
        return Err(Error::config("need at least one conv block"));
    }
    if config.use_lstm && config.lstm_hidden.is_empty() {
        return Err(Error::config("need at least one LSTM layer when use_lstm"));
    }
    let mut rng = rng_from(subseed(config.seed, "init"));
    let drop_seed = subseed(config.seed, "dropout");

    let mut layers: Vec<Box<dyn Layer>> = Vec::new();
    layers.push(Box::new(ExpandChannel::new()));
    let mut c_prev = 1;
    for (bi, &ch) in config.conv_channels.iter().enumerate() {
        layers.push(Box::new(Conv3d::new(
            c_prev,
            ch,
            [config.kernel; 3],
            [1; 3],
            [config.kernel / 2; 3],
            &mut rng,
        )));
        layers.push(Box::new(BatchNorm::new(ch)));
        layers.push(Box::new(ActivationLayer::new(Activation::Relu)));
        layers.push(Box::new(MaxPool2dSpatial::new(
            config.pool_window,
            config.pool_stride,
        )));
        layers.push(Box::new(Dropout::new(
            config.dropout,
            subseed(drop_seed, &format!("conv{}", bi)),
        )?));
        c_prev = ch;
    }
    layers.push(Box::new(SpatialMeanToSeq::new()));
    let mut width = c_prev;
    if config.use_lstm {
        let dir = if config.bidirectional {
            Direction::Bidirectional
        } else {
            Direction::Forward
        };
        for &h in &config.lstm_hidden {
            let l = LstmLayer::new(width, h, dir, &mut rng);
            width = l.out_width();
            layers.push(Box::new(l));
        }
        layers.push(Box::new(TakeLast::new()));
    } else {
        layers.push(Box::new(MeanOverTime::new()));
    }
    layers.push(Box::new(Dense::new(width, config.dense_units, &mut rng)));
    layers.push(Box::new(ActivationLayer::new(Activation::Relu)));
    layers.push(Box::new(Dropout::new(
        config.dropout,
        subseed(drop_seed, "dense"),
    )?));
    layers.push(Box::new(Dense::new(
        config.dense_units,
        config.head.out_dim(),
        &mut rng,
    )));

    let batch_shape = vec![2, config.frames, config.dim1, config.dim2];
    walk_shapes(&layers, &batch_shape).map_err(|e| {
        Error::config(format!(
            "input spec {}x{}x{} cannot pass the conv/pool stack: {}",
            config.frames, config.dim1, config.dim2, e
        ))
    })?;

    Ok(ModelGraph {
        branch: Branch::Oumvlp3d,
        head: config.head,
        input_spec: vec![config.frames, config.dim1, config.dim2],
        config: ModelConfig::Oumvlp(config.clone()),
        layers,
        cached_outputs: None,
    })
}

pub fn build_model(config: &ModelConfig) -> Result<ModelGraph> {
    match config {
        ModelConfig::Gavd(c) => build_gavd_branch(c),
        ModelConfig::Oumvlp(c) => build_oumvlp_branch(c),
    }
}

impl ModelGraph {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(|l| l.kind()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.value.len())
            .sum()
    }

    /// Predicted output shape for a batched input, without running data.
    pub fn infer_output_shape(&self, batch_shape: &[usize]) -> Result<Vec<usize>> {
        Ok(walk_shapes(&self.layers, batch_shape)?
            .last()
            .cloned()
            .unwrap_or_else(|| batch_shape.to_vec()))
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.rank() != self.input_spec.len() + 1 || batch.shape()[1..] != self.input_spec[..] {
            return Err(Error::shape(format!(
                "batch shape {:?} vs input spec [N, {:?}]",
                batch.shape(),
                self.input_spec
            )));
        }
        Ok(())
    }

    /// Layer-by-layer forward; returns logits `[N, out_dim]`.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut cur = batch.clone();
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            cur = layer.forward(&cur, mode)?;
            outs.push(cur.clone());
        }
        self.cached_outputs = Some(outs);
        Ok(cur)
    }

    /// Full backward to the input gradient.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        self.backward_to(0, upstream)
    }

    /// Backward from the head down to (and including) layer `stop`;
    /// returns the gradient with respect to layer `stop`'s input, or, for
    /// `stop == n`, the gradient with respect to layer `n-1`'s output.
    pub fn backward_to(&mut self, stop: usize, upstream: &Tensor) -> Result<Tensor> {
        if self.cached_outputs.is_none() {
            return Err(Error::State("backward called before forward".into()));
        }
        let mut grad = upstream.clone();
        for layer in self.layers[stop..].iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(grad)
    }

    /// Cached forward output of layer `idx` from the most recent forward.
    pub fn layer_output(&self, idx: usize) -> Result<&Tensor> {
        self.cached_outputs
            .as_ref()
            .and_then(|o| o.get(idx))
            .ok_or_else(|| Error::State("no cached forward output".into()))
    }

    pub fn layer_kind(&self, idx: usize) -> Result<&'static str> {
        self.layers
            .get(idx)
            .map(|l| l.kind())
            .ok_or_else(|| Error::config(format!("layer index {} out of range", idx)))
    }

    /// Index of the last convolution layer (default Grad-CAM target).
    pub fn last_conv_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| l.kind() == "conv1d" || l.kind() == "conv3d")
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    /// All checkpointable tensors, named `<layer_index>.<name>`.
    pub fn state_dict(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.state_tensors() {
                out.push((format!("{}.{}", li, name), t));
            }
        }
        out
    }

    pub fn load_state_dict(&mut self, state: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in state {
            let (li, pname) = name
                .split_once('.')
                .ok_or_else(|| Error::Format(format!("bad state name '{}'", name)))?;
            let li: usize = li
                .parse()
                .map_err(|_| Error::Format(format!("bad layer index in '{}'", name)))?;
            let layer = self
                .layers
                .get_mut(li)
                .ok_or_else(|| Error::Format(format!("layer index {} out of range", li)))?;
            layer.load_state_tensor(pname, t.clone())?;
        }
        Ok(())
    }

    /// Write `model.cfg`, a layer manifest, and one tensor blob per
    /// checkpointable tensor into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("model.cfg"), kv::format(&self.config.to_kv()))?;
        let mut manifest = String::new();
        for (li, layer) in self.layers.iter().enumerate() {
            manifest.push_str(&format!("{} {}", li, layer.kind()));
            for (name, t) in layer.state_tensors() {
                manifest.push_str(&format!(" {}{:?}", name, t.shape()));
            }
            manifest.push('\n');
        }
        std::fs::write(dir.join("layers.txt"), manifest)?;
        for (name, t) in self.state_dict() {
            save_tensor(&dir.join(format!("{}.gltb", name)), &t, Precision::Double)?;
        }
        Ok(())
    }

    /// Rebuild the graph from `model.cfg` and load every tensor blob.
    pub fn load_checkpoint(dir: &Path) -> Result<ModelGraph> {
        let cfg_text = std::fs::read_to_string(dir.join("model.cfg"))?;
        let config = ModelConfig::from_kv(&kv::parse(&cfg_text)?)?;
        let mut model = build_model(&config)?;
        let names: Vec<String> = model.state_dict().into_iter().map(|(n, _)| n).collect();
        let mut state = Vec::with_capacity(names.len());
        for name in names {
            let t = load_tensor(&dir.join(format!("{}.gltb", name)))?;
            state.push((name, t));
        }
        model.load_state_dict(&state)?;
        Ok(model)
    }
}
