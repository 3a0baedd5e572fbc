//! Noise-prediction network: a residual convolution stack at constant spatial
//! resolution with a sinusoidal timestep embedding added in every block.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, NodeId, ParameterSet, Real, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum DenoiserError {
    #[error("invalid denoiser config: {0}")]
    InvalidConfig(String),
    #[error("parameter set does not match the config: {0}")]
    Layout(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub n_blocks: usize,
    pub kernel_size: usize,
    pub time_dim: usize,
    /// Group-norm group count; must divide `hidden_channels`.
    pub groups: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            hidden_channels: 64,
            n_blocks: 6,
            kernel_size: 3,
            time_dim: 32,
            groups: 8,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let bad = |m: &str| Err(DenoiserError::InvalidConfig(m.into()));
        if self.in_channels == 0
            || self.hidden_channels == 0
            || self.n_blocks == 0
            || self.groups == 0
        {
            return bad("channel, block and group counts must be positive");
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad("kernel size must be odd");
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return bad("time embedding dimension must be positive and even");
        }
        if !self.hidden_channels.is_multiple_of(self.groups) {
            return bad("groups must divide hidden channels");
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (c, h, k, e) = (
            self.in_channels,
            self.hidden_channels,
            self.kernel_size,
            self.time_dim,
        );
        let mut out = vec![
            ("time.w1".to_string(), vec![e, h]),
            ("time.b1".into(), vec![h]),
            ("time.w2".into(), vec![h, h]),
            ("time.b2".into(), vec![h]),
            ("in.w".into(), vec![h, c, k, k]),
            ("in.b".into(), vec![h]),
        ];
        for i in 0..self.n_blocks {
            let p = |s: &str| format!("block{i}.{s}");
            out.extend([
                (p("norm1.gamma"), vec![h]),
                (p("norm1.beta"), vec![h]),
                (p("conv1.w"), vec![h, h, k, k]),
                (p("conv1.b"), vec![h]),
                (p("time.w"), vec![h, h]),
                (p("time.b"), vec![h]),
                (p("norm2.gamma"), vec![h]),
                (p("norm2.beta"), vec![h]),
                (p("conv2.w"), vec![h, h, k, k]),
                (p("conv2.b"), vec![h]),
            ]);
        }
        out.extend([
            ("out.norm.gamma".to_string(), vec![h]),
            ("out.norm.beta".into(), vec![h]),
            ("out.w".into(), vec![c, h, k, k]),
            ("out.b".into(), vec![c]),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

pub fn count_params<T: Real>(params: &ParameterSet<T>) -> usize {
    params.count()
}

/// Fan-in scaled Gaussian kernels, zero biases, unit norm scales, and a
/// zero output convolution so the untrained network predicts zero noise.
pub fn init<T: Real, R: Rng>(
    cfg: &DenoiserConfig,
    rng: &mut R,
) -> Result<ParameterSet<T>, DenoiserError> {
    cfg.validate()?;
    let mut params = ParameterSet::new();
    for (name, shape) in cfg.layout() {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name.ends_with(".gamma") {
            vec![1.0; n]
        } else if name.starts_with("out.w") || shape.len() == 1 {
            vec![0.0; n]
        } else {
            let fan_in: usize = if shape.len() == 4 {
                shape[1..].iter().product()
            } else {
                shape[0]
            };
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect()
        };
        params.insert(name, Tensor::from_f64(&shape, &data)?)?;
    }
    Ok(params)
}

/// Rejects parameter sets whose names or shapes differ from `cfg`.
pub fn check_layout<T: Real>(
    cfg: &DenoiserConfig,
    params: &ParameterSet<T>,
) -> Result<(), DenoiserError> {
    let want = cfg.layout();
    if want.len() != params.len() {
        return Err(DenoiserError::Layout(format!(
            "expected {} tensors, found {}",
            want.len(),
            params.len()
        )));
    }
    for ((name, shape), (have, t)) in want.iter().zip(params.iter()) {
        if name != have || shape.as_slice() != t.shape() {
            return Err(DenoiserError::Layout(format!(
                "{have} {:?}, expected {name} {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Sinusoidal embedding rows `[sin(t·f_i), cos(t·f_i)]` with geometric frequencies.
pub fn timestep_embedding<T: Real>(ts: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let t = t as f64;
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let (s, c): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((t * f).sin(), (t * f).cos())).unzip();
        data.extend(s.into_iter().chain(c).map(T::lit));
    }
    Tensor::from_parts(vec![ts.len(), dim], data)
}

struct Cursor<'a> {
    ids: &'a [NodeId],
    at: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> NodeId {
        self.at += 1;
        self.ids[self.at - 1]
    }
}

/// Records the network on `g`. `w` are the bound parameter nodes in layout
/// order, `x` is `[N,C,H,W]` and `ts` holds one timestep per sample.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    w: &[NodeId],
    cfg: &DenoiserConfig,
    x: NodeId,
    ts: &[usize],
) -> Result<NodeId, DenoiserError> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != cfg.in_channels || shape[0] != ts.len() {
        return Err(DenoiserError::Layout(format!(
            "input {shape:?} with {} timesteps for {} channels",
            ts.len(),
            cfg.in_channels
        )));
    }
    let mut p = Cursor { ids: w, at: 0 };
    let emb = g.input(timestep_embedding(ts, cfg.time_dim))?;
    let (w1, b1, w2, b2) = (p.next(), p.next(), p.next(), p.next());
    let h = g.matmul(emb, w1)?;
    let h = g.add_row_bias(h, b1)?;
    let h = g.silu(h)?;
    let h = g.matmul(h, w2)?;
    let temb = g.add_row_bias(h, b2)?;
    let temb = g.silu(temb)?;

    let (wi, bi) = (p.next(), p.next());
    let mut h = g.conv2d(x, wi, Some(bi))?;
    for _ in 0..cfg.n_blocks {
        let (g1, be1, c1w, c1b, tw, tb, g2, be2, c2w, c2b) = (
            p.next(),
            p.next(),
            p.next(),
            p.next(),
            p.next(),
            p.next(),
            p.next(),
            p.next(),
            p.next(),
            p.next(),
        );
        let skip = h;
        let a = g.group_norm(h, g1, be1, cfg.groups)?;
        let a = g.silu(a)?;
        let a = g.conv2d(a, c1w, Some(c1b))?;
        let e = g.matmul(temb, tw)?;
        let e = g.add_row_bias(e, tb)?;
        let a = g.add_channel(a, e)?;
        let a = g.group_norm(a, g2, be2, cfg.groups)?;
        let a = g.silu(a)?;
        let a = g.conv2d(a, c2w, Some(c2b))?;
        h = g.add(skip, a)?;
    }
    let (go, bo, wo, bo2) = (p.next(), p.next(), p.next(), p.next());
    let a = g.group_norm(h, go, bo, cfg.groups)?;
    let a = g.silu(a)?;
    Ok(g.conv2d(a, wo, Some(bo2))?)
}

/// Predicted noise for a batch `x_in: [N,C,H,W]` of mask-composed states.
pub fn predict_noise<T: Real>(
    params: &ParameterSet<T>,
    cfg: &DenoiserConfig,
    x_in: &Tensor<T>,
    ts: &[usize],
) -> Result<Tensor<T>, DenoiserError> {
    let mut g = Graph::new();
    let w = g.bind(params)?;
    let x = g.input(x_in.clone())?;
    let out = forward(&mut g, &w, cfg, x, ts)?;
    Ok(g.value(out).clone())
}

/// A config paired with parameters laid out for it.
#[derive(Debug, Clone)]
pub struct Denoiser<T: Real> {
    pub config: DenoiserConfig,
    pub params: ParameterSet<T>,
}

impl<T: Real> Denoiser<T> {
    pub fn new<R: Rng>(config: DenoiserConfig, rng: &mut R) -> Result<Self, DenoiserError> {
        let params = init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn from_params(
        config: DenoiserConfig,
        params: ParameterSet<T>,
    ) -> Result<Self, DenoiserError> {
        config.validate()?;
        check_layout(&config, &params)?;
        Ok(Self { config, params })
    }

    pub fn predict_noise(
        &self,
        x_in: &Tensor<T>,
        ts: &[usize],
    ) -> Result<Tensor<T>, DenoiserError> {
        predict_noise(&self.params, &self.config, x_in, ts)
    }

    pub fn cast<U: Real>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small() -> DenoiserConfig {
        DenoiserConfig {
            in_channels: 2,
            hidden_channels: 8,
            n_blocks: 2,
            kernel_size: 3,
            time_dim: 8,
            groups: 4,
        }
    }

    #[test]
    fn untrained_network_predicts_zero() {
        let cfg = small();
        let p: ParameterSet<f64> = init(&cfg, &mut stream(0, 0, 0, 0)).unwrap();
        let x = Tensor::from_f64(
            &[3, 2, 4, 5],
            &(0..120)
                .map(|i| (i as f64 * 0.37).sin() * 10.0)
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y = predict_noise(&p, &cfg, &x, &[1, 7, 20]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = small();
        let a: ParameterSet<f32> = init(&cfg, &mut stream(4, 0, 0, 0)).unwrap();
        let b: ParameterSet<f32> = init(&cfg, &mut stream(4, 0, 0, 0)).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.0 == y.0 && x.1.data() == y.1.data()));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_params(&ParameterSet::<f64>::new()), 0);
        let mut one = ParameterSet::<f64>::new();
        one.insert("w", Tensor::zeros(&[4, 2, 3, 3])).unwrap();
        one.insert("b", Tensor::zeros(&[4])).unwrap();
        assert_eq!(count_params(&one), 76);

        let cfg = DenoiserConfig::default();
        let p: ParameterSet<f32> = init(&cfg, &mut stream(0, 0, 0, 0)).unwrap();
        // h=64, c=4, k=3, e=32, 6 blocks:
        // time 32·64+64+64·64+64, in 64·4·9+64,
        // block 4·64 + 2·(64·64·9+64) + 64·64+64, out 2·64+4·64·9+4
        let time = 32 * 64 + 64 + 64 * 64 + 64;
        let input = 64 * 4 * 9 + 64;
        let block = 4 * 64 + 2 * (64 * 64 * 9 + 64) + 64 * 64 + 64;
        let out = 2 * 64 + 4 * 64 * 9 + 4;
        assert_eq!(count_params(&p), time + input + 6 * block + out);
        assert_eq!(count_params(&p), 480_708);
    }

    #[test]
    fn batch_composition_does_not_change_outputs() {
        let cfg = small();
        let mut p: ParameterSet<f32> = init(&cfg, &mut stream(1, 0, 0, 0)).unwrap();
        let head = p.index_of("out.w").unwrap();
        for (i, v) in p.get_mut(head).data_mut().iter_mut().enumerate() {
            *v = ((i as f32) * 0.11).cos() * 0.1;
        }
        let data: Vec<f64> = (0..5 * 2 * 16).map(|i| (i as f64 * 0.71).sin()).collect();
        let x = Tensor::<f32>::from_f64(&[5, 2, 4, 4], &data).unwrap();
        let ts = [3, 3, 9, 1, 20];
        let all = predict_noise(&p, &cfg, &x, &ts).unwrap();
        for i in 0..5 {
            let xi = Tensor::new(&[1, 2, 4, 4], x.sample(i).to_vec()).unwrap();
            let yi = predict_noise(&p, &cfg, &xi, &ts[i..=i]).unwrap();
            assert_eq!(yi.data(), all.sample(i));
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let cfg = small();
        let p: ParameterSet<f64> = init(&cfg, &mut stream(0, 0, 0, 0)).unwrap();
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        assert!(predict_noise(&p, &cfg, &x, &[1]).is_err());
        let other = DenoiserConfig {
            hidden_channels: 16,
            ..small()
        };
        assert!(check_layout(&other, &p).is_err());
        assert!(check_layout(&cfg, &p).is_ok());
        assert!(DenoiserConfig {
            groups: 3,
            ..small()
        }
        .validate()
        .is_err());
    }
}
