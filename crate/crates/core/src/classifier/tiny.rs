//! The `tiny-test` backbone: hashed bag-of-token embeddings, mean pooled,
//! under a two-way softmax head, trained with Adam.
//!
//! The head starts at zero. With a zero head the embedding gradients of the
//! first step vanish, and the whole trajectory is mirror-symmetric under a
//! HOF/NOT relabeling: training on flipped labels swaps the two head rows
//! and leaves the embeddings identical.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassifierError, EpochRecord, Result, TrainConfig, tokenize};
use crate::hashing::derive_seed;

pub const BUCKETS: usize = 4096;
pub const DIM: usize = 16;
const INIT_SCALE: f64 = 0.1;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    max_len: usize,
    buckets: usize,
    dim: usize,
    /// `buckets × dim`, row-major.
    embed: Vec<f64>,
    /// Row 0 scores NOT, row 1 scores HOF.
    head_w: Vec<f64>,
    head_b: [f64; 2],
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: i32) {
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        }
    }
}

impl TinyNet {
    pub fn new(max_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "tiny-init"));
        let embed = (0..BUCKETS * DIM)
            .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
            .collect();
        Self {
            max_len,
            buckets: BUCKETS,
            dim: DIM,
            embed,
            head_w: vec![0.0; 2 * DIM],
            head_b: [0.0; 2],
        }
    }

    pub(crate) fn from_parts(
        max_len: usize,
        buckets: usize,
        dim: usize,
        embed: Vec<f64>,
        head_w: Vec<f64>,
        head_b: [f64; 2],
    ) -> Option<Self> {
        (embed.len() == buckets * dim && head_w.len() == 2 * dim && buckets > 0).then_some(Self {
            max_len,
            buckets,
            dim,
            embed,
            head_w,
            head_b,
        })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Flat parameter view: embeddings, head weights, head biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.embed.len() + self.head_w.len() + 2);
        out.extend_from_slice(&self.embed);
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
        out
    }

    fn bucket_ids(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .take(self.max_len)
            .map(|t| (fnv1a(t.as_bytes()) % self.buckets as u64) as usize)
            .collect()
    }

    fn pool(&self, ids: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        if ids.is_empty() {
            return h;
        }
        for &b in ids {
            let row = &self.embed[b * self.dim..(b + 1) * self.dim];
            for (acc, &x) in h.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        h.iter_mut().for_each(|x| *x *= inv);
        h
    }

    /// `(p_not, p_hof)` from pooled features.
    fn probs(&self, h: &[f64]) -> [f64; 2] {
        let logit = |c: usize| -> f64 {
            let w = &self.head_w[c * self.dim..(c + 1) * self.dim];
            w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + self.head_b[c]
        };
        let z = [logit(0), logit(1)];
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }

    /// HOF probability.
    pub fn score(&self, text: &str) -> f64 {
        let h = self.pool(&self.bucket_ids(text));
        self.probs(&h)[1]
    }

    pub(crate) fn train(
        &mut self,
        texts: &[&str],
        targets: &[bool],
        config: &TrainConfig,
    ) -> Result<Vec<EpochRecord>> {
        let encoded: Vec<Vec<usize>> = texts.iter().map(|t| self.bucket_ids(t)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "tiny-shuffle"));
        let mut opt_embed = Adam::new(self.embed.len());
        let mut opt_head = Adam::new(self.head_w.len());
        let mut opt_bias = Adam::new(2);
        let mut g_embed = vec![0.0; self.embed.len()];
        let mut g_head = vec![0.0; self.head_w.len()];
        let mut order: Vec<usize> = (0..texts.len()).collect();
        let mut step = 0i32;
        let mut log = Vec::with_capacity(config.epochs);
        let lr = config.learning_rate;

        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for batch in order.chunks(config.batch_size) {
                g_embed.iter_mut().for_each(|g| *g = 0.0);
                g_head.iter_mut().for_each(|g| *g = 0.0);
                let mut g_bias = [0.0f64; 2];
                let scale = 1.0 / batch.len() as f64;

                for &i in batch {
                    let ids = &encoded[i];
                    let h = self.pool(ids);
                    let p = self.probs(&h);
                    let y = usize::from(targets[i]);
                    loss_sum += -p[y].max(f64::MIN_POSITIVE).ln();
                    if (p[1] >= 0.5) == targets[i] {
                        correct += 1;
                    }
                    let dz = [
                        (p[0] - f64::from(y == 0)) * scale,
                        (p[1] - f64::from(y == 1)) * scale,
                    ];
                    for c in 0..2 {
                        g_bias[c] += dz[c];
                        let gw = &mut g_head[c * self.dim..(c + 1) * self.dim];
                        for (g, &x) in gw.iter_mut().zip(&h) {
                            *g += dz[c] * x;
                        }
                    }
                    if ids.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / ids.len() as f64;
                    let (w0, w1) = self.head_w.split_at(self.dim);
                    let gh: Vec<f64> = w0
                        .iter()
                        .zip(w1)
                        .map(|(&a, &b)| (dz[0] * a + dz[1] * b) * inv)
                        .collect();
                    for &b in ids {
                        let row = &mut g_embed[b * self.dim..(b + 1) * self.dim];
                        for (g, &x) in row.iter_mut().zip(&gh) {
                            *g += x;
                        }
                    }
                }

                step += 1;
                opt_embed.step(&mut self.embed, &g_embed, lr, step);
                opt_head.step(&mut self.head_w, &g_head, lr, step);
                opt_bias.step(&mut self.head_b, &g_bias, lr, step);
            }
            let mean_loss = loss_sum / texts.len() as f64;
            if !mean_loss.is_finite() || self.head_w.iter().any(|w| !w.is_finite()) {
                return Err(ClassifierError::NonFiniteLoss { epoch });
            }
            log.push(EpochRecord {
                epoch,
                mean_loss,
                train_accuracy: correct as f64 / texts.len() as f64,
            });
        }
        Ok(log)
    }
}
