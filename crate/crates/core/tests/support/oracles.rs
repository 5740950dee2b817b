//! Plain scalar-loop versions of the core kernels, written independently of
//! the tape so they can serve as references. Matrices are row-major
//! `Vec<Vec<f64>>`.

pub type Mat = Vec<Vec<f64>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `a [m,k] * b [k,n]`.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        assert_eq!(a[i].len(), k);
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// `x W + h U + b` for a single row.
fn affine(x: &[f64], w: &Mat, h: &[f64], u: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    (0..n)
        .map(|j| {
            let mut s = b[j];
            for (i, xi) in x.iter().enumerate() {
                s += xi * w[i][j];
            }
            for (i, hi) in h.iter().enumerate() {
                s += hi * u[i][j];
            }
            s
        })
        .collect()
}

pub struct GruWeights {
    /// `[D, H]` input weights for z, r, h.
    pub w: [Mat; 3],
    /// `[H, H]` recurrent weights for z, r, h.
    pub u: [Mat; 3],
    pub b: [Vec<f64>; 3],
}

pub fn gru_step(x: &[f64], h: &[f64], p: &GruWeights) -> Vec<f64> {
    let z: Vec<f64> = affine(x, &p.w[0], h, &p.u[0], &p.b[0])
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = affine(x, &p.w[1], h, &p.u[1], &p.b[1])
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = affine(x, &p.w[2], &rh, &p.u[2], &p.b[2])
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len())
        .map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j])
        .collect()
}

pub struct LstmWeights {
    /// Gate order i, f, o, g.
    pub w: [Mat; 4],
    pub u: [Mat; 4],
    pub b: [Vec<f64>; 4],
}

pub fn lstm_step(x: &[f64], h: &[f64], c: &[f64], p: &LstmWeights) -> (Vec<f64>, Vec<f64>) {
    let pre: Vec<Vec<f64>> = (0..4)
        .map(|k| affine(x, &p.w[k], h, &p.u[k], &p.b[k]))
        .collect();
    let n = h.len();
    let mut h_new = vec![0.0; n];
    let mut c_new = vec![0.0; n];
    for j in 0..n {
        let i = sigmoid(pre[0][j]);
        let f = sigmoid(pre[1][j]);
        let o = sigmoid(pre[2][j]);
        let g = pre[3][j].tanh();
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

/// Additive attention over the first `len` states of one sentence:
/// `e_t = v . tanh(s_t W)`, `a = softmax(e)`, `c = sum_t a_t s_t`.
/// Returns the context and the weights (zero past `len`).
pub fn attention_pool(states: &Mat, len: usize, w: &Mat, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = states[..len]
        .iter()
        .map(|s| {
            let mut e = 0.0;
            for (a, va) in v.iter().enumerate() {
                let mut z = 0.0;
                for (hh, sh) in s.iter().enumerate() {
                    z += sh * w[hh][a];
                }
                e += va * z.tanh();
            }
            e
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut weights = vec![0.0; states.len()];
    for t in 0..len {
        weights[t] = exps[t] / total;
    }
    let dim = states[0].len();
    let mut context = vec![0.0; dim];
    for t in 0..len {
        for j in 0..dim {
            context[j] += weights[t] * states[t][j];
        }
    }
    (context, weights)
}

/// One convolution window: `w[k][d][f]` for offset k, input d, filter f.
pub struct ConvWindow {
    pub width: usize,
    pub w: Vec<Mat>,
    pub b: Vec<f64>,
}

/// Valid convolution + relu + max over time for one sentence of `len`
/// real tokens, per window, concatenated. The sentence is zero-padded up to
/// the widest window first.
pub fn conv1d_maxpool(seq: &Mat, len: usize, windows: &[ConvWindow]) -> Vec<f64> {
    let dim = seq[0].len();
    let wmax = windows.iter().map(|w| w.width).max().unwrap();
    let eff = len.max(wmax);
    let mut padded: Mat = seq[..len].to_vec();
    padded.resize(eff, vec![0.0; dim]);
    let mut out = Vec::new();
    for win in windows {
        let filters = win.b.len();
        let mut best = vec![f64::NEG_INFINITY; filters];
        for p in 0..=eff - win.width {
            for f in 0..filters {
                let mut s = win.b[f];
                for k in 0..win.width {
                    for d in 0..dim {
                        s += padded[p + k][d] * win.w[k][d][f];
                    }
                }
                best[f] = best[f].max(s.max(0.0));
            }
        }
        out.extend(best);
    }
    out
}
