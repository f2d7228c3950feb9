// Parameter layout: for each layer, the weight matrix (out × in, row-major)
// followed by the bias vector. Hidden layers use tanh, the output is linear.

use super::Architecture;

pub(super) fn layer_shapes(arch: &Architecture) -> Vec<(usize, usize)> {
    let Architecture::Mlp {
        prompts,
        responses,
        hidden,
    } = arch
    else {
        return Vec::new();
    };
    let mut widths = Vec::with_capacity(hidden.len() + 2);
    widths.push(prompts + responses);
    widths.extend(hidden.iter().copied());
    widths.push(1);
    widths.windows(2).map(|w| (w[0], w[1])).collect()
}

pub(super) struct Forward {
    /// Post-activation values of each hidden layer.
    hidden: Vec<Vec<f64>>,
    pub score: f64,
}

fn inputs(arch: &Architecture, prompt: usize, response: usize) -> [usize; 2] {
    [prompt, arch.prompts() + response]
}

pub(super) fn forward(arch: &Architecture, theta: &[f64], prompt: usize, response: usize) -> Forward {
    let shapes = layer_shapes(arch);
    let mut offset = 0;
    let mut hidden = Vec::with_capacity(shapes.len() - 1);
    let mut current: Vec<f64> = Vec::new();
    let mut score = 0.0;
    for (layer, &(n_in, n_out)) in shapes.iter().enumerate() {
        let weights = &theta[offset..offset + n_in * n_out];
        let bias = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut pre: Vec<f64> = bias.to_vec();
        if layer == 0 {
            for &i in &inputs(arch, prompt, response) {
                for (o, slot) in pre.iter_mut().enumerate() {
                    *slot += weights[o * n_in + i];
                }
            }
        } else {
            for (o, slot) in pre.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                *slot += row.iter().zip(&current).map(|(w, a)| w * a).sum::<f64>();
            }
        }
        if layer + 1 == shapes.len() {
            score = pre[0];
        } else {
            current = pre.into_iter().map(f64::tanh).collect();
            hidden.push(current.clone());
        }
    }
    Forward { hidden, score }
}

/// Adds `scale * ∂ score(prompt, response) / ∂θ` into `out`.
pub(super) fn accumulate_score_grad(
    arch: &Architecture,
    theta: &[f64],
    prompt: usize,
    response: usize,
    scale: f64,
    out: &mut [f64],
) {
    let shapes = layer_shapes(arch);
    let fwd = forward(arch, theta, prompt, response);
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for &(n_in, n_out) in &shapes {
        offsets.push(offset);
        offset += n_in * n_out + n_out;
    }

    // delta = ∂score/∂pre-activation of the current layer
    let mut delta = vec![scale];
    for layer in (0..shapes.len()).rev() {
        let (n_in, n_out) = shapes[layer];
        let w_off = offsets[layer];
        let b_off = w_off + n_in * n_out;
        for (o, d) in delta.iter().enumerate() {
            out[b_off + o] += d;
        }
        if layer == 0 {
            for &i in &inputs(arch, prompt, response) {
                for (o, d) in delta.iter().enumerate() {
                    out[w_off + o * n_in + i] += d;
                }
            }
            break;
        }
        let below = &fwd.hidden[layer - 1];
        for (o, d) in delta.iter().enumerate() {
            for (i, a) in below.iter().enumerate() {
                out[w_off + o * n_in + i] += d * a;
            }
        }
        let weights = &theta[w_off..w_off + n_in * n_out];
        delta = (0..n_in)
            .map(|i| {
                let back: f64 = delta
                    .iter()
                    .enumerate()
                    .map(|(o, d)| d * weights[o * n_in + i])
                    .sum();
                back * (1.0 - below[i] * below[i])
            })
            .collect();
    }
}
