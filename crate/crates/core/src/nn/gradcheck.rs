use rand::Rng;

use super::params::ModelParams;
use crate::seed;

/// Agreement between analytic and central-difference gradients over sampled coordinates.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `|a - f| / max(|a|, |f|)` over the concatenation of all sampled coordinates.
    pub global: f64,
    /// The same measure restricted to each layer's samples.
    pub per_layer: Vec<(String, f64)>,
    /// Coordinates redrawn because the difference stencil crossed a kink.
    pub redrawn: usize,
}

/// Attempts per sample before accepting a coordinate whose stencil crosses a kink.
const MAX_DRAWS: usize = 64;

/// Compares `analytic` against central differences of `loss` at `params`,
/// sampling `samples` coordinates per layer.
pub fn check_gradient(
    params: &ModelParams,
    analytic: &ModelParams,
    loss: impl Fn(&ModelParams) -> f64,
    samples: usize,
    step: f64,
    seed: u64,
) -> GradCheck {
    check_gradient_smooth(params, analytic, |q| (loss(q), ()), samples, step, seed)
}

/// [`check_gradient`] for piecewise-smooth losses. `eval` returns the loss and
/// an identifier of the smooth piece it was evaluated on (e.g. ReLU masks and
/// pooling argmax); a coordinate whose `+-step` probes land on a different
/// piece than `params` is redrawn.
pub fn check_gradient_smooth<P: PartialEq>(
    params: &ModelParams,
    analytic: &ModelParams,
    eval: impl Fn(&ModelParams) -> (f64, P),
    samples: usize,
    step: f64,
    seed: u64,
) -> GradCheck {
    let (_, base) = eval(params);
    let mut redrawn = 0;
    let flat = analytic.flat_values();
    let mut rng = seed::rng(seed);
    let mut offset = 0;
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    let mut per_layer = Vec::new();
    let mut probe = params.clone();
    for (name, layer) in ModelParams::layer_names().into_iter().zip(params.layers()) {
        let len = layer.param_count();
        let (mut ld, mut la, mut lf) = (0.0, 0.0, 0.0);
        for _ in 0..samples {
            let mut draw = 0;
            let (i, numeric) = loop {
                let i = offset + rng.random_range(0..len);
                let orig = *probe.flat_value_mut(i).unwrap();
                *probe.flat_value_mut(i).unwrap() = orig + step;
                let (up, pattern_up) = eval(&probe);
                *probe.flat_value_mut(i).unwrap() = orig - step;
                let (down, pattern_down) = eval(&probe);
                *probe.flat_value_mut(i).unwrap() = orig;
                draw += 1;
                if (pattern_up == base && pattern_down == base) || draw == MAX_DRAWS {
                    break (i, (up - down) / (2.0 * step));
                }
                redrawn += 1;
            };
            ld += (numeric - flat[i]).powi(2);
            la += flat[i].powi(2);
            lf += numeric.powi(2);
        }
        per_layer.push((name, relative(ld, la, lf)));
        diff += ld;
        na += la;
        nf += lf;
        offset += len;
    }
    GradCheck {
        global: relative(diff, na, nf),
        per_layer,
        redrawn,
    }
}

fn relative(diff2: f64, a2: f64, f2: f64) -> f64 {
    let scale = a2.sqrt().max(f2.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff2.sqrt() / scale
    }
}
