use nalgebra::{DMatrix, DVector};

use super::DiscreteState;

fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

/// The three-state benchmark (n = 3, m = 2, p = 2).
pub fn paper_example_states() -> Vec<DiscreteState> {
    vec![
        DiscreteState {
            a: m(3, 3, &[0.15, 0.40, -0.65, -0.75, 0.1, -0.35, 0.20, 0.70, 0.20]),
            b: m(3, 2, &[-0.20, 0.45, -0.06, 0.0, 0.22, 0.0]),
            c: m(2, 3, &[0.0, 0.40, 0.45, -1.0, -0.60, 0.90]),
            d: m(2, 2, &[0.0, -0.35, -1.70, -0.25]),
        },
        DiscreteState {
            a: m(3, 3, &[0.27, 0.24, -0.55, 0.24, 0.65, 0.30, -0.55, 0.30, 0.27]),
            b: m(3, 2, &[-0.55, 0.0, -1.40, 1.0, 0.05, -0.72]),
            c: m(2, 3, &[0.70, 1.0, -0.27, -0.35, 0.0, -1.10]),
            d: m(2, 2, &[2.15, 0.25, 0.0, -0.36]),
        },
        DiscreteState {
            a: m(3, 3, &[0.45, 0.02, 0.42, -0.17, 0.53, 0.20, 0.38, 0.26, 0.0]),
            b: m(3, 2, &[0.0, 0.15, 0.27, -0.46, 0.07, 0.54]),
            c: m(2, 3, &[0.0, 0.60, 0.28, 0.0, 0.86, 0.45]),
            d: m(2, 2, &[0.0, -0.90, 0.0, 0.85]),
        },
    ]
}

/// Two-channel multi-sine test input over `n_steps` samples.
///
/// Each channel sums five sinusoids with distinct incommensurate frequencies
/// and fixed phases, so the input is persistently exciting and reproducible.
pub fn paper_multisine(n_steps: usize, channels: usize) -> Vec<DVector<f64>> {
    const FREQS: [f64; 5] = [0.031, 0.087, 0.173, 0.29, 0.41];
    (1..=n_steps)
        .map(|k| {
            DVector::from_fn(channels, |c, _| {
                FREQS
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let phase = 0.7 * (i as f64) + 1.3 * (c as f64);
                        (2.0 * std::f64::consts::PI * f * (k as f64) * (1.0 + 0.11 * c as f64) + phase).sin()
                    })
                    .sum::<f64>()
            })
        })
        .collect()
}
