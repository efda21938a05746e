//! Named reference models. Each is also shipped as a `.model` file under
//! `models/` at the repository root.

use super::{
    Atom, ConvolutionKernel, KernelSpec, ModelSpec, StableLikeKernel, TorusGeometry, TrigPoly,
};

fn one_dim(name: &str, drift: TrigPoly, diffusion: TrigPoly, jumps: KernelSpec) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        geometry: TorusGeometry::unit(1),
        drift: vec![drift],
        diffusion: vec![vec![diffusion]],
        jumps,
        declared_symmetric: None,
        second_moment_bound: None,
    }
}

/// `b = 0`, `c(x) = 2 + sin 2πx`, no jumps. `Σ` is the harmonic mean of `c`, √3.
pub fn harmonic_mean() -> ModelSpec {
    one_dim(
        "harmonic-mean",
        TrigPoly::zero(),
        TrigPoly::constant(2.0).sin(1.0, &[1]),
        KernelSpec::None,
    )
}

/// `b = 0`, `c = 1`, atoms at ±0.5 with unit rate. `Σ = 1.5`.
pub fn constant_levy() -> ModelSpec {
    let atom = |y: f64| Atom {
        rate: TrigPoly::constant(1.0),
        displacement: vec![y],
    };
    let mut m = one_dim(
        "constant-levy",
        TrigPoly::zero(),
        TrigPoly::constant(1.0),
        KernelSpec::FiniteActivity {
            atoms: vec![atom(0.5), atom(-0.5)],
        },
    );
    m.declared_symmetric = Some(true);
    m
}

/// Variable, asymmetric model: `b = 0.3 + 0.2 sin 2πx`, `c = 1 + 0.5 cos 2πx`,
/// one atom at `y = 0.4` with rate `1 + 0.5 sin 2πx`.
pub fn asymmetric_atom() -> ModelSpec {
    one_dim(
        "asymmetric-atom",
        TrigPoly::constant(0.3).sin(0.2, &[1]),
        TrigPoly::constant(1.0).cos(0.5, &[1]),
        KernelSpec::FiniteActivity {
            atoms: vec![Atom {
                rate: TrigPoly::constant(1.0).sin(0.5, &[1]),
                displacement: vec![0.4],
            }],
        },
    )
}

/// Variable-order stable-like jumps truncated at `r_cut = 2`, with a weak
/// diffusion and a periodic drift.
pub fn stable_like() -> ModelSpec {
    one_dim(
        "stable-like",
        TrigPoly::zero().sin(0.25, &[1]),
        TrigPoly::constant(0.1),
        KernelSpec::StableLike(StableLikeKernel {
            alpha: TrigPoly::constant(1.5).sin(0.2, &[1]),
            kappa: TrigPoly::constant(0.4).cos(0.12, &[1]),
            skew: Vec::new(),
            r_cut: 2.0,
            r_min: 1e-3,
            radial_nodes: 64,
            angular_nodes: 16,
        }),
    )
}

/// Two-dimensional convolution-type kernel `λ(x) μ(x+y) a(y)`.
pub fn convolution_2d() -> ModelSpec {
    ModelSpec {
        name: "convolution-2d".into(),
        geometry: TorusGeometry::unit(2),
        drift: vec![
            TrigPoly::zero().sin(0.2, &[0, 1]),
            TrigPoly::zero().cos(0.1, &[1, 0]),
        ],
        diffusion: vec![
            vec![TrigPoly::constant(0.3).cos(0.1, &[1, 0]), TrigPoly::constant(0.05)],
            vec![TrigPoly::constant(0.05), TrigPoly::constant(0.25)],
        ],
        jumps: KernelSpec::Convolution(ConvolutionKernel {
            lambda: TrigPoly::constant(1.0).cos(0.3, &[1, 0]),
            mu: TrigPoly::constant(1.0).sin(0.3, &[0, 1]),
            scale: 0.2,
            r_cut: 0.6,
            r_min: 1e-3,
            radial_nodes: 32,
            angular_nodes: 16,
        }),
        declared_symmetric: None,
        second_moment_bound: None,
    }
}

/// Standard one-dimensional Brownian motion.
pub fn brownian() -> ModelSpec {
    one_dim("brownian", TrigPoly::zero(), TrigPoly::constant(1.0), KernelSpec::None)
}

/// `b = sin 2πx`, `c = 1`: a gradient drift with a closed-form corrector.
pub fn sine_drift() -> ModelSpec {
    one_dim(
        "sine-drift",
        TrigPoly::zero().sin(1.0, &[1]),
        TrigPoly::constant(1.0),
        KernelSpec::None,
    )
}

/// Constant drift, no noise.
pub fn deterministic() -> ModelSpec {
    one_dim(
        "deterministic",
        TrigPoly::constant(0.3),
        TrigPoly::zero(),
        KernelSpec::None,
    )
}

pub fn all() -> Vec<ModelSpec> {
    vec![
        harmonic_mean(),
        constant_levy(),
        asymmetric_atom(),
        stable_like(),
        convolution_2d(),
        brownian(),
        sine_drift(),
        deterministic(),
    ]
}

pub fn by_name(name: &str) -> Option<ModelSpec> {
    all().into_iter().find(|m| m.name == name)
}
