//! Built-in plants: the three-state benchmark and the scalar motivating example.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisDictionary, Remainder};
use crate::plant_data::{ExperimentDesign, PlantModel, X0Sampling};
use crate::polytope::{Polytope, DEFAULT_TOL};

pub const PAPER_A1: [f64; 9] = [0.90, 0.02, 0.0, -0.3, 0.85, 0.01, 0.05, 0.0, 0.80];
pub const PAPER_B: [f64; 3] = [0.0, 0.1, 0.0];

pub fn paper_a2(e1: f64, e2: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 4, &[e1, 0.0, 0.0, 0.0, 0.0, -0.2, 0.0, 0.0, 0.0, -0.008, e2, -0.05])
}

/// `Q(x) = [x1^3, x2^3, x3^3, x1^2]`.
pub fn paper_dictionary() -> BasisDictionary {
    BasisDictionary::monomial_dictionary(&[vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![2, 0, 0]], 3)
        .expect("valid exponents")
}

pub fn paper_plant(e1: f64, e2: f64, h_w: f64) -> PlantModel {
    PlantModel::new(
        DMatrix::from_row_slice(3, 3, &PAPER_A1),
        paper_a2(e1, e2),
        DMatrix::from_column_slice(3, 1, &PAPER_B),
        Remainder::new(paper_dictionary()),
        h_w,
    )
    .expect("consistent preset")
}

/// Independent one-step experiments with wide excitation. A single slow trajectory leaves `x1`,
/// `x1^2` and `x1^3` nearly collinear, which makes the right inverses of `V0` huge.
pub fn paper_design(t: usize, seed: u64) -> ExperimentDesign {
    ExperimentDesign {
        t,
        input_amplitude: 8.0,
        x0: X0Sampling::Box { half_width: 8.0 },
        episode_length: Some(1),
        seed,
    }
}

pub fn paper_box(r: f64) -> Polytope {
    Polytope::hypercube(3, r).expect("box")
}

/// `x+ = 1.2 x - 0.2 x^3 + u`.
pub fn example1_plant() -> PlantModel {
    PlantModel::new(
        DMatrix::from_element(1, 1, 1.2),
        DMatrix::from_element(1, 1, -0.2),
        DMatrix::from_element(1, 1, 1.0),
        Remainder::new(BasisDictionary::monomial_dictionary(&[vec![3]], 1).expect("x^3")),
        0.0,
    )
    .expect("consistent preset")
}

/// The interval `[-1, 0]` written as `F = [1; -1]`, `g = [0; 1]`.
pub fn example1_interval() -> Polytope {
    Polytope::from_halfspaces(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![0.0, 1.0]), DEFAULT_TOL)
        .expect("interval")
}

pub fn example1_design(seed: u64) -> ExperimentDesign {
    ExperimentDesign {
        t: 8,
        input_amplitude: 1.0,
        x0: X0Sampling::Box { half_width: 1.5 },
        episode_length: Some(1),
        seed,
    }
}
