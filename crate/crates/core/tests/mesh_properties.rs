use proptest::prelude::*;
use splitcd::mesh::{classify_inflow, discrete_l2, sample, FaceField, GridField, Mesh};

fn random_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-5.0f64..5.0, 7 * 6), prop::collection::vec(-5.0f64..5.0, 7 * 6))
}

fn mesh() -> Mesh {
    Mesh::build(&[(-0.5, 1.0), (0.0, 2.0)], &[7, 6]).unwrap()
}

proptest! {
    #[test]
    fn l2_triangle_inequality((a, b) in random_pair()) {
        let m = mesh();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let fa = GridField::new(m.clone(), a).unwrap();
        let fb = GridField::new(m.clone(), b).unwrap();
        let fs = GridField::new(m, sum).unwrap();
        let rhs = discrete_l2(&fa) + discrete_l2(&fb);
        prop_assert!(discrete_l2(&fs) <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn l2_homogeneity((a, _) in random_pair(), s in -10.0f64..10.0) {
        let m = mesh();
        let scaled: Vec<f64> = a.iter().map(|x| s * x).collect();
        let lhs = discrete_l2(&GridField::new(m.clone(), scaled).unwrap());
        let rhs = s.abs() * discrete_l2(&GridField::new(m, a).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn inflow_partitions_the_boundary(a in -3.0f64..3.0, b in -3.0f64..3.0, w in 0.5f64..4.0) {
        let m = Mesh::uniform(2, -0.5, 1.0, 7).unwrap();
        let c = FaceField::from_fn(&m, |x, v| {
            v[0] = a + (w * x[1]).sin();
            v[1] = b * x[0];
        })
        .unwrap();
        let split = classify_inflow(&m, &c);
        let faces = m.boundary_faces();
        prop_assert_eq!(split.inflow.len() + split.outflow.len(), faces.len());
        for f in &faces {
            prop_assert!(split.is_inflow(f) != split.outflow.contains(f));
        }
    }
}

#[test]
fn spacing_is_uniform() {
    let m = Mesh::uniform(3, -0.5, 1.0, 19).unwrap();
    for a in 0..3 {
        let ax = m.axis(a);
        for i in 0..=ax.n {
            let gap = ax.coord(i + 1) - ax.coord(i);
            assert!((gap - ax.h).abs() <= 1e-14 * ax.h);
        }
    }
}

#[test]
fn l2_converges_under_refinement() {
    // |sin(pi x) sin(pi y)|_L2 on the unit square is 1/2
    let f = |_: f64, x: &[f64]| (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin();
    let mut errors = Vec::new();
    for n in [24, 49, 99] {
        let m = Mesh::uniform(2, 0.0, 1.0, n).unwrap();
        let e = (discrete_l2(&sample(f, &m, 0.0).unwrap()) - 0.5).abs() / 0.5;
        errors.push(e);
    }
    assert!(errors[2] < 0.01, "{errors:?}");
}
