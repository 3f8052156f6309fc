mod support;

use mobilecaps_core::capsnet::{capsule_lengths, dynamic_routing_observed, predict_votes};
use mobilecaps_core::rng::{self, Rng};
use mobilecaps_core::Tensor;
use support::{route, RoutingCase};

fn random_case(rng: &mut Rng, ni: usize, nj: usize, din: usize, dout: usize, scale: f64) -> RoutingCase {
    let mut g = || rng::uniform_in(rng, -scale, scale);
    let u = (0..ni).map(|_| (0..din).map(|_| g()).collect()).collect();
    let w = (0..ni)
        .map(|_| (0..nj).map(|_| (0..din).map(|_| (0..dout).map(|_| g()).collect()).collect()).collect())
        .collect();
    RoutingCase { u, w }
}

fn tensors(case: &RoutingCase) -> (Tensor<f64>, Tensor<f64>) {
    let (ni, nj, din, dout) = (case.u.len(), case.w[0].len(), case.u[0].len(), case.w[0][0][0].len());
    let u: Vec<f64> = case.u.concat();
    let w: Vec<f64> = case.w.iter().flat_map(|wi| wi.iter().flat_map(|wij| wij.concat())).collect();
    (Tensor::from_f64(&[1, ni, din], &u).unwrap(), Tensor::from_f64(&[ni, nj, din, dout], &w).unwrap())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn matches_straight_line_oracle() {
    let mut rng = rng::seeded(2024);
    for n in 0..100 {
        let (ni, nj) = (1 + rng::index(&mut rng, 4), 1 + rng::index(&mut rng, 4));
        let r = 1 + n % 3;
        let case = random_case(&mut rng, ni, nj, 3, 4, 1.0);
        let (u, w) = tensors(&case);
        let votes = predict_votes(&u, &w).unwrap();
        let oracle = route(&case, r);
        let mut seen = 0;
        dynamic_routing_observed(&votes, r, |it, st| {
            assert!(max_diff(st.coefficients.data(), &oracle.c[it].concat()) < 1e-6, "case {n} iteration {it}");
            assert!(max_diff(st.outputs.data(), &oracle.v[it].concat()) < 1e-6, "case {n} iteration {it}");
            seen += 1;
        })
        .unwrap();
        assert_eq!(seen, r);
    }
}

#[test]
fn coefficients_normalise_and_outputs_stay_inside_unit_ball() {
    let mut rng = rng::seeded(99);
    for n in 0..1000 {
        let (ni, nj) = (1 + rng::index(&mut rng, 8), 1 + rng::index(&mut rng, 6));
        let scale = [0.01, 1.0, 10.0][n % 3];
        let case = random_case(&mut rng, ni, nj, 4, 5, scale);
        let (u, w) = tensors(&case);
        let votes = predict_votes(&u, &w).unwrap();
        dynamic_routing_observed(&votes, 3, |it, st| {
            for row in st.coefficients.data().chunks(nj) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() <= 1e-6, "case {n} iteration {it}: sum {s}");
            }
            for l in capsule_lengths(&st.outputs).unwrap().data() {
                assert!(*l < 1.0, "case {n} iteration {it}: length {l}");
            }
        })
        .unwrap();
    }
}

#[test]
fn single_output_takes_all_weight() {
    let mut rng = rng::seeded(5);
    let case = random_case(&mut rng, 3, 1, 2, 2, 1.0);
    let (u, w) = tensors(&case);
    let st = mobilecaps_core::capsnet::dynamic_routing(&predict_votes(&u, &w).unwrap(), 3).unwrap();
    assert!(st.coefficients.data().iter().all(|&c| c == 1.0));
}
