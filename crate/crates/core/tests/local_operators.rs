use std::sync::Arc;

use hho_core::hho_local::{
    directional_derivative, divergence_reconstruction, gradient_reconstruction, local_norm_1t, stabilisation_matrix,
    velocity_reconstruction, viscous_matrix, viscous_spectrum, LocalDofLayout, LocalElement,
};
use hho_core::mesh::{build_cartesian, build_perturbed_polygonal, regular_hexagon, Mesh, Point};
use hho_core::polybasis::{dim_p, monomial_exponents};
use hho_core::space::{HhoSpace, HhoVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const UNIT: [f64; 4] = [0.0, 1.0, 0.0, 1.0];

/// Meshes whose element 0 is the element under test.
fn meshes() -> Vec<(&'static str, Mesh)> {
    let (v, lp) = regular_hexagon([0.3, -0.2], 0.7);
    vec![
        ("square", build_cartesian(1, 1, UNIT).unwrap()),
        ("hexagon", Mesh::from_polygons(v, vec![lp]).unwrap()),
        ("perturbed", build_perturbed_polygonal(2, UNIT, 0.2, 5).unwrap()),
    ]
}

fn spaces(k: usize) -> Vec<(&'static str, HhoSpace)> {
    meshes().into_iter().map(|(name, m)| (name, HhoSpace::new(Arc::new(m), k).unwrap())).collect()
}

/// Polynomial in physical coordinates, sum of c x^i y^j.
#[derive(Clone)]
struct Poly(Vec<((usize, usize), f64)>);

impl Poly {
    fn random(degree: usize, rng: &mut ChaCha8Rng) -> Self {
        Poly(monomial_exponents(degree).into_iter().map(|e| (e, rng.random_range(-1.0..1.0))).collect())
    }

    fn eval(&self, x: Point) -> f64 {
        self.0.iter().map(|&((i, j), c)| c * x[0].powi(i as i32) * x[1].powi(j as i32)).sum()
    }

    fn dx(&self, x: Point) -> f64 {
        self.0
            .iter()
            .filter(|((i, _), _)| *i > 0)
            .map(|&((i, j), c)| c * i as f64 * x[0].powi(i as i32 - 1) * x[1].powi(j as i32))
            .sum()
    }

    fn dy(&self, x: Point) -> f64 {
        self.0
            .iter()
            .filter(|((_, j), _)| *j > 0)
            .map(|&((i, j), c)| c * j as f64 * x[0].powi(i as i32) * x[1].powi(j as i32 - 1))
            .sum()
    }
}

fn local_interpolant(space: &HhoSpace, f: impl Fn(Point) -> [f64; 2] + Sync) -> Vec<f64> {
    space.gather(&space.interpolate(f), 0)
}

/// Values at the element quadrature points of the first `n` basis functions combined with `c`.
fn values(le: &LocalElement, c: &[f64]) -> Vec<f64> {
    let n = c.len();
    (le.phi.columns(0, n) * DVector::from_column_slice(c)).iter().copied().collect()
}

fn physical(space: &HhoSpace, le: &LocalElement) -> Vec<Point> {
    let c = space.centroid(0);
    le.quad.points.iter().map(|p| [p[0] + c[0], p[1] + c[1]]).collect()
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn random_local(layout: &LocalDofLayout, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(layout.size(), |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn layout_blocks_are_contiguous() {
    for k in 0..4 {
        for n_faces in 3..8 {
            let l = LocalDofLayout { k, n_faces };
            assert_eq!(l.size(), 2 * dim_p(k) + n_faces * 2 * (k + 1));
            assert_eq!(l.face_offset(0), 2 * dim_p(k));
            for i in 1..n_faces {
                assert_eq!(l.face_offset(i) - l.face_offset(i - 1), 2 * (k + 1));
            }
            let mut seen = vec![false; l.size()];
            for c in 0..2 {
                for s in 0..l.scalar_size() {
                    let i = l.vector_index(c, s);
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&b| b));
        }
    }
}

#[test]
fn constant_fields_are_in_every_kernel() {
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let v = DVector::from_vec(local_interpolant(&space, |_| [1.3, -0.4]));
            assert!(max_abs((gradient_reconstruction(le, k) * &v).iter().copied()) < 1e-12, "{name} k={k}");
            assert!(max_abs((gradient_reconstruction(le, 2 * k) * &v).iter().copied()) < 1e-12, "{name} k={k}");
            assert!(max_abs((stabilisation_matrix(le) * &v).iter().copied()) < 1e-12, "{name} k={k}");
            assert!(max_abs((viscous_matrix(le) * &v).iter().copied()) < 1e-12, "{name} k={k}");
            assert!(local_norm_1t(le, v.as_slice()).powi(2) < 1e-13, "{name} k={k}");
            let r = velocity_reconstruction(le) * &v;
            let nk1 = dim_p(k + 1);
            let (rx, ry) = (values(le, &r.as_slice()[..nk1]), values(le, &r.as_slice()[nk1..]));
            assert!(max_abs(rx.iter().map(|x| x - 1.3)) < 1e-12, "{name} k={k}");
            assert!(max_abs(ry.iter().map(|y| y + 0.4)) < 1e-12, "{name} k={k}");
        }
    }
}

#[test]
fn linear_field_has_constant_gradient() {
    let a = [[0.7, -1.1], [0.4, 2.5]];
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let v = DVector::from_vec(local_interpolant(&space, |x| {
                [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
            }));
            let g = gradient_reconstruction(le, k) * &v;
            let nk = dim_p(k);
            for c in 0..2 {
                for j in 0..2 {
                    let vals = values(le, &g.as_slice()[(2 * c + j) * nk..(2 * c + j + 1) * nk]);
                    assert!(max_abs(vals.iter().map(|x| x - a[c][j])) < 1e-12, "{name} k={k} ({c},{j})");
                }
            }
            let d = divergence_reconstruction(le, k) * &v;
            assert!(max_abs(values(le, d.as_slice()).iter().map(|x| x - (a[0][0] + a[1][1]))) < 1e-12);
        }
    }
}

#[test]
fn identity_field_has_divergence_two_and_rotation_none() {
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let id = DVector::from_vec(local_interpolant(&space, |x| x));
            let d = divergence_reconstruction(le, k) * id;
            assert!(max_abs(values(le, d.as_slice()).iter().map(|x| x - 2.0)) < 1e-12, "{name} k={k}");
            let rot = DVector::from_vec(local_interpolant(&space, |x| [x[1] * x[1] - x[0], x[1] + x[0] * x[0]]));
            let d = divergence_reconstruction(le, k) * rot;
            if k >= 1 {
                assert!(max_abs(values(le, d.as_slice())) < 1e-12, "{name} k={k}");
            }
        }
    }
}

#[test]
fn gradient_commutes_with_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let nk = dim_p(k);
            let p = [Poly::random(k + 1, &mut rng), Poly::random(k + 1, &mut rng)];
            let v = DVector::from_vec(local_interpolant(&space, |x| [p[0].eval(x), p[1].eval(x)]));
            let g = gradient_reconstruction(le, k) * v;
            for c in 0..2 {
                let exact = [
                    space.project_element(0, |x| p[c].dx(x)),
                    space.project_element(0, |x| p[c].dy(x)),
                ];
                for j in 0..2 {
                    let got = &g.as_slice()[(2 * c + j) * nk..(2 * c + j + 1) * nk];
                    let err = max_abs(got.iter().zip(&exact[j]).map(|(a, b)| a - b));
                    let scale = max_abs(exact[j].iter().copied()).max(1.0);
                    assert!(err <= 1e-12 * scale, "{name} k={k}: {err:e}");
                }
            }
        }
    }
}

#[test]
fn divergence_is_trace_of_gradient() {
    for k in 0..3 {
        for (_, space) in spaces(k) {
            let le = space.local(0);
            for l in [k, 2 * k] {
                let g = gradient_reconstruction(le, l);
                let n = dim_p(l);
                let tr = g.rows(0, n) + g.rows(3 * n, n);
                assert_eq!(divergence_reconstruction(le, l), tr);
            }
        }
    }
}

#[test]
fn projected_high_divergence_matches_low() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let (nk, n2k) = (dim_p(k), dim_p(2 * k));
            let m = &le.ops.mass;
            let mkk = m.view((0, 0), (nk, nk)).into_owned().cholesky().unwrap();
            let mk2k = m.view((0, 0), (nk, n2k)).into_owned();
            let (dk, d2k) = (divergence_reconstruction(le, k), divergence_reconstruction(le, 2 * k));
            for _ in 0..100 {
                let v = random_local(&le.layout(), &mut rng);
                let low = &dk * &v;
                let proj = mkk.solve(&(&mk2k * (&d2k * &v)));
                let err = (proj - &low).amax();
                assert!(err <= 1e-12 * low.amax().max(1.0), "{name} k={k}: {err:e}");
            }
        }
    }
}

#[test]
fn reconstruction_is_exact_on_higher_degree_polynomials() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let nk1 = dim_p(k + 1);
            let p = [Poly::random(k + 1, &mut rng), Poly::random(k + 1, &mut rng)];
            let v = DVector::from_vec(local_interpolant(&space, |x| [p[0].eval(x), p[1].eval(x)]));
            let r = velocity_reconstruction(le) * &v;
            let pts = physical(&space, le);
            for c in 0..2 {
                let got = values(le, &r.as_slice()[c * nk1..(c + 1) * nk1]);
                let err = max_abs(got.iter().zip(&pts).map(|(g, &x)| g - p[c].eval(x)));
                assert!(err < 1e-12, "{name} k={k}: {err:e}");
            }
            // s(v, v) as a sum of squares over the numerical range of S
            let eig = stabilisation_matrix(le).symmetric_eigen();
            let cut = 1e-12 * eig.eigenvalues.amax();
            let sq = eig.eigenvectors.transpose() * &v;
            let s: f64 = eig.eigenvalues.iter().zip(sq.iter()).filter(|(l, _)| **l > cut).map(|(l, c)| l * c * c).sum();
            assert!(s < 1e-20, "{name} k={k}: {s:e}");
        }
    }
}

#[test]
fn reconstruction_keeps_element_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let (nk, nk1) = (dim_p(k), dim_p(k + 1));
            let r = velocity_reconstruction(le);
            for _ in 0..20 {
                let v = random_local(&le.layout(), &mut rng);
                let rv = &r * &v;
                for c in 0..2 {
                    let a = values(le, &rv.as_slice()[c * nk1..(c + 1) * nk1]);
                    let b = values(le, &v.as_slice()[c * nk..(c + 1) * nk]);
                    let diff: f64 = le.quad.weights.iter().zip(a.iter().zip(&b)).map(|(w, (a, b))| w * (a - b)).sum();
                    assert!(diff.abs() < 1e-13, "{name} k={k}: {diff:e}");
                }
            }
        }
    }
}

#[test]
fn matching_traces_reconstruct_to_element_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let p = [Poly::random(k, &mut rng), Poly::random(k, &mut rng)];
            let v = local_interpolant(&space, |x| [p[0].eval(x), p[1].eval(x)]);
            let nk = dim_p(k);
            let r = velocity_reconstruction(le) * DVector::from_column_slice(&v);
            let nk1 = dim_p(k + 1);
            for c in 0..2 {
                let got = values(le, &r.as_slice()[c * nk1..(c + 1) * nk1]);
                let want = values(le, &v[c * nk..(c + 1) * nk]);
                assert!(max_abs(got.iter().zip(&want).map(|(a, b)| a - b)) < 1e-12, "{name} k={k}");
            }
        }
    }
}

#[test]
fn directional_derivative_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let le = space.local(0);
            let layout = le.layout();
            let zero = vec![0.0; layout.size()];
            let v = random_local(&layout, &mut rng);
            assert_eq!(directional_derivative(le, &zero) * &v, DVector::zeros(2 * dim_p(k)));

            let w = random_local(&layout, &mut rng);
            let c = DVector::from_vec(local_interpolant(&space, |_| [0.8, -2.0]));
            assert!((directional_derivative(le, w.as_slice()) * c).amax() < 1e-12, "{name} k={k}");

            // constant advection of a degree-k polynomial: the face terms vanish
            let a = [0.6, -1.4];
            let wc = local_interpolant(&space, |_| a);
            let p = [Poly::random(k, &mut rng), Poly::random(k, &mut rng)];
            let v = DVector::from_vec(local_interpolant(&space, |x| [p[0].eval(x), p[1].eval(x)]));
            let g = directional_derivative(le, &wc) * v;
            let nk = dim_p(k);
            let pts = physical(&space, le);
            for comp in 0..2 {
                let got = values(le, &g.as_slice()[comp * nk..(comp + 1) * nk]);
                let err = max_abs(
                    got.iter().zip(&pts).map(|(g, &x)| g - (a[0] * p[comp].dx(x) + a[1] * p[comp].dy(x))),
                );
                assert!(err < 1e-11, "{name} k={k}: {err:e}");
            }
        }
    }
}

#[test]
fn stabilisation_is_symmetric_semidefinite() {
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let s = stabilisation_matrix(space.local(0));
            assert!((&s - s.transpose()).amax() <= 1e-14 * s.amax(), "{name} k={k}");
            let ev = s.symmetric_eigen().eigenvalues;
            assert!(ev.min() >= -1e-12 * ev.max(), "{name} k={k}");
        }
    }
}

#[test]
fn viscous_kernel_is_the_constants() {
    for k in 0..4 {
        for (name, space) in spaces(k) {
            let a = viscous_matrix(space.local(0));
            assert!((&a - a.transpose()).amax() <= 1e-14 * a.amax(), "{name} k={k}");
            let ev = viscous_spectrum(space.local(0));
            let top = *ev.last().unwrap();
            let zeros = ev.iter().filter(|&&e| e.abs() <= 1e-10 * top).count();
            assert_eq!(zeros, 2, "{name} k={k}: {ev:?}");
            assert!(ev[2] > 1e-8 * top);
        }
    }
}

#[test]
fn viscous_form_is_equivalent_to_local_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..4 {
        let space = &spaces(k)[0].1;
        let le = space.local(0);
        let a = viscous_matrix(le);
        for _ in 0..100 {
            let v = random_local(&le.layout(), &mut rng);
            let n = local_norm_1t(le, v.as_slice());
            let ratio = v.dot(&(&a * &v)) / (n * n);
            assert!((0.1..=10.0).contains(&ratio), "k={k}: {ratio}");
        }
    }
}

#[test]
fn local_norm_of_a_single_face_value() {
    for k in 0..3 {
        for (name, space) in spaces(k) {
            let mut u: HhoVector = space.zero_vector();
            let f = space.mesh.elements[0].face_ids[0];
            let c = [0.3, -0.4];
            let mut block = space.project_face(f, |_| c[0]);
            block.extend(space.project_face(f, |_| c[1]));
            u.face_block_mut(f).copy_from_slice(&block);
            // |F| / h_F = 1 for a straight face
            let want = 0.5;
            let got = local_norm_1t(space.local(0), &space.gather(&u, 0));
            assert!((got - want).abs() < 1e-14, "{name} k={k}: {got} vs {want}");
        }
    }
}

#[test]
fn translated_elements_share_operators() {
    let space = HhoSpace::new(Arc::new(build_cartesian(6, 6, UNIT).unwrap()), 2).unwrap();
    // corners, edges and interior differ only in face ownership
    assert!(space.num_shapes() <= 4, "{}", space.num_shapes());
    let a: DMatrix<f64> = viscous_matrix(space.local(7));
    assert_eq!(a, viscous_matrix(space.local(28)));
}
