use nalgebra::{DMatrix, SymmetricEigen};

use crate::mesh::{Mesh, Point};

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Same rule with every point moved by `shift`.
    pub fn translated(&self, shift: Point) -> Quadrature {
        Quadrature {
            points: self.points.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect(),
            weights: self.weights.clone(),
            exactness: self.exactness,
        }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss-Jacobi nodes and weights on [-1, 1] for the weight (1 - x)^alpha (1 + x)^beta,
/// via the Golub-Welsch eigenvalue problem.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let jf = j as f64;
        let denom = (2.0 * jf + ab) * (2.0 * jf + ab + 2.0);
        jac[(j, j)] = if denom.abs() < 1e-300 { (beta - alpha) / (ab + 2.0) } else { (beta * beta - alpha * alpha) / denom };
        if j + 1 < n {
            let k = jf + 1.0;
            let num = 4.0 * k * (k + alpha) * (k + beta) * (k + ab);
            let den = (2.0 * k + ab).powi(2) * (2.0 * k + ab + 1.0) * (2.0 * k + ab - 1.0);
            let b = (num / den).sqrt();
            jac[(j, j + 1)] = b;
            jac[(j + 1, j)] = b;
        }
    }
    let mu0 = 2f64.powf(ab + 1.0) * gamma(alpha + 1.0) * gamma(beta + 1.0) / gamma(ab + 2.0);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gamma function for the small positive arguments used by the Jacobi rules.
fn gamma(x: f64) -> f64 {
    if (x - x.round()).abs() < 1e-14 && x > 0.0 {
        (1..x.round() as u64).map(|i| i as f64).product()
    } else {
        // Lanczos approximation (g = 7, n = 9)
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        if x < 0.5 {
            std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
        } else {
            let x = x - 1.0;
            let t = x + 7.5;
            let s: f64 = C[0] + (1..9).map(|i| C[i] / (x + i as f64)).sum::<f64>();
            (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * s
        }
    }
}

/// Collapsed (Duffy) rule on the triangle (a, b, c), exact for polynomials of degree `exactness`.
pub fn triangle_quadrature(a: Point, b: Point, c: Point, exactness: usize) -> Quadrature {
    let n = exactness / 2 + 1;
    let (xi, wxi) = gauss_legendre(n);
    let (eta, weta) = gauss_jacobi(n, 1.0, 0.0);
    let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (j, &e) in eta.iter().enumerate() {
        let t = 0.5 * (1.0 + e);
        for (i, &x) in xi.iter().enumerate() {
            let s = (1.0 - t) * 0.5 * (1.0 + x);
            points.push([
                a[0] + s * (b[0] - a[0]) + t * (c[0] - a[0]),
                a[1] + s * (b[1] - a[1]) + t * (c[1] - a[1]),
            ]);
            weights.push(0.25 * area * wxi[i] * weta[j]);
        }
    }
    Quadrature { points, weights, exactness }
}

/// Rule on element `t`, fan-triangulated from the centroid.
pub fn element_quadrature(mesh: &Mesh, t: usize, exactness: usize) -> Quadrature {
    let e = &mesh.elements[t];
    let c = e.centroid;
    let m = e.vertex_ids.len();
    let mut q = Quadrature { points: Vec::new(), weights: Vec::new(), exactness };
    for i in 0..m {
        let a = mesh.vertices[e.vertex_ids[i]];
        let b = mesh.vertices[e.vertex_ids[(i + 1) % m]];
        let tri = triangle_quadrature(c, a, b, exactness);
        q.points.extend(tri.points);
        q.weights.extend(tri.weights);
    }
    q
}

/// Gauss-Legendre rule on face `f`, points ordered along the face tangent.
pub fn face_quadrature(mesh: &Mesh, f: usize, exactness: usize) -> Quadrature {
    let face = &mesh.faces[f];
    let n = exactness / 2 + 1;
    let (s, w) = gauss_legendre(n);
    let half = 0.5 * face.diameter;
    let t = face.tangent();
    let m = face.midpoint;
    Quadrature {
        points: s.iter().map(|&si| [m[0] + si * half * t[0], m[1] + si * half * t[1]]).collect(),
        weights: w.iter().map(|&wi| wi * half).collect(),
        exactness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cartesian, regular_hexagon, Mesh};

    #[test]
    fn legendre_integrates_monomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for p in 0..2 * n {
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((q - exact).abs() < 1e-14, "n={n} p={p}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn jacobi_integrates_weighted_monomials() {
        for n in 1..10 {
            let (x, w) = gauss_jacobi(n, 1.0, 0.0);
            for p in 0..2 * n {
                // int_{-1}^{1} (1-x) x^p dx
                let a = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                let b = if p % 2 == 0 { 0.0 } else { 2.0 / (p as f64 + 2.0) };
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((q - (a - b)).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn unit_square_rules() {
        let mesh = build_cartesian(1, 1, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let q0 = element_quadrature(&mesh, 0, 0);
        assert!((q0.measure() - 1.0).abs() < 1e-15);
        let q3 = element_quadrature(&mesh, 0, 3);
        let v = q3.integrate(|x| x[0].powi(2) * x[1]);
        assert!((v - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn element_rule_exact_on_monomials() {
        let mesh = build_cartesian(1, 1, [0.0, 1.0, 0.0, 1.0]).unwrap();
        for deg in 0..=12 {
            let q = element_quadrature(&mesh, 0, deg);
            for a in 0..=deg {
                let b = deg - a;
                let v = q.integrate(|x| x[0].powi(a as i32) * x[1].powi(b as i32));
                let exact = 1.0 / ((a + 1) * (b + 1)) as f64;
                assert!((v - exact).abs() < 1e-13 * exact.max(1.0), "deg {deg} a {a}");
            }
        }
    }

    #[test]
    fn hexagon_area() {
        let (v, lp) = regular_hexagon([0.3, -0.2], 0.7);
        let mesh = Mesh::from_polygons(v, vec![lp]).unwrap();
        let q = element_quadrature(&mesh, 0, 4);
        let exact = 1.5 * 3f64.sqrt() * 0.49;
        assert!((q.measure() - exact).abs() < 1e-14);
        assert!((mesh.elements[0].measure - exact).abs() < 1e-14);
    }

    #[test]
    fn face_rules() {
        let mesh = build_cartesian(1, 1, [0.0, 1.0, 0.0, 1.0]).unwrap();
        // bottom face runs along x from 0 to 1
        let f = (0..4).find(|&f| mesh.faces[f].midpoint[1] == 0.0).unwrap();
        let q0 = face_quadrature(&mesh, f, 0);
        assert!((q0.measure() - 1.0).abs() < 1e-15);
        let q2 = face_quadrature(&mesh, f, 2);
        assert!((q2.integrate(|x| x[0] * x[0]) - 1.0 / 3.0).abs() < 1e-15);
        let q11 = face_quadrature(&mesh, f, 11);
        assert_eq!(q11.len(), 6);
        assert!((q11.integrate(|x| x[0].powi(11)) - 1.0 / 12.0).abs() < 1e-15);
    }
}
