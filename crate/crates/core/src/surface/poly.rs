use serde::{Deserialize, Serialize};

use crate::ga3::Vec3;

use super::{Chart, Coords, Derivatives, Domain};

/// Tensor-product polynomial surface, one polynomial per spatial component.
///
/// Coefficients are stored against the normalised coordinates
/// `ξᵢ = (xⁱ - centreᵢ) / scaleᵢ`; `coeffs[c][p * (degree[1] + 1) + q]`
/// multiplies `ξ₁ᵖ ξ₂ᵠ` in component `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySurface {
    pub degree: [usize; 2],
    pub centre: Coords,
    pub scale: Coords,
    pub coeffs: [Vec<f64>; 3],
    pub domain: Domain,
    /// RMS distance between the fitted surface and its input points [mm].
    pub residual_rms: f64,
}

impl PolySurface {
    pub fn n_terms(degree: [usize; 2]) -> usize {
        (degree[0] + 1) * (degree[1] + 1)
    }

    pub fn normalise(&self, c: Coords) -> Coords {
        [(c[0] - self.centre[0]) / self.scale[0], (c[1] - self.centre[1]) / self.scale[1]]
    }

    /// Powers `ξᵖ` and their first two derivatives with respect to `ξ`.
    pub(crate) fn powers(x: f64, degree: usize) -> [Vec<f64>; 3] {
        let mut p = vec![1.0; degree + 1];
        for k in 1..=degree {
            p[k] = p[k - 1] * x;
        }
        let d1 = (0..=degree).map(|k| if k == 0 { 0.0 } else { k as f64 * p[k - 1] }).collect();
        let d2 = (0..=degree)
            .map(|k| if k < 2 { 0.0 } else { (k * (k - 1)) as f64 * p[k - 2] })
            .collect();
        [p, d1, d2]
    }

    /// Expands the normalised basis back to monomials in the raw
    /// coordinates: returns `m[c][p * (deg1 + 1) + q]` multiplying
    /// `(x¹)ᵖ (x²)ᵠ`.
    pub fn monomial_coefficients(&self) -> [Vec<f64>; 3] {
        let [d0, d1] = self.degree;
        // (x - c)^p / s^p = Σ_k binom(p, k) x^k (-c)^{p-k} / s^p
        let expand = |axis: usize, deg: usize| -> Vec<Vec<f64>> {
            (0..=deg)
                .map(|p| {
                    (0..=deg)
                        .map(|k| {
                            if k > p {
                                0.0
                            } else {
                                binomial(p, k) as f64 * (-self.centre[axis]).powi((p - k) as i32)
                                    / self.scale[axis].powi(p as i32)
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let (t0, t1) = (expand(0, d0), expand(1, d1));
        let n1 = d1 + 1;
        self.coeffs.clone().map(|c| {
            let mut out = vec![0.0; c.len()];
            for p in 0..=d0 {
                for q in 0..=d1 {
                    let coef = c[p * n1 + q];
                    if coef == 0.0 {
                        continue;
                    }
                    for k in 0..=p {
                        for l in 0..=q {
                            out[k * n1 + l] += coef * t0[p][k] * t1[q][l];
                        }
                    }
                }
            }
            out
        })
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

impl Chart for PolySurface {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn position(&self, c: Coords) -> Vec3 {
        self.derivatives(c).position
    }

    fn derivatives(&self, c: Coords) -> Derivatives {
        let x = self.normalise(c);
        let [p0, d0, dd0] = Self::powers(x[0], self.degree[0]);
        let [p1, d1, dd1] = Self::powers(x[1], self.degree[1]);
        let n1 = self.degree[1] + 1;
        let mut out = [[0.0; 6]; 3];
        for (comp, coeffs) in self.coeffs.iter().enumerate() {
            let acc = &mut out[comp];
            for p in 0..=self.degree[0] {
                for q in 0..n1 {
                    let k = coeffs[p * n1 + q];
                    acc[0] += k * p0[p] * p1[q];
                    acc[1] += k * d0[p] * p1[q];
                    acc[2] += k * p0[p] * d1[q];
                    acc[3] += k * dd0[p] * p1[q];
                    acc[4] += k * d0[p] * d1[q];
                    acc[5] += k * p0[p] * dd1[q];
                }
            }
        }
        let v = |i: usize| Vec3::new(out[0][i], out[1][i], out[2][i]);
        let (s0, s1) = (self.scale[0], self.scale[1]);
        let mixed = v(4) / (s0 * s1);
        Derivatives {
            position: v(0),
            first: [v(1) / s0, v(2) / s1],
            second: [[v(3) / (s0 * s0), mixed], [mixed, v(5) / (s1 * s1)]],
            reduced_accuracy: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(6, 3), 20);
    }

    #[test]
    fn derivatives_of_a_known_polynomial() {
        // x = ξ1 + 2 ξ1 ξ2², y = ξ2, z = 3 ξ1², centre 0, scale 1.
        let deg = [2, 2];
        let mut c = [vec![0.0; 9], vec![0.0; 9], vec![0.0; 9]];
        c[0][3] = 1.0; // ξ1
        c[0][5] = 2.0; // ξ1 ξ2²
        c[1][1] = 1.0; // ξ2
        c[2][6] = 3.0; // ξ1²
        let s = PolySurface {
            degree: deg,
            centre: [0.0, 0.0],
            scale: [1.0, 1.0],
            coeffs: c,
            domain: Domain::new([-1.0, -1.0], [1.0, 1.0]),
            residual_rms: 0.0,
        };
        let d = s.derivatives([0.5, -0.5]);
        assert_eq!(d.position, Vec3::new(0.5 + 2.0 * 0.5 * 0.25, -0.5, 0.75));
        assert_eq!(d.first[0], Vec3::new(1.0 + 2.0 * 0.25, 0.0, 3.0));
        assert_eq!(d.first[1], Vec3::new(4.0 * 0.5 * -0.5, 1.0, 0.0));
        assert_eq!(d.second[0][0], Vec3::new(0.0, 0.0, 6.0));
        assert_eq!(d.second[0][1], Vec3::new(-2.0, 0.0, 0.0));
        assert_eq!(d.second[1][1], Vec3::new(2.0, 0.0, 0.0));
    }
}
